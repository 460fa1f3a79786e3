"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command line front-end:
1 for bad input or configuration, 2 for refusals where the method is well
defined but declines to answer (undefined score, unmet preconditions).
"""


class CoalexError(Exception):
    exit_code = 1

    @property
    def kind(self) -> str:
        return type(self).__name__


class RefusalError(CoalexError):
    exit_code = 2


# model construction
class ModelError(CoalexError):
    pass


class CycleDetected(ModelError):
    pass


class IncompleteTruthTable(ModelError):
    pass


class TargetNotUnique(ModelError):
    pass


class NoiseHasParents(ModelError):
    pass


class ObservedWithoutNoiseParent(ModelError):
    pass


class MissingNoiseValue(CoalexError):
    pass


class ValueOutOfDomain(CoalexError):
    pass


class TargetInCoalition(CoalexError):
    pass


class UnknownVariable(CoalexError):
    pass


# inference
class StateSpaceTooLarge(CoalexError):
    pass


class PositivityViolated(RefusalError):
    pass


class UnsupportedMechanism(CoalexError):
    pass


class InconsistentObservation(CoalexError):
    pass


# scoring and search
class UndefinedScore(RefusalError):
    pass


class InvalidDistance(CoalexError):
    pass


class CoalitionValueMismatch(CoalexError):
    pass


class EmptySampleList(CoalexError):
    pass


class AllSamplesUndefined(RefusalError):
    pass


class EmptyCandidateSet(CoalexError):
    pass


class PreconditionNotFullExplanation(RefusalError):
    pass


class NoImprovingAssignment(RefusalError):
    pass


# rca
class TooManyPlayers(CoalexError):
    pass


class AllScoresZero(CoalexError):
    pass


# datasets / model explanation
class DegenerateParameter(CoalexError):
    pass


class InvalidThreshold(CoalexError):
    pass


class SchemaMismatch(CoalexError):
    pass


class UnknownFeature(CoalexError):
    pass


class OrderingIncomplete(CoalexError):
    pass


class ScoreFileMismatch(CoalexError):
    pass
