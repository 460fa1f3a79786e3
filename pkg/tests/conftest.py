import pytest

from coalex.datasets import and_gate_model
from coalex.model import build_scm

BIN = ["0", "1"]


def chain_spec(p=0.1, threshold=1):
    """A -> B -> Y as threshold gates, each node with its own noise."""
    nodes = ["A", "B", "Y"]
    variables, edges, mechs, priors = [], [], {}, {}
    prev = None
    for n in nodes:
        lam = "L_" + n
        variables.append({"name": lam, "kind": "noise", "domain": BIN})
        variables.append({"name": n, "kind": "target" if n == "Y" else "observed", "domain": BIN})
        edges.append([lam, n])
        parents = [prev] if prev else []
        edges.extend([q, n] for q in parents)
        mechs[n] = {"type": "threshold_gate", "noise": lam, "threshold": threshold if parents else 0, "parents": parents}
        priors[lam] = [1 - p, p]
        prev = n
    return {"variables": variables, "edges": edges, "mechanisms": mechs, "noise_priors": priors}


@pytest.fixture
def and_gate():
    return and_gate_model(0.1, 0.8)


@pytest.fixture
def chain():
    return build_scm(chain_spec())


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
