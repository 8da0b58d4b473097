import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tabular_il.data import VisitedIndex
from tabular_il.instances import random_mdp, sample_expert_prior

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def small_problem(seed, S=None, H=None, A=2, frac=0.5):
    """A random MDP, a random deterministic expert and a random ``S0`` pinned to it."""
    rng = np.random.default_rng(seed)
    S = int(rng.integers(2, 4)) if S is None else S
    H = int(rng.integers(2, 6)) if H is None else H
    mdp = random_mdp(S, A, H, rng)
    expert = sample_expert_prior(mdp, rng)
    known = VisitedIndex.from_policy(expert, rng.random((H, S)) < frac)
    return mdp, expert, known, rng


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# ---------------------------------------------------------------------------
# suite-wide bookkeeping: every coefficient triple and every mixing weight
# produced by any test is counted, and the acceptance lines are echoed at the end

from tabular_il.mixture import CoefficientContext, MixtureResult, OrderViolation  # noqa: E402

SUITE = {"triples": 0, "order_violations": 0, "alphas": 0, "alpha_violations": 0}
ACCEPTANCE_LINES: list[str] = []

_orig_check = CoefficientContext._check
_orig_result_init = MixtureResult.__init__


def _counted_check(self, triple, key):
    SUITE["triples"] += 1
    try:
        _orig_check(self, triple, key)
    except OrderViolation:
        SUITE["order_violations"] += 1
        raise


def _counted_result_init(self, *args, **kwargs):
    _orig_result_init(self, *args, **kwargs)
    SUITE["alphas"] += 1
    if not 0.0 <= self.alpha_hat <= 1.0:
        SUITE["alpha_violations"] += 1


CoefficientContext._check = _counted_check
MixtureResult.__init__ = _counted_result_init


def record(line: str) -> None:
    """Print an acceptance line now (visible with -s) and again in the run summary."""
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
    terminalreporter.section("order-condition bookkeeping")
    terminalreporter.write_line(
        "coefficient triples checked: {triples}, order violations: {order_violations}; "
        "mixing weights: {alphas}, outside [0, 1]: {alpha_violations}".format(**SUITE))
