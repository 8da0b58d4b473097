"""Mimic-MD: minimum-distance matching of the post-mistake occupancy via an LP.

The learner is restricted to policies that copy the expert on every state seen
in the first half of the data (``D1``). Trajectories that reach a state unseen
in ``D1`` carry a flag; the LP matches the flagged state-action occupancy to its
empirical frequency in the second half (``D2``) under an L1 loss. The flag is
a function of the history, so the LP variables live on the flag-lifted chain
``(s, b)`` where the objective is linear. ``mode="plain"`` instead matches the
ordinary occupancy ``q_t(s, a)`` to the raw ``D2`` frequencies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lp as lp_mod
from .data import Dataset, VisitedIndex, split_dataset, visited_states
from .estimation import empirical_occupancy
from .mdp import (DeterministicPolicy, FlagAwarePolicy, StochasticPolicy, TabularMDP,
                  flag_occupancy)

MODES = ("augmented", "plain")


@dataclass(frozen=True, eq=False)
class AugmentedMDP:
    """The base MDP with a monotone flag ``b_t = OR_{tau <= t} unseen[tau, s_tau]``."""

    base: TabularMDP
    visited: VisitedIndex

    @property
    def unseen(self) -> np.ndarray:
        return ~self.visited.visited

    def lift(self, policy: DeterministicPolicy | StochasticPolicy) -> FlagAwarePolicy:
        """A Markov policy viewed as a flag-aware one (ignores the flag)."""
        probs = policy.action_probs(self.base)
        return FlagAwarePolicy(np.repeat(probs[:, :, None, :], 2, axis=2), self.unseen)

    def flagged_occupancy(self, policy) -> np.ndarray:
        """``Pr_pi[T_t(s, a)]``: at ``(s, a)`` at time ``t`` having hit an unseen state by then."""
        if not isinstance(policy, FlagAwarePolicy):
            policy = self.lift(policy)
        return flag_occupancy(self.base, policy)[:, :, 1, :]


def build_augmented_mdp(mdp: TabularMDP, visited_d1: VisitedIndex) -> AugmentedMDP:
    if visited_d1.visited.shape != (mdp.horizon, mdp.num_states):
        raise ValueError("visited index does not match the MDP")
    return AugmentedMDP(mdp, visited_d1)


def empirical_T_frequencies(augmented: AugmentedMDP, d2: Dataset) -> np.ndarray:
    """Fraction of ``D2`` trajectories in ``T_t(s, a)`` for every ``(t, s, a)``."""
    if len(d2) == 0:
        raise ValueError("D2 is empty")
    mdp = augmented.base
    H = mdp.horizon
    hit = augmented.unseen[np.arange(H)[None, :], d2.states]
    flagged = np.logical_or.accumulate(hit, axis=1)
    m = np.zeros((H, mdp.num_states, mdp.num_actions))
    t = np.broadcast_to(np.arange(H), d2.states.shape)
    np.add.at(m, (t[flagged], d2.states[flagged], d2.actions[flagged]), 1.0)
    return m / len(d2)


# ---------------------------------------------------------------------------
# LP construction


@dataclass
class MimicLP:
    """LP plus the bookkeeping needed to read occupancies back out."""

    program: lp_mod.LinearProgram
    index: dict  # (t, s, b, a) or (t, s, a) -> column
    shape: tuple
    mode: str
    target: np.ndarray


def _allowed(mdp: TabularMDP, visited: VisitedIndex, t: int, s: int, a: int) -> bool:
    if not mdp.action_mask[s, a]:
        return False
    return not (visited.visited[t, s] and a != visited.pinned[t, s])


def build_lp(mdp: TabularMDP, visited: VisitedIndex, target: np.ndarray, mode: str = "augmented") -> MimicLP:
    """Occupancy LP over policies that copy the expert on ``visited``.

    Variables fixed to zero by the copy constraint are left out rather than
    carried as explicit ``q = 0`` rows. Absolute deviations use a slack pair
    only where ``target`` is positive; elsewhere ``|q - 0| = q``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    H, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
    unseen = ~visited.visited
    flags = (0, 1) if mode == "augmented" else (None,)
    index = {}
    for t in range(H):
        for s in range(S):
            for b in flags:
                if b == 0 and unseen[t, s]:
                    continue
                for a in range(A):
                    if _allowed(mdp, visited, t, s, a):
                        index[(t, s, a) if b is None else (t, s, b, a)] = len(index)
    nq = len(index)

    def col(t, s, b, a):
        return index.get((t, s, a) if b is None else (t, s, b, a))

    rows, rhs = [], []
    for t in range(H):
        for s2 in range(S):
            for b2 in flags:
                row = {}
                for a in range(A):
                    j = col(t, s2, b2, a)
                    if j is not None:
                        row[j] = row.get(j, 0.0) + 1.0
                if t == 0:
                    if b2 is None:
                        rhs_val = mdp.initial_dist[s2]
                    else:
                        rhs_val = mdp.initial_dist[s2] if b2 == int(unseen[0, s2]) else 0.0
                else:
                    rhs_val = 0.0
                    for s in range(S):
                        for b in flags:
                            if b is not None and (b or unseen[t, s2]) != b2:
                                continue
                            for a in range(A):
                                j = col(t - 1, s, b, a)
                                p = mdp.transitions[t - 1, s, a, s2]
                                if j is not None and p > 0.0:
                                    row[j] = row.get(j, 0.0) - p
                if not row and rhs_val == 0.0:
                    continue
                rows.append(row)
                rhs.append(rhs_val)

    # objective: sum |q_matched - target|
    cost = np.zeros(nq)
    offset = 0.0
    slack_rows = []
    for (t, s, a), m in np.ndenumerate(target):
        j = col(t, s, 1 if mode == "augmented" else None, a)
        if j is None:
            offset += m
        elif m > 0.0:
            slack_rows.append((j, m))
        else:
            cost[j] += 1.0
    n = nq + 2 * len(slack_rows)
    A_eq = np.zeros((len(rows) + len(slack_rows), n))
    b_eq = np.zeros(len(rows) + len(slack_rows))
    for i, row in enumerate(rows):
        for j, v in row.items():
            A_eq[i, j] = v
        b_eq[i] = rhs[i]
    c = np.concatenate([cost, np.ones(2 * len(slack_rows))])
    for k, (j, m) in enumerate(slack_rows):
        i = len(rows) + k
        A_eq[i, j] = 1.0
        A_eq[i, nq + 2 * k] = -1.0
        A_eq[i, nq + 2 * k + 1] = 1.0
        b_eq[i] = m
    labels = list(index) + [("slack", k, sign) for k in range(len(slack_rows)) for sign in "+-"]
    shape = (H, S, 2, A) if mode == "augmented" else (H, S, A)
    program = lp_mod.LinearProgram(c, A_eq, b_eq, labels, offset)
    return MimicLP(program, index, shape, mode, np.asarray(target, dtype=float))


def lp_objective(problem: MimicLP, q: np.ndarray) -> float:
    """Objective value of an occupancy table under ``problem``'s target."""
    matched = q[:, :, 1, :] if problem.mode == "augmented" else q
    return float(np.abs(matched - problem.target).sum())


TIEBREAKS = ("unseen", "none")


def _unseen_cost(problem: MimicLP, unseen: np.ndarray) -> np.ndarray:
    cost = np.zeros(problem.program.num_vars)
    for key, j in problem.index.items():
        if unseen[key[0], key[1]]:
            cost[j] = 1.0
    return cost


def solve_lp(problem: MimicLP, tolerance: float = 1e-8, backend: str = "simplex",
             unseen: np.ndarray | None = None):
    """Optimal occupancy table and objective value.

    The L1 optimum is often a whole face. When ``unseen`` is given, a second
    solve picks, among occupancies within ``tolerance`` of the optimum, one with
    the least expected time spent on unseen states.
    """
    prog = problem.program
    res = lp_mod.solve(prog, tol=min(tolerance, 1e-9), backend=backend)
    x, objective = res.x, res.objective
    if unseen is not None:
        cost = _unseen_cost(problem, unseen)
        if cost @ x > 1e-12:
            n, m = prog.num_vars, prog.num_constraints
            A = np.zeros((m + 1, n + 1))
            A[:m, :n] = prog.A_eq
            A[m, :n] = prog.c
            A[m, n] = 1.0
            bound = objective - prog.offset + min(tolerance, 1e-9) * max(1.0, abs(objective))
            second = lp_mod.LinearProgram(np.append(cost, 0.0), A, np.append(prog.b_eq, bound))
            try:
                x = lp_mod.solve(second, tol=min(tolerance, 1e-9), backend=backend).x[:n]
                objective = float(prog.c @ x) + prog.offset
            except lp_mod.LPError:
                pass
    q = np.zeros(problem.shape)
    for key, j in problem.index.items():
        q[key] = x[j]
    return q, objective


def occupancy_to_policy(q: np.ndarray, mdp: TabularMDP, visited: VisitedIndex | None = None):
    """Normalise occupancy rows into a policy.

    Rows with no mass play the pinned expert action where ``visited`` knows
    one and the uniform action elsewhere. Flag-aware (4-d) tables need
    ``visited`` for the unseen mask.
    """
    mask = mdp.action_mask
    H, S = q.shape[0], q.shape[1]
    fallback = np.broadcast_to(mask / mask.sum(axis=1, keepdims=True), (H, S, mdp.num_actions)).copy()
    if visited is not None:
        t, s = np.nonzero(visited.visited)
        fallback[t, s] = 0.0
        fallback[t, s, visited.pinned[t, s]] = 1.0
    if q.ndim == 4:
        if visited is None:
            raise ValueError("flag-aware occupancy needs the visited index")
        denom = q.sum(axis=3, keepdims=True)
        safe = np.where(denom > 0, denom, 1.0)
        probs = np.where(denom > 0, q / safe, fallback[:, :, None, :])
        return FlagAwarePolicy(probs, ~visited.visited)
    denom = q.sum(axis=2, keepdims=True)
    safe = np.where(denom > 0, denom, 1.0)
    probs = np.where(denom > 0, q / safe, fallback)
    return StochasticPolicy(probs)


@dataclass
class MimicMDResult:
    policy: FlagAwarePolicy | StochasticPolicy
    objective: float
    problem: MimicLP
    occupancy: np.ndarray


def mimic_md(mdp: TabularMDP, dataset: Dataset, rng: np.random.Generator, mode: str = "augmented",
             lp_tol: float = 1e-8, backend: str = "simplex", tiebreak: str = "unseen") -> MimicMDResult:
    """Split the data, build the LP from ``D1``/``D2`` and return the extracted policy."""
    d1, d2 = split_dataset(dataset, rng)
    return mimic_md_from_split(mdp, d1, d2, mode, lp_tol, backend, tiebreak)


def mimic_md_from_split(mdp, d1: Dataset, d2: Dataset, mode: str = "augmented",
                        lp_tol: float = 1e-8, backend: str = "simplex",
                        tiebreak: str = "unseen") -> MimicMDResult:
    if tiebreak not in TIEBREAKS:
        raise ValueError(f"tiebreak must be one of {TIEBREAKS}")
    visited = visited_states(d1, mdp.num_states)
    if mode == "augmented":
        aug = build_augmented_mdp(mdp, visited)
        target = empirical_T_frequencies(aug, d2)
    else:
        target = empirical_occupancy(d2, mdp.num_states, mdp.num_actions)
    problem = build_lp(mdp, visited, target, mode)
    q, obj = solve_lp(problem, lp_tol, backend, ~visited.visited if tiebreak == "unseen" else None)
    policy = occupancy_to_policy(q, mdp, visited)
    return MimicMDResult(policy, obj, problem, q)
