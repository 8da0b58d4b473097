"""Mimic-Mixture and the policies built on top of it.

The learner mixes, at the episode level, two extremal policies inside the set
that copies the expert on ``S0``: ``pi_L`` maximises and ``pi_S`` minimises the
probability of a target state. The mixing weight is a ratio of two thinned
Poisson counts, so it always lies in ``[0, 1]`` while being (nearly) unbiased
for the ideal weight. The thinning probabilities come from per-trajectory
coefficients ``beta_S <= beta_star <= beta_L`` that depend on a trajectory only
through the times and states at which it leaves ``S0`` (its characteristic).

A characteristic ``((t1, s1), ..., (tm, sm))`` with expert actions ``a_j``
gets

    beta_star = Pr*(s_m -> s*) / Pr*(s_m -> finish)
    beta_L    = fold over j = m..1 of  b <- (1 - alpha_L(j)) + alpha_L(j) * b,  from b = beta_star
    beta_S    = prod_j alpha_S(j) * beta_star

with ``alpha_L = (1 - C_L) / (1 - B_L)`` and ``alpha_S = C_S / B_S``, where
``C`` is the extremal value at ``(t1, s1)`` and ``B`` the value of "follow the
expert until leaving S0, then switch to the extremal policy".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import (Characteristic, Dataset, VisitedIndex, characteristic, poissonized_counts,
                   split_dataset, visited_states)
from .estimation import bc_policy
from .mdp import (START, DeterministicPolicy, MixturePolicy, StochasticPolicy, TabularMDP,
                  restricted_forward)

ORDER_TOL = 1e-9
VALUE_TOL = 1e-12


class OrderViolation(AssertionError):
    """``beta_S <= beta_star <= beta_L`` failed; always an implementation bug."""


# ---------------------------------------------------------------------------
# extremal policies


@dataclass(frozen=True, eq=False)
class ExtremalPair:
    pi_L: DeterministicPolicy
    pi_S: DeterministicPolicy
    V_L: np.ndarray
    V_S: np.ndarray
    target: tuple[int, int]


def _allowed_actions(mdp: TabularMDP, known: VisitedIndex) -> np.ndarray:
    """``(H, S, A)`` mask of actions inside the copy-the-expert set."""
    H, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
    allowed = np.broadcast_to(mdp.action_mask, (H, S, A)).copy()
    if np.any(known.visited & (known.pinned < 0)):
        t, s = np.argwhere(known.visited & (known.pinned < 0))[0]
        raise ValueError(f"state {s} at time {t} is in S0 without a pinned action")
    ts = np.argwhere(known.visited)
    allowed[ts[:, 0], ts[:, 1], :] = False
    allowed[ts[:, 0], ts[:, 1], known.pinned[ts[:, 0], ts[:, 1]]] = True
    return allowed


def _extremal_dp(mdp, allowed, unseen, target_state, sign, tiebreak):
    H, S = mdp.horizon, mdp.num_states
    V = np.zeros((H, S))
    W = np.zeros((H, S))
    actions = np.zeros((H, S), dtype=int)
    V[-1, target_state] = 1.0
    actions[-1] = np.argmax(allowed[-1], axis=1)
    for t in range(H - 2, -1, -1):
        Q = mdp.transitions[t] @ V[t + 1]
        Wq = mdp.transitions[t] @ (unseen[t + 1] + W[t + 1])
        for s in range(S):
            ok = np.nonzero(allowed[t, s])[0]
            score = sign * Q[s, ok]
            best = score.max()
            cand = ok[score >= best - VALUE_TOL]
            if tiebreak and cand.size > 1:
                w = Wq[s, cand]
                cand = cand[w <= w.min() + VALUE_TOL]
            a = int(cand[0])
            actions[t, s] = a
            V[t, s] = Q[s, a]
            W[t, s] = Wq[s, a]
    return actions, V


def extremal_policies(mdp: TabularMDP, known: VisitedIndex, target: tuple[int, int],
                      unseen_tiebreak: bool = True) -> ExtremalPair:
    """Backward DP for the max/min probability of ``s*`` at time ``t*`` within the copy set.

    ``mdp`` and ``known`` are cut at ``t*``. Ties on the primary value are
    broken toward fewer expected visits to states outside ``S0`` (when
    ``unseen_tiebreak``), then toward the lowest action index.
    """
    t_star, s_star = target
    if not 0 <= t_star < mdp.horizon:
        raise ValueError(f"target time {t_star} outside horizon {mdp.horizon}")
    if not 0 <= s_star < mdp.num_states:
        raise ValueError(f"target state {s_star} out of range")
    mdp = mdp.truncate(t_star + 1)
    known = known.truncate(t_star + 1)
    allowed = _allowed_actions(mdp, known)
    unseen = (~known.visited).astype(float)
    a_L, V_L = _extremal_dp(mdp, allowed, unseen, s_star, 1.0, unseen_tiebreak)
    a_S, V_S = _extremal_dp(mdp, allowed, unseen, s_star, -1.0, unseen_tiebreak)
    return ExtremalPair(DeterministicPolicy(a_L), DeterministicPolicy(a_S), V_L, V_S, (t_star, s_star))


# ---------------------------------------------------------------------------
# coefficients


@dataclass(frozen=True)
class CoefficientTriple:
    beta_star: float
    beta_L: float
    beta_S: float


@dataclass(frozen=True)
class SourceTerms:
    """Quantities attached to one exit point ``(t, s)`` with expert action ``a``."""

    to_target: float
    to_finish: float
    B_L: float
    B_S: float
    alpha_L: float
    alpha_S: float

    @property
    def beta_star(self) -> float:
        return self.to_target / self.to_finish if self.to_finish > 0 else 0.0


def switch_prob_B(mdp: TabularMDP, known: VisitedIndex, source: tuple[int, int, int],
                  V_ext: np.ndarray, target_state: int) -> float:
    """Value of following the expert from ``source`` and switching to an extremal
    policy (with value table ``V_ext``) at the first state outside ``S0``.

    ``mdp`` is already cut so the target sits in its last layer.
    """
    return _source_reach(mdp, known, source, V_ext, target_state)[2]


def _source_reach(mdp, known, source, V_ext, target_state):
    t, s, a = source
    if a < 0 or not mdp.action_mask[s, a]:
        raise KeyError(f"expert action {a} at state {s}, time {t} is unknown or invalid")
    actions = known.pinned.copy()
    actions[t, s] = a
    reach = restricted_forward(mdp, actions, known.visited, (t, s))
    H = mdp.horizon
    to_target = float(reach[H - 1, target_state])
    to_finish = float(reach[H - 1].sum())
    exits = reach[t + 1:H - 1] * (~known.visited[t + 1:H - 1])
    B = to_target + float((exits * V_ext[t + 1:H - 1]).sum())
    return to_target, to_finish, B


class CoefficientContext:
    """Coefficient oracle for one ``(mdp, S0, target)``; caches per exit point.

    The context works on the MDP cut at the target time, so trajectories and
    characteristics passed in must be cut the same way (``horizon``).
    """

    def __init__(self, mdp: TabularMDP, known: VisitedIndex, target: tuple[int, int],
                 unseen_tiebreak: bool = True, pair: ExtremalPair | None = None):
        self.target = tuple(target)
        t_star, self.target_state = target
        self.horizon = t_star + 1
        self.full_mdp = mdp
        self.mdp = mdp.truncate(self.horizon)
        self.known = known.truncate(self.horizon)
        self.pair = pair or extremal_policies(mdp, known, target, unseen_tiebreak)
        self._sources: dict[tuple[int, int, int], SourceTerms] = {}
        self._memo: dict[tuple, CoefficientTriple] = {}
        self.checked = 0
        self._target_probs = None
        reach = restricted_forward(self.mdp, self.known.pinned, self.known.visited, START)
        if self.horizon == 1:
            start_target, start_finish = float(self.mdp.initial_dist[self.target_state]), 1.0
        else:
            start_target = float(reach[-1, self.target_state])
            start_finish = float(reach[-1].sum())
        self.empty_beta = start_target / start_finish if start_finish > 0 else 0.0

    def extremal_target_probs(self) -> tuple[float, float]:
        """``(Pr_{pi_L}, Pr_{pi_S})`` of the target, computed once."""
        if self._target_probs is None:
            t, s = self.target
            self._target_probs = (_reach_value(self.mdp, self.pair.pi_L, t, s),
                                  _reach_value(self.mdp, self.pair.pi_S, t, s))
        return self._target_probs

    def source(self, t: int, s: int, a: int) -> SourceTerms:
        key = (t, s, a)
        hit = self._sources.get(key)
        if hit is not None:
            return hit
        if self.known.visited[t, s]:
            raise ValueError(f"state {s} at time {t} is inside S0, not an exit point")
        to_target, to_finish, B_L = _source_reach(self.mdp, self.known, key, self.pair.V_L, self.target_state)
        _, _, B_S = _source_reach(self.mdp, self.known, key, self.pair.V_S, self.target_state)
        C_L, C_S = self.pair.V_L[t, s], self.pair.V_S[t, s]
        if B_L > C_L + ORDER_TOL or C_S > B_S + ORDER_TOL:
            raise OrderViolation(f"extremal dominance fails at {key}: B_L={B_L}, C_L={C_L}, B_S={B_S}, C_S={C_S}")
        alpha_L = 0.0 if 1.0 - B_L <= VALUE_TOL else min(1.0, max(0.0, (1.0 - C_L) / (1.0 - B_L)))
        alpha_S = 0.0 if B_S <= VALUE_TOL else min(1.0, max(0.0, C_S / B_S))
        terms = SourceTerms(to_target, to_finish, B_L, B_S, alpha_L, alpha_S)
        self._sources[key] = terms
        return terms

    def coefficients(self, c: Characteristic, actions) -> CoefficientTriple:
        """Triple for characteristic ``c`` whose entries had expert actions ``actions``."""
        entries = tuple((t, s, int(a)) for (t, s), a in zip(c.entries, actions))
        if len(entries) != len(c):
            raise ValueError("one expert action is needed per characteristic entry")
        hit = self._memo.get(entries)
        if hit is not None:
            return hit
        if not entries:
            b = self.empty_beta
            triple = CoefficientTriple(b, b, b)
        else:
            terms = [self.source(*e) for e in entries]
            b_star = terms[-1].beta_star
            b_L, b_S = b_star, b_star
            for term in reversed(terms):
                b_L = (1.0 - term.alpha_L) + term.alpha_L * b_L
                b_S = term.alpha_S * b_S
            triple = CoefficientTriple(b_star, b_L, b_S)
        self._check(triple, entries)
        self._memo[entries] = triple
        return triple

    def for_trajectory(self, states, actions) -> CoefficientTriple:
        states = np.asarray(states)[: self.horizon]
        actions = np.asarray(actions)[: self.horizon]
        c = characteristic(states, self.known.visited)
        return self.coefficients(c, [actions[t] for t, _ in c.entries])

    def _check(self, triple: CoefficientTriple, key) -> None:
        self.checked += 1
        lo, mid, hi = triple.beta_S, triple.beta_star, triple.beta_L
        if not (-ORDER_TOL <= lo <= mid + ORDER_TOL and mid <= hi + ORDER_TOL and hi <= 1.0 + ORDER_TOL):
            raise OrderViolation(f"order violated for {key}: S={lo}, *={mid}, L={hi}")


def coefficients(mdp: TabularMDP, known: VisitedIndex, target, c: Characteristic, actions,
                 context: CoefficientContext | None = None) -> CoefficientTriple:
    context = context or CoefficientContext(mdp, known, target)
    return context.coefficients(c, actions)


# ---------------------------------------------------------------------------
# Mimic-Mixture


@dataclass
class MixtureResult:
    policy: MixturePolicy
    alpha_hat: float
    overflow: bool
    n: int
    sum_y: int
    sum_z: int
    context: CoefficientContext = field(repr=False)

    def target_prob(self) -> float:
        """``Pr_pihat(s_{t*} = s*)`` of the returned mixture."""
        p_L, p_S = self.context.extremal_target_probs()
        return self.alpha_hat * p_L + (1.0 - self.alpha_hat) * p_S


def _reach_value(mdp, policy, t, s):
    from .mdp import state_marginals

    return float(state_marginals(mdp, policy)[t, s])


def _extend(actions: np.ndarray, tail: np.ndarray, upto: int) -> DeterministicPolicy:
    out = tail.copy()
    out[:upto] = actions[:upto]
    return DeterministicPolicy(out)


def mimic_mixture(mdp: TabularMDP, dataset: Dataset, known: VisitedIndex, target: tuple[int, int],
                  N: int, rng: np.random.Generator, tail_actions: np.ndarray | None = None,
                  context: CoefficientContext | None = None, unseen_tiebreak: bool = True) -> MixtureResult:
    """Mixture of the extremal policies with a thinned-Poisson mixing weight.

    ``tail_actions`` (``(H, S)``) supplies the actions from the target time on;
    by default pinned actions where known and action 0 elsewhere. On overflow
    (``n > N``) the weight is 0, i.e. ``pi_S`` is returned.
    """
    ctx = context or CoefficientContext(mdp, known, target, unseen_tiebreak)
    t_star = ctx.target[0]
    if tail_actions is None:
        tail_actions = np.where(known.visited, known.pinned, 0)
    counts = poissonized_counts(dataset, N, rng)
    sum_y = sum_z = 0
    if not counts.overflow:
        for key in sorted(counts.counts):
            x = counts.counts[key]
            triple = ctx.for_trajectory(key, counts.actions[key])
            p1 = triple.beta_L - triple.beta_S
            if p1 <= 0.0:
                continue
            y = int(rng.binomial(x, min(1.0, p1)))
            p2 = min(1.0, max(0.0, (triple.beta_star - triple.beta_S) / p1))
            z = int(rng.binomial(y, p2))
            sum_y += y
            sum_z += z
    alpha = sum_z / sum_y if sum_y > 0 else 0.0
    if not 0.0 <= alpha <= 1.0:
        raise OrderViolation(f"mixing weight {alpha} outside [0, 1]")
    left = _extend(ctx.pair.pi_L.actions, tail_actions, t_star)
    right = _extend(ctx.pair.pi_S.actions, tail_actions, t_star)
    policy = MixturePolicy(alpha, left, right)
    return MixtureResult(policy, alpha, counts.overflow, counts.n, sum_y, sum_z, ctx)


# ---------------------------------------------------------------------------
# four-state block policy

RED, BLUE = 0, 1
STATE_TWO = 1  # zero-based index of the branching state


def state_two_counts(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-time visit counts ``X_t`` of the branching state and the observed bits ``U_t``.

    ``U_t`` is 1 for red, 0 for blue, and -1 where the state was not visited.
    Only times ``0..H-2`` are returned; the action at the last step is inert.
    """
    H = dataset.horizon
    at_two = dataset.states[:, : H - 1] == STATE_TWO
    X = at_two.sum(axis=0)
    U = np.full(H - 1, -1, dtype=int)
    for t in np.nonzero(X)[0]:
        acts = dataset.actions[at_two[:, t], t]
        if np.any(acts != acts[0]):
            raise ValueError(f"inconsistent expert actions at time {t}")
        U[t] = int(acts[0] == RED)
    return X, U


def block_length(N: int, H: int, c_block: float) -> int:
    if math.isinf(c_block):
        return max(1, H - 1)
    return max(1, int(math.floor(c_block * math.log(N * H))))


def four_state_block_policy(X, U, N: int, H: int, c_block: float = 3.0) -> StochasticPolicy:
    """Within each block of ``Delta`` times, play red with the block's observed red fraction.

    A block without any visit plays red. ``c_block = inf`` uses one block over
    all times, the single global ratio.
    """
    X = np.asarray(X, dtype=int)
    U = np.asarray(U, dtype=int)
    if X.shape != (H - 1,) or U.shape != (H - 1,):
        raise ValueError(f"counts must have length H-1 = {H - 1}")
    if np.any((X > 0) & (U < 0)):
        raise ValueError("an observed bit is missing where the state was visited")
    delta = block_length(N, H, c_block)
    red = np.ones(H)
    for start in range(0, H - 1, delta):
        sl = slice(start, min(start + delta, H - 1))
        total = X[sl].sum()
        if total > 0:
            red[sl] = float((X[sl] * np.maximum(U[sl], 0)).sum()) / total
    probs = np.zeros((H, 4, 2))
    probs[:, :, 0] = 1.0
    probs[:, STATE_TWO, RED] = red
    probs[:, STATE_TWO, BLUE] = 1.0 - red
    return StochasticPolicy(probs)


# ---------------------------------------------------------------------------
# three-state composite

TARGET_RULES = ("lowest", "widest")


@dataclass
class CompositeResult:
    policy: object
    branch: str
    t0: int | None
    alpha_hat: float | None = None
    overflow: bool = False
    objective: float | None = None


def _check_terminal_rewards(mdp: TabularMDP) -> None:
    if mdp.num_states != 3:
        raise ValueError(f"the composite needs a 3-state MDP, got {mdp.num_states} states")
    if mdp.rewards is not None and np.any(mdp.rewards[:-1] != 0):
        raise ValueError("rewards must vanish before the last step")


def three_state_composite(mdp: TabularMDP, dataset: Dataset, rng: np.random.Generator,
                          target_rule: str = "lowest", mode: str = "augmented",
                          unseen_tiebreak: bool = True, backend: str = "simplex") -> CompositeResult:
    """Sample-split dispatcher between BC, Mimic-MD and Mimic-Mixture.

    ``S0`` is the set of states seen in the first half. Scanning from the
    second-to-last step backward, ``t0`` is the first time with a state not in
    ``S0``. No such time: copy the expert (BC). Two or more unseen states at
    ``t0``: Mimic-MD. Exactly one: Mimic-Mixture aimed at a seen state at
    ``t0`` (lowest index, or the one whose extremal values differ most), then
    the pinned expert actions afterwards.
    """
    from .mimic_md import mimic_md_from_split

    if target_rule not in TARGET_RULES:
        raise ValueError(f"target_rule must be one of {TARGET_RULES}")
    _check_terminal_rewards(mdp)
    d1, d2 = split_dataset(dataset, rng)
    known = visited_states(d1, mdp.num_states)
    H = mdp.horizon
    t0 = None
    for t in range(H - 2, -1, -1):
        if not known.visited[t].all():
            t0 = t
            break
    if t0 is None:
        return CompositeResult(bc_policy(known, mdp), "bc", None)
    unseen = np.nonzero(~known.visited[t0])[0]
    if unseen.size >= 2:
        res = mimic_md_from_split(mdp, d1, d2, mode, backend=backend,
                                  tiebreak="unseen" if unseen_tiebreak else "none")
        return CompositeResult(res.policy, "mimic-md", t0, objective=res.objective)
    seen = np.nonzero(known.visited[t0])[0]
    if target_rule == "lowest":
        s_star = int(seen[0])
        ctx = CoefficientContext(mdp, known, (t0, s_star), unseen_tiebreak)
    else:
        best = None
        for s in seen:
            cand = CoefficientContext(mdp, known, (t0, int(s)), unseen_tiebreak)
            spread = float(state_gap(cand))
            if best is None or spread > best[0] + VALUE_TOL:
                best = (spread, cand)
        ctx = best[1]
    tail = bc_policy(known, mdp).actions
    res = mimic_mixture(mdp, d2, known, ctx.target, len(d2), rng, tail_actions=tail, context=ctx)
    return CompositeResult(res.policy, "mimic-mixture", t0, res.alpha_hat, res.overflow)


def state_gap(ctx: CoefficientContext) -> float:
    """``Pr_{pi_L}(target) - Pr_{pi_S}(target)`` from the start distribution."""
    t, s = ctx.target
    return _reach_value(ctx.mdp, ctx.pair.pi_L, t, s) - _reach_value(ctx.mdp, ctx.pair.pi_S, t, s)
