import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import small_problem
from oracles import (DAGGERS, all_paths, deterministic_mimic_policies, policy_for, switch_value, target_prob,
                     triple_of, unbiasedness_gaps)
from tabular_il.data import Characteristic, Dataset, VisitedIndex, collect_dataset
from tabular_il.instances import (four_state_mdp, four_state_weights, make_instance, random_mdp,
                                  sample_expert_prior, three_state_hard_mdp)
from tabular_il.mdp import DeterministicPolicy, StochasticPolicy, policy_value, state_marginals
from tabular_il.mixture import (RED, CoefficientContext, block_length, coefficients, extremal_policies,
                                four_state_block_policy, mimic_mixture, state_gap, state_two_counts, switch_prob_B,
                                three_state_composite)

seeds = st.integers(0, 2**32 - 1)


@given(seeds)
def test_unbiasedness_by_enumeration(seed):
    mdp, expert, known, rng = small_problem(seed)
    worst, ctx = unbiasedness_gaps(mdp, expert, known, int(rng.integers(mdp.num_states)))
    assert worst <= 1e-9
    assert ctx.checked > 0


def test_unbiasedness_on_named_instances():
    rng = np.random.default_rng(11)
    for _ in range(5):
        mdp = three_state_hard_mdp(6, 4)
        expert = sample_expert_prior(mdp, rng)
        known = VisitedIndex.from_policy(expert, rng.random((4, 3)) < 0.5)
        assert unbiasedness_gaps(mdp, expert, known, 1)[0] <= 1e-9


def test_empty_s0_and_full_s0():
    rng = np.random.default_rng(2)
    mdp = random_mdp(3, 2, 4, rng)
    expert = sample_expert_prior(mdp, rng)
    for mask in (np.zeros((4, 3), bool), np.ones((4, 3), bool)):
        known = VisitedIndex.from_policy(expert, mask)
        assert unbiasedness_gaps(mdp, expert, known, 0)[0] <= 1e-9
    ctx = CoefficientContext(mdp, VisitedIndex.from_policy(expert, np.ones((4, 3), bool)), (3, 0))
    triple = ctx.coefficients(Characteristic(()), [])
    assert triple.beta_star == triple.beta_L == triple.beta_S


@given(seeds)
def test_order_condition(seed):
    mdp, expert, known, rng = small_problem(seed, frac=0.3)
    s_star = int(rng.integers(mdp.num_states))
    ctx = CoefficientContext(mdp, known, (mdp.horizon - 1, s_star))
    for seq in all_paths(mdp.num_states, mdp.horizon):
        tr = triple_of(ctx, expert, seq)
        assert -1e-9 <= tr.beta_S <= tr.beta_star + 1e-9
        assert tr.beta_star <= tr.beta_L + 1e-9 <= 1 + 2e-9


def test_module_level_coefficients_match_context():
    mdp, expert, known, _ = small_problem(5, S=3, H=4)
    ctx = CoefficientContext(mdp, known, (3, 1))
    c = Characteristic(tuple((t, s) for t, s in np.argwhere(~known.visited[:3])[:1]))
    acts = [expert.actions[t, s] for t, s in c.entries]
    assert coefficients(mdp, known, (3, 1), c, acts) == ctx.coefficients(c, acts)


@given(seeds)
def test_extremal_policies_match_brute_force(seed):
    mdp, expert, known, rng = small_problem(seed, S=3, H=4)
    s_star = int(rng.integers(3))
    pair = extremal_policies(mdp, known, (3, s_star))
    values = [target_prob(mdp, acts, 3, s_star) for acts in deterministic_mimic_policies(mdp, known)]
    assert pair.V_L[0] @ mdp.initial_dist == pytest.approx(max(values), abs=1e-12)
    assert pair.V_S[0] @ mdp.initial_dist == pytest.approx(min(values), abs=1e-12)
    assert known.is_mimic(pair.pi_L.actions) and known.is_mimic(pair.pi_S.actions)


def test_random_stochastic_mimic_policies_inside_extremal_band(rng):
    mdp, expert, known, _ = small_problem(9, S=3, H=4)
    pair = extremal_policies(mdp, known, (3, 2))
    for _ in range(200):
        probs = rng.dirichlet(np.ones(2), size=(4, 3))
        t, s = np.nonzero(known.visited)
        probs[t, s] = 0.0
        probs[t, s, known.pinned[t, s]] = 1.0
        pol = StochasticPolicy(probs)
        # conditional values from every (t, s) via backward recursion
        V = np.zeros((4, 3))
        V[3, 2] = 1.0
        for tt in range(2, -1, -1):
            V[tt] = np.einsum("sa,sa->s", probs[tt], mdp.transitions[tt] @ V[tt + 1])
        assert np.all(V <= pair.V_L + 1e-12) and np.all(V >= pair.V_S - 1e-12)
        assert state_marginals(mdp, pol)[3, 2] <= pair.V_L[0] @ mdp.initial_dist + 1e-12


def test_extremal_target_validation():
    mdp, _, known, _ = small_problem(1, S=3, H=3)
    with pytest.raises(ValueError):
        extremal_policies(mdp, known, (3, 0))
    with pytest.raises(ValueError):
        extremal_policies(mdp, known, (1, 5))


@pytest.mark.parametrize("mu,lam", [(1.0, 1.0), (0.5, 2.0), (3.0, 0.1)])
def test_poisson_ratio_identity(mu, lam):
    rng = np.random.default_rng(int(mu * 100 + lam * 10))
    X = rng.poisson(mu, 400_000)
    Y = rng.poisson(lam, 400_000)
    keep = X + Y > 0
    ratio = X[keep] / (X[keep] + Y[keep])
    se = ratio.std() / math.sqrt(keep.sum())
    assert abs(ratio.mean() - mu / (mu + lam)) <= 4 * se


def test_poisson_ratio_symmetry_is_exact():
    # swapping X and Y maps X/(X+Y) to 1 - X/(X+Y), so the conditional mean is 1/2
    k = np.arange(0, 60)
    pmf = np.exp(-1.0) / np.array([math.factorial(int(i)) for i in k], dtype=float)
    joint = np.outer(pmf, pmf)
    tot = k[:, None] + k[None, :]
    ratio = np.divide(k[:, None], tot, out=np.zeros_like(joint), where=tot > 0)
    mass = joint[tot > 0].sum()
    assert (joint * ratio).sum() / mass == pytest.approx(0.5, abs=1e-15)


def test_linear_estimators_unbiased():
    rng = np.random.default_rng(3)
    mdp, expert, known, _ = small_problem(21, S=3, H=4, frac=0.4)
    ctx = CoefficientContext(mdp, known, (3, 0))
    N, R = 20, 4000
    est = {d: [] for d, _ in DAGGERS}
    for _ in range(R):
        n = rng.poisson(N / 2)
        data = collect_dataset(mdp, expert, n, rng)
        for d, field in DAGGERS:
            total = sum(getattr(ctx.for_trajectory(s, a), field) for s, a in zip(data.states, data.actions))
            est[d].append(2.0 / N * total)
    for d, _ in DAGGERS:
        vals = np.array(est[d])
        truth = target_prob(mdp, policy_for(ctx, expert, d), 3, 0)
        assert abs(vals.mean() - truth) <= 4 * vals.std() / math.sqrt(R) + 1e-12


@given(seeds)
def test_alpha_in_unit_interval(seed):
    mdp, expert, known, rng = small_problem(seed, S=3, H=4)
    data = collect_dataset(mdp, expert, 30, rng)
    res = mimic_mixture(mdp, data, known, (3, int(rng.integers(3))), 30, rng)
    assert 0.0 <= res.alpha_hat <= 1.0
    assert res.sum_z <= res.sum_y
    assert known.is_mimic(res.policy.left.actions) and known.is_mimic(res.policy.right.actions)


def test_overflow_returns_small_policy():
    mdp, expert, known, _ = small_problem(4, S=3, H=4)
    rng = np.random.default_rng(0)
    data = collect_dataset(mdp, expert, 1, rng)
    for seed in range(200):
        res = mimic_mixture(mdp, data, known, (3, 0), 1, np.random.default_rng(seed))
        if res.overflow:
            assert res.alpha_hat == 0.0 and res.sum_y == 0
            break
    else:
        pytest.fail("Poi(1/2) never exceeded 1 in 200 draws")


def test_intermediate_target_truncates():
    mdp, expert, known, rng = small_problem(8, S=3, H=5)
    data = collect_dataset(mdp, expert, 40, rng)
    res = mimic_mixture(mdp, data, known, (2, 1), 40, rng)
    assert res.policy.horizon == 5
    p_L, p_S = res.context.extremal_target_probs()
    assert p_S - 1e-12 <= res.target_prob() <= p_L + 1e-12
    assert res.target_prob() == pytest.approx(state_marginals(mdp, res.policy)[2, 1])


# ---------------------------------------------------------------------------
# four-state block policy


def test_block_all_red_observed():
    X = np.array([1, 0, 2, 1, 0, 0, 3])
    U = np.array([1, -1, 1, 1, -1, -1, 1])
    pol = four_state_block_policy(X, U, 200, 8)
    assert np.all(pol.probs[:, 1, 0] == 1.0)


def test_block_without_visits_plays_red():
    pol = four_state_block_policy(np.zeros(7, int), -np.ones(7, int), 200, 8)
    assert np.all(pol.probs[:, 1, 0] == 1.0)


def test_block_ratio_and_length():
    assert block_length(200, 8, 3.0) == int(3 * math.log(1600))
    assert block_length(200, 8, float("inf")) == 7
    X = np.array([2, 1, 1])
    U = np.array([1, 0, 0])
    pol = four_state_block_policy(X, U, 10, 4, c_block=float("inf"))
    np.testing.assert_allclose(pol.probs[:3, 1, 0], 0.5)
    with pytest.raises(ValueError):
        four_state_block_policy(np.array([1, 0, 0]), np.array([-1, 0, 0]), 10, 4)


def test_state_two_counts_reads_bits(rng):
    bundle = four_state_mdp(5, 6, [1, 0, 1, 1, 0])
    data = collect_dataset(bundle.mdp, bundle.expert, 300, rng)
    X, U = state_two_counts(data)
    seen = X > 0
    np.testing.assert_array_equal(U[seen], np.array([1, 0, 1, 1, 0])[seen])
    assert np.all(U[~seen] == -1)


def test_block_policy_near_unbiased_per_time():
    N, H = 30, 10
    U = np.array([1, 0, 0, 1, 1, 0, 1, 0, 1])
    bundle = four_state_mdp(N, H, U)
    w = four_state_weights(N, H)[: H - 1]
    delta = block_length(N, H, 1.0)
    rng = np.random.default_rng(4)
    R = 3000
    reds = np.zeros((R, H - 1))
    zero = np.zeros((R, H - 1), bool)
    for r in range(R):
        X, Uobs = state_two_counts(collect_dataset(bundle.mdp, bundle.expert, N, rng))
        reds[r] = four_state_block_policy(X, Uobs, N, H, 1.0).probs[: H - 1, 1, 0]
        for start in range(0, H - 1, delta):
            zero[r, start:start + delta] = X[start:start + delta].sum() == 0
    for start in range(0, H - 1, delta):
        sl = slice(start, min(start + delta, H - 1))
        target = float((w[sl] * U[sl]).sum() / w[sl].sum())
        mean = reds[:, start].mean()
        se = reds[:, start].std() / math.sqrt(R)
        assert abs(mean - target) <= zero[:, start].mean() + 4 * se


# ---------------------------------------------------------------------------
# three-state composite


def test_composite_full_coverage_is_expert():
    mdp = three_state_hard_mdp(10, 5, reward="terminal")
    expert = DeterministicPolicy(np.zeros((5, 3), int))
    states = np.array([[s] * 5 for s in range(3)] * 20)
    data = Dataset(states, np.zeros_like(states))
    res = three_state_composite(mdp, data, np.random.default_rng(0))
    assert res.branch == "bc"
    assert policy_value(mdp, expert) - policy_value(mdp, res.policy) == 0.0


def test_composite_branches_and_bounds(rng):
    branches = set()
    for _ in range(30):
        bundle = make_instance("three-state-terminal", 50, 8, rng, expert="optimal")
        data = collect_dataset(bundle.mdp, bundle.expert, 50, rng)
        res = three_state_composite(bundle.mdp, data, rng)
        branches.add(res.branch)
        gap = policy_value(bundle.mdp, bundle.expert) - policy_value(bundle.mdp, res.policy)
        assert -1e-8 <= gap <= 1.0
        if res.alpha_hat is not None:
            assert 0.0 <= res.alpha_hat <= 1.0
    assert "mimic-mixture" in branches


def test_composite_rejects_bad_instances(rng):
    data = Dataset(np.zeros((4, 3), int), np.zeros((4, 3), int))
    with pytest.raises(ValueError):
        three_state_composite(random_mdp(4, 2, 3, rng), data, rng)
    with pytest.raises(ValueError):
        three_state_composite(three_state_hard_mdp(10, 3), Dataset(np.ones((4, 3), int), np.zeros((4, 3), int)), rng)
    with pytest.raises(ValueError):
        three_state_composite(three_state_hard_mdp(10, 3, "terminal"), data, rng, target_rule="best")


def test_four_state_extremal_with_empty_s0():
    N, H = 10, 7
    bundle = four_state_mdp(N, H, np.zeros(H - 1, int))
    known = VisitedIndex(np.zeros((H, 4), bool), np.full((H, 4), -1))
    pair = extremal_policies(bundle.mdp, known, (H - 1, 2))
    assert np.all(pair.pi_L.actions[: H - 1, 1] == RED)
    reach = float(pair.V_L[0] @ bundle.mdp.initial_dist)
    assert reach == pytest.approx(four_state_weights(N, H)[: H - 1].sum(), abs=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_switch_value_matches_path_sum(seed):
    rng = np.random.default_rng(seed)
    bundle = four_state_mdp(6, 5, (rng.random(4) < 0.5).astype(int))
    known = VisitedIndex.from_policy(bundle.expert, rng.random((5, 4)) < 0.5)
    pair = extremal_policies(bundle.mdp, known, (4, 2))
    for V in (pair.V_L, pair.V_S):
        a = int(bundle.expert.actions[0, 1])
        B = switch_prob_B(bundle.mdp, known, (0, 1, a), V, 2)
        acts = np.where(known.visited, known.pinned, 0)
        acts[0, 1] = a
        assert B == pytest.approx(switch_value(bundle.mdp, acts, known.visited, 0, 1, V, 2), abs=1e-12)


def test_switch_value_with_everything_known_is_expert_reach(rng):
    mdp = random_mdp(3, 2, 5, rng)
    expert = sample_expert_prior(mdp, rng)
    known = VisitedIndex.from_policy(expert, np.ones((5, 3), bool))
    pair = extremal_policies(mdp, known, (4, 1))
    for t, s in [(0, 0), (1, 2), (3, 1)]:
        B = switch_prob_B(mdp, known, (t, s, int(expert.actions[t, s])), pair.V_L, 1)
        assert B == pytest.approx(target_prob(mdp, expert.actions, 4, 1, start=(t, s)), abs=1e-12)


def test_singleton_characteristic_unrolled():
    mdp, expert, known, rng = small_problem(17, S=3, H=4, frac=0.3)
    ctx = CoefficientContext(mdp, known, (3, 0))
    for s in np.nonzero(~known.visited[2])[0]:
        a = int(expert.actions[2, s])
        triple = ctx.coefficients(Characteristic(((2, int(s)),)), [a])
        one_step = float(mdp.transitions[2, s, a, 0])
        alpha_L = ctx.source(2, int(s), a).alpha_L
        assert triple.beta_star == pytest.approx(one_step, abs=1e-15)
        assert triple.beta_L == pytest.approx((1 - alpha_L) + alpha_L * one_step, abs=1e-15)


def test_mixing_weight_mean_is_ideal():
    mdp, expert, known, ctx = criterion_3_style_instance()
    p_star = float(state_marginals(mdp, expert)[3, 0])
    p_L, p_S = ctx.extremal_target_probs()
    ideal = (p_star - p_S) / (p_L - p_S)
    N, R = 50, 20_000
    alphas = []
    for r in range(R):
        rng = np.random.default_rng([31, r])
        res = mimic_mixture(mdp, collect_dataset(mdp, expert, N, rng), known, (3, 0), N, rng, context=ctx)
        if res.sum_y > 0 and not res.overflow:
            alphas.append(res.alpha_hat)
    alphas = np.array(alphas)
    assert abs(alphas.mean() - ideal) <= 4 * alphas.std() / np.sqrt(len(alphas))


def criterion_3_style_instance(candidates=60):
    rng = np.random.default_rng(12345)
    best = None
    for _ in range(candidates):
        mdp = random_mdp(3, 2, 4, rng)
        expert = sample_expert_prior(mdp, rng)
        known = VisitedIndex.from_policy(expert, rng.random((4, 3)) < 0.4)
        ctx = CoefficientContext(mdp, known, (3, 0))
        gap = state_gap(ctx)
        if best is None or gap > best[0]:
            best = (gap, mdp, expert, known, ctx)
    return best[1:]
