import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tabular_il.data import (Characteristic, Dataset, DeterminismError, VisitedIndex, characteristic,
                             collect_dataset, poissonized_counts, split_dataset, visited_states)
from tabular_il.instances import four_state_mdp, random_mdp, sample_expert_prior
from tabular_il.mdp import DeterministicPolicy, TabularMDP
from tabular_il.mixture import STATE_TWO
from tabular_il.io import FormatError, dataset_from_text, dataset_to_text


def toy_dataset():
    states = np.array([[0, 1, 1], [0, 2, 1], [1, 1, 0]])
    actions = np.array([[1, 0, 0], [1, 1, 0], [0, 0, 1]])
    return Dataset(states, actions)


@given(st.integers(2, 60), st.integers(0, 10_000))
def test_split_is_a_partition(n, seed):
    rng = np.random.default_rng(seed)
    data = Dataset(np.arange(n)[:, None] * np.ones((1, 3), int), np.zeros((n, 3), int))
    d1, d2 = split_dataset(data, rng)
    assert len(d1) == n // 2 and len(d2) == n - n // 2
    ids = np.concatenate([d1.states[:, 0], d2.states[:, 0]])
    assert sorted(ids.tolist()) == list(range(n))


def test_split_needs_two():
    with pytest.raises(ValueError):
        split_dataset(Dataset(np.zeros((1, 2), int), np.zeros((1, 2), int)), np.random.default_rng(0))


def test_visited_states_and_pins():
    idx = visited_states(toy_dataset(), 3)
    assert idx.states_at(1) == {1, 2}
    assert idx.pinned[0, 0] == 1 and idx.pinned[0, 1] == 0
    assert idx.pinned[0, 2] == -1
    assert idx.is_mimic(np.where(idx.visited, idx.pinned, 0))


def test_conflicting_actions_raise():
    data = Dataset(np.array([[0, 1], [0, 1]]), np.array([[0, 0], [1, 0]]))
    with pytest.raises(DeterminismError):
        visited_states(data, 2)


def test_empty_dataset_visits_nothing():
    idx = visited_states(Dataset.empty(4), 3)
    assert not idx.visited.any()


def test_expert_data_is_consistent(rng):
    mdp = random_mdp(4, 3, 6, rng)
    expert = sample_expert_prior(mdp, rng)
    idx = visited_states(collect_dataset(mdp, expert, 200, rng), 4)
    assert np.all(idx.pinned[idx.visited] == expert.actions[idx.visited])


def test_poissonized_counts_mean_and_overflow(rng):
    data = Dataset(np.zeros((40, 2), int), np.zeros((40, 2), int))
    ns = [poissonized_counts(data, 40, rng).n for _ in range(4000)]
    assert abs(np.mean(ns) - 20) < 4 * np.sqrt(20 / 4000)
    table = poissonized_counts(Dataset(np.zeros((1, 2), int), np.zeros((1, 2), int)), 1, np.random.default_rng(3))
    while not table.overflow:
        table = poissonized_counts(Dataset(np.zeros((1, 2), int), np.zeros((1, 2), int)), 1, rng)
    assert table.counts == {} and table.n > 1


def test_poissonized_counts_use_prefix():
    states = np.arange(10)[:, None] * np.ones((1, 2), int)
    table = poissonized_counts(Dataset(states, np.zeros((10, 2), int)), 10, np.random.default_rng(5))
    if not table.overflow:
        assert set(table.counts) == {(i, i) for i in range(table.n)}
        assert table.total() == table.n


def test_poissonized_counts_need_enough_data():
    with pytest.raises(ValueError):
        poissonized_counts(Dataset.empty(2), 5, np.random.default_rng(0))


def test_characteristic_skips_last_step_and_known_states():
    known = np.array([[True, False], [False, True], [False, False]])
    c = characteristic([1, 0, 1], known)
    assert c == Characteristic(((0, 1), (1, 0)))
    assert c.start == 0 and c.end == 1 and len(c.drop_start()) == 1
    assert len(characteristic([0, 1, 0], known)) == 0


def test_dataset_text_round_trip():
    data = toy_dataset()
    back = dataset_from_text(dataset_to_text(data))
    np.testing.assert_array_equal(back.states, data.states)
    np.testing.assert_array_equal(back.actions, data.actions)


def test_dataset_text_rejects_ragged_and_bad_lines():
    with pytest.raises(FormatError):
        dataset_from_text("0 1 0\n1 1 0\n\n0 1 0\n")
    with pytest.raises(FormatError):
        dataset_from_text("0 1\n")
    with pytest.raises(FormatError):
        dataset_from_text("1 0 0\n")


def test_from_policy_matches_mask(rng):
    mdp = random_mdp(3, 2, 4, rng)
    expert = sample_expert_prior(mdp, rng)
    mask = rng.random((4, 3)) < 0.5
    idx = VisitedIndex.from_policy(expert, mask)
    assert np.all(idx.pinned[~mask] == -1)
    assert np.all(idx.pinned[mask] == expert.actions[mask])


def test_zero_and_deterministic_collections(rng):
    P = np.zeros((3, 3, 1, 3))
    for s in range(3):
        P[:, s, 0, (s + 1) % 3] = 1.0
    mdp = TabularMDP(np.array([0.0, 1.0, 0.0]), P, np.array([1, 1, 1]))
    expert = DeterministicPolicy(np.zeros((4, 3), int))
    assert len(collect_dataset(mdp, expert, 0, rng)) == 0
    data = collect_dataset(mdp, expert, 25, rng)
    assert np.all(data.states == [1, 2, 0, 1])
    table = poissonized_counts(data, 25, rng)
    if not table.overflow:
        assert table.counts == ({(1, 2, 0, 1): table.n} if table.n else {})
    one = visited_states(data.subset(slice(0, 1)), 3)
    assert np.all(one.visited.sum(axis=1) == 1)


def test_four_state_first_state_counts():
    bundle = four_state_mdp(1000, 5, np.ones(4, int))
    data = collect_dataset(bundle.mdp, bundle.expert, 1000, np.random.default_rng(2))
    # Binomial(1000, 1/1000) lands in [0, 8] except with probability below 1e-5
    assert 0 <= int((data.states[:, 0] == STATE_TWO).sum()) <= 8


def test_split_membership_is_fair():
    data = Dataset(np.arange(10)[:, None] * np.ones((1, 2), int), np.zeros((10, 2), int))
    hits = np.zeros(10)
    for seed in range(10_000):
        d1, _ = split_dataset(data, np.random.default_rng(seed))
        hits[d1.states[:, 0]] += 1
    assert np.all(np.abs(hits / 10_000 - 0.5) <= 0.02)


def test_no_overflow_at_moderate_n():
    data = Dataset(np.zeros((64, 2), int), np.zeros((64, 2), int))
    assert not any(poissonized_counts(data, 64, np.random.default_rng(s)).overflow for s in range(10_000))


def test_poissonized_branch_count_mean():
    N, R = 20, 10_000
    bundle = four_state_mdp(N, 3, np.ones(2, int))
    rng = np.random.default_rng(9)
    totals = np.empty(R)
    for r in range(R):
        table = poissonized_counts(collect_dataset(bundle.mdp, bundle.expert, N, rng), N, rng)
        totals[r] = sum(x for key, x in table.counts.items() if key[0] == STATE_TWO)
    assert abs(totals.mean() - 0.5) <= 4 * totals.std() / np.sqrt(R)


def test_characteristic_single_missing_state():
    known = np.ones((4, 3), bool)
    known[1, 2] = False
    c = characteristic([0, 2, 1, 0], known)
    assert c.entries == ((1, 2),) and c.start == c.end == 1
    assert characteristic([0, 1, 1, 0], known).entries == ()
