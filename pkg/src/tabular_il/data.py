"""Expert demonstrations: collection, splitting, visited-state bookkeeping,
Poissonized counts and trajectory characteristics."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .mdp import DeterministicPolicy, TabularMDP, sample_trajectories


class DeterminismError(ValueError):
    """Two demonstrations disagree on the expert action at the same (t, s)."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """``N`` expert trajectories stored as ``(N, H)`` state and action arrays."""

    states: np.ndarray
    actions: np.ndarray
    source_mdp_id: str = ""
    seed: int | None = None

    def __post_init__(self):
        s = np.asarray(self.states, dtype=int)
        a = np.asarray(self.actions, dtype=int)
        if s.ndim != 2 or s.shape != a.shape:
            raise ValueError("states and actions must be (N, H) arrays of equal shape")
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "actions", a)

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.states.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.states[idx], self.actions[idx], self.source_mdp_id, self.seed)

    def truncate(self, horizon: int) -> "Dataset":
        return Dataset(self.states[:, :horizon], self.actions[:, :horizon], self.source_mdp_id, self.seed)

    @classmethod
    def empty(cls, horizon: int, source_mdp_id: str = "") -> "Dataset":
        return cls(np.zeros((0, horizon), int), np.zeros((0, horizon), int), source_mdp_id)


def collect_dataset(mdp: TabularMDP, expert: DeterministicPolicy, n: int,
                    rng: np.random.Generator, seed: int | None = None) -> Dataset:
    if not isinstance(expert, DeterministicPolicy):
        raise TypeError("the expert must be a deterministic policy")
    states, actions = sample_trajectories(mdp, expert, n, rng)
    return Dataset(states, actions, mdp.name, seed)


def split_dataset(dataset: Dataset, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """Random permutation; the first ``floor(N/2)`` trajectories form ``D1``."""
    n = len(dataset)
    if n < 2:
        raise ValueError(f"need at least 2 trajectories to split, got {n}")
    perm = rng.permutation(n)
    half = n // 2
    return dataset.subset(perm[:half]), dataset.subset(perm[half:])


@dataclass(frozen=True, eq=False)
class VisitedIndex:
    """Per-time visited states and the expert action pinned at each of them.

    ``pinned[t, s]`` is ``-1`` where ``visited[t, s]`` is false. The same
    structure describes any set of states with known expert actions.
    """

    visited: np.ndarray
    pinned: np.ndarray

    @property
    def horizon(self) -> int:
        return self.visited.shape[0]

    def states_at(self, t: int) -> set[int]:
        return set(np.nonzero(self.visited[t])[0].tolist())

    def is_mimic(self, actions: np.ndarray) -> bool:
        """Membership test for the set of deterministic policies agreeing on visited states."""
        return bool(np.all(actions[self.visited] == self.pinned[self.visited]))

    def truncate(self, horizon: int) -> "VisitedIndex":
        return VisitedIndex(self.visited[:horizon], self.pinned[:horizon])

    @classmethod
    def from_policy(cls, expert: DeterministicPolicy, mask) -> "VisitedIndex":
        mask = np.asarray(mask, dtype=bool)
        return cls(mask, np.where(mask, expert.actions, -1))


def visited_states(dataset: Dataset, num_states: int) -> VisitedIndex:
    H = dataset.horizon
    visited = np.zeros((H, num_states), dtype=bool)
    pinned = np.full((H, num_states), -1, dtype=int)
    if len(dataset) == 0:
        return VisitedIndex(visited, pinned)
    t = np.broadcast_to(np.arange(H), dataset.states.shape).ravel()
    s = dataset.states.ravel()
    a = dataset.actions.ravel()
    visited[t, s] = True
    pinned[t, s] = a
    if np.any(pinned[t, s] != a):
        i = int(np.nonzero(pinned[t, s] != a)[0][0])
        raise DeterminismError(f"conflicting expert actions at time {t[i]}, state {s[i]}")
    return VisitedIndex(visited, pinned)


@dataclass
class CountTable:
    """Counts ``X(tr)`` of state sequences among the first ``n ~ Poi(N/2)`` trajectories."""

    counts: dict[tuple[int, ...], int]
    n: int
    overflow: bool
    actions: dict[tuple[int, ...], tuple[int, ...]] = field(default_factory=dict)

    def total(self) -> int:
        return sum(self.counts.values())


def poissonized_counts(dataset: Dataset, N: int, rng: np.random.Generator) -> CountTable:
    """Draw ``n ~ Poi(N/2)``; count state sequences among the first ``n`` trajectories.

    When ``n > N`` the table comes back empty with ``overflow`` set; the
    caller decides the fallback.
    """
    if len(dataset) < N:
        raise ValueError(f"dataset has {len(dataset)} trajectories, need {N}")
    n = int(rng.poisson(N / 2))
    if n > N:
        return CountTable({}, n, True)
    keys = [tuple(row) for row in dataset.states[:n].tolist()]
    counts = dict(Counter(keys))
    actions = {}
    for key, acts in zip(keys, dataset.actions[:n].tolist()):
        actions.setdefault(key, tuple(acts))
    return CountTable(counts, n, False, actions)


@dataclass(frozen=True)
class Characteristic:
    """Times (before the last one) and states at which a trajectory leaves ``S0``."""

    entries: tuple[tuple[int, int], ...]

    @property
    def start(self) -> int | None:
        return self.entries[0][0] if self.entries else None

    @property
    def end(self) -> int | None:
        return self.entries[-1][0] if self.entries else None

    def __len__(self):
        return len(self.entries)

    def drop_start(self) -> "Characteristic":
        return Characteristic(self.entries[1:])


def characteristic(states, known: np.ndarray) -> Characteristic:
    """``{(t, s_t) : t < H-1, s_t not in S0 at time t}`` in time order.

    ``known`` is the ``(H, S)`` boolean mask of ``S0``.
    """
    states = list(states)
    H = len(states)
    if known.shape[0] != H:
        raise ValueError("trajectory length does not match S0 horizon")
    return Characteristic(tuple((t, s) for t, s in enumerate(states[: H - 1]) if not known[t, s]))
