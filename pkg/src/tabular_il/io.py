"""File formats used by the CLI.

MDPs and policies are JSON objects with named fields; every tensor is a nested
list in row-major order, so ``transitions[t][s][a][s2]`` is
``Pr(s_{t+1} = s2 | s_t = s, a_t = a)``.

MDP fields: ``kind`` (``"tabular-mdp"``), ``name``, ``horizon``,
``num_states``, ``num_actions``, ``actions_per_state``, ``initial_dist``,
``transitions`` (H-1, S, A, S) and ``rewards`` (H, S, A, or ``null``).

Policy fields: ``kind`` is ``deterministic`` (``actions`` H x S),
``stochastic`` (``probs`` H x S x A), ``flag-aware`` (``probs`` H x S x 2 x A
plus boolean ``unseen`` H x S) or ``mixture`` (``alpha``, ``left``, ``right``,
each component a policy object).

Datasets are plain text: one ``t s a`` line per step, a blank line between
episodes, and ``#`` comment lines ignored.
"""

from __future__ import annotations

import json

import numpy as np

from .data import Dataset
from .mdp import (DeterministicPolicy, FlagAwarePolicy, MixturePolicy, Policy, StochasticPolicy,
                  TabularMDP)


class FormatError(ValueError):
    pass


def mdp_to_dict(mdp: TabularMDP) -> dict:
    return {
        "kind": "tabular-mdp",
        "name": mdp.name,
        "horizon": mdp.horizon,
        "num_states": mdp.num_states,
        "num_actions": mdp.num_actions,
        "actions_per_state": mdp.actions_per_state.tolist(),
        "initial_dist": mdp.initial_dist.tolist(),
        "transitions": mdp.transitions.tolist(),
        "rewards": None if mdp.rewards is None else mdp.rewards.tolist(),
    }


def mdp_from_dict(data: dict) -> TabularMDP:
    if data.get("kind") != "tabular-mdp":
        raise FormatError("not a tabular-mdp object")
    try:
        H, S, A = data["horizon"], data["num_states"], data["num_actions"]
        P = np.asarray(data["transitions"], dtype=float).reshape(H - 1, S, A, S)
        r = data.get("rewards")
        mdp = TabularMDP(np.asarray(data["initial_dist"], dtype=float), P,
                         np.asarray(data["actions_per_state"], dtype=int),
                         None if r is None else np.asarray(r, dtype=float),
                         name=data.get("name", "mdp"))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad MDP file: {exc}") from exc
    return mdp


def policy_to_dict(policy: Policy) -> dict:
    if isinstance(policy, DeterministicPolicy):
        return {"kind": "deterministic", "actions": policy.actions.tolist()}
    if isinstance(policy, StochasticPolicy):
        return {"kind": "stochastic", "probs": policy.probs.tolist()}
    if isinstance(policy, FlagAwarePolicy):
        return {"kind": "flag-aware", "probs": policy.probs.tolist(), "unseen": policy.unseen.tolist()}
    if isinstance(policy, MixturePolicy):
        return {"kind": "mixture", "alpha": policy.alpha,
                "left": policy_to_dict(policy.left), "right": policy_to_dict(policy.right)}
    raise TypeError(f"cannot serialise {type(policy).__name__}")


def policy_from_dict(data: dict) -> Policy:
    kind = data.get("kind")
    if kind == "deterministic":
        return DeterministicPolicy(np.asarray(data["actions"], dtype=int))
    if kind == "stochastic":
        return StochasticPolicy(np.asarray(data["probs"], dtype=float))
    if kind == "flag-aware":
        return FlagAwarePolicy(np.asarray(data["probs"], dtype=float), np.asarray(data["unseen"], dtype=bool))
    if kind == "mixture":
        return MixturePolicy(float(data["alpha"]), policy_from_dict(data["left"]), policy_from_dict(data["right"]))
    raise FormatError(f"unknown policy kind {kind!r}")


def save_json(obj: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh)
        fh.write("\n")


def load_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def save_mdp(mdp: TabularMDP, path: str) -> None:
    save_json(mdp_to_dict(mdp), path)


def load_mdp(path: str) -> TabularMDP:
    return mdp_from_dict(load_json(path))


def save_policy(policy: Policy, path: str) -> None:
    save_json(policy_to_dict(policy), path)


def load_policy(path: str) -> Policy:
    return policy_from_dict(load_json(path))


def dataset_to_text(dataset: Dataset) -> str:
    episodes = []
    for states, actions in zip(dataset.states, dataset.actions):
        episodes.append("\n".join(f"{t} {s} {a}" for t, (s, a) in enumerate(zip(states, actions))))
    return "\n\n".join(episodes) + ("\n" if episodes else "")


def dataset_from_text(text: str, source_mdp_id: str = "") -> Dataset:
    episodes, current = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("#"):
            continue
        if not line:
            if current:
                episodes.append(current)
                current = []
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"line {lineno}: expected 't s a', got {raw!r}")
        t, s, a = (int(p) for p in parts)
        if t != len(current):
            raise FormatError(f"line {lineno}: time {t} out of order (expected {len(current)})")
        current.append((s, a))
    if current:
        episodes.append(current)
    if not episodes:
        raise FormatError("no episodes found")
    H = len(episodes[0])
    if any(len(ep) != H for ep in episodes):
        raise FormatError("episodes have different lengths")
    arr = np.asarray(episodes, dtype=int)
    return Dataset(arr[:, :, 0], arr[:, :, 1], source_mdp_id)


def save_dataset(dataset: Dataset, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(dataset_to_text(dataset))


def load_dataset(path: str) -> Dataset:
    with open(path) as fh:
        return dataset_from_text(fh.read())
