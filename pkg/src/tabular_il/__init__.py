"""Tabular imitation learning with known transitions: BC, Mimic-MD and Mimic-Mixture."""

from .data import Dataset, VisitedIndex, collect_dataset, split_dataset, visited_states
from .estimation import bc_policy, worst_case_suboptimality
from .mdp import (DeterministicPolicy, FlagAwarePolicy, MixturePolicy, StochasticPolicy, TabularMDP,
                  occupancy_measures, policy_value, state_marginals)
from .mimic_md import mimic_md
from .mixture import four_state_block_policy, mimic_mixture, three_state_composite

__all__ = [
    "Dataset", "VisitedIndex", "collect_dataset", "split_dataset", "visited_states",
    "bc_policy", "worst_case_suboptimality",
    "DeterministicPolicy", "FlagAwarePolicy", "MixturePolicy", "StochasticPolicy", "TabularMDP",
    "occupancy_measures", "policy_value", "state_marginals",
    "mimic_md", "mimic_mixture", "four_state_block_policy", "three_state_composite",
]
