"""Belief-graph policy/value networks that guide particle-belief tree search in POMDPs.

Typical use::

    from gammazero import RockSample, init_belief, plan, GnnEvaluator, SearchConfig
"""

from .belief import ExactBelief, ParticleBelief, exact_update, init_belief, update_belief
from .domains import LightDark, PomdpModel, RockSample, make_model
from .errors import GammaZeroError
from .gnn import GnnParameters, forward, load_params, save_params
from .gnn.train import TrainingConfig, TrainingSample, train
from .graph import BeliefGraph, build_graph
from .mcts import GnnEvaluator, RolloutEvaluator, SearchConfig, plan
from .oracle import Expert, ExpertConfig, collect_expert_data, expectimax

__version__ = "0.1.0"

__all__ = [
    "BeliefGraph", "ExactBelief", "Expert", "ExpertConfig", "GammaZeroError", "GnnEvaluator",
    "GnnParameters", "LightDark", "ParticleBelief", "PomdpModel", "RockSample", "RolloutEvaluator",
    "SearchConfig", "TrainingConfig", "TrainingSample", "build_graph", "collect_expert_data",
    "exact_update", "expectimax", "forward", "init_belief", "load_params", "make_model", "plan",
    "save_params", "train", "update_belief",
]
