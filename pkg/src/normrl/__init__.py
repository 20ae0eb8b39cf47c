"""Grounded institutions, norm monitoring and norm-shaped Q-learning."""
from .institution import (
    DomainVocabulary,
    Grounding,
    Institution,
    Norm,
    Triple,
    check_admissible,
    parse_grounding,
    parse_institution,
)
from .norms import NormMonitor, NormState, adheres, make_monitors, oracle_eval
from .shaping import Scheme, ShapingPolicy, TransitionTable, full_adherence_reward
from .trajectory import StateVariable, Trajectory

__version__ = "0.1.0"

__all__ = [
    "DomainVocabulary", "Grounding", "Institution", "Norm", "Triple", "check_admissible",
    "parse_grounding", "parse_institution", "NormMonitor", "NormState", "adheres", "make_monitors",
    "oracle_eval", "Scheme", "ShapingPolicy", "TransitionTable", "full_adherence_reward",
    "StateVariable", "Trajectory",
]
