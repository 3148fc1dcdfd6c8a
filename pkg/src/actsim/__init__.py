"""Discrete active-inference simulations of hallucination and its treatment."""

__version__ = "0.1.0"

from . import engine, errors, scenarios, services  # noqa: E402
from ._accel import backend  # noqa: E402
from .engine import (  # noqa: E402
    BeliefState,
    CategoricalDist,
    GenerativeModel,
    LikelihoodMatrix,
    Percept,
    Policy,
    PrecisionSet,
    TransitionSet,
)
from .fixtures import Fixture, load_fixture  # noqa: E402

__all__ = [
    "BeliefState",
    "CategoricalDist",
    "Fixture",
    "GenerativeModel",
    "LikelihoodMatrix",
    "Percept",
    "Policy",
    "PrecisionSet",
    "TransitionSet",
    "backend",
    "engine",
    "errors",
    "load_fixture",
    "scenarios",
    "services",
]
