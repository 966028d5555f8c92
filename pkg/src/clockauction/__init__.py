"""Deferred-acceptance clock auctions: simulation, evaluation and checks."""

from .errors import (
    CapacityError,
    ClockAuctionError,
    ContractViolation,
    InputError,
    NonTerminationError,
    UndefinedConditionalError,
)
from .feasibility import FeasibilitySystem
from .valuation import DiscreteFinite, Exponential, Instance, PointMass, Uniform
from .engine import ClockAuction, Round, Transcript, check_transcript
from .stats import Estimate
from .bayes import BayesParams, DecompositionEstimate
from .mechanisms import MechanismConfig, make_mechanism

__all__ = [
    "BayesParams",
    "CapacityError",
    "ClockAuction",
    "ClockAuctionError",
    "ContractViolation",
    "DecompositionEstimate",
    "DiscreteFinite",
    "Estimate",
    "Exponential",
    "FeasibilitySystem",
    "InputError",
    "Instance",
    "MechanismConfig",
    "NonTerminationError",
    "PointMass",
    "Round",
    "Transcript",
    "UndefinedConditionalError",
    "Uniform",
    "check_transcript",
    "make_mechanism",
]
