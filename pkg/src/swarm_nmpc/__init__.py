"""Decentralized multi-vehicle trajectory tracking with reactive avoidance.

Core pieces: a 9-state vehicle model (`dynamics`), a finite-horizon
tracking problem with logistic avoidance costs (`ocp`), a condensed
Gauss-Newton SQP solver (`sqp`), neighbor prediction and uncertainty-based
radius inflation (`avoidance`), a wind observer (`observer`), a seeded
multi-agent simulator (`swarm`, `scenarios`) and a CLI (`cli`).
"""

from .avoidance import AgentBelief, CollisionParams, ObstaclePrediction
from .dynamics import ControlInput, ExternalForce, MavState, ModelParams
from .errors import ConfigError, ModelDomainError, SolverError
from .observer import DisturbanceEstimate
from .ocp import OcpConfig, OcpProblem, ReferenceTrajectory
from .scenarios import AgentSpec, NetworkConfig, ScenarioConfig
from .sqp import QpSubproblem, SqpSettings, SqpSolution
from .swarm import BusMessage, PriorityGraph, World, build_priority_graph

__version__ = "0.1.0"

__all__ = [
    "AgentBelief",
    "AgentSpec",
    "BusMessage",
    "CollisionParams",
    "ConfigError",
    "ControlInput",
    "DisturbanceEstimate",
    "ExternalForce",
    "MavState",
    "ModelDomainError",
    "ModelParams",
    "NetworkConfig",
    "ObstaclePrediction",
    "OcpConfig",
    "OcpProblem",
    "PriorityGraph",
    "QpSubproblem",
    "ReferenceTrajectory",
    "ScenarioConfig",
    "SolverError",
    "SqpSettings",
    "SqpSolution",
    "World",
    "build_priority_graph",
]
