"""Scenario configuration: schema, reference builders, built-in library.

Scenarios are declarative dictionaries (YAML files use the same shape) that
are validated and materialized into dataclasses. Built-ins cover the swap,
crossing and hover-intruder studies; every field can be overridden from the
command line with dotted key paths.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .avoidance import CollisionParams
from .dynamics import MavState, ModelParams, NX, POS, VEL, YAW
from .errors import ConfigError
from .ocp import OcpConfig, ReferenceTrajectory, input_reference


@dataclass
class NetworkConfig:
    """Simulated broadcast network between agents."""

    delay: float = 0.0             # fixed one-way latency, s
    jitter: float = 0.0            # uniform extra latency in [0, jitter], s
    drop_prob: float = 0.0         # per-message Bernoulli loss
    delay_compensation: bool = True
    clock_skew: dict = field(default_factory=dict)  # agent id -> offset, s

    def skew(self, agent_id: str) -> float:
        return float(self.clock_skew.get(agent_id, 0.0))


@dataclass
class AgentSpec:
    agent_id: str
    initial_state: MavState
    reference: ReferenceTrajectory
    rank: int = 0
    model: ModelParams = field(default_factory=ModelParams)
    meas_sigma_pos: float = 0.005  # m, per axis
    meas_sigma_vel: float = 0.01   # m/s, per axis

    @property
    def goal(self) -> np.ndarray:
        return self.reference.end_position

    def estimator_covariance(self) -> np.ndarray:
        """Constant 6x6 covariance published alongside the state."""
        return np.diag(
            [self.meas_sigma_pos**2] * 3 + [self.meas_sigma_vel**2] * 3
        )

    def self_covariance(self) -> np.ndarray:
        """9x9 ego-state covariance used for radius inflation."""
        out = np.zeros((NX, NX))
        out[:6, :6] = self.estimator_covariance()
        return out


@dataclass
class ScenarioConfig:
    name: str
    agents: list[AgentSpec]
    seed: int
    duration: float
    network: NetworkConfig = field(default_factory=NetworkConfig)
    collision: CollisionParams = field(default_factory=CollisionParams)
    ocp: OcpConfig = field(default_factory=OcpConfig)
    control_rate: float = 100.0
    plant_substep_rate: float = 1000.0
    plant_mismatch: float = 0.10
    wind: np.ndarray = field(default_factory=lambda: np.zeros(3))
    observer_enabled: bool = True
    goal_tolerance: float = 0.1

    def validate(self) -> None:
        if self.seed is None:
            raise ConfigError("seed is mandatory")
        if self.control_rate <= 0:
            raise ConfigError("control_rate must be positive")
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        ids = [a.agent_id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ConfigError("agent ids must be unique")
        if not self.agents:
            raise ConfigError("scenario needs at least one agent")
        self.collision.validate()
        self.ocp.validate()
        for a in self.agents:
            a.model.validate()
            a.initial_state.validate()


def hover_reference(point, yaw: float = 0.0, gravity: float = 9.81) -> ReferenceTrajectory:
    """Constant reference at a point with flat-hover attitude."""
    state = np.zeros(NX)
    state[POS] = np.asarray(point, dtype=float)
    state[YAW] = yaw
    return ReferenceTrajectory(
        times=np.array([0.0]),
        states=state[None, :],
        accelerations=np.zeros((1, 3)),
        yaw_rates=np.zeros(1),
    )


def line_reference(
    start,
    end,
    peak_speed: float = 2.0,
    start_time: float = 0.0,
    yaw: float = 0.0,
    gravity: float = 9.81,
    sample_dt: float = 0.02,
) -> ReferenceTrajectory:
    """Straight segment with a smooth quintic time profile.

    The profile has zero velocity and acceleration at both ends and reaches
    `peak_speed` at the midpoint, so the reference ends in a hover at the
    goal.
    """
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    span = end - start
    length = float(np.linalg.norm(span))
    if length < 1e-9:
        return hover_reference(end, yaw, gravity)
    total = 1.875 * length / peak_speed  # quintic peak speed = 1.875 L / T
    times = np.arange(0.0, start_time + total + sample_dt, sample_dt)
    states = np.zeros((len(times), NX))
    accels = np.zeros((len(times), 3))
    for i, t in enumerate(times):
        tau = min(max((t - start_time) / total, 0.0), 1.0)
        s = tau**3 * (10.0 - 15.0 * tau + 6.0 * tau * tau)
        sd = 30.0 * tau * tau * (1.0 - tau) ** 2 / total
        sdd = 60.0 * tau * (1.0 - 3.0 * tau + 2.0 * tau * tau) / (total * total)
        states[i, POS] = start + s * span
        states[i, VEL] = sd * span
        accels[i] = sdd * span
        u_ref = input_reference(accels[i], yaw, gravity)
        states[i, 6] = u_ref[0]
        states[i, 7] = u_ref[1]
        states[i, YAW] = yaw
    return ReferenceTrajectory(
        times=times, states=states, accelerations=accels, yaw_rates=np.zeros(len(times))
    )


# ---------------------------------------------------------------------------
# Declarative schema

_DEFAULT_OCP = {
    "horizon": 2.0,
    "intervals": 20,
    "q_position": [10.0, 10.0, 20.0],
    "q_velocity": [5.0, 5.0, 8.0],
    "q_attitude": [2.0, 2.0, 2.0],
    "r_input": [60.0, 60.0, 1.0],
    "terminal_scale": 10.0,
    "roll_limit": 0.5236,
    "pitch_limit": 0.5236,
    "thrust_min": 1.0,
    "thrust_max": 20.0,
}

_DEFAULT_MODEL = {
    "mass": 1.5,
    "gravity": 9.81,
    "drag_coeff": 0.02,
    "roll_gain": 1.0,
    "pitch_gain": 1.0,
    "roll_tau": 0.2,
    "pitch_tau": 0.2,
}


def _build_reference(spec: dict, path: str, gravity: float) -> ReferenceTrajectory:
    kind = spec.get("type")
    if kind == "hover":
        return hover_reference(spec["point"], spec.get("yaw", 0.0), gravity)
    if kind == "line":
        return line_reference(
            spec["start"],
            spec["end"],
            peak_speed=spec.get("peak_speed", 2.0),
            start_time=spec.get("start_time", 0.0),
            yaw=spec.get("yaw", 0.0),
            gravity=gravity,
        )
    raise ConfigError(f"{path}.type must be 'hover' or 'line', got {kind!r}")


def scenario_from_dict(data: dict) -> ScenarioConfig:
    """Validate and materialize a scenario dictionary.

    Raises ConfigError with the offending field path on malformed input.
    """
    try:
        name = data.get("name", "unnamed")
        if "seed" not in data:
            raise ConfigError("seed: field is required")
        if "duration" not in data:
            raise ConfigError("duration: field is required")

        ocp_raw = {**_DEFAULT_OCP, **data.get("ocp", {})}
        q_diag = (
            list(ocp_raw["q_position"])
            + list(ocp_raw["q_velocity"])
            + list(ocp_raw["q_attitude"])
        )
        ocp_cfg = OcpConfig(
            horizon=float(ocp_raw["horizon"]),
            intervals=int(ocp_raw["intervals"]),
            q_state=np.diag([float(v) for v in q_diag]),
            r_input=np.diag([float(v) for v in ocp_raw["r_input"]]),
            terminal_scale=float(ocp_raw["terminal_scale"]),
            roll_limit=float(ocp_raw["roll_limit"]),
            pitch_limit=float(ocp_raw["pitch_limit"]),
            thrust_min=float(ocp_raw["thrust_min"]),
            thrust_max=float(ocp_raw["thrust_max"]),
        )

        coll_raw = data.get("collision", {})
        collision = CollisionParams(
            r_min=float(coll_raw.get("r_min", 0.9)),
            r_th=float(coll_raw.get("r_th", 1.2)),
            q_cost=float(coll_raw.get("q_cost", 100.0)),
            steepness=float(coll_raw.get("steepness", 8.0)),
            v_threshold=float(coll_raw.get("v_threshold", 0.05)),
        )

        net_raw = data.get("network", {})
        network = NetworkConfig(
            delay=float(net_raw.get("delay", 0.0)),
            jitter=float(net_raw.get("jitter", 0.0)),
            drop_prob=float(net_raw.get("drop_prob", 0.0)),
            delay_compensation=bool(net_raw.get("delay_compensation", True)),
            clock_skew=dict(net_raw.get("clock_skew", {})),
        )

        agents = []
        for i, a in enumerate(data.get("agents", [])):
            path = f"agents.{i}"
            if "id" not in a:
                raise ConfigError(f"{path}.id: field is required")
            model_raw = {**_DEFAULT_MODEL, **a.get("model", {})}
            model = ModelParams(
                mass=float(model_raw["mass"]),
                gravity=float(model_raw["gravity"]),
                drag_coeff=float(model_raw["drag_coeff"]),
                roll_gain=float(model_raw["roll_gain"]),
                pitch_gain=float(model_raw["pitch_gain"]),
                roll_tau=float(model_raw["roll_tau"]),
                pitch_tau=float(model_raw["pitch_tau"]),
            )
            if "reference" not in a:
                raise ConfigError(f"{path}.reference: field is required")
            reference = _build_reference(a["reference"], f"{path}.reference", model.gravity)
            start = np.asarray(a.get("start", [0.0, 0.0, 1.5]), dtype=float)
            if start.shape != (3,):
                raise ConfigError(f"{path}.start must be a 3-vector")
            state = MavState(position=start, yaw=float(a.get("yaw", 0.0)))
            agents.append(
                AgentSpec(
                    agent_id=str(a["id"]),
                    initial_state=state,
                    reference=reference,
                    rank=int(a.get("rank", 0)),
                    model=model,
                    meas_sigma_pos=float(a.get("meas_sigma_pos", 0.005)),
                    meas_sigma_vel=float(a.get("meas_sigma_vel", 0.01)),
                )
            )

        config = ScenarioConfig(
            name=str(name),
            agents=agents,
            seed=int(data["seed"]),
            duration=float(data["duration"]),
            network=network,
            collision=collision,
            ocp=ocp_cfg,
            control_rate=float(data.get("control_rate", 100.0)),
            plant_substep_rate=float(data.get("plant_substep_rate", 1000.0)),
            plant_mismatch=float(data.get("plant_mismatch", 0.10)),
            wind=np.asarray(data.get("wind", [0.0, 0.0, 0.0]), dtype=float),
            observer_enabled=bool(data.get("observer_enabled", True)),
            goal_tolerance=float(data.get("goal_tolerance", 0.1)),
        )
        config.validate()
        return config
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed scenario: {exc}") from exc


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply `path.to.key=value` overrides onto a scenario dictionary.

    Values are parsed as YAML scalars, list indices are plain integers.
    """
    out = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, _, raw = item.partition("=")
        tokens = key.strip().split(".")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {item!r}: unparseable value: {exc}") from exc
        node = out
        for i, tok in enumerate(tokens):
            last = i == len(tokens) - 1
            if isinstance(node, list):
                try:
                    idx = int(tok)
                except ValueError as exc:
                    raise ConfigError(f"override {key}: {tok!r} is not a list index") from exc
                if last:
                    node[idx] = value
                else:
                    node = node[idx]
            else:
                if last:
                    node[tok] = value
                else:
                    if tok not in node:
                        node[tok] = {}
                    node = node[tok]
    return out


def load_scenario_file(path: str) -> dict:
    """Read a YAML scenario file, reporting parse problems with context."""
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"scenario file not found: {path}")
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"cannot parse {path}{where}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


# ---------------------------------------------------------------------------
# Built-in scenarios

_ALTITUDE = 1.5
_SWAP_RADIUS = 4.0


def _cross2_dict() -> dict:
    return {
        "name": "cross2",
        "seed": 1,
        "duration": 8.5,
        "agents": [
            {
                "id": "a0",
                "start": [-3.0, -2.0, _ALTITUDE],
                "rank": 0,
                "reference": {
                    "type": "line",
                    "start": [-3.0, -2.0, _ALTITUDE],
                    "end": [3.0, 2.0, _ALTITUDE],
                    "peak_speed": 2.0,
                    "start_time": 0.3,
                },
            },
            {
                "id": "a1",
                "start": [3.0, -2.0, _ALTITUDE],
                "rank": 0,
                "reference": {
                    "type": "line",
                    "start": [3.0, -2.0, _ALTITUDE],
                    "end": [-3.0, 2.0, _ALTITUDE],
                    "peak_speed": 2.0,
                    "start_time": 0.3,
                },
            },
        ],
    }


def _swap6_dict(prioritized: bool) -> dict:
    agents = []
    for i in range(6):
        angle = 2.0 * math.pi * i / 6.0
        start = [
            _SWAP_RADIUS * math.cos(angle),
            _SWAP_RADIUS * math.sin(angle),
            _ALTITUDE,
        ]
        goal = [-start[0], -start[1], _ALTITUDE]
        agents.append(
            {
                "id": f"a{i}",
                "start": start,
                "rank": i if prioritized else 0,
                "reference": {
                    "type": "line",
                    "start": start,
                    "end": goal,
                    "peak_speed": 2.0,
                    "start_time": 0.3,
                },
            }
        )
    return {
        "name": "swap6_priority" if prioritized else "swap6_reciprocal",
        "seed": 1,
        "duration": 11.0,
        # Six simultaneous conflicts at the circle center need an earlier,
        # stronger repulsion than the two-agent defaults.
        "collision": {"q_cost": 200.0, "steepness": 5.0},
        "agents": agents,
    }


def _hover_intruder_dict() -> dict:
    return {
        "name": "hover_intruder",
        "seed": 1,
        "duration": 11.0,
        "agents": [
            {
                "id": "intruder",
                "start": [-4.0, 0.0, _ALTITUDE],
                "rank": 0,
                "reference": {
                    "type": "line",
                    "start": [-4.0, 0.0, _ALTITUDE],
                    "end": [4.0, 0.0, _ALTITUDE],
                    "peak_speed": 2.0,
                    "start_time": 0.5,
                },
            },
            {
                "id": "hoverer",
                "start": [0.0, 0.0, _ALTITUDE],
                "rank": 1,
                "reference": {"type": "hover", "point": [0.0, 0.0, _ALTITUDE]},
            },
        ],
    }


def single_hover_dict(wind=(0.0, 0.0, 0.0), observer_enabled: bool = True) -> dict:
    """One vehicle holding position; used by the wind-rejection studies."""
    return {
        "name": "single_hover",
        "seed": 1,
        "duration": 8.0,
        "wind": list(wind),
        "observer_enabled": observer_enabled,
        "agents": [
            {
                "id": "solo",
                "start": [0.0, 0.0, _ALTITUDE],
                "rank": 0,
                "reference": {"type": "hover", "point": [0.0, 0.0, _ALTITUDE]},
            }
        ],
    }


_BUILTINS = {
    "cross2": _cross2_dict,
    "swap6_reciprocal": lambda: _swap6_dict(False),
    "swap6_priority": lambda: _swap6_dict(True),
    "hover_intruder": _hover_intruder_dict,
}

SCENARIO_DESCRIPTIONS = {
    "cross2": "two agents on crossing diagonal references at 2 m/s",
    "swap6_reciprocal": "six agents on a circle swap to antipodal points, everyone avoids everyone",
    "swap6_priority": "six-agent swap with a strict priority ordering",
    "hover_intruder": "a hovering agent yields to a high-priority intruder flying through its position",
}


def scenario_dict(name: str) -> dict:
    """Fresh declarative dictionary for a built-in scenario."""
    if name not in _BUILTINS:
        raise ConfigError(
            f"unknown scenario {name!r}; available: {', '.join(sorted(_BUILTINS))}"
        )
    return _BUILTINS[name]()


def scenario_library() -> dict[str, ScenarioConfig]:
    """All built-in scenarios, materialized with their default seeds."""
    return {name: scenario_from_dict(builder()) for name, builder in _BUILTINS.items()}


def solo_variant(data: dict, agent_id: str) -> dict:
    """Same scenario reduced to a single agent (for baseline comparisons)."""
    out = copy.deepcopy(data)
    agents = [a for a in out["agents"] if str(a["id"]) == agent_id]
    if not agents:
        raise ConfigError(f"agent {agent_id!r} not in scenario")
    out["agents"] = agents
    out["name"] = f"{out['name']}_solo_{agent_id}"
    return out
