"""Decentralized multi-agent simulation.

Each agent runs its own estimator, disturbance observer and one solver
iteration per control cycle, reading only the snapshots other agents
published on a delayed broadcast bus. Plants integrate the same model
family with deliberately perturbed parameters. Everything is driven by
per-agent seeded RNG streams, so runs are bit-reproducible and an agent's
randomness does not depend on who else is in the scenario.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np

from . import avoidance, ocp, sqp
from .avoidance import AgentBelief
from .dynamics import NX, POS, VEL, integrate_rk4
from .errors import ConfigError, ModelDomainError
from .observer import DisturbanceEstimate, ObserverConfig, observer_update
from .scenarios import AgentSpec, ScenarioConfig


@dataclass
class PriorityGraph:
    """Directed avoidance relation: key avoids every agent in its set."""

    avoids: dict[str, frozenset[str]]

    def out_degree(self, agent_id: str) -> int:
        return len(self.avoids.get(agent_id, frozenset()))

    def edge_count(self) -> int:
        return sum(len(v) for v in self.avoids.values())


def build_priority_graph(ranks: dict[str, int]) -> PriorityGraph:
    """Reciprocal mode (all ranks equal) yields the complete graph; ranked
    mode (all ranks distinct) makes lower-priority agents (larger rank)
    avoid strictly higher-priority ones."""
    ids = sorted(ranks)
    values = [ranks[i] for i in ids]
    if len(set(values)) == 1:
        avoids = {i: frozenset(j for j in ids if j != i) for i in ids}
        return PriorityGraph(avoids)
    if len(set(values)) != len(values):
        raise ConfigError("ranked priorities must be all distinct (or all equal)")
    avoids = {
        i: frozenset(j for j in ids if ranks[j] < ranks[i]) for i in ids
    }
    return PriorityGraph(avoids)


@dataclass(frozen=True)
class BusMessage:
    """Broadcast state snapshot; immutable once published."""

    sender: str
    position: tuple
    velocity: tuple
    covariance: tuple
    stamp: float


@dataclass
class TickRecord:
    """Everything logged for one agent at one control tick."""

    tick: int
    t: float
    agent: str
    true_state: np.ndarray
    est_state: np.ndarray
    applied_input: np.ndarray
    f_ext_est: np.ndarray
    ref_position: np.ndarray
    kkt: float
    iterations: int
    status: str
    slack_count: int
    slack_max: float
    neighbor_dist: dict
    neighbor_rmin: dict
    neighbor_rth: dict


@dataclass
class SimResult:
    config: ScenarioConfig
    records: list
    events: list          # (t, agent, kind, detail)
    solve_ms: list        # wall-clock solver time per (tick, agent)
    wall_time: float = 0.0


class _AgentRuntime:
    """Mutable per-agent simulation state."""

    def __init__(self, spec: AgentSpec, cfg: ScenarioConfig):
        self.spec = spec
        self.plant_x = spec.initial_state.as_vector()
        self.est_x = self.plant_x.copy()
        self.prev_est_x: np.ndarray | None = None
        self.prev_input = np.array([0.0, 0.0, spec.model.gravity])
        self.prev_yaw_rate = 0.0
        self.disturbance = DisturbanceEstimate()
        self.guess: sqp.SqpSolution | None = None
        self.last_shift = 0.0
        self.beliefs: dict[str, AgentBelief] = {}
        self.inbox: list = []
        self.rng_meas = _stream(cfg.seed, spec.agent_id, "meas")
        self.rng_net = _stream(cfg.seed, spec.agent_id, "net")
        # Plant runs the same model family with perturbed parameters.
        m = spec.model
        pct = cfg.plant_mismatch
        self.plant_prm = type(m)(
            mass=m.mass,
            gravity=m.gravity,
            drag_coeff=m.drag_coeff * (1.0 + pct),
            roll_gain=m.roll_gain,
            pitch_gain=m.pitch_gain,
            roll_tau=m.roll_tau * (1.0 + pct),
            pitch_tau=m.pitch_tau * (1.0 - pct),
        )
        self.self_cov0 = spec.self_covariance()
        self.est_cov = spec.estimator_covariance()


def _stream(seed: int, agent_id: str, purpose: str) -> np.random.Generator:
    """Deterministic per-agent RNG stream, independent of the agent set."""
    digest = hashlib.sha256(f"{agent_id}:{purpose}".encode()).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, key])))


class World:
    """Simulation state plus the per-tick control/plant/bus cycle."""

    def __init__(self, config: ScenarioConfig, settings: sqp.SqpSettings | None = None):
        config.validate()
        self.cfg = config
        self.settings = settings or sqp.SqpSettings()
        self.dt = 1.0 / config.control_rate
        self.graph = build_priority_graph({a.agent_id: a.rank for a in config.agents})
        self.agents = [_AgentRuntime(a, config) for a in config.agents]
        self.time = 0.0
        self.tick = 0
        self.records: list[TickRecord] = []
        self.events: list = []
        self.solve_ms: list = []
        self.obs_cfg = ObserverConfig()
        # Agents know the initial formation; later beliefs arrive by radio.
        for ag in self.agents:
            for other in self.agents:
                if other is ag:
                    continue
                ag.beliefs[other.spec.agent_id] = AgentBelief(
                    agent_id=other.spec.agent_id,
                    position=other.plant_x[POS].copy(),
                    velocity=other.plant_x[VEL].copy(),
                    covariance=other.est_cov.copy(),
                    stamp=0.0,
                    priority=other.spec.rank,
                )
        # Instantaneous inflated radii per pair, used for logging and the
        # safety check (zero-horizon covariances are scenario constants).
        self.pair_rmin = {}
        self.pair_rth = {}
        for a in self.agents:
            for b in self.agents:
                if a is b:
                    continue
                ra, rb = avoidance.inflate_radii(
                    a.self_cov0, b.est_cov, config.collision
                )
                self.pair_rmin[(a.spec.agent_id, b.spec.agent_id)] = ra
                self.pair_rth[(a.spec.agent_id, b.spec.agent_id)] = rb

    # ------------------------------------------------------------------

    def _deliver(self, ag: _AgentRuntime, now: float) -> None:
        due = [m for arr, m in ag.inbox if arr <= now + 1e-12]
        ag.inbox = [(arr, m) for arr, m in ag.inbox if arr > now + 1e-12]
        for msg in due:
            current = ag.beliefs.get(msg.sender)
            if current is not None and current.stamp >= msg.stamp:
                continue
            ag.beliefs[msg.sender] = AgentBelief(
                agent_id=msg.sender,
                position=np.asarray(msg.position),
                velocity=np.asarray(msg.velocity),
                covariance=np.asarray(msg.covariance).reshape(6, 6),
                stamp=msg.stamp,
                priority=0,
            )

    def _control(self, ag: _AgentRuntime, now: float) -> sqp.SqpSolution | None:
        """Measurement, observer and one solver iteration for one agent."""
        spec = ag.spec
        noise_p = ag.rng_meas.standard_normal(3) * spec.meas_sigma_pos
        noise_v = ag.rng_meas.standard_normal(3) * spec.meas_sigma_vel
        ag.est_x = ag.plant_x.copy()
        ag.est_x[POS] += noise_p
        ag.est_x[VEL] += noise_v

        if self.cfg.observer_enabled and ag.prev_est_x is not None:
            predicted = integrate_rk4(
                ag.prev_est_x,
                ag.prev_input,
                ag.disturbance.force,
                spec.model,
                self.dt,
                ag.prev_yaw_rate,
            )
            ag.disturbance = observer_update(
                ag.disturbance, ag.est_x, predicted, self.dt, spec.model, self.obs_cfg
            )

        grid_dt = self.cfg.ocp.dt
        if ag.guess is not None and now - ag.last_shift >= grid_dt - 1e-9:
            ag.guess = sqp.shift_warm_start(ag.guess)
            ag.last_shift += grid_dt

        avoided = self.graph.avoids.get(spec.agent_id, frozenset())
        beliefs = [b for b in ag.beliefs.values() if b.agent_id in avoided]

        node_times = now + grid_dt * np.arange(self.cfg.ocp.intervals + 1)
        _, _, yaw_rates = spec.reference.sample_many(node_times[:-1])

        sens = None
        self_sigmas = None
        if ag.guess is not None:
            try:
                sens = sqp.rollout_sensitivities(
                    ag.guess.states,
                    ag.guess.inputs,
                    ag.disturbance.force,
                    spec.model,
                    grid_dt,
                    yaw_rates,
                )
                covs = avoidance.propagate_covariance_self(
                    ag.self_cov0,
                    ag.guess.states,
                    ag.guess.inputs,
                    ag.disturbance.force,
                    spec.model,
                    grid_dt,
                    transitions=sens[1],
                )
                lam = np.linalg.eigvalsh(covs[:, :3, :3])[:, -1]
                self_sigmas = np.sqrt(np.maximum(lam, 0.0))
            except ModelDomainError:
                return None

        try:
            problem = ocp.assemble(
                ag.est_x,
                now,
                spec.reference,
                beliefs,
                self.cfg.ocp,
                self.cfg.collision,
                spec.model,
                f_ext=ag.disturbance.force,
                self_cov0=None if self_sigmas is not None else ag.self_cov0,
                self_sigmas=self_sigmas,
                delay_compensation=self.cfg.network.delay_compensation,
            )
        except ModelDomainError:
            return None

        if ag.guess is None:
            ag.guess = sqp.cold_start(problem)
            ag.last_shift = now

        sol = sqp.sqp_step(problem, ag.guess, spec.model, self.settings, sens=sens)
        return sol

    def step(self) -> None:
        """Advance the world by one control period."""
        now = self.time
        cfg = self.cfg
        snapshot = {ag.spec.agent_id: ag.plant_x.copy() for ag in self.agents}

        applied: dict[str, np.ndarray] = {}
        for ag in self.agents:
            aid = ag.spec.agent_id
            self._deliver(ag, now)
            t_solve = time.perf_counter()
            sol = self._control(ag, now)
            elapsed_ms = (time.perf_counter() - t_solve) * 1e3

            if sol is None or sol.status in ("model_domain_error", "line_search_failed"):
                u = ag.prev_input.copy()
                status = sol.status if sol is not None else "model_domain_error"
                self.events.append((now, aid, "solver_failure", status))
                kkt, iters, s_count, s_max = np.inf, 0, 0, 0.0
            else:
                ag.guess = sol
                u = np.clip(
                    sol.inputs[0], cfg.ocp.input_lower, cfg.ocp.input_upper
                )
                status = sol.status
                kkt, iters = sol.kkt_residual, sol.iterations
                s_count, s_max = sol.slack_count, sol.slack_max
                if s_count:
                    self.events.append((now, aid, "slack_activation", s_count))
            self.solve_ms.append(elapsed_ms)
            applied[aid] = u

            x_ref, _, yaw_rate_now = ag.spec.reference.sample(now)
            ag.prev_est_x = ag.est_x.copy()
            ag.prev_input = u.copy()
            ag.prev_yaw_rate = float(yaw_rate_now)

            others = {
                oid: state for oid, state in snapshot.items() if oid != aid
            }
            dists = {
                oid: float(np.linalg.norm(snapshot[aid][POS] - st[POS]))
                for oid, st in others.items()
            }
            self.records.append(
                TickRecord(
                    tick=self.tick,
                    t=now,
                    agent=aid,
                    true_state=snapshot[aid],
                    est_state=ag.est_x.copy(),
                    applied_input=u.copy(),
                    f_ext_est=ag.disturbance.force.copy(),
                    ref_position=x_ref[POS].copy(),
                    kkt=float(kkt),
                    iterations=int(iters),
                    status=status,
                    slack_count=int(s_count),
                    slack_max=float(s_max),
                    neighbor_dist=dists,
                    neighbor_rmin={
                        oid: self.pair_rmin[(aid, oid)] for oid in others
                    },
                    neighbor_rth={
                        oid: self.pair_rth[(aid, oid)] for oid in others
                    },
                )
            )
            for oid, d in dists.items():
                if d < self.pair_rmin[(aid, oid)] - 1e-9:
                    self.events.append((now, aid, "hard_radius_violation", oid))

        # Plants advance only after every controller has read the tick's
        # snapshots (simultaneous-update semantics).
        for ag in self.agents:
            aid = ag.spec.agent_id
            u = applied[aid]
            n_sub = max(1, int(round(self.dt * cfg.plant_substep_rate)))
            h = self.dt / n_sub
            yaw_rate = ag.prev_yaw_rate
            for _ in range(n_sub):
                ag.plant_x = integrate_rk4(
                    ag.plant_x, u, cfg.wind, ag.plant_prm, h, yaw_rate
                )

            jitter = ag.rng_net.uniform(0.0, cfg.network.jitter) if cfg.network.jitter > 0 else 0.0
            dropped = ag.rng_net.random() < cfg.network.drop_prob
            if not dropped:
                msg = BusMessage(
                    sender=aid,
                    position=tuple(ag.est_x[POS]),
                    velocity=tuple(ag.est_x[VEL]),
                    covariance=tuple(ag.est_cov.ravel()),
                    stamp=now + cfg.network.skew(aid),
                )
                arrival = now + cfg.network.delay + jitter
                for other in self.agents:
                    if other is not ag:
                        other.inbox.append((arrival, msg))

        self.time += self.dt
        self.tick += 1

    def run(self) -> SimResult:
        t0 = time.perf_counter()
        n_ticks = int(round(self.cfg.duration * self.cfg.control_rate))
        for _ in range(n_ticks):
            self.step()
        return SimResult(
            config=self.cfg,
            records=self.records,
            events=self.events,
            solve_ms=self.solve_ms,
            wall_time=time.perf_counter() - t0,
        )


def step_world(world: World) -> World:
    """Advance a world by one control period (see :meth:`World.step`)."""
    world.step()
    return world


def simulate(config: ScenarioConfig, settings: sqp.SqpSettings | None = None) -> SimResult:
    """Build a world from the config and run it to the configured duration."""
    return World(config, settings=settings).run()
