"""Trajectory logs, run metrics, and their file formats.

The trajectory log is a comma-separated table with one row per agent per
control tick and a fixed, documented column order. Metrics are recomputed
from the written log (not from in-memory state), which makes replaying a
log reproduce the metrics file byte for byte. Wall-clock timing is kept in
a separate sidecar because it is inherently not reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .swarm import SimResult

HISTOGRAM_BIN = 0.1  # m

_BASE_COLUMNS = [
    "tick",
    "t",
    "agent",
    "px",
    "py",
    "pz",
    "vx",
    "vy",
    "vz",
    "roll",
    "pitch",
    "yaw",
    "est_px",
    "est_py",
    "est_pz",
    "est_vx",
    "est_vy",
    "est_vz",
    "est_roll",
    "est_pitch",
    "est_yaw",
    "u_roll_cmd",
    "u_pitch_cmd",
    "u_thrust",
    "fext_x",
    "fext_y",
    "fext_z",
    "ref_px",
    "ref_py",
    "ref_pz",
    "kkt",
    "iterations",
    "status",
    "slack_count",
    "slack_max",
]


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def log_columns(agent_ids: list[str]) -> list[str]:
    cols = list(_BASE_COLUMNS)
    for aid in sorted(agent_ids):
        cols += [f"d_{aid}", f"rmin_{aid}", f"rth_{aid}"]
    return cols


def write_trajectory_log(path: str, result: SimResult) -> None:
    agent_ids = sorted(a.agent_id for a in result.config.agents)
    cols = log_columns(agent_ids)
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for rec in result.records:
            row = [
                str(rec.tick),
                repr(float(rec.t)),
                rec.agent,
            ]
            row += [repr(float(v)) for v in rec.true_state]
            row += [repr(float(v)) for v in rec.est_state]
            row += [repr(float(v)) for v in rec.applied_input]
            row += [repr(float(v)) for v in rec.f_ext_est]
            row += [repr(float(v)) for v in rec.ref_position]
            row += [
                repr(float(rec.kkt)),
                str(rec.iterations),
                rec.status,
                str(rec.slack_count),
                repr(float(rec.slack_max)),
            ]
            for aid in agent_ids:
                if aid == rec.agent:
                    row += ["", "", ""]
                else:
                    row += [
                        repr(float(rec.neighbor_dist[aid])),
                        repr(float(rec.neighbor_rmin[aid])),
                        repr(float(rec.neighbor_rth[aid])),
                    ]
            fh.write(",".join(row) + "\n")


def read_trajectory_log(path: str) -> list[dict]:
    """Parse a trajectory log back into one dict per row."""
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split(",")
        rows = []
        for line in fh:
            parts = line.rstrip("\n").split(",")
            row = {}
            for key, raw in zip(header, parts):
                if raw == "":
                    row[key] = None
                elif key in ("tick", "iterations", "slack_count"):
                    row[key] = int(raw)
                elif key in ("agent", "status"):
                    row[key] = raw
                else:
                    row[key] = float(raw)
            rows.append(row)
    return rows


@dataclass
class RunMetrics:
    """Deterministic summary of one run plus (separate) timing stats."""

    scenario: str
    seed: int
    ticks: int
    goal_tolerance: float
    pair_min_distance: dict
    pair_violations: dict
    histogram: dict
    rms_tracking: dict
    goal_error: dict
    path_length: dict
    slack_activations: int
    hard_radius_violations: int
    kkt_max: float
    iterations_mean: float
    exit_code: int
    solve_ms_mean: float | None = None
    solve_ms_max: float | None = None

    def to_dict(self) -> dict:
        """Flatten to dotted keys; timing fields are intentionally absent."""
        out = {
            "scenario": self.scenario,
            "seed": self.seed,
            "ticks": self.ticks,
            "goal_tolerance": self.goal_tolerance,
            "histogram.bin_width": HISTOGRAM_BIN,
            "slack_activations": self.slack_activations,
            "hard_radius_violations": self.hard_radius_violations,
            "solver.kkt_max": self.kkt_max,
            "solver.iterations_mean": self.iterations_mean,
            "exit_code": self.exit_code,
        }
        for (a, b), v in sorted(self.pair_min_distance.items()):
            out[f"pair.{a}__{b}.min_distance"] = v
            out[f"pair.{a}__{b}.violations"] = self.pair_violations[(a, b)]
        for edge, count in sorted(self.histogram.items()):
            out[f"histogram.{edge:.1f}"] = count
        for aid in sorted(self.rms_tracking):
            out[f"agent.{aid}.rms_tracking"] = self.rms_tracking[aid]
            out[f"agent.{aid}.goal_error"] = self.goal_error[aid]
            out[f"agent.{aid}.path_length"] = self.path_length[aid]
        return out


def compute_metrics(
    rows: list[dict],
    scenario: str,
    seed: int,
    goal_tolerance: float,
    solve_ms: list | None = None,
) -> RunMetrics:
    """Derive the run summary from (parsed) trajectory-log rows."""
    agents = sorted({r["agent"] for r in rows})
    by_agent = {aid: [r for r in rows if r["agent"] == aid] for aid in agents}
    ticks = max((r["tick"] for r in rows), default=-1) + 1

    pair_min = {}
    pair_viol = {}
    histogram: dict[float, int] = {}
    for i, a in enumerate(agents):
        for b in agents[i + 1 :]:
            dists = np.array([r[f"d_{b}"] for r in by_agent[a]])
            rmins = np.array([r[f"rmin_{b}"] for r in by_agent[a]])
            pair_min[(a, b)] = float(dists.min()) if dists.size else float("inf")
            pair_viol[(a, b)] = int(np.sum(dists < rmins - 1e-9))
            for d in dists:
                edge = np.floor(d / HISTOGRAM_BIN) * HISTOGRAM_BIN
                histogram[round(edge, 1)] = histogram.get(round(edge, 1), 0) + 1

    rms = {}
    goal = {}
    path = {}
    for aid in agents:
        rs = by_agent[aid]
        p = np.array([[r["px"], r["py"], r["pz"]] for r in rs])
        ref = np.array([[r["ref_px"], r["ref_py"], r["ref_pz"]] for r in rs])
        err = np.linalg.norm(p - ref, axis=1)
        rms[aid] = float(np.sqrt(np.mean(err**2)))
        goal[aid] = float(err[-1])
        path[aid] = float(np.sum(np.linalg.norm(np.diff(p, axis=0), axis=1)))

    slack_rows = sum(1 for r in rows if r["slack_count"] > 0)
    violations = int(sum(pair_viol.values()))
    finite_kkt = [r["kkt"] for r in rows if np.isfinite(r["kkt"])]
    kkt_max = float(max(finite_kkt)) if finite_kkt else float("inf")
    iters_mean = float(np.mean([r["iterations"] for r in rows])) if rows else 0.0

    goals_ok = all(goal[aid] <= goal_tolerance for aid in agents)
    exit_code = 0 if (violations == 0 and goals_ok) else 1

    metrics = RunMetrics(
        scenario=scenario,
        seed=seed,
        ticks=ticks,
        goal_tolerance=goal_tolerance,
        pair_min_distance=pair_min,
        pair_violations=pair_viol,
        histogram=histogram,
        rms_tracking=rms,
        goal_error=goal,
        path_length=path,
        slack_activations=slack_rows,
        hard_radius_violations=violations,
        kkt_max=kkt_max,
        iterations_mean=iters_mean,
        exit_code=exit_code,
    )
    if solve_ms:
        metrics.solve_ms_mean = float(np.mean(solve_ms))
        metrics.solve_ms_max = float(np.max(solve_ms))
    return metrics


def write_metrics(path: str, metrics: RunMetrics) -> None:
    data = metrics.to_dict()
    with open(path, "w") as fh:
        for key in sorted(data):
            fh.write(f"{key} = {_fmt(data[key])}\n")


def read_metrics(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, raw = line.partition(" = ")
            try:
                value = int(raw)
            except ValueError:
                try:
                    value = float(raw)
                except ValueError:
                    value = raw
            out[key] = value
    return out


def write_timing(path: str, metrics: RunMetrics, wall_time: float, n_solves: int) -> None:
    """Wall-clock statistics; separate file because timing is not
    reproducible across runs."""
    with open(path, "w") as fh:
        fh.write(f"solver.solve_ms_mean = {_fmt(metrics.solve_ms_mean or 0.0)}\n")
        fh.write(f"solver.solve_ms_max = {_fmt(metrics.solve_ms_max or 0.0)}\n")
        fh.write(f"solver.solve_count = {n_solves}\n")
        fh.write(f"run.wall_s = {_fmt(wall_time)}\n")


def write_distance_series(path: str, rows: list[dict]) -> None:
    """Plot-ready time series of every pairwise distance."""
    agents = sorted({r["agent"] for r in rows})
    pairs = [(a, b) for i, a in enumerate(agents) for b in agents[i + 1 :]]
    by_tick: dict[int, dict] = {}
    times = {}
    for r in rows:
        by_tick.setdefault(r["tick"], {})
        times[r["tick"]] = r["t"]
        for a, b in pairs:
            if r["agent"] == a:
                by_tick[r["tick"]][(a, b)] = r[f"d_{b}"]
    with open(path, "w") as fh:
        fh.write("t," + ",".join(f"d_{a}__{b}" for a, b in pairs) + "\n")
        for tick in sorted(by_tick):
            vals = [repr(float(by_tick[tick][p])) for p in pairs]
            fh.write(repr(float(times[tick])) + "," + ",".join(vals) + "\n")


def write_events(path: str, events: list) -> None:
    with open(path, "w") as fh:
        fh.write("t,agent,kind,detail\n")
        for t, agent, kind, detail in events:
            fh.write(f"{repr(float(t))},{agent},{kind},{detail}\n")


def compare_metrics(a: dict, b: dict) -> list[tuple]:
    """Row-wise deltas between two metric dictionaries of the same shape."""
    if set(a) != set(b):
        missing = set(a) ^ set(b)
        raise ValueError(f"metrics shape mismatch; differing keys: {sorted(missing)}")
    rows = []
    for key in sorted(a):
        va, vb = a[key], b[key]
        if isinstance(va, (int, float)) and isinstance(vb, (int, float)):
            rows.append((key, va, vb, vb - va))
        else:
            rows.append((key, va, vb, "" if va == vb else "differs"))
    return rows
