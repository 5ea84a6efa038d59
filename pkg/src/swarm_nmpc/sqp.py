"""Multiple-shooting Gauss-Newton SQP with a dense condensed QP.

Each iteration linearizes the shooting rollout around the current guess,
eliminates the state variables (condensing), and solves a small dense QP
over the input corrections plus L1 slacks on the linearized separation
constraints. One iteration per control cycle with a shifted warm start
gives real-time-iteration behavior; a run-to-convergence driver exists for
analysis and tests.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import avoidance, dynamics, ocp
from .dynamics import NX, NU, POS
from .errors import ModelDomainError
from .ocp import OcpProblem


@dataclass
class SqpSettings:
    """Solver knobs; defaults are shared by all scenarios."""

    levenberg: float = 1e-8           # base Hessian regularization
    reg_escalations: int = 3          # x10 retries on QP failure
    slack_penalty_factor: float = 1e4  # rho = factor * collision q_cost
    constraint_margin: float = 0.35   # include hard constraint when d < r_th + margin
    kkt_tol: float = 1e-6
    max_halvings: int = 5
    defect_weight: float = 1e4        # L1 defect weight in the merit function
    qp_max_iter: int = 500


@dataclass
class SqpSolution:
    """Shooting-grid iterate with solver diagnostics."""

    states: np.ndarray                 # (N+1, 9)
    inputs: np.ndarray                 # (N, 3)
    collision_multipliers: np.ndarray  # (N+1, n_obstacles)
    box_multipliers: np.ndarray        # (N, 3, 2), lower/upper
    kkt_residual: float = np.inf
    iterations: int = 0
    solve_time: float = 0.0
    defect_norm: float = np.inf
    step_norm: float = np.inf
    cost: float = np.inf
    slack_count: int = 0
    slack_max: float = 0.0
    converged: bool = False
    status: str = "new"


@dataclass
class QpSubproblem:
    """Dense condensed QP: 0.5 z'Hz + g'z s.t. Cz <= rhs.

    Variables are the stacked input corrections followed by one slack per
    included separation constraint. `expansion`/`offset` map input
    corrections back to state corrections per node.
    """

    hessian: np.ndarray
    gradient: np.ndarray
    constraints: np.ndarray
    rhs: np.ndarray
    n_inputs: int = 0
    row_meta: list = field(default_factory=list)
    slack_map: list = field(default_factory=list)   # (node, obstacle index)
    expansion: np.ndarray | None = None             # (N+1, 9, n_inputs)
    offset: np.ndarray | None = None                # (N+1, 9)
    defects: np.ndarray | None = None               # (N, 9)
    guess_cost: float = 0.0
    guess_violation: float = 0.0


@dataclass
class QpSolution:
    z: np.ndarray
    multipliers: np.ndarray
    converged: bool
    iterations: int
    kkt_residual: float
    status: str = "ok"


def rollout_sensitivities(
    states: np.ndarray,
    inputs: np.ndarray,
    f_ext: np.ndarray,
    prm: dynamics.ModelParams,
    dt: float,
    yaw_rates: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Integrate every shooting interval and collect discrete Jacobians.

    Intervals start from their own guess nodes, so the whole pass is one
    batched integrator call.
    """
    return dynamics.rk4_sensitivities_batch(
        states[:-1], inputs, f_ext, prm, dt, np.asarray(yaw_rates, dtype=float)
    )


def linearize(
    problem: OcpProblem,
    guess: SqpSolution,
    prm: dynamics.ModelParams,
    settings: SqpSettings | None = None,
    sens: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
) -> QpSubproblem:
    """Condense the problem around a guess into a dense QP.

    Raises ModelDomainError when the guess leaves the model envelope; the
    caller decides the fallback.
    """
    settings = settings or SqpSettings()
    n = problem.config.intervals
    n_u = n * NU
    x_guess = guess.states
    u_guess = guess.inputs

    if sens is None:
        sens = rollout_sensitivities(
            x_guess, u_guess, problem.f_ext, prm, problem.dt, problem.yaw_rates
        )
    phi, a_mats, b_mats = sens
    defects = phi - x_guess[1:]

    # State corrections are affine in the input corrections:
    # dx_{k+1} = A_k dx_k + B_k du_k + defect_k.
    expansion = np.zeros((n + 1, NX, n_u))
    offset = np.empty((n + 1, NX))
    offset[0] = problem.x0 - x_guess[0]
    for k in range(n):
        expansion[k + 1, :, : (k + 1) * NU] = a_mats[k] @ expansion[k, :, : (k + 1) * NU]
        expansion[k + 1, :, k * NU : (k + 1) * NU] += b_mats[k]
        offset[k + 1] = a_mats[k] @ offset[k] + defects[k]

    hess = np.zeros((n_u, n_u))
    grad = np.zeros(n_u)
    guess_cost = 0.0
    for k in range(n + 1):
        if k < n:
            val, gx, gu, hxx, huu = ocp.stage_cost(
                x_guess[k],
                u_guess[k],
                problem.x_ref[k],
                problem.u_ref[k],
                problem.config,
                problem.node_obstacles(k),
                problem.coll_params,
            )
            sl = slice(k * NU, (k + 1) * NU)
            hess[sl, sl] += huu
            grad[sl] += gu
        else:
            val, gx, hxx = ocp.terminal_cost(
                x_guess[k], problem.x_ref[k], problem.config.q_terminal
            )
            if problem.obstacles:
                c_val, c_grad, c_hess = ocp.collision_cost_terms(
                    x_guess[k][POS], problem.node_obstacles(k), problem.coll_params
                )
                val += c_val
                gx = gx.copy()
                gx[POS] += c_grad
                hxx = hxx.copy()
                hxx[POS, POS] += c_hess
        guess_cost += val
        e_k = expansion[k]
        if k > 0:
            w = hxx @ e_k
            hess += e_k.T @ w
            grad += (gx + hxx @ offset[k]) @ e_k
        # Node 0 is pinned by the initial-state embedding; its cost is
        # constant with respect to the decision variables.

    hess[np.diag_indices_from(hess)] += settings.levenberg

    # Input box rows: du <= ub - u_guess and -du <= u_guess - lb. The rhs
    # is clamped non-negative so the zero correction stays feasible.
    lower = problem.config.input_lower
    upper = problem.config.input_upper
    rows = []
    rhs = []
    meta = []
    for k in range(n):
        for i in range(NU):
            row = np.zeros(n_u)
            row[k * NU + i] = 1.0
            rows.append(row)
            rhs.append(max(upper[i] - u_guess[k, i], 0.0))
            meta.append(("box_up", k, i))
            row = np.zeros(n_u)
            row[k * NU + i] = -1.0
            rows.append(row)
            rhs.append(max(u_guess[k, i] - lower[i], 0.0))
            meta.append(("box_lo", k, i))

    # Linearized separation constraints with one L1 slack each. Only
    # constraints near activation enter; the separation function is concave
    # in position, so satisfying the linearization implies the true one.
    coll_rows = []
    coll_rhs = []
    slack_map = []
    guess_violation = 0.0
    for j, obstacle in enumerate(problem.obstacles):
        for k in range(1, n + 1):
            p_bar = x_guess[k][POS]
            d_bar = float(np.linalg.norm(p_bar - obstacle.positions[k]))
            if d_bar > obstacle.r_th[k] + settings.constraint_margin:
                continue
            g_val, g_grad = avoidance.collision_constraint(
                p_bar, obstacle.positions[k], float(obstacle.r_min[k])
            )
            if d_bar < 1e-9:
                g_grad = np.array([-2.0, 0.0, 0.0])  # degenerate direction fallback
            row = g_grad @ expansion[k][POS]
            coll_rows.append(row)
            coll_rhs.append(-g_val - float(g_grad @ offset[k][POS]))
            slack_map.append((k, j))
            guess_violation += max(g_val, 0.0)

    n_s = len(slack_map)
    n_z = n_u + n_s
    if n_s:
        full_hess = np.zeros((n_z, n_z))
        full_hess[:n_u, :n_u] = hess
        full_hess[np.arange(n_u, n_z), np.arange(n_u, n_z)] = settings.levenberg
        rho = settings.slack_penalty_factor * problem.coll_params.q_cost
        full_grad = np.concatenate([grad, np.full(n_s, rho)])
        c_rows = np.zeros((len(rows) + 2 * n_s, n_z))
        c_rhs = np.empty(len(rows) + 2 * n_s)
        c_rows[: len(rows), :n_u] = np.asarray(rows)
        c_rhs[: len(rows)] = rhs
        for idx in range(n_s):
            r = len(rows) + idx
            c_rows[r, :n_u] = coll_rows[idx]
            c_rows[r, n_u + idx] = -1.0
            c_rhs[r] = coll_rhs[idx]
            meta.append(("coll",) + slack_map[idx])
        for idx in range(n_s):
            r = len(rows) + n_s + idx
            c_rows[r, n_u + idx] = -1.0
            c_rhs[r] = 0.0
            meta.append(("slack", idx))
        hess, grad = full_hess, full_grad
        constraints, rhs_vec = c_rows, c_rhs
    else:
        constraints = np.asarray(rows) if rows else np.zeros((0, n_u))
        rhs_vec = np.asarray(rhs, dtype=float)

    return QpSubproblem(
        hessian=hess,
        gradient=grad,
        constraints=constraints,
        rhs=rhs_vec,
        n_inputs=n_u,
        row_meta=meta,
        slack_map=slack_map,
        expansion=expansion,
        offset=offset,
        defects=defects,
        guess_cost=guess_cost,
        guess_violation=guess_violation,
    )


def solve_qp(
    qp: QpSubproblem,
    z0: np.ndarray | None = None,
    max_iter: int | None = None,
    tol: float = 1e-9,
) -> QpSolution:
    """Primal active-set method for a strictly convex inequality QP.

    Starts from a feasible point (default: the origin), solves an
    equality-constrained subproblem on the working set each iteration, and
    adds blocking rows / drops rows with negative multipliers until the KKT
    conditions hold. Rows already active at the start point seed the
    working set, which matters when many slacks sit at zero.
    """
    h = qp.hessian
    g = qp.gradient
    c = qp.constraints
    d = qp.rhs
    n = h.shape[0]
    m = c.shape[0]
    if max_iter is None:
        max_iter = max(200, 20 * (n + m))

    z = np.zeros(n) if z0 is None else np.asarray(z0, dtype=float).copy()
    if m and np.any(c @ z - d > 1e-7):
        raise ValueError("initial point for the QP is infeasible")

    working: list[int] = []
    if m:
        active0 = np.where(c @ z - d > -1e-11)[0]
        working = [int(i) for i in active0[: max(n - 1, 0)]]
    lam_full = np.zeros(m)
    status = "iteration_limit"
    stalled = 0
    for it in range(1, max_iter + 1):
        # Degenerate vertices can cycle; after repeated zero-length steps
        # fall back to Bland's lowest-index pivoting, which terminates.
        bland = stalled > 20
        grad_z = h @ z + g
        if working:
            cw = c[working]
            kkt = np.zeros((n + len(working), n + len(working)))
            kkt[:n, :n] = h
            kkt[:n, n:] = cw.T
            kkt[n:, :n] = cw
            rhs = np.concatenate([-grad_z, np.zeros(len(working))])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
            p = sol[:n]
            lam_w = sol[n:]
        else:
            p = np.linalg.solve(h, -grad_z)
            lam_w = np.zeros(0)

        if np.max(np.abs(p)) <= tol * (1.0 + np.max(np.abs(z))):
            lam_full[:] = 0.0
            if working:
                lam_full[working] = lam_w
            if not working or lam_w.min() >= -1e-9:
                status = "optimal"
                break
            negative = np.where(lam_w < -1e-9)[0]
            if bland:
                drop = int(negative[np.argmin(np.asarray(working)[negative])])
            else:
                drop = int(np.argmin(lam_w))
            working.pop(drop)
            stalled += 1
            continue

        alpha = 1.0
        blocking = -1
        if m:
            cp = c @ p
            mask = np.ones(m, dtype=bool)
            mask[working] = False
            cand = np.where(mask & (cp > 1e-13))[0]
            if cand.size:
                ratios = np.maximum(d[cand] - c[cand] @ z, 0.0) / cp[cand]
                if bland:
                    best_ratio = ratios.min()
                    ties = cand[ratios <= best_ratio + 1e-14]
                    pick = int(ties.min())
                    ratio = float(ratios[np.where(cand == pick)[0][0]])
                else:
                    idx = int(np.argmin(ratios))
                    pick, ratio = int(cand[idx]), float(ratios[idx])
                if ratio < alpha:
                    alpha = ratio
                    blocking = pick
        z = z + alpha * p
        stalled = stalled + 1 if alpha < 1e-12 else 0
        if blocking >= 0:
            working.append(blocking)

    stationarity = float(np.max(np.abs(h @ z + g + (c.T @ lam_full if m else 0.0))))
    primal = float(np.max(np.maximum(c @ z - d, 0.0))) if m else 0.0
    comp = float(np.max(np.abs(lam_full * (c @ z - d)))) if m else 0.0
    residual = max(stationarity, primal, comp)
    return QpSolution(
        z=z,
        multipliers=lam_full,
        converged=(status == "optimal"),
        iterations=it,
        kkt_residual=residual,
        status=status,
    )


def _merit(problem: OcpProblem, states, inputs, prm, settings) -> tuple[float, np.ndarray]:
    """Objective plus L1 penalties on infeasibilities: shooting defects,
    the initial-state pin and separation violations. Also returns the
    defect vector so the caller need not integrate again."""
    phi = dynamics.integrate_rk4_batch(
        states[:-1], inputs, problem.f_ext, prm, problem.dt, problem.yaw_rates
    )
    defects = phi - states[1:]
    value = problem.objective(states, inputs)
    value += settings.defect_weight * float(np.abs(defects).sum())
    value += settings.defect_weight * float(np.abs(problem.x0 - states[0]).sum())
    rho = settings.slack_penalty_factor * problem.coll_params.q_cost
    for obstacle in problem.obstacles:
        dist = np.linalg.norm(states[:, POS] - obstacle.positions, axis=1)
        viol = np.maximum(obstacle.r_min**2 - dist**2, 0.0)
        value += rho * float(viol.sum())
    return value, defects


def sqp_step(
    problem: OcpProblem,
    guess: SqpSolution,
    prm: dynamics.ModelParams,
    settings: SqpSettings | None = None,
    sens: tuple | None = None,
) -> SqpSolution:
    """One Gauss-Newton iteration: linearize, solve the QP, update.

    Takes the full Newton-type step unless the merit function increases, in
    which case the step is halved up to `settings.max_halvings` times and
    the best candidate is kept.
    """
    settings = settings or SqpSettings()
    t_start = time.perf_counter()
    n = problem.config.intervals
    n_obs = len(problem.obstacles)

    try:
        qp = linearize(problem, guess, prm, settings, sens=sens)
    except ModelDomainError:
        failed = SqpSolution(
            states=guess.states.copy(),
            inputs=guess.inputs.copy(),
            collision_multipliers=np.zeros((n + 1, n_obs)),
            box_multipliers=np.zeros((n, NU, 2)),
            solve_time=time.perf_counter() - t_start,
            status="model_domain_error",
        )
        return failed

    n_u = qp.n_inputs
    n_s = len(qp.slack_map)
    z0 = np.zeros(n_u + n_s)
    if n_s:
        coll_rhs = qp.rhs[-2 * n_s : -n_s] if n_s else np.zeros(0)
        z0[n_u:] = np.maximum(-coll_rhs, 0.0)

    qsol = None
    extra = 0.0
    for _ in range(settings.reg_escalations + 1):
        hess = qp.hessian if extra == 0.0 else qp.hessian + extra * np.eye(len(qp.gradient))
        trial = QpSubproblem(hess, qp.gradient, qp.constraints, qp.rhs)
        qsol = solve_qp(trial, z0=z0, max_iter=settings.qp_max_iter)
        if qsol.converged:
            break
        extra = settings.levenberg * 10.0 if extra == 0.0 else extra * 10.0

    du = qsol.z[:n_u].reshape(n, NU)
    dx = np.einsum("kij,j->ki", qp.expansion, qsol.z[:n_u]) + qp.offset

    # Baseline merit of the guess; includes the initial-state mismatch so
    # alpha -> 0 recovers it consistently.
    merit_0 = (
        qp.guess_cost
        + settings.defect_weight * float(np.abs(qp.defects).sum())
        + settings.defect_weight * float(np.abs(problem.x0 - guess.states[0]).sum())
        + settings.slack_penalty_factor * problem.coll_params.q_cost * qp.guess_violation
    )
    best = None
    alpha = 1.0
    for _ in range(settings.max_halvings + 1):
        cand_x = guess.states + alpha * dx
        cand_u = guess.inputs + alpha * du
        try:
            m, cand_defects = _merit(problem, cand_x, cand_u, prm, settings)
        except ModelDomainError:
            alpha *= 0.5
            continue
        if best is None or m < best[0]:
            best = (m, alpha, cand_x, cand_u, cand_defects)
        if m <= merit_0 + 1e-9 * (1.0 + abs(merit_0)):
            break
        alpha *= 0.5

    if best is None:
        return SqpSolution(
            states=guess.states.copy(),
            inputs=guess.inputs.copy(),
            collision_multipliers=np.zeros((n + 1, n_obs)),
            box_multipliers=np.zeros((n, NU, 2)),
            solve_time=time.perf_counter() - t_start,
            status="line_search_failed",
        )

    _, alpha, new_x, new_u, new_defects = best
    new_u = np.clip(new_u, problem.config.input_lower, problem.config.input_upper)
    defect_norm = float(np.max(np.abs(new_defects))) if n else 0.0

    coll_mult = np.zeros((n + 1, n_obs))
    box_mult = np.zeros((n, NU, 2))
    for row, spec in enumerate(qp.row_meta):
        lam = qsol.multipliers[row]
        if lam == 0.0:
            continue
        kind = spec[0]
        if kind == "coll":
            coll_mult[spec[1], spec[2]] = lam
        elif kind == "box_lo":
            box_mult[spec[1], spec[2], 0] = lam
        elif kind == "box_up":
            box_mult[spec[1], spec[2], 1] = lam

    slacks = qsol.z[n_u:]
    slack_mask = slacks > 1e-6
    status = "ok" if qsol.converged else f"qp_{qsol.status}"
    return SqpSolution(
        states=new_x,
        inputs=new_u,
        collision_multipliers=coll_mult,
        box_multipliers=box_mult,
        kkt_residual=qsol.kkt_residual,
        iterations=1,
        solve_time=time.perf_counter() - t_start,
        defect_norm=defect_norm,
        step_norm=float(alpha * np.max(np.abs(qsol.z[:n_u]))) if n_u else 0.0,
        cost=problem.objective(new_x, new_u),
        slack_count=int(slack_mask.sum()),
        slack_max=float(slacks.max()) if n_s else 0.0,
        converged=qsol.converged,
        status=status,
    )


def shift_warm_start(previous: SqpSolution) -> SqpSolution:
    """Advance a solution by one grid interval: drop the first node,
    duplicate the last; multipliers shift the same way."""
    if previous.inputs.shape[0] < 2:
        raise ValueError("need at least two intervals to shift")
    states = np.vstack([previous.states[1:], previous.states[-1:]])
    inputs = np.vstack([previous.inputs[1:], previous.inputs[-1:]])
    coll = np.vstack(
        [previous.collision_multipliers[1:], previous.collision_multipliers[-1:]]
    )
    box = np.concatenate([previous.box_multipliers[1:], previous.box_multipliers[-1:]])
    return SqpSolution(
        states=states,
        inputs=inputs,
        collision_multipliers=coll,
        box_multipliers=box,
        status="shifted",
    )


def cold_start(problem: OcpProblem) -> SqpSolution:
    """Hold the initial state and the reference input across the horizon."""
    n = problem.config.intervals
    states = np.tile(problem.x0, (n + 1, 1))
    inputs = np.clip(problem.u_ref, problem.config.input_lower, problem.config.input_upper)
    return SqpSolution(
        states=states,
        inputs=inputs.copy(),
        collision_multipliers=np.zeros((n + 1, len(problem.obstacles))),
        box_multipliers=np.zeros((n, NU, 2)),
        status="cold",
    )


def solve_to_convergence(
    problem: OcpProblem,
    prm: dynamics.ModelParams,
    guess: SqpSolution | None = None,
    settings: SqpSettings | None = None,
    max_iter: int = 30,
    step_tol: float = 1e-8,
) -> SqpSolution:
    """Iterate full SQP steps until the correction stalls."""
    settings = settings or SqpSettings()
    sol = guess if guess is not None else cold_start(problem)
    total_time = 0.0
    for it in range(1, max_iter + 1):
        sol = sqp_step(problem, sol, prm, settings)
        total_time += sol.solve_time
        sol.iterations = it
        if sol.status.startswith("model_domain") or sol.status == "line_search_failed":
            break
        if sol.step_norm < step_tol and sol.defect_norm < settings.kkt_tol:
            break
    sol.solve_time = total_time
    return sol
