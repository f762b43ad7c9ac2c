"""Receding-horizon planner with a learnable 13-entry decision vector.

The planner tracks two references at once: the goal state rebuilt from the
live gap on every replan, and a learnable full-state reference whose weight
follows a Gaussian bump in time.  Which one dominates, and when, is decided
by the decision vector produced upstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dynamics import VehicleParams, VehicleState

TARGET_LANE_Y = 2.5


class MpcConfigError(ValueError):
    """Inconsistent planner configuration."""


class MpcNumericalError(RuntimeError):
    """Objective went non-finite; carries the offending iterate."""

    def __init__(self, message, iterate=None):
        super().__init__(message)
        self.iterate = iterate


@dataclass(frozen=True)
class DecisionVector:
    """Learnable planner parameterization: reference, weight factors, timing.

    Flattens to 13 scalars in the fixed order
    [x_ref (6), weight factors (6), t_ref].
    """

    x_tra: np.ndarray          # (6,) full-state reference
    q_max: np.ndarray          # (6,) regulatory factors for the tracking weight
    t_tra: float               # absolute episode time of peak tracking weight

    def as_array(self) -> np.ndarray:
        return np.concatenate([
            np.asarray(self.x_tra, dtype=float),
            np.asarray(self.q_max, dtype=float),
            [float(self.t_tra)],
        ])

    @classmethod
    def from_array(cls, arr) -> "DecisionVector":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (13,):
            raise ValueError(f"decision vector must have 13 entries, got {arr.shape}")
        return cls(x_tra=arr[:6].copy(), q_max=arr[6:12].copy(), t_tra=float(arr[12]))


@dataclass(frozen=True)
class MpcConfig:
    horizon: float = 5.0
    dt: float = 0.1
    q_x: tuple = (100.0, 100.0, 100.0, 10.0, 0.0, 0.0)
    q_u: tuple = (1.0, 1.0)
    q_du: tuple = (0.1, 0.1)
    gamma: float = 1.0
    p_y_min: float = -5.0
    p_y_max: float = 5.0
    a_min: float = -6.0
    a_max: float = 3.0
    delta_max: float = 0.6
    lateral_penalty: float = 1e3
    max_iter: int = 100
    stat_tol: float = 1e-4

    def __post_init__(self):
        if self.dt <= 0 or self.horizon <= 0:
            raise MpcConfigError("horizon and dt must be positive")
        if self.n_steps < 2:
            raise MpcConfigError("horizon must span at least 2 steps")
        if len(self.q_x) != 6 or len(self.q_u) != 2 or len(self.q_du) != 2:
            raise MpcConfigError("weight vectors must have sizes 6/2/2")
        if min(self.q_x) < 0 or min(self.q_u) < 0 or min(self.q_du) < 0:
            raise MpcConfigError("weights must be nonnegative")
        if self.gamma <= 0:
            raise MpcConfigError("gamma must be positive")
        if self.p_y_min >= self.p_y_max:
            raise MpcConfigError("p_y_min must be below p_y_max")
        if self.a_min >= self.a_max or self.delta_max <= 0:
            raise MpcConfigError("control bounds are inverted")
        if self.max_iter < 1 or self.stat_tol <= 0 or self.lateral_penalty < 0:
            raise MpcConfigError("solver settings out of range")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class GoalState:
    """Merge target on the target lane: gap position and speed, zero attitude."""

    p_x: float
    v_x: float
    p_y: float = TARGET_LANE_Y

    def as_array(self) -> np.ndarray:
        return np.array([self.p_x, self.p_y, 0.0, self.v_x, 0.0, 0.0])


@dataclass
class Trajectory:
    states: np.ndarray            # (N+1, 6)
    controls: np.ndarray          # (N, 2)
    cost: float
    solver_status: str            # converged | max-iterations | infeasible-relaxed
    iterations: int = 0
    stationarity: float = float("nan")
    p_y_violation: float = 0.0
    cost_trace: np.ndarray | None = None


def scale_q_max(q_max, q_x) -> np.ndarray:
    """Proportion form of the tracking weight: element-wise q_max * q_x."""
    return np.asarray(q_max, dtype=float) * np.asarray(q_x, dtype=float)


def weight_schedule(t_tra: float, k: int, t_now: float, q_max_scaled,
                    gamma: float, dt: float) -> np.ndarray:
    """Gaussian-in-time tracking weight at horizon step k.

    Peaks where the absolute time t_now + k*dt meets the tracking time
    reference.
    """
    arg = t_now + k * dt - t_tra
    return np.asarray(q_max_scaled, dtype=float) * math.exp(-gamma * arg * arg)


def schedule_table(z: DecisionVector, t_now: float, cfg: MpcConfig) -> np.ndarray:
    """(N, 6) tracking weights for every stage of the horizon."""
    n = cfg.n_steps
    scaled = scale_q_max(z.q_max, np.asarray(cfg.q_x, dtype=float))
    k = np.arange(n, dtype=float)
    arg = t_now + k * cfg.dt - z.t_tra
    return np.exp(-cfg.gamma * arg * arg)[:, None] * scaled[None, :]


@dataclass
class NlpProblem:
    """Reduced single-shooting problem: states eliminated through the rollout."""

    x_init: np.ndarray            # (6,)
    u_prev: np.ndarray            # (2,)
    x_g: np.ndarray               # (6,)
    x_tra: np.ndarray             # (6,)
    q_tra: np.ndarray             # (N, 6) stage tracking weights
    cfg: MpcConfig
    params: VehicleParams
    penalty_weight: float | None = None

    def __post_init__(self):
        if self.penalty_weight is None:
            self.penalty_weight = self.cfg.lateral_penalty

    def _kernel_args(self):
        c = self.cfg
        return (self.u_prev, self.x_g, self.x_tra, self.q_tra,
                np.asarray(c.q_x, dtype=float), np.asarray(c.q_u, dtype=float),
                np.asarray(c.q_du, dtype=float),
                c.p_y_min, c.p_y_max, self.penalty_weight)

    def _dyn_args(self):
        p = self.params
        return (self.cfg.dt, p.m, p.l_f, p.l_r, p.k_f, p.k_r, p.i_z, p.l_k)

    def rollout(self, controls: np.ndarray) -> np.ndarray:
        return _kernels.rollout_kernel(self.x_init, np.asarray(controls, dtype=float),
                                       *self._dyn_args())

    def objective(self, controls: np.ndarray) -> float:
        U = np.ascontiguousarray(controls, dtype=float)
        X = self.rollout(U)
        return float(_kernels.cost_kernel(X, U, *self._kernel_args()))

    def objective_grad(self, controls: np.ndarray):
        U = np.ascontiguousarray(controls, dtype=float)
        j, g, _ = _kernels.cost_grad_kernel(self.x_init, U, *self._kernel_args(),
                                            *self._dyn_args())
        return float(j), g


def build_problem(x_init: VehicleState, u_prev, z: DecisionVector,
                  x_g: GoalState, t_now: float, cfg: MpcConfig,
                  params: VehicleParams | None = None) -> NlpProblem:
    """Assemble the stage costs, references and bounds for one replan."""
    x0 = x_init.as_array() if isinstance(x_init, VehicleState) else np.asarray(x_init, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise MpcConfigError("initial state must be finite")
    u_prev = np.asarray(
        u_prev.as_array() if hasattr(u_prev, "as_array") else u_prev, dtype=float)
    goal = x_g.as_array() if isinstance(x_g, GoalState) else np.asarray(x_g, dtype=float)
    return NlpProblem(
        x_init=x0,
        u_prev=u_prev,
        x_g=goal,
        x_tra=np.asarray(z.x_tra, dtype=float).copy(),
        q_tra=schedule_table(z, t_now, cfg),
        cfg=cfg,
        params=params or VehicleParams(),
    )


def _run_kernel(problem: NlpProblem, u0: np.ndarray, keep_trace: bool):
    cfg = problem.cfg
    trace = np.full(cfg.max_iter + 1, np.nan)
    u, j, iters, resid, code = _kernels.solve_kernel(
        problem.x_init, u0, *problem._kernel_args(),
        cfg.a_min, cfg.a_max, cfg.delta_max,
        *problem._dyn_args(), cfg.max_iter, cfg.stat_tol, trace)
    if not math.isfinite(j):
        raise MpcNumericalError(
            f"objective is non-finite after {iters} iterations", iterate=u)
    return u, j, iters, resid, code, (trace[: iters + 1] if keep_trace else None)


def solve(problem: NlpProblem, warm_start: Trajectory | None = None,
          keep_trace: bool = False) -> Trajectory:
    """Minimize the reduced objective over the boxed control sequence.

    The lateral corridor is a soft quadratic penalty; if a converged solution
    still violates it, the penalty is escalated once (x10) and the solve is
    repeated from the incumbent.
    """
    cfg = problem.cfg
    n = cfg.n_steps
    if warm_start is not None:
        u0 = np.ascontiguousarray(warm_start.controls, dtype=float).copy()
    else:
        u0 = np.zeros((n, 2))

    u, j, iters, resid, code, trace = _run_kernel(problem, u0, keep_trace)
    states = problem.rollout(u)
    viol = _lateral_violation(states, cfg)
    if viol > 1e-3 and code == _kernels.CONVERGED:
        relaxed = replace_penalty(problem, problem.penalty_weight * 10.0)
        u, j, it2, resid, code, trace = _run_kernel(relaxed, u, keep_trace)
        iters += it2
        states = relaxed.rollout(u)
        viol = _lateral_violation(states, cfg)
        status = "infeasible-relaxed" if viol > 1e-3 else _status_name(code)
    else:
        status = _status_name(code)

    return Trajectory(states=states, controls=u, cost=j, solver_status=status,
                      iterations=iters, stationarity=resid,
                      p_y_violation=viol, cost_trace=trace)


def replace_penalty(problem: NlpProblem, weight: float) -> NlpProblem:
    return NlpProblem(x_init=problem.x_init, u_prev=problem.u_prev,
                      x_g=problem.x_g, x_tra=problem.x_tra, q_tra=problem.q_tra,
                      cfg=problem.cfg, params=problem.params,
                      penalty_weight=weight)


def _status_name(code) -> str:
    return "converged" if code == _kernels.CONVERGED else "max-iterations"


def _lateral_violation(states: np.ndarray, cfg: MpcConfig) -> float:
    p_y = states[1:, 1]
    over = np.maximum(p_y - cfg.p_y_max, 0.0)
    under = np.maximum(cfg.p_y_min - p_y, 0.0)
    return float(max(over.max(initial=0.0), under.max(initial=0.0)))


def shift_warm_start(previous: Trajectory) -> Trajectory:
    """One-step shift of the last solution, repeating the final control."""
    u = np.vstack([previous.controls[1:], previous.controls[-1:]])
    return Trajectory(states=previous.states, controls=u,
                      cost=previous.cost, solver_status=previous.solver_status)


def replan(scene, z: DecisionVector, cfg: MpcConfig,
           params: VehicleParams | None = None,
           previous: Trajectory | None = None,
           u_prev=(0.0, 0.0)) -> Trajectory:
    """One receding-horizon iteration against the live scene.

    Rebuilds the goal from the gap's current position and speed, shifts the
    tracking schedule to the scene clock, and warm-starts from the previous
    solution shifted by one step.
    """
    goal = GoalState(p_x=scene.gap.p_x, v_x=scene.gap.v_x, p_y=scene.gap.p_y)
    problem = build_problem(scene.ego, u_prev, z, goal, scene.t_now, cfg,
                            params or scene.ego_params)
    warm = shift_warm_start(previous) if previous is not None else None
    return solve(problem, warm_start=warm)
