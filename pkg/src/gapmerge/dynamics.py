"""Discrete-time dynamic bicycle model, shared by the simulator and the planner.

The discretization is implicit in the lateral velocity / yaw rate rows, which
keeps the update finite down to v_x = 0 (the denominators cannot vanish as
long as the cornering stiffnesses are negative).  Position, heading and
longitudinal speed rows are plain explicit Euler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class InvalidInputError(ValueError):
    """Non-finite state, control, or parameter fed to the dynamics."""


class SingularDynamicsError(ArithmeticError):
    """A discrete denominator vanished (impossible with k_f, k_r < 0)."""


@dataclass(frozen=True)
class VehicleState:
    """Planar rigid-body state [p_x, p_y, phi, v_x, v_y, omega] in SI units."""

    p_x: float
    p_y: float
    phi: float
    v_x: float
    v_y: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.p_x, self.p_y, self.phi, self.v_x, self.v_y, self.omega],
            dtype=float,
        )

    @classmethod
    def from_array(cls, arr) -> "VehicleState":
        p_x, p_y, phi, v_x, v_y, omega = (float(v) for v in arr)
        return cls(p_x, p_y, phi, v_x, v_y, omega)


@dataclass(frozen=True)
class ControlInput:
    """Acceleration (m/s^2) and front steering angle (rad)."""

    a: float
    delta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.delta], dtype=float)

    def clamped(self, a_min: float, a_max: float, delta_max: float) -> "ControlInput":
        return ControlInput(
            min(max(self.a, a_min), a_max),
            min(max(self.delta, -delta_max), delta_max),
        )


@dataclass(frozen=True)
class VehicleParams:
    """Mid-size sedan defaults; cornering stiffnesses are negative by convention."""

    m: float = 1412.0
    l_f: float = 1.06
    l_r: float = 1.85
    k_f: float = -128916.0
    k_r: float = -85944.0
    i_z: float = 1536.7
    length: float = 4.5
    width: float = 2.0

    def __post_init__(self):
        vals = (self.m, self.l_f, self.l_r, self.k_f, self.k_r, self.i_z,
                self.length, self.width)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInputError("vehicle parameters must be finite")
        if self.m <= 0 or self.l_f <= 0 or self.l_r <= 0 or self.i_z <= 0:
            raise InvalidInputError("m, l_f, l_r, i_z must be positive")
        if self.k_f >= 0 or self.k_r >= 0:
            raise InvalidInputError(
                "cornering stiffnesses use the negative sign convention (k_f, k_r < 0)"
            )
        if self.length <= 0 or self.width <= 0:
            raise InvalidInputError("body dimensions must be positive")

    @property
    def l_k(self) -> float:
        # Derived on every access so it can never go stale.
        return self.l_f * self.k_f - self.l_r * self.k_r


def step_dynamics(x: VehicleState, u: ControlInput, dt: float,
                  p: VehicleParams) -> VehicleState:
    """Advance the state by one step of the discrete bicycle model.

    The v_y row carries the m*v_x*v_y numerator term of the stable
    discretization; without it the lateral speed decays even in straight
    driving.
    """
    if dt <= 0:
        raise InvalidInputError(f"dt must be positive, got {dt}")
    vals = (x.p_x, x.p_y, x.phi, x.v_x, x.v_y, x.omega, u.a, u.delta)
    if not all(math.isfinite(v) for v in vals):
        raise InvalidInputError("state and control must be finite")

    den_vy = p.m * x.v_x - (p.k_f + p.k_r) * dt
    den_om = p.i_z * x.v_x - (p.l_f ** 2 * p.k_f + p.l_r ** 2 * p.k_r) * dt
    if den_vy == 0.0 or den_om == 0.0:
        raise SingularDynamicsError(
            f"vanishing denominator at v_x={x.v_x}, dt={dt}"
        )

    c = math.cos(x.phi)
    s = math.sin(x.phi)
    l_k = p.l_k
    return VehicleState(
        p_x=x.p_x + (x.v_x * c - x.v_y * s) * dt,
        p_y=x.p_y + (x.v_x * s + x.v_y * c) * dt,
        phi=x.phi + x.omega * dt,
        v_x=x.v_x + u.a * dt,
        v_y=(p.m * x.v_x * x.v_y + l_k * x.omega * dt
             - p.k_f * u.delta * x.v_x * dt
             - p.m * x.v_x ** 2 * x.omega * dt) / den_vy,
        omega=(p.i_z * x.v_x * x.omega + l_k * x.v_y * dt
               - p.l_f * p.k_f * u.delta * x.v_x * dt) / den_om,
    )


def rollout(x0: VehicleState, controls, dt: float,
            p: VehicleParams) -> list[VehicleState]:
    """Propagate x0 through a control sequence; returns len(controls)+1 states."""
    controls = list(controls)
    if not controls:
        raise InvalidInputError("rollout requires a nonempty control sequence")
    states = [x0]
    for k, u in enumerate(controls):
        try:
            states.append(step_dynamics(states[-1], u, dt, p))
        except (InvalidInputError, SingularDynamicsError) as err:
            raise type(err)(f"rollout failed at step {k}: {err}") from err
    return states
