"""Ground-truth plant: planar serial arm, contact wall, scripted operator.

The arm is an n-link planar chain (n in 1..3) with point masses at the
link tips, gravity acting in the plane, viscous plus smoothed Coulomb
friction, and an optional low-pass-filtered torque disturbance.  It serves
both as the excitation target for identification and as the closed-loop
plant on each teleoperation side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigurationError, DivergenceError

# Velocity scale of the tanh() smoothing that replaces the discontinuous
# Coulomb sign function.
COULOMB_SMOOTHING = 0.01


@dataclass(frozen=True)
class PlantModel:
    """Physical parameters of one arm."""

    masses: np.ndarray
    lengths: np.ndarray
    gravity: float = 9.81
    viscous: np.ndarray | None = None
    coulomb: np.ndarray | None = None
    disturbance_amp: float = 0.0
    q_noise_std: float = 1e-4
    v_noise_std: float = 0.0
    joint_limit: float = 2.0 * np.pi

    def __post_init__(self):
        masses = np.atleast_1d(np.asarray(self.masses, dtype=float))
        lengths = np.atleast_1d(np.asarray(self.lengths, dtype=float))
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "lengths", lengths)
        n = masses.shape[0]
        if n not in (1, 2, 3):
            raise ConfigurationError("supported arm sizes are 1, 2 or 3 links")
        if lengths.shape[0] != n:
            raise ConfigurationError("masses and lengths disagree on link count")
        if np.any(masses <= 0.0) or np.any(lengths <= 0.0):
            raise ConfigurationError("link masses and lengths must be positive")
        for name in ("viscous", "coulomb"):
            val = getattr(self, name)
            arr = np.zeros(n) if val is None else np.broadcast_to(
                np.asarray(val, dtype=float), (n,)).copy()
            if np.any(arr < 0.0):
                raise ConfigurationError(f"{name} friction must be nonnegative")
            object.__setattr__(self, name, arr)

    @property
    def dof(self) -> int:
        return self.masses.shape[0]


@dataclass(frozen=True)
class PlantState:
    q: np.ndarray
    qdot: np.ndarray
    t: float = 0.0


def _link_angles(q: np.ndarray) -> np.ndarray:
    return np.cumsum(q)


def mass_matrix(model: PlantModel, q: np.ndarray) -> np.ndarray:
    """Inertia matrix of the point-mass chain at configuration q."""
    n = model.dof
    phi = _link_angles(q)
    m, l = model.masses, model.lengths
    out = np.zeros((n, n))
    for a in range(n):
        for r in range(a + 1):
            for s in range(a + 1):
                acc = 0.0
                for j in range(r, a + 1):
                    for k in range(s, a + 1):
                        acc += l[j] * l[k] * np.cos(phi[j] - phi[k])
                out[r, s] += m[a] * acc
    return out


def _mass_gradient(model: PlantModel, q: np.ndarray) -> np.ndarray:
    """dM/dq with shape (n, n, n); last axis is the derivative index."""
    n = model.dof
    phi = _link_angles(q)
    m, l = model.masses, model.lengths
    grad = np.zeros((n, n, n))
    for a in range(n):
        for r in range(a + 1):
            for s in range(a + 1):
                for j in range(r, a + 1):
                    for k in range(s, a + 1):
                        sjk = -l[j] * l[k] * np.sin(phi[j] - phi[k])
                        for w in range(n):
                            dw = (1.0 if j >= w else 0.0) - (1.0 if k >= w else 0.0)
                            if dw != 0.0:
                                grad[r, s, w] += m[a] * sjk * dw
    return grad


def coriolis_matrix(model: PlantModel, q: np.ndarray, qdot: np.ndarray) -> np.ndarray:
    """Coriolis/centrifugal matrix built from Christoffel symbols."""
    n = model.dof
    dM = _mass_gradient(model, q)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for k in range(n):
                acc += 0.5 * (dM[i, j, k] + dM[i, k, j] - dM[j, k, i]) * qdot[k]
            out[i, j] = acc
    return out


def gravity_torque(model: PlantModel, q: np.ndarray) -> np.ndarray:
    n = model.dof
    phi = _link_angles(q)
    m, l = model.masses, model.lengths
    out = np.zeros(n)
    for i in range(n):
        for a in range(i, n):
            for j in range(i, a + 1):
                out[i] += model.gravity * m[a] * l[j] * np.cos(phi[j])
    return out


def potential_energy(model: PlantModel, q: np.ndarray) -> float:
    phi = _link_angles(q)
    heights = np.cumsum(model.lengths * np.sin(phi))
    return float(model.gravity * np.dot(model.masses, heights))


def total_energy(model: PlantModel, state: PlantState) -> float:
    kinetic = 0.5 * state.qdot @ mass_matrix(model, state.q) @ state.qdot
    return float(kinetic + potential_energy(model, state.q))


def friction_torque(model: PlantModel, qdot: np.ndarray) -> np.ndarray:
    return model.viscous * qdot + model.coulomb * np.tanh(qdot / COULOMB_SMOOTHING)


def step_dynamics(model: PlantModel, state: PlantState, tau: np.ndarray,
                  tau_ext: np.ndarray, dt: float,
                  disturbance: np.ndarray | None = None) -> PlantState:
    """Advance the arm by one semi-implicit Euler step.

    The velocity is updated from the current-configuration dynamics and
    the position from the updated velocity.  `disturbance` is the unknown
    torque acting against the drive (subtracted from the input side).
    """
    if dt <= 0.0:
        raise ConfigurationError("time step must be positive")
    rhs = np.asarray(tau, dtype=float) + np.asarray(tau_ext, dtype=float)
    rhs = rhs - gravity_torque(model, state.q)
    rhs = rhs - coriolis_matrix(model, state.q, state.qdot) @ state.qdot
    rhs = rhs - friction_torque(model, state.qdot)
    if disturbance is not None:
        rhs = rhs - disturbance
    accel = np.linalg.solve(mass_matrix(model, state.q), rhs)
    if not np.all(np.isfinite(accel)):
        raise DivergenceError("non-finite joint acceleration", t=state.t)
    qdot = state.qdot + dt * accel
    q = state.q + dt * qdot
    if np.any(np.abs(q) > model.joint_limit):
        raise DivergenceError("joint position exceeded configured limit",
                              t=state.t + dt)
    return PlantState(q=q, qdot=qdot, t=state.t + dt)


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Environment:
    """Free space or a per-joint spring-damper wall."""

    kind: str = "free"
    q_wall: np.ndarray | None = None
    stiffness: float = 0.0
    damping: float = 0.0

    def __post_init__(self):
        if self.kind not in ("free", "wall"):
            raise ConfigurationError(f"unknown environment kind {self.kind!r}")
        if self.stiffness < 0.0 or self.damping < 0.0:
            raise ConfigurationError("wall stiffness and damping must be >= 0")
        if self.kind == "wall":
            if self.q_wall is None:
                raise ConfigurationError("wall environment needs q_wall")
            object.__setattr__(self, "q_wall",
                               np.asarray(self.q_wall, dtype=float))


def contact_torque(env: Environment, q: np.ndarray, qdot: np.ndarray) -> np.ndarray:
    """Restoring torque of the environment at the current joint state.

    Joints penetrating the wall (q > q_wall) feel a spring-damper push
    back; touching without penetration produces no torque.
    """
    if env.kind == "free":
        return np.zeros_like(q)
    penetration = q - env.q_wall
    inside = penetration > 0.0
    out = np.zeros_like(q)
    out[inside] = -env.stiffness * penetration[inside] - env.damping * qdot[inside]
    return out


# ---------------------------------------------------------------------------
# Scripted operator
# ---------------------------------------------------------------------------

@dataclass
class OperatorModel:
    """Impedance hand model tracking a piecewise-cubic desired trajectory."""

    times: np.ndarray
    waypoints: np.ndarray    # (len(times), n)
    kp: float = 4.0
    kd: float = 1.0
    tau_max: float = 5.0
    _spline: CubicSpline = field(init=False, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.waypoints = np.atleast_2d(np.asarray(self.waypoints, dtype=float))
        if self.times.ndim != 1 or self.times.shape[0] != self.waypoints.shape[0]:
            raise ConfigurationError("waypoint times and positions disagree")
        if self.times.shape[0] < 2 or np.any(np.diff(self.times) <= 0.0):
            raise ConfigurationError("waypoint times must be strictly increasing")
        if self.kp < 0.0 or self.kd < 0.0:
            raise ConfigurationError("operator gains must be nonnegative")
        if self.tau_max <= 0.0:
            raise ConfigurationError("operator torque saturation must be positive")
        self._spline = CubicSpline(self.times, self.waypoints, axis=0,
                                   bc_type="clamped")

    def desired(self, t: float) -> np.ndarray:
        t = float(np.clip(t, self.times[0], self.times[-1]))
        return np.atleast_1d(self._spline(t))


def operator_torque(op: OperatorModel, t: float, q: np.ndarray,
                    qdot: np.ndarray) -> np.ndarray:
    raw = op.kp * (op.desired(t) - q) - op.kd * qdot
    return np.clip(raw, -op.tau_max, op.tau_max)


# ---------------------------------------------------------------------------
# Disturbance
# ---------------------------------------------------------------------------

class DisturbanceProcess:
    """Seeded low-pass-filtered white torque noise, one channel per joint."""

    def __init__(self, n: int, amplitude: float, seed, cutoff_hz: float = 2.0):
        self.amplitude = float(amplitude)
        self.cutoff_hz = float(cutoff_hz)
        self._rng = np.random.default_rng(seed)
        self._state = np.zeros(n)

    def step(self, dt: float) -> np.ndarray:
        if self.amplitude == 0.0:
            return np.zeros_like(self._state)
        alpha = np.exp(-2.0 * np.pi * self.cutoff_hz * dt)
        drive = self.amplitude * self._rng.standard_normal(self._state.shape)
        self._state = alpha * self._state + (1.0 - alpha) * drive
        return self._state.copy()
