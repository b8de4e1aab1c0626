"""Velocity and external-torque observers.

The velocity observer turns encoder positions into a usable velocity
signal without differentiating raw measurements.  The model-free force
observer consumes the estimator's cleaned state plus the blended model
matrices and tracks the external torque with first-order error dynamics.
Two classical baselines (low-pass reaction-torque observer and
model-based disturbance observer) are included for benchmarking.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, IllConditionedModelError, SingularityError
from .fuzzy import BlendedDynamics
from .plant import PlantModel, coriolis_matrix, gravity_torque, mass_matrix

_NOMINAL_COND_CAP = 1e8


class VelocityObserver:
    """Second-order tracking filter on the measured position.

    The internal state v follows the measured q (proportional action on
    the error plus an integral path, poles at -k1 and -k2), and its rate
    of change is the velocity estimate returned by :meth:`step`.  No raw
    differencing of the measurement is involved, so quantization and
    encoder noise are attenuated above the filter bandwidth.
    """

    def __init__(self, n: int, k1: float = 100.0, k2: float = 10.0,
                 q0: np.ndarray | None = None):
        if k1 <= 0.0 or k2 <= 0.0:
            raise ConfigurationError("velocity observer gains must be positive")
        self.k1 = float(k1)
        self.k2 = float(k2)
        self.v = np.zeros(n) if q0 is None else np.asarray(q0, dtype=float).copy()
        self.z = np.zeros(n)

    def step(self, q: np.ndarray, dt: float) -> np.ndarray:
        """Feed one position sample; returns the velocity estimate."""
        if dt <= 0.0:
            raise ConfigurationError("time step must be positive")
        err = q - self.v
        rate = (self.k1 + self.k2) * err + self.k1 * self.k2 * self.z
        self.z = self.z + dt * err
        self.v = self.v + dt * rate
        return rate


class ForceObserver:
    """External-torque tracker driven by the cleaned state and model.

    Internal state z integrates the model-predicted torque balance; the
    output is z plus a velocity-proportional momentum term, so it starts
    at zero and converges on the external torque with rate sigma / M.
    An optional constant gain adds a velocity-proportional bias channel
    used by the teleoperation coupling terms.
    """

    def __init__(self, n: int, sigma: float, gain: np.ndarray | None = None):
        if sigma <= 0.0:
            raise ConfigurationError("force observer sigma must be positive")
        self.sigma = float(sigma)
        self.gain = np.zeros((n, n)) if gain is None else np.asarray(gain, float)
        self.z: np.ndarray | None = None

    def step(self, q_hat: np.ndarray, v_hat: np.ndarray, tau: np.ndarray,
             bd: BlendedDynamics, uncertainty: np.ndarray,
             dt: float) -> np.ndarray:
        momentum = self.sigma * v_hat
        if self.z is None:
            # Start with zero estimated torque.
            self.z = -momentum.copy()
        estimate = self.z + momentum

        try:
            track = self.sigma * np.linalg.inv(bd.M)
        except np.linalg.LinAlgError:
            raise IllConditionedModelError("blended inertia is singular") from None
        balance = (tau - bd.C @ v_hat - bd.D @ q_hat - bd.F - uncertainty
                   + momentum)
        zdot = -track @ self.z - track @ balance + self.gain @ v_hat
        self.z = self.z + dt * zdot
        return estimate


class ForceObserverBank:
    """Three force observers sharing inputs but with distinct gain channels."""

    def __init__(self, n: int, sigma: float, gains):
        if len(gains) != 3:
            raise ConfigurationError("bank needs exactly three gain matrices")
        self.observers = [ForceObserver(n, sigma, g) for g in gains]

    def step(self, q_hat, v_hat, tau, bd, uncertainty, dt):
        return tuple(obs.step(q_hat, v_hat, tau, bd, uncertainty, dt)
                     for obs in self.observers)


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------

class ReactionForceObserver:
    """Low-pass momentum-difference torque estimate with constant inertia.

    filt tracks (tau + g * Jn * v) through a first-order filter with
    bandwidth g; the estimate g * Jn * v - filt converges to the external
    torque for a matched constant-inertia plant and to the full unmodeled
    torque (gravity, friction, coupling) otherwise.
    """

    def __init__(self, nominal_inertia, bandwidth: float = 500.0):
        if bandwidth <= 0.0:
            raise ConfigurationError("filter bandwidth must be positive")
        self.inertia = np.atleast_1d(np.asarray(nominal_inertia, dtype=float))
        if np.any(self.inertia <= 0.0):
            raise ConfigurationError("nominal inertia must be positive")
        self.bandwidth = float(bandwidth)
        self.filt: np.ndarray | None = None

    def step(self, v: np.ndarray, tau: np.ndarray, dt: float) -> np.ndarray:
        if dt <= 0.0:
            raise ConfigurationError("time step must be positive")
        momentum = self.bandwidth * self.inertia * v
        signal = tau + momentum
        if self.filt is None:
            self.filt = signal.copy()
        estimate = momentum - self.filt
        self.filt = self.filt + dt * self.bandwidth * (signal - self.filt)
        return estimate


class NominalArmModel:
    """Analytic arm model handles with deliberate perturbation switches."""

    def __init__(self, plant: PlantModel, drop_gravity: bool = False,
                 mass_scale: float = 1.0):
        self.plant = plant
        self.drop_gravity = drop_gravity
        self.mass_scale = float(mass_scale)

    def mass(self, q: np.ndarray) -> np.ndarray:
        return self.mass_scale * mass_matrix(self.plant, q)

    def coriolis(self, q: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.mass_scale * coriolis_matrix(self.plant, q, v)

    def gravity(self, q: np.ndarray) -> np.ndarray:
        if self.drop_gravity:
            return np.zeros(self.plant.dof)
        return gravity_torque(self.plant, q)


class NonlinearDisturbanceObserver:
    """Model-based disturbance tracker with first-order error dynamics.

    The estimate is z + L * Mn(q) * v; its error converges at rate L for
    a matched nominal model and inherits the full model mismatch
    otherwise.  A near-singular nominal inertia raises SingularityError
    instead of producing silent garbage.
    """

    def __init__(self, n: int, gain: np.ndarray, nominal: NominalArmModel):
        gain = np.asarray(gain, dtype=float)
        if np.any(np.linalg.eigvalsh(0.5 * (gain + gain.T)) <= 0.0):
            raise ConfigurationError("observer gain must be positive definite")
        self.gain = gain
        self.nominal = nominal
        self.z = np.zeros(n)

    def step(self, q_hat: np.ndarray, v_hat: np.ndarray, tau: np.ndarray,
             dt: float) -> np.ndarray:
        mn = self.nominal.mass(q_hat)
        cond = np.linalg.cond(mn)
        if not np.isfinite(cond) or cond > _NOMINAL_COND_CAP:
            raise SingularityError(
                f"nominal inertia condition number {cond:.3e}")
        estimate = self.z + self.gain @ mn @ v_hat
        cn = self.nominal.coriolis(q_hat, v_hat)
        gn = self.nominal.gravity(q_hat)
        zdot = -self.gain @ estimate + self.gain @ (cn @ v_hat + gn - tau)
        self.z = self.z + dt * zdot
        return estimate
