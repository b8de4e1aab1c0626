"""Delayed bilateral loop: channels, coupling laws, gain checks, tick engine.

Master and slave each run the same estimation stack (position sensing,
velocity filter, horizon estimator, model blend, force observer bank).
The sides exchange their cleaned positions and one force-observer output
through bounded time-varying delay channels, and apply coupling laws that
cancel the blended model dynamics, subtract the local external-torque
estimate, and add delayed position plus force-difference feedback.

Tick ordering is fixed and documented on :meth:`TeleopSimulation.step`:
sense, estimate, observe forces, exchange, control, actuate.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .fuzzy import BlendedDynamics, Type2FuzzyModel, blend
from .ltv import assemble_ltv
from .mhe import MheEstimate, MovingHorizonEstimator
from .observers import (ForceObserverBank, NonlinearDisturbanceObserver,
                        ReactionForceObserver, VelocityObserver)
from .plant import (DisturbanceProcess, Environment, OperatorModel, PlantModel,
                    PlantState, contact_torque, operator_torque, step_dynamics)

TRACE_VERSION = "teleob-trace-v1"
_EQ_TOL = 1e-9


# ---------------------------------------------------------------------------
# Gains
# ---------------------------------------------------------------------------

def _as_gain(n: int, value) -> np.ndarray:
    """Accept a scalar, a diagonal vector or a full (n, n) matrix."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(n)
    if arr.ndim == 1:
        if arr.shape[0] != n:
            raise ConfigurationError(f"gain vector must have length {n}")
        return np.diag(arr)
    if arr.shape != (n, n):
        raise ConfigurationError(f"gain matrix must be {n}x{n}")
    return arr


@dataclass
class TeleopGains:
    """Coupling gains, force-observer bank gains and the delay bounds."""

    K_m: np.ndarray
    K_s: np.ndarray
    B_m: np.ndarray
    B_s: np.ndarray
    K_h: np.ndarray
    K_e: np.ndarray
    bank_h: tuple          # master-side observer gains (h1, h2, h3)
    bank_e: tuple          # slave-side observer gains (e1, e2, e3)
    T1_max: float = 0.0
    T2_max: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.K_m, dtype=float).shape
        n = n[0] if n else 1
        for name in ("K_m", "K_s", "B_m", "B_s", "K_h", "K_e"):
            setattr(self, name, _as_gain(n, getattr(self, name)))
        n = self.K_m.shape[0]
        self.bank_h = tuple(_as_gain(n, g) for g in self.bank_h)
        self.bank_e = tuple(_as_gain(n, g) for g in self.bank_e)
        if len(self.bank_h) != 3 or len(self.bank_e) != 3:
            raise ConfigurationError("observer banks need three gains per side")
        if self.T1_max < 0.0 or self.T2_max < 0.0:
            raise ConfigurationError("delay bounds must be nonnegative")

    @property
    def dof(self) -> int:
        return self.K_m.shape[0]


def consistent_gains(n: int, k_m=0.1, k_s=1.0, b_m=0.2, b_s=0.2, k_h=0.2,
                     k_e=3.0, t1_max=0.15, t2_max=0.15) -> TeleopGains:
    """Gains with the observer banks wired as the convergence condition asks."""
    K_m = _as_gain(n, k_m)
    K_s = _as_gain(n, k_s)
    K_h = _as_gain(n, k_h)
    K_e = _as_gain(n, k_e)
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return TeleopGains(
        K_m=K_m, K_s=K_s, B_m=_as_gain(n, b_m), B_s=_as_gain(n, b_s),
        K_h=K_h, K_e=K_e,
        bank_h=(-K_h, eye, zero),
        bank_e=(zero, eye, -K_m @ K_e @ np.linalg.inv(K_s)),
        T1_max=t1_max, T2_max=t2_max)


@dataclass(frozen=True)
class GainViolation:
    name: str
    margin: float


@dataclass(frozen=True)
class GainReport:
    satisfied: bool
    violations: tuple
    requirements: dict


def validate_gains(gains: TeleopGains) -> GainReport:
    """Check the steady-state convergence conditions on the gain set.

    Damping on each side must dominate the round-trip delay bound, and the
    six observer-bank gains must take specific values tied to the coupling
    gains.  Every violated condition is reported with its margin (negative
    means violated); `requirements` echoes the exact matrices the bank
    gains must equal.
    """
    n = gains.dof
    eye = np.eye(n)
    zero = np.zeros((n, n))
    delay_sum = gains.T1_max + gains.T2_max
    required = {
        "bank_h1": -gains.K_h,
        "bank_h2": eye,
        "bank_h3": zero,
        "bank_e1": zero,
        "bank_e2": eye,
        "bank_e3": -gains.K_m @ gains.K_e @ np.linalg.inv(gains.K_s),
    }
    violations = []

    for name, mat in (("B_m_damping", gains.B_m), ("B_s_damping", gains.B_s)):
        margin = float(np.linalg.eigvalsh(0.5 * (mat + mat.T)).min() - delay_sum)
        if margin < -_EQ_TOL:
            violations.append(GainViolation(name, margin))

    actual = {
        "bank_h1": gains.bank_h[0], "bank_h2": gains.bank_h[1],
        "bank_h3": gains.bank_h[2],
        "bank_e1": gains.bank_e[0], "bank_e2": gains.bank_e[1],
        "bank_e3": gains.bank_e[2],
    }
    for name, want in required.items():
        margin = -float(np.max(np.abs(actual[name] - want)))
        if margin < -_EQ_TOL:
            violations.append(GainViolation(name, margin))

    return GainReport(satisfied=not violations, violations=tuple(violations),
                      requirements=required)


# ---------------------------------------------------------------------------
# Delay channels
# ---------------------------------------------------------------------------

class BoundedDelayProcess:
    """Seeded bounded random delay: base plus a clipped mean-reverting walk."""

    def __init__(self, base: float, variation: float, t_max: float, seed,
                 rate: float = 1.5):
        if base < 0.0 or variation < 0.0:
            raise ConfigurationError("delay base and variation must be >= 0")
        if base - variation < -_EQ_TOL or base + variation > t_max + _EQ_TOL:
            raise ConfigurationError(
                "delay band [base-var, base+var] must lie inside [0, t_max]")
        self.base = float(base)
        self.variation = float(variation)
        self.t_max = float(t_max)
        self.rate = float(rate)
        self._rng = np.random.default_rng(seed)
        self._x = 0.0

    def step(self, dt: float) -> float:
        if self.variation > 0.0:
            self._x += (-self.rate * self._x * dt
                        + np.sqrt(2.0 * self.rate * dt)
                        * self._rng.standard_normal())
            self._x = float(np.clip(self._x, -1.0, 1.0))
        delay = self.base + self.variation * self._x
        if delay < 0.0 or delay > self.t_max + _EQ_TOL:
            raise ConfigurationError(f"delay {delay} escaped its bound")
        return delay


class DelayChannel:
    """Timestamped ring buffer sampled at a time-varying lag.

    push() advances the delay process by one tick and stores the value;
    sample() linearly interpolates the buffered signal at t - T(t).  Until
    enough history exists the oldest sample is returned and flagged.
    """

    def __init__(self, process: BoundedDelayProcess, dt: float,
                 history_pad: float = 0.25):
        self.process = process
        self.dt = float(dt)
        self._keep = process.t_max + history_pad
        self._times: list[float] = []
        self._values: list[np.ndarray] = []
        self.current_delay = process.base
        self.clamp_count = 0

    def push(self, t: float, value: np.ndarray) -> None:
        self.current_delay = self.process.step(self.dt)
        if self._times and t <= self._times[-1]:
            raise ConfigurationError("channel timestamps must increase")
        self._times.append(float(t))
        self._values.append(np.asarray(value, dtype=float).copy())
        cutoff = t - self._keep
        while len(self._times) > 2 and self._times[1] < cutoff:
            self._times.pop(0)
            self._values.pop(0)

    def sample(self, t: float) -> tuple[np.ndarray, bool]:
        if not self._times:
            raise ConfigurationError("cannot sample an empty channel")
        target = t - self.current_delay
        if target > t + _EQ_TOL:
            raise ConfigurationError("delayed sample would be from the future")
        if target <= self._times[0]:
            clamped = target < self._times[0] - _EQ_TOL
            if clamped:
                self.clamp_count += 1
            return self._values[0].copy(), clamped
        idx = bisect.bisect_right(self._times, target)
        if idx >= len(self._times):
            return self._values[-1].copy(), False
        t0, t1 = self._times[idx - 1], self._times[idx]
        w = (target - t0) / (t1 - t0)
        return (1.0 - w) * self._values[idx - 1] + w * self._values[idx], False


# ---------------------------------------------------------------------------
# Coupling laws
# ---------------------------------------------------------------------------

def master_control(gains: TeleopGains, q_m: np.ndarray, v_m: np.ndarray,
                   q_s_delayed: np.ndarray, tau_h1: np.ndarray,
                   tau_e1_delayed: np.ndarray, tau_h2: np.ndarray,
                   bd: BlendedDynamics, uncertainty: np.ndarray) -> np.ndarray:
    """Master torque: delayed position coupling, damping, force reflection,
    blended-model feedforward, and subtraction of the estimated operator
    torque.

    The model block enters with the sign that cancels the identified
    dynamics (the blended model puts those terms on the torque-balance
    side), leaving the closed loop as pure inertia under the coupling
    terms; that cancellation is what the stability argument for the gain
    conditions rests on.
    """
    return (gains.K_m @ (q_s_delayed - q_m) - gains.B_m @ v_m
            + gains.K_h @ (tau_h1 - tau_e1_delayed)
            + bd.C @ v_m + bd.D @ q_m + bd.F + uncertainty - tau_h2)


def slave_control(gains: TeleopGains, q_s: np.ndarray, v_s: np.ndarray,
                  q_m_delayed: np.ndarray, tau_h3_delayed: np.ndarray,
                  tau_e3: np.ndarray, tau_e2: np.ndarray,
                  bd: BlendedDynamics, uncertainty: np.ndarray) -> np.ndarray:
    """Slave torque, mirror of the master law with the forward-delayed
    master signals and the environment-torque channels."""
    return (gains.K_s @ (q_m_delayed - q_s) - gains.B_s @ v_s
            + gains.K_e @ (tau_h3_delayed - tau_e3)
            + bd.C @ v_s + bd.D @ q_s + bd.F + uncertainty - tau_e2)


# ---------------------------------------------------------------------------
# Observer-bank adapters
# ---------------------------------------------------------------------------

class ProposedBank:
    def __init__(self, bank: ForceObserverBank):
        self.bank = bank

    def step(self, q_hat, v_hat, tau, bd, uncertainty, dt):
        return self.bank.step(q_hat, v_hat, tau, bd, uncertainty, dt)


class RfobBank:
    """Replicates one reaction-torque estimate over all three channels."""

    def __init__(self, observer: ReactionForceObserver):
        self.observer = observer

    def step(self, q_hat, v_hat, tau, bd, uncertainty, dt):
        est = self.observer.step(v_hat, tau, dt)
        return est, est.copy(), est.copy()


class NdobBank:
    """Replicates one disturbance estimate over all three channels."""

    def __init__(self, observer: NonlinearDisturbanceObserver):
        self.observer = observer

    def step(self, q_hat, v_hat, tau, bd, uncertainty, dt):
        est = self.observer.step(q_hat, v_hat, tau, dt)
        return est, est.copy(), est.copy()


class NullBank:
    def __init__(self, n: int):
        self.n = n

    def step(self, q_hat, v_hat, tau, bd, uncertainty, dt):
        z = np.zeros(self.n)
        return z, z.copy(), z.copy()


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

@dataclass
class TeleopSide:
    """Everything one side carries between ticks."""

    plant: PlantModel
    state: PlantState
    vel_obs: VelocityObserver
    estimator: MovingHorizonEstimator
    model: Type2FuzzyModel
    bank: object
    noise_rng: np.random.Generator
    disturbance: DisturbanceProcess
    prev_tau: np.ndarray = field(default=None)
    prev_offset: np.ndarray = field(default=None)
    last_bd: BlendedDynamics | None = None
    last_est: MheEstimate | None = None

    def __post_init__(self):
        n = self.plant.dof
        if self.prev_tau is None:
            self.prev_tau = np.zeros(n)
        if self.prev_offset is None:
            self.prev_offset = np.zeros(n)


@dataclass
class TraceRow:
    """One tick of logged signals (truth, estimates, torques, diagnostics)."""

    t: float
    truth_m: PlantState
    truth_s: PlantState
    vmeas_m: np.ndarray
    vmeas_s: np.ndarray
    est_m: MheEstimate
    est_s: MheEstimate
    tau_m: np.ndarray
    tau_s: np.ndarray
    tau_h: np.ndarray
    tau_e: np.ndarray
    bank_m: tuple
    bank_s: tuple
    delay_fwd: float
    delay_bwd: float
    clamp_fwd: bool
    clamp_bwd: bool


def trace_columns(n: int) -> list[str]:
    """Fixed, versioned column layout of the trace file."""
    cols = ["t"]
    vec = lambda name: [f"{name}_{j}" for j in range(n)]
    for name in ("q_m", "qd_m", "q_s", "qd_s", "vmeas_m", "vmeas_s",
                 "qhat_m", "vhat_m", "qhat_s", "vhat_s",
                 "tau_m", "tau_s", "tau_h", "tau_e",
                 "tau_h1", "tau_h2", "tau_h3", "tau_e1", "tau_e2", "tau_e3"):
        cols.extend(vec(name))
    cols.extend(["cost_m", "cost_s", "delay_fwd", "delay_bwd",
                 "warm_m", "warm_s", "degen_m", "degen_s",
                 "sat_m", "sat_s", "clamp_fwd", "clamp_bwd",
                 "iss_margin_m", "iss_margin_s"])
    return cols


def format_row(row: TraceRow) -> str:
    vals: list[str] = [f"{row.t:.10g}"]

    def put(arr):
        vals.extend(f"{x:.10g}" for x in np.atleast_1d(arr))

    put(row.truth_m.q); put(row.truth_m.qdot)
    put(row.truth_s.q); put(row.truth_s.qdot)
    put(row.vmeas_m); put(row.vmeas_s)
    put(row.est_m.q); put(row.est_m.v)
    put(row.est_s.q); put(row.est_s.v)
    put(row.tau_m); put(row.tau_s); put(row.tau_h); put(row.tau_e)
    for est in row.bank_m:
        put(est)
    for est in row.bank_s:
        put(est)
    vals.append(f"{row.est_m.cost:.10g}")
    vals.append(f"{row.est_s.cost:.10g}")
    vals.append(f"{row.delay_fwd:.10g}")
    vals.append(f"{row.delay_bwd:.10g}")
    vals.extend(str(int(b)) for b in
                (row.est_m.warm_up, row.est_s.warm_up,
                 row.est_m.degenerate, row.est_s.degenerate))
    vals.append(str(row.est_m.saturated))
    vals.append(str(row.est_s.saturated))
    vals.append(str(int(row.clamp_fwd)))
    vals.append(str(int(row.clamp_bwd)))
    vals.append(f"{row.est_m.iss_margin:.10g}")
    vals.append(f"{row.est_s.iss_margin:.10g}")
    return ",".join(vals)


class TeleopSimulation:
    """One configured bilateral run over a fixed-step schedule."""

    def __init__(self, master: TeleopSide, slave: TeleopSide,
                 gains: TeleopGains, operator: OperatorModel,
                 env_at, dt: float,
                 chan_fwd: DelayChannel, chan_bwd: DelayChannel,
                 cond_cap: float = 1e8):
        self.master = master
        self.slave = slave
        self.gains = gains
        self.operator = operator
        self.env_at = env_at          # callable t -> Environment
        self.dt = float(dt)
        self.chan_fwd = chan_fwd      # master -> slave: (q_hat_m, tau_h3)
        self.chan_bwd = chan_bwd      # slave -> master: (q_hat_s, tau_e1)
        self.cond_cap = cond_cap
        self.tick = 0

    def _sense(self, side: TeleopSide) -> tuple[np.ndarray, np.ndarray]:
        """Measured position and the filtered velocity signal (plus noise).

        Only the plant position is read here; velocities used downstream
        all derive from the position path.
        """
        q_meas = side.state.q + (side.plant.q_noise_std
                                 * side.noise_rng.standard_normal(side.plant.dof))
        v_sig = side.vel_obs.step(q_meas, self.dt)
        v_meas = v_sig + (side.plant.v_noise_std
                          * side.noise_rng.standard_normal(side.plant.dof))
        return q_meas, v_meas

    def _estimate(self, side: TeleopSide, q_meas: np.ndarray,
                  v_meas: np.ndarray) -> tuple[MheEstimate, BlendedDynamics, tuple]:
        """Blend, advance the horizon estimator, run the force bank."""
        premise = np.concatenate([v_meas, v_meas, q_meas])
        bd = blend(side.model, premise, cond_cap=self.cond_cap)
        ltv = assemble_ltv(bd, self.dt, cond_cap=self.cond_cap)
        u_prev = (side.prev_tau - side.prev_offset if self.tick > 0 else None)
        est = side.estimator.advance(np.concatenate([q_meas, v_meas]),
                                     u_prev, ltv)
        bank = side.bank.step(est.q, est.v, side.prev_tau, bd,
                              est.uncertainty, self.dt)
        side.last_bd = bd
        side.last_est = est
        return est, bd, bank

    def step(self) -> TraceRow:
        """Advance one tick: sense, estimate, observe, exchange, control,
        actuate.  Locally produced signals enter the channels the same
        tick they are computed."""
        t = self.tick * self.dt
        q_meas_m, v_meas_m = self._sense(self.master)
        q_meas_s, v_meas_s = self._sense(self.slave)

        est_m, bd_m, bank_m = self._estimate(self.master, q_meas_m, v_meas_m)
        est_s, bd_s, bank_s = self._estimate(self.slave, q_meas_s, v_meas_s)

        self.chan_fwd.push(t, np.concatenate([est_m.q, bank_m[2]]))
        self.chan_bwd.push(t, np.concatenate([est_s.q, bank_s[0]]))
        fwd_val, clamp_fwd = self.chan_fwd.sample(t)
        bwd_val, clamp_bwd = self.chan_bwd.sample(t)
        n = self.master.plant.dof
        q_m_delayed, tau_h3_delayed = fwd_val[:n], fwd_val[n:]
        q_s_delayed, tau_e1_delayed = bwd_val[:n], bwd_val[n:]

        tau_m = master_control(self.gains, est_m.q, est_m.v, q_s_delayed,
                               bank_m[0], tau_e1_delayed, bank_m[1],
                               bd_m, est_m.uncertainty)
        tau_s = slave_control(self.gains, est_s.q, est_s.v, q_m_delayed,
                              tau_h3_delayed, bank_s[2], bank_s[1],
                              bd_s, est_s.uncertainty)

        truth_m = self.master.state
        truth_s = self.slave.state
        tau_h = operator_torque(self.operator, t, truth_m.q, truth_m.qdot)
        env = self.env_at(t)
        tau_e = contact_torque(env, truth_s.q, truth_s.qdot)

        self.master.state = step_dynamics(
            self.master.plant, truth_m, tau_m, tau_h, self.dt,
            self.master.disturbance.step(self.dt))
        self.slave.state = step_dynamics(
            self.slave.plant, truth_s, tau_s, tau_e, self.dt,
            self.slave.disturbance.step(self.dt))

        self.master.prev_tau = tau_m
        self.master.prev_offset = bd_m.F
        self.slave.prev_tau = tau_s
        self.slave.prev_offset = bd_s.F
        self.tick += 1

        # The logged truth is the tick-start state, matching the external
        # torques and measurements taken this tick.
        return TraceRow(t=t, truth_m=truth_m, truth_s=truth_s,
                        vmeas_m=v_meas_m, vmeas_s=v_meas_s,
                        est_m=est_m, est_s=est_s,
                        tau_m=tau_m, tau_s=tau_s, tau_h=tau_h, tau_e=tau_e,
                        bank_m=bank_m, bank_s=bank_s,
                        delay_fwd=self.chan_fwd.current_delay,
                        delay_bwd=self.chan_bwd.current_delay,
                        clamp_fwd=clamp_fwd, clamp_bwd=clamp_bwd)
