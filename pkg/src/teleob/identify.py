"""End-to-end identification: excite the plant, cluster, fit, calibrate.

Data generation drives the arm open loop with seeded multi-sine torques
around its hanging posture and assembles samples in the inverse-dynamics
layout [v_next; v; q] -> tau, with the velocity signal coming from the
position-only velocity observer (no direct velocity sensing).  The
identification step clusters, fits local models, and calibrates the
offset blur radii so the intervals cover a target share of the training
residuals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, filtfilt

from .clustering import GkOptions
from .errors import ConfigurationError, DivergenceError, ExcitationError
from .fuzzy import (LocalModels, Sample, Type2FuzzyModel, blur_model,
                    cluster_samples, fit_local_models, predict_batch,
                    stack_samples)
from .observers import VelocityObserver
from .plant import PlantModel, PlantState, step_dynamics


@dataclass
class ExcitationConfig:
    """Seeded multi-sine torque program for one identification run.

    smoothing_hz is the zero-phase low-pass applied to the recorded
    position and velocity sequences before samples are assembled; the
    finite-difference acceleration regressor is unusable without it once
    realistic encoder noise reaches the velocity signal.
    """

    amplitude: tuple = (1.0, 0.4)
    bias_amplitude: tuple = (2.2, 0.7)
    bias_hz: float = 0.05
    components: int = 6
    f_min: float = 0.1
    f_max: float = 2.5
    excursion_limit: float = 1.2
    smoothing_hz: float = 10.0


def _multisine(n: int, cfg: ExcitationConfig, rng: np.random.Generator):
    amp = np.broadcast_to(np.asarray(cfg.amplitude, dtype=float), (n,))
    bias_amp = np.broadcast_to(np.asarray(cfg.bias_amplitude, dtype=float), (n,))
    freqs = np.exp(rng.uniform(np.log(cfg.f_min), np.log(cfg.f_max),
                               size=(n, cfg.components)))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(n, cfg.components))
    weights = rng.uniform(0.5, 1.0, size=(n, cfg.components))
    weights *= (amp / weights.sum(axis=1))[:, None]
    bias_phase = rng.uniform(0.0, 2.0 * np.pi, size=n)

    def torque(t: float) -> np.ndarray:
        # Slow large-amplitude component sweeps the posture range; the
        # faster components excite inertia and damping around it.
        bias = bias_amp * np.sin(2.0 * np.pi * cfg.bias_hz * t + bias_phase)
        return bias + np.sum(weights * np.sin(2.0 * np.pi * freqs * t + phases),
                             axis=1)

    return torque


def generate_ident_data(plant: PlantModel, seed: int, count: int, dt: float,
                        q0=None, excitation: ExcitationConfig | None = None,
                        vel_k1: float = 100.0, vel_k2: float = 10.0,
                        rule_count_hint: int = 9) -> list[Sample]:
    """Excite the plant and return `count` identification samples.

    The sample at step k is x = [v(k+1); v(k); q(k)], y = tau(k), where q
    is the noisy measured position and v the velocity-observer output.
    Raises ExcitationError if the arm diverges or leaves the configured
    excursion band (lower the excitation amplitude in that case).
    """
    if count <= 20 * rule_count_hint:
        raise ConfigurationError(
            f"need more than {20 * rule_count_hint} samples for "
            f"{rule_count_hint} rules")
    excitation = excitation or ExcitationConfig()
    n = plant.dof
    seeds = np.random.SeedSequence(seed).spawn(2)
    rng_exc = np.random.default_rng(seeds[0])
    noise_rng = np.random.default_rng(seeds[1])
    torque_of = _multisine(n, excitation, rng_exc)

    q0 = np.array([-np.pi / 2.0, 0.3, 0.2][:n]) if q0 is None else \
        np.asarray(q0, dtype=float)
    state = PlantState(q=q0.copy(), qdot=np.zeros(n))
    vel_obs = VelocityObserver(n, vel_k1, vel_k2, q0=q0)

    steps = count + 1
    q_meas = np.empty((steps, n))
    v_obs = np.empty((steps, n))
    taus = np.empty((steps, n))
    for k in range(steps):
        qm = state.q + plant.q_noise_std * noise_rng.standard_normal(n)
        q_meas[k] = qm
        v_obs[k] = vel_obs.step(qm, dt)
        tau = torque_of(k * dt)
        taus[k] = tau
        try:
            state = step_dynamics(plant, state, tau, np.zeros(n), dt)
        except DivergenceError as exc:
            raise ExcitationError(
                f"plant diverged during excitation at t={state.t:.3f}s; "
                "lower the excitation amplitude") from exc
        if np.max(np.abs(state.q - q0)) > excitation.excursion_limit:
            raise ExcitationError(
                f"excitation left the workspace at t={state.t:.3f}s; "
                "lower the excitation amplitude")

    if excitation.smoothing_hz > 0.0:
        # Offline zero-phase smoothing of the recorded signal sequences;
        # sample assembly is a batch step, so non-causal filtering is fine.
        b, a = butter(2, excitation.smoothing_hz, fs=1.0 / dt)
        q_meas = filtfilt(b, a, q_meas, axis=0)
        v_obs = filtfilt(b, a, v_obs, axis=0)

    return [Sample(x=np.concatenate([v_obs[k + 1], v_obs[k], q_meas[k]]),
                   y=taus[k].copy())
            for k in range(count)]


@dataclass
class IdentReport:
    """Quality summary of one identification run."""

    rule_count: int
    train_count: int
    holdout_count: int
    holdout_rmse: np.ndarray
    signal_rms: np.ndarray
    rmse_ratio: float
    coverage: np.ndarray
    y_blur: np.ndarray
    mu_blur: np.ndarray
    rule_residuals: np.ndarray

    def to_dict(self) -> dict:
        return {
            "rule_count": self.rule_count,
            "train_count": self.train_count,
            "holdout_count": self.holdout_count,
            "holdout_rmse": self.holdout_rmse.tolist(),
            "signal_rms": self.signal_rms.tolist(),
            "rmse_ratio": self.rmse_ratio,
            "coverage": self.coverage.tolist(),
            "y_blur": self.y_blur.tolist(),
            "mu_blur": self.mu_blur.tolist(),
            "rule_residuals": self.rule_residuals.tolist(),
        }


def identify(samples, rule_count: int, seed: int, dt: float,
             mu_blur: float = 0.05, y_blur=None,
             holdout_fraction: float = 0.2,
             coverage_quantile: float = 0.9,
             gk_opts: GkOptions | None = None
             ) -> tuple[Type2FuzzyModel, LocalModels, IdentReport]:
    """Cluster, fit and blur a model; report held-out quality.

    With y_blur=None the offset radii are calibrated per output to the
    `coverage_quantile` of the absolute training residuals, so the
    resulting intervals cover at least that share of them by
    construction.  The report's holdout RMSE uses the final contiguous
    `holdout_fraction` of the samples, which never participate in the
    fit.
    """
    if not 0.0 < holdout_fraction < 0.9:
        raise ConfigurationError("holdout fraction must be in (0, 0.9)")
    total = len(samples)
    holdout_count = int(round(holdout_fraction * total))
    train = samples[:total - holdout_count]
    holdout = samples[total - holdout_count:]

    clusters = cluster_samples(train, rule_count, seed, gk_opts)
    local = fit_local_models(train, clusters, dt)

    X_train, Y_train = stack_samples(train)
    crisp = blur_model(local, 0.0, 0.0)
    resid = Y_train - predict_batch(crisp, X_train)
    if y_blur is None:
        # "higher" interpolation guarantees the empirical coverage bound.
        y_blur = np.percentile(np.abs(resid), 100.0 * coverage_quantile,
                               axis=0, method="higher")
    y_blur = np.broadcast_to(np.asarray(y_blur, dtype=float),
                             (Y_train.shape[1],)).copy()
    coverage = np.mean(np.abs(resid) <= y_blur + 1e-15, axis=0)

    model = blur_model(local, mu_blur, y_blur)

    X_hold, Y_hold = stack_samples(holdout)
    hold_resid = Y_hold - predict_batch(model, X_hold)
    holdout_rmse = np.sqrt(np.mean(hold_resid ** 2, axis=0))
    signal_rms = np.sqrt(np.mean(Y_hold ** 2, axis=0))
    ratio = float(np.sqrt(np.mean(hold_resid ** 2))
                  / np.sqrt(np.mean(Y_hold ** 2)))

    report = IdentReport(rule_count=rule_count,
                         train_count=len(train), holdout_count=holdout_count,
                         holdout_rmse=holdout_rmse, signal_rms=signal_rms,
                         rmse_ratio=ratio, coverage=coverage, y_blur=y_blur,
                         mu_blur=model.mu_blur.copy(),
                         rule_residuals=local.residuals.copy())
    return model, local, report


def samples_to_array(samples) -> np.ndarray:
    X, Y = stack_samples(samples)
    return np.hstack([X, Y])


def samples_from_array(data: np.ndarray, dof: int) -> list[Sample]:
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != 4 * dof:
        raise ConfigurationError(
            f"dataset must have {4 * dof} columns for dof={dof}")
    return [Sample(x=row[:3 * dof].copy(), y=row[3 * dof:].copy())
            for row in data]
