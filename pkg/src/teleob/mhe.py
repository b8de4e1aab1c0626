"""Closed-form moving-horizon estimation over the time-varying arm model.

Each step the estimator holds the last N+1 outputs, N inputs and N+1
one-step model matrices, stacks the window into block form, and minimizes

    J = |X0 - prior|^2_W0  +  sum_i |lam_i|^2_Wl  +  sum_i |y_i - yhat_i|^2_Wy

over the window-start state X0 and the per-step uncertainty factors lam.
The minimizer is available in closed form from the two stationarity
equations, so no iterative solver is involved.  The estimate of the
current state is the rollout endpoint; the prior for the next window is
the second rollout entry.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigurationError, DegenerateEstimatorError
from .ltv import LtvMatrices

_SYM_TOL = 1e-12
_EIG_TOL = -1e-10


def _check_weight(name: str, w: np.ndarray, positive_definite: bool) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ConfigurationError(f"{name} must be a square matrix")
    if np.max(np.abs(w - w.T)) > _SYM_TOL:
        raise ConfigurationError(f"{name} must be symmetric")
    eig = np.linalg.eigvalsh(w)
    if positive_definite:
        if eig.min() <= 0.0:
            raise ConfigurationError(f"{name} must be positive definite")
    elif eig.min() < _EIG_TOL:
        raise ConfigurationError(f"{name} must be positive semi-definite")
    return w


@dataclass
class MheConfig:
    """Horizon length and the three quadratic weights.

    prior_weight acts on the window-start state (2n x 2n, positive
    definite), lam_weight on each uncertainty factor (n x n), meas_weight
    on each output residual (2n x 2n).
    """

    horizon: int
    prior_weight: np.ndarray
    lam_weight: np.ndarray
    meas_weight: np.ndarray
    cond_cap: float = 1e10

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigurationError("horizon must be at least 1")
        self.prior_weight = _check_weight("prior_weight", self.prior_weight, True)
        self.lam_weight = _check_weight("lam_weight", self.lam_weight, False)
        self.meas_weight = _check_weight("meas_weight", self.meas_weight, False)
        if 2 * self.lam_weight.shape[0] != self.prior_weight.shape[0]:
            raise ConfigurationError(
                "prior_weight must act on twice the lam_weight dimension")
        if self.meas_weight.shape != self.prior_weight.shape:
            raise ConfigurationError("meas_weight and prior_weight shapes differ")

    @property
    def dof(self) -> int:
        return self.lam_weight.shape[0]

    @cached_property
    def stacked_lam_weight(self) -> np.ndarray:
        return np.kron(np.eye(self.horizon), self.lam_weight)

    @cached_property
    def stacked_meas_weight(self) -> np.ndarray:
        return np.kron(np.eye(self.horizon + 1), self.meas_weight)


@dataclass
class MheWindow:
    """Rolling buffers covering one horizon: outputs, inputs, model matrices.

    When full, `outputs` and `matrices` hold N+1 entries and `inputs` N,
    all with contiguous time indices; `prior` anchors the oldest state.
    """

    horizon: int
    outputs: deque = field(init=False)
    inputs: deque = field(init=False)
    matrices: deque = field(init=False)
    prior: np.ndarray | None = None

    def __post_init__(self):
        self.outputs = deque(maxlen=self.horizon + 1)
        self.inputs = deque(maxlen=self.horizon)
        self.matrices = deque(maxlen=self.horizon + 1)

    @property
    def full(self) -> bool:
        return len(self.outputs) == self.horizon + 1


@dataclass(frozen=True)
class StackedSystem:
    """Block-stacked window: output map of (X0, u stack, lam stack)."""

    phi: np.ndarray          # ((N+1)*2n, 2n)
    g: np.ndarray            # ((N+1)*2n, N*n)
    h: np.ndarray            # ((N+1)*2n, N*n)
    lam_weight: np.ndarray   # block-diagonal, N blocks
    meas_weight: np.ndarray  # block-diagonal, N+1 blocks


@dataclass(frozen=True)
class MheSolution:
    """Closed-form window solution plus its rollout and cost."""

    x0: np.ndarray           # estimated window-start state
    lam: np.ndarray          # stacked uncertainty factors, (N*n,)
    states: np.ndarray       # rollout, (N+1, 2n)
    cost: float
    cond_state: float
    cond_lam: float


def build_stacks(window: MheWindow, config: MheConfig) -> StackedSystem:
    """Stack the window matrices into the block form used by the solver.

    Row block i maps the window-start state, inputs and uncertainty
    factors to the predicted output at window index i; the input and
    uncertainty maps are lower block-triangular with a zero first row.
    """
    if not window.full:
        raise ConfigurationError("window must be full before stacking")
    mats: list[LtvMatrices] = list(window.matrices)
    n_out = mats[0].C.shape[0]
    m = mats[0].A.shape[0]
    n_in = mats[0].B.shape[1]
    N = window.horizon

    phi = np.zeros(((N + 1) * n_out, m))
    g = np.zeros(((N + 1) * n_out, N * n_in))
    h = np.zeros_like(g)

    trans = np.eye(m)          # product A_{j-1} ... A_0
    in_cols: list[np.ndarray] = []   # column c: A_{j-1} ... A_{c+1} B_c
    un_cols: list[np.ndarray] = []
    for j in range(N + 1):
        c_j = mats[j].C
        rows = slice(j * n_out, (j + 1) * n_out)
        phi[rows] = c_j @ trans
        for c in range(j):
            g[rows, c * n_in:(c + 1) * n_in] = c_j @ in_cols[c]
            h[rows, c * n_in:(c + 1) * n_in] = c_j @ un_cols[c]
        if j < N:
            a_j = mats[j].A
            trans = a_j @ trans
            in_cols = [a_j @ col for col in in_cols]
            un_cols = [a_j @ col for col in un_cols]
            in_cols.append(mats[j].B.copy())
            un_cols.append(mats[j].Fm.copy())

    return StackedSystem(phi=phi, g=g, h=h,
                         lam_weight=config.stacked_lam_weight,
                         meas_weight=config.stacked_meas_weight)


def solve_window(window: MheWindow, stacks: StackedSystem,
                 config: MheConfig) -> MheSolution:
    """Minimize the window cost in closed form.

    Solves the two coupled stationarity equations: the uncertainty stack
    is the weighted regression of the output residual on its propagation
    map, and the start state folds that regression back into its own
    normal equations.

    Raises DegenerateEstimatorError (with both condition numbers) if
    either solve exceeds the configured condition cap.
    """
    y_stack = np.concatenate(list(window.outputs))
    u_stack = (np.concatenate(list(window.inputs))
               if len(window.inputs) else np.zeros(0))
    prior = window.prior
    if prior is None:
        raise ConfigurationError("window prior is not set")

    phi, g, h = stacks.phi, stacks.g, stacks.h
    py = stacks.meas_weight
    r = y_stack - g @ u_stack

    hty = h.T @ py
    s_lam = stacks.lam_weight + hty @ h
    cond_lam = float(np.linalg.cond(s_lam))
    if not np.isfinite(cond_lam) or cond_lam > config.cond_cap:
        raise DegenerateEstimatorError(
            f"uncertainty normal matrix condition {cond_lam:.3e}",
            cond_lam=cond_lam)
    gamma = np.linalg.solve(s_lam, hty)

    phity = phi.T @ py
    theta = phity @ h @ gamma
    k = config.prior_weight + phity @ phi - theta @ phi
    cond_state = float(np.linalg.cond(k))
    if not np.isfinite(cond_state) or cond_state > config.cond_cap:
        raise DegenerateEstimatorError(
            f"state normal matrix condition {cond_state:.3e}",
            cond_state=cond_state, cond_lam=cond_lam)
    x0 = np.linalg.solve(
        k, (phity - theta) @ r + config.prior_weight @ prior)
    lam = gamma @ (r - phi @ x0)

    states = rollout(x0, lam, window)
    cost = window_cost(x0, lam, window, stacks, config)
    return MheSolution(x0=x0, lam=lam, states=states, cost=cost,
                       cond_state=cond_state, cond_lam=cond_lam)


def rollout(x0: np.ndarray, lam: np.ndarray, window: MheWindow) -> np.ndarray:
    """Propagate the window model from x0 under the inputs and lam stack."""
    mats = list(window.matrices)
    N = window.horizon
    n_in = mats[0].B.shape[1]
    states = np.empty((N + 1, x0.shape[0]))
    states[0] = x0
    inputs = list(window.inputs)
    for i in range(N):
        states[i + 1] = (mats[i].A @ states[i] + mats[i].B @ inputs[i]
                         + mats[i].Fm @ lam[i * n_in:(i + 1) * n_in])
    return states


def window_cost(x0: np.ndarray, lam: np.ndarray, window: MheWindow,
                stacks: StackedSystem, config: MheConfig) -> float:
    """Evaluate the window cost at an arbitrary candidate point."""
    y_stack = np.concatenate(list(window.outputs))
    u_stack = (np.concatenate(list(window.inputs))
               if len(window.inputs) else np.zeros(0))
    yhat = stacks.phi @ x0 + stacks.g @ u_stack + stacks.h @ lam
    d0 = x0 - window.prior
    resid = y_stack - yhat
    return float(d0 @ config.prior_weight @ d0
                 + lam @ stacks.lam_weight @ lam
                 + resid @ stacks.meas_weight @ resid)


# ---------------------------------------------------------------------------
# Stability certificate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IssCertificate:
    """Result of the error-contraction check on one window.

    margin is the smallest eigenvalue of the negated condition matrix;
    the certificate holds when that matrix is negative semi-definite
    (margin >= -1e-9).
    """

    holds: bool
    margin: float


def iss_check(window: MheWindow, config: MheConfig, a_prev: np.ndarray,
              q_x: np.ndarray | None = None,
              stacks: StackedSystem | None = None) -> IssCertificate:
    """Evaluate the estimate-error contraction condition for one window.

    a_prev is the one-step transition matrix immediately before the
    window start; q_x is the required decrease weight (defaults to zero).
    """
    if stacks is None:
        stacks = build_stacks(window, config)
    phi, h = stacks.phi, stacks.h
    py = stacks.meas_weight
    hty = h.T @ py
    s_lam = stacks.lam_weight + hty @ h
    gamma = np.linalg.solve(s_lam, hty)
    phity = phi.T @ py
    k = config.prior_weight + phity @ phi - phity @ h @ gamma @ phi
    cond = float(np.linalg.cond(k))
    if not np.isfinite(cond) or cond > config.cond_cap:
        raise DegenerateEstimatorError(
            f"certificate normal matrix condition {cond:.3e}", cond_state=cond)
    psi = np.linalg.solve(k, config.prior_weight @ a_prev)
    px = config.prior_weight
    m = psi.T @ (px + np.eye(px.shape[0])) @ psi - px
    if q_x is not None:
        m = m + q_x
    eig_max = float(np.linalg.eigvalsh(0.5 * (m + m.T)).max())
    return IssCertificate(holds=eig_max <= 1e-9, margin=-eig_max)


def error_transition(window: MheWindow, config: MheConfig,
                     a_prev: np.ndarray,
                     stacks: StackedSystem | None = None) -> np.ndarray:
    """One-window estimate-error transition matrix (the Psi of iss_check)."""
    if stacks is None:
        stacks = build_stacks(window, config)
    phi, h = stacks.phi, stacks.h
    py = stacks.meas_weight
    hty = h.T @ py
    gamma = np.linalg.solve(stacks.lam_weight + hty @ h, hty)
    phity = phi.T @ py
    k = config.prior_weight + phity @ phi - phity @ h @ gamma @ phi
    return np.linalg.solve(k, config.prior_weight @ a_prev)


# ---------------------------------------------------------------------------
# Rolling estimator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MheEstimate:
    """Per-step estimator output consumed by the observers and controller."""

    q: np.ndarray
    v: np.ndarray
    uncertainty: np.ndarray      # dF(k) * saturated latest lam
    lam_latest: np.ndarray       # unsaturated latest lam estimate
    warm_up: bool
    degenerate: bool
    cost: float
    saturated: int               # joints clipped to [-1, 1] this step
    iss_margin: float            # nan while unavailable


class MovingHorizonEstimator:
    """Stateful wrapper: feed one output per tick, get the current estimate.

    Until N+1 outputs have arrived the raw measurement is passed through
    with warm_up set.  Afterwards each call slides the window, re-anchors
    the prior on the previous solution, solves in closed form, and falls
    back to the propagated prior with zero uncertainty if the solve is
    degenerate.
    """

    def __init__(self, config: MheConfig, iss_diagnostic: bool = True):
        self.config = config
        self.window = MheWindow(horizon=config.horizon)
        self.iss_diagnostic = iss_diagnostic
        self.saturation_count = 0
        self.solve_count = 0
        self.degenerate_count = 0
        self._next_prior: np.ndarray | None = None
        # Transition matrix that slid out of the window last tick; feeds
        # the contraction certificate.
        self.a_prev: np.ndarray | None = None
        self.last_solution: MheSolution | None = None

    def advance(self, y: np.ndarray, u_prev: np.ndarray | None,
                ltv: LtvMatrices) -> MheEstimate:
        n = self.config.dof
        y = np.asarray(y, dtype=float)
        if len(self.window.outputs) > 0:
            if u_prev is None:
                raise ConfigurationError("u_prev is required after the first tick")
            if self.window.full:
                # The oldest transition is about to slide out; it is the
                # one-step map feeding the certificate.
                self.a_prev = self.window.matrices[0].A
            self.window.inputs.append(np.asarray(u_prev, dtype=float))
        self.window.outputs.append(y)
        self.window.matrices.append(ltv)

        if not self.window.full:
            return MheEstimate(q=y[:n].copy(), v=y[n:].copy(),
                               uncertainty=np.zeros(n), lam_latest=np.zeros(n),
                               warm_up=True, degenerate=False, cost=0.0,
                               saturated=0, iss_margin=np.nan)

        self.window.prior = (self._next_prior if self._next_prior is not None
                             else self.window.outputs[0].copy())
        stacks = build_stacks(self.window, self.config)
        degenerate = False
        try:
            sol = solve_window(self.window, stacks, self.config)
        except DegenerateEstimatorError:
            degenerate = True
            self.degenerate_count += 1
            lam = np.zeros(self.config.horizon * n)
            states = rollout(self.window.prior, lam, self.window)
            sol = MheSolution(x0=self.window.prior.copy(), lam=lam,
                              states=states,
                              cost=window_cost(self.window.prior, lam,
                                               self.window, stacks, self.config),
                              cond_state=np.inf, cond_lam=np.inf)
        self.solve_count += 1
        self.last_solution = sol
        self._next_prior = sol.states[1].copy()

        lam_latest = sol.lam[-n:]
        lam_sat = np.clip(lam_latest, -1.0, 1.0)
        saturated = int(np.sum(np.abs(lam_latest) > 1.0))
        self.saturation_count += saturated
        uncertainty = ltv.dF * lam_sat

        iss_margin = np.nan
        if self.iss_diagnostic and self.a_prev is not None and not degenerate:
            try:
                cert = iss_check(self.window, self.config, self.a_prev,
                                 stacks=stacks)
                iss_margin = cert.margin
            except DegenerateEstimatorError:
                pass

        current = sol.states[-1]
        return MheEstimate(q=current[:n].copy(), v=current[n:].copy(),
                           uncertainty=uncertainty, lam_latest=lam_latest.copy(),
                           warm_up=False, degenerate=degenerate, cost=sol.cost,
                           saturated=saturated, iss_margin=iss_margin)
