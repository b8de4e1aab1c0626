"""Interval fuzzy dynamics models for serial-arm torque data.

A model is a bank of L local linear models (rules) in the inverse-dynamics
form

    M_l (v_next - v)/dt + C_l v + D_l q + f_l = tau,

each anchored at a cluster center in premise space x = [v_next; v; q].
Rule offsets carry intervals [F_lower, F_upper] instead of crisp numbers,
and memberships carry a blur radius, which together express how much the
local fit is trusted.  Evaluating the model at a query point blends the
rules with interval membership weights and returns blended matrices plus
the half-width of the offset interval.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clustering import ClusterSet, GkOptions, gk_cluster
from .errors import ConfigurationError, IdentificationError, IllConditionedModelError

# Regression is declared rank-deficient above this condition number even
# after the ridge term was added.
_FIT_COND_CAP = 1e12
# Default cap for the blended inertia matrix; beyond it the model is
# treated as unusable rather than silently inverted.
DEFAULT_COND_CAP = 1e8
# Membership sums below this fall back to the crisp blend.
_SUM_FLOOR = 1e-12


@dataclass(frozen=True)
class Sample:
    """One identification sample: premise vector x and output vector y."""

    x: np.ndarray
    y: np.ndarray


def stack_samples(samples) -> tuple[np.ndarray, np.ndarray]:
    """Stack a sample sequence into (X, Y) matrices, validating shape."""
    if len(samples) == 0:
        raise ConfigurationError("empty sample sequence")
    X = np.asarray([s.x for s in samples], dtype=float)
    Y = np.asarray([s.y for s in samples], dtype=float)
    if X.ndim != 2 or Y.ndim != 2:
        raise ConfigurationError("samples have inconsistent dimensions")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ConfigurationError("samples contain non-finite entries")
    return X, Y


def cluster_samples(samples, count: int, seed: int,
                    opts: GkOptions | None = None) -> ClusterSet:
    """Cluster the joint [x; y] sample space into `count` fuzzy clusters."""
    X, Y = stack_samples(samples)
    return gk_cluster(np.hstack([X, Y]), count, seed, opts)


# ---------------------------------------------------------------------------
# Memberships
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntervalMembership:
    """Per-rule membership interval and its crisp midline value."""

    lower: np.ndarray
    upper: np.ndarray
    crisp: np.ndarray


def crisp_memberships(centers: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Inverse-squared-distance memberships of x against each center row.

    A query exactly on a center gets membership one there and zero
    elsewhere (split evenly if several centers coincide with the query);
    otherwise membership l is (1/d2_l) / sum_v (1/d2_v), which is
    nonnegative and sums to one.
    """
    d2 = np.sum((centers - x) ** 2, axis=1)
    on_center = d2 <= 0.0
    if on_center.any():
        return on_center.astype(float) / on_center.sum()
    inv = 1.0 / d2
    return inv / inv.sum()


def interval_from_crisp(crisp: np.ndarray, blur: np.ndarray) -> IntervalMembership:
    """Widen crisp memberships by the per-rule blur, clamped to [0, 1]."""
    lower = np.maximum(0.0, crisp - blur)
    upper = np.minimum(crisp + blur, 1.0)
    return IntervalMembership(lower=lower, upper=upper, crisp=crisp)


# ---------------------------------------------------------------------------
# Model types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LocalModels:
    """Crisp per-rule coefficients before blurring.

    centers are the premise parts of the cluster centers, shape (L, 3n).
    M, C, D have shape (L, n, n); f has shape (L, n).  residuals holds the
    membership-weighted RMS fit residual per rule and output.
    """

    centers: np.ndarray
    M: np.ndarray
    C: np.ndarray
    D: np.ndarray
    f: np.ndarray
    dt: float
    residuals: np.ndarray

    @property
    def rule_count(self) -> int:
        return self.M.shape[0]

    @property
    def dof(self) -> int:
        return self.M.shape[1]


@dataclass(frozen=True)
class Type2FuzzyModel:
    """Interval fuzzy model: blurred memberships and offset intervals."""

    centers: np.ndarray
    M: np.ndarray
    C: np.ndarray
    D: np.ndarray
    F_lower: np.ndarray
    F_upper: np.ndarray
    mu_blur: np.ndarray
    dt: float

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ConfigurationError("sampling period must be positive")
        if np.any(self.F_lower > self.F_upper):
            raise ConfigurationError("offset interval bounds are crossed")
        if np.any(self.mu_blur < 0.0) or np.any(self.mu_blur > 1.0):
            raise ConfigurationError("membership blur must lie in [0, 1]")
        for name in ("centers", "M", "C", "D", "F_lower", "F_upper"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ConfigurationError(f"non-finite entries in {name}")

    @property
    def rule_count(self) -> int:
        return self.M.shape[0]

    @property
    def dof(self) -> int:
        return self.M.shape[1]

    @property
    def f_mid(self) -> np.ndarray:
        return 0.5 * (self.F_lower + self.F_upper)

    @property
    def y_blur(self) -> np.ndarray:
        return 0.5 * (self.F_upper - self.F_lower)


@dataclass(frozen=True)
class BlendedDynamics:
    """Time-k blended matrices plus the offset half-width channel dF."""

    M: np.ndarray
    C: np.ndarray
    D: np.ndarray
    F: np.ndarray
    dF: np.ndarray


# ---------------------------------------------------------------------------
# Identification
# ---------------------------------------------------------------------------

def weighted_ridge_fit(X: np.ndarray, Y: np.ndarray, weights: np.ndarray,
                       ridge: float = 1e-9):
    """Weighted least squares with intercept and a small ridge term.

    Returns (coef, offset, cond) where coef has shape (p, d) and offset
    shape (p,) such that Y ~ X @ coef.T + offset.
    """
    n_samples, d = X.shape
    design = np.hstack([X, np.ones((n_samples, 1))])
    wd = design * weights[:, None]
    gram = design.T @ wd
    gram[np.diag_indices_from(gram)] += ridge
    cond = float(np.linalg.cond(gram))
    if not np.isfinite(cond) or cond > _FIT_COND_CAP:
        raise np.linalg.LinAlgError(f"regressor condition number {cond:.3e}")
    sol = np.linalg.solve(gram, wd.T @ Y)
    return sol[:d].T, sol[d], cond


def fit_local_models(samples, clusters: ClusterSet, dt: float,
                     ridge: float = 1e-9) -> LocalModels:
    """Fit one inverse-dynamics local model per cluster.

    The sample premise must be laid out as [v_next; v; q] with the output
    being the joint torque, so the generic affine fit converts exactly to
    the (M, C, D, f) form:  with blocks [A1 A2 A3] fitted against
    [v_next, v, q],  M = dt*A1,  C = A1 + A2,  D = A3.

    Raises IdentificationError naming the rule if the weighted regressor
    stays rank deficient after the ridge term.
    """
    X, Y = stack_samples(samples)
    n = Y.shape[1]
    if X.shape[1] != 3 * n:
        raise ConfigurationError(
            f"premise dimension {X.shape[1]} does not match 3*dof = {3 * n}")
    if clusters.memberships.shape[0] != X.shape[0]:
        raise ConfigurationError("membership rows do not match sample count")

    L = clusters.rule_count
    M = np.empty((L, n, n))
    C = np.empty((L, n, n))
    D = np.empty((L, n, n))
    f = np.empty((L, n))
    residuals = np.empty((L, n))
    for l in range(L):
        w = clusters.memberships[:, l]
        try:
            coef, offset, _ = weighted_ridge_fit(X, Y, w, ridge)
        except np.linalg.LinAlgError as exc:
            raise IdentificationError(str(exc), rule=l) from None
        a1 = coef[:, :n]
        a2 = coef[:, n:2 * n]
        a3 = coef[:, 2 * n:]
        M[l] = dt * a1
        C[l] = a1 + a2
        D[l] = a3
        f[l] = offset
        resid = Y - X @ coef.T - offset
        wsum = w.sum()
        residuals[l] = np.sqrt((w[:, None] * resid ** 2).sum(axis=0) / wsum)

    centers = clusters.centers[:, :3 * n]
    return LocalModels(centers=centers, M=M, C=C, D=D, f=f, dt=dt,
                       residuals=residuals)


def blur_model(local: LocalModels, mu_blur, y_blur) -> Type2FuzzyModel:
    """Turn crisp local models into an interval model.

    mu_blur may be a scalar or per-rule vector in [0, 1]; y_blur may be a
    scalar, per-output vector, or (L, n) array of nonnegative radii.  The
    offset interval of rule l becomes [f_l - y_blur_l, f_l + y_blur_l].
    """
    L, n = local.f.shape
    mu = np.broadcast_to(np.asarray(mu_blur, dtype=float), (L,)).copy()
    dy = np.broadcast_to(np.asarray(y_blur, dtype=float), (L, n)).copy()
    if np.any(mu < 0.0) or np.any(mu > 1.0):
        raise ConfigurationError("membership blur must lie in [0, 1]")
    if np.any(dy < 0.0):
        raise ConfigurationError("output blur radii must be nonnegative")
    return Type2FuzzyModel(
        centers=local.centers.copy(),
        M=local.M.copy(), C=local.C.copy(), D=local.D.copy(),
        F_lower=local.f - dy, F_upper=local.f + dy,
        mu_blur=mu, dt=local.dt)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def infer_membership(model: Type2FuzzyModel, x: np.ndarray) -> IntervalMembership:
    """Interval memberships of a premise vector against the model rules."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.centers.shape[1],):
        raise ConfigurationError(
            f"premise vector has shape {x.shape}, expected "
            f"({model.centers.shape[1]},)")
    crisp = crisp_memberships(model.centers, x)
    return interval_from_crisp(crisp, model.mu_blur)


def _half_weights(raw: np.ndarray, crisp: np.ndarray) -> np.ndarray:
    # Clamping can drive a whole bound vector to zero far from all
    # centers; the crisp weights (which always sum to one) take over.
    total = raw.sum()
    if total < _SUM_FLOOR:
        return crisp
    return raw / total


def blend(model: Type2FuzzyModel, x: np.ndarray,
          cond_cap: float = DEFAULT_COND_CAP) -> BlendedDynamics:
    """Blend the rule bank at premise point x.

    Each matrix is the average of the lower-bound-weighted and the
    upper-bound-weighted convex combinations of the rule matrices.  The
    offset channel pairs lower weights with lower offset bounds and upper
    weights with upper bounds; F is the midpoint of the two and dF the
    (nonnegative) half-width.

    Raises IllConditionedModelError if the blended inertia matrix exceeds
    cond_cap.
    """
    im = infer_membership(model, x)
    w_lo = _half_weights(im.lower, im.crisp)
    w_hi = _half_weights(im.upper, im.crisp)
    w_mid = 0.5 * (w_lo + w_hi)

    M = np.einsum("l,lij->ij", w_mid, model.M)
    C = np.einsum("l,lij->ij", w_mid, model.C)
    D = np.einsum("l,lij->ij", w_mid, model.D)
    f_lo = w_lo @ model.F_lower
    f_hi = w_hi @ model.F_upper
    F = 0.5 * (f_lo + f_hi)
    dF = 0.5 * np.abs(f_hi - f_lo)

    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > cond_cap:
        raise IllConditionedModelError(
            f"blended inertia condition number {cond:.3e} exceeds {cond_cap:.1e}")
    return BlendedDynamics(M=M, C=C, D=D, F=F, dF=dF)


def batch_crisp_memberships(centers: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Vectorized crisp memberships for many query rows, shape (N, L)."""
    d2 = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    on_center = d2 <= 0.0
    hits = on_center.any(axis=1)
    with np.errstate(divide="ignore"):
        inv = 1.0 / d2
    u = inv / inv.sum(axis=1, keepdims=True)
    if hits.any():
        rows = on_center[hits]
        u[hits] = rows / rows.sum(axis=1, keepdims=True)
    return u


def predict_batch(model: Type2FuzzyModel, X: np.ndarray) -> np.ndarray:
    """Midpoint one-step torque prediction for premise rows X, shape (N, n).

    Equivalent to blending at every row and evaluating the local form;
    implemented as a membership-weighted sum of per-rule predictions since
    both are linear in the rule coefficients.
    """
    n = model.dof
    crisp = batch_crisp_memberships(model.centers, X)
    lower = np.maximum(0.0, crisp - model.mu_blur)
    upper = np.minimum(crisp + model.mu_blur, 1.0)
    lo_sum = lower.sum(axis=1, keepdims=True)
    hi_sum = upper.sum(axis=1, keepdims=True)
    w_lo = np.where(lo_sum < _SUM_FLOOR, crisp, lower / np.maximum(lo_sum, _SUM_FLOOR))
    w_hi = np.where(hi_sum < _SUM_FLOOR, crisp, upper / np.maximum(hi_sum, _SUM_FLOOR))

    v_next = X[:, :n]
    v = X[:, n:2 * n]
    q = X[:, 2 * n:]
    accel = (v_next - v) / model.dt
    # Per-rule linear parts, shape (N, L, n).
    lin = (np.einsum("lij,nj->nli", model.M, accel)
           + np.einsum("lij,nj->nli", model.C, v)
           + np.einsum("lij,nj->nli", model.D, q))
    w_mid = 0.5 * (w_lo + w_hi)
    pred = np.einsum("nl,nli->ni", w_mid, lin)
    pred += 0.5 * (w_lo @ model.F_lower + w_hi @ model.F_upper)
    return pred


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def model_to_dict(model: Type2FuzzyModel) -> dict:
    return {
        "n": model.dof,
        "L": model.rule_count,
        "dt": model.dt,
        "centers": model.centers.tolist(),
        "rules": [
            {
                "M": model.M[l].tolist(),
                "C": model.C[l].tolist(),
                "D": model.D[l].tolist(),
                "F_lower": model.F_lower[l].tolist(),
                "F_upper": model.F_upper[l].tolist(),
                "mu_blur": float(model.mu_blur[l]),
            }
            for l in range(model.rule_count)
        ],
    }


def model_from_dict(doc: dict) -> Type2FuzzyModel:
    try:
        n = int(doc["n"])
        L = int(doc["L"])
        dt = float(doc["dt"])
        centers = np.asarray(doc["centers"], dtype=float)
        rules = doc["rules"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"malformed model document: {exc}") from None
    if len(rules) != L:
        raise ConfigurationError(f"rule count {len(rules)} does not match L={L}")
    if centers.shape != (L, 3 * n):
        raise ConfigurationError(
            f"centers have shape {centers.shape}, expected ({L}, {3 * n})")

    def grab(key, shape):
        out = np.empty((L,) + shape)
        for l, rule in enumerate(rules):
            arr = np.asarray(rule[key], dtype=float)
            if arr.shape != shape:
                raise ConfigurationError(
                    f"rule {l} field {key} has shape {arr.shape}, expected {shape}")
            out[l] = arr
        return out

    return Type2FuzzyModel(
        centers=centers,
        M=grab("M", (n, n)), C=grab("C", (n, n)), D=grab("D", (n, n)),
        F_lower=grab("F_lower", (n,)), F_upper=grab("F_upper", (n,)),
        mu_blur=np.asarray([float(r["mu_blur"]) for r in rules]),
        dt=dt)


def save_model(model: Type2FuzzyModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n",
                          encoding="utf-8")


def load_model(path) -> Type2FuzzyModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"model file is not valid JSON: {exc}") from None
    return model_from_dict(doc)
