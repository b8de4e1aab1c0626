"""Gustafson-Kessel fuzzy clustering.

Fuzzy c-means variant where each cluster carries its own covariance-adapted
(Mahalanobis-like) distance metric, so clusters can be ellipsoids of
different orientation.  Used to partition joint input-output data before
fitting one local linear model per cluster.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ClusteringError, ConfigurationError


@dataclass
class GkOptions:
    """Tuning knobs for :func:`gk_cluster`.

    fuzziness is the usual c-means exponent m (> 1); volume is the fixed
    cluster volume prior; cov_reg scales the trace-proportional ridge added
    to each fuzzy covariance; iteration stops once the largest center shift
    drops below tol or after max_iter sweeps.
    """

    fuzziness: float = 2.0
    volume: float = 1.0
    cov_reg: float = 1e-8
    tol: float = 1e-6
    max_iter: int = 200


@dataclass
class ClusterSet:
    """Result of a clustering run.

    centers has shape (L, d); memberships has shape (N, L) with rows that
    are nonnegative and sum to one.
    """

    centers: np.ndarray
    memberships: np.ndarray

    @property
    def rule_count(self) -> int:
        return self.centers.shape[0]


def _seeded_centers(z: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ style spread-out initial centers (deterministic per rng)."""
    n = z.shape[0]
    centers = np.empty((count, z.shape[1]))
    centers[0] = z[rng.integers(n)]
    d2 = np.sum((z - centers[0]) ** 2, axis=1)
    for l in range(1, count):
        total = d2.sum()
        if total > 0.0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers[l] = z[idx]
        d2 = np.minimum(d2, np.sum((z - centers[l]) ** 2, axis=1))
    return centers


def _memberships_from_d2(d2: np.ndarray, fuzziness: float) -> np.ndarray:
    """Membership rows from squared distances, shape (N, L).

    Samples sitting exactly on one or more centers get their membership
    split over those centers; everything else follows the standard
    c-means update.
    """
    power = 1.0 / (fuzziness - 1.0)
    on_center = d2 <= 0.0
    hits = on_center.any(axis=1)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        inv = d2 ** (-power)
        u = inv / inv.sum(axis=1, keepdims=True)
    if hits.any():
        rows = on_center[hits]
        u[hits] = rows / rows.sum(axis=1, keepdims=True)
    return u


def gk_cluster(z: np.ndarray, count: int, seed: int,
               opts: GkOptions | None = None) -> ClusterSet:
    """Partition the rows of z into `count` fuzzy clusters.

    Parameters
    ----------
    z : (N, d) array
        One data point per row; all entries finite.
    count : int
        Number of clusters L, with 1 <= L < N.
    seed : int
        Seed for the center initialization; identical inputs and seed give
        bit-identical output.
    opts : GkOptions, optional

    Returns
    -------
    ClusterSet

    Raises
    ------
    ConfigurationError
        If the cluster count is out of range or the data is malformed.
    ClusteringError
        If a cluster covariance stays singular after regularization.
    """
    opts = opts or GkOptions()
    z = np.asarray(z, dtype=float)
    if z.ndim != 2:
        raise ConfigurationError("data must be a 2-D array of samples")
    if not np.all(np.isfinite(z)):
        raise ConfigurationError("data contains non-finite entries")
    n, dim = z.shape
    if count < 1:
        raise ConfigurationError("cluster count must be at least 1")
    if count >= n:
        raise ConfigurationError(
            f"cluster count {count} must be smaller than the sample count {n}")

    rng = np.random.default_rng(seed)
    centers = _seeded_centers(z, count, rng)

    # Bootstrap memberships from plain Euclidean distances to the seeds.
    d2 = np.empty((n, count))
    for l in range(count):
        d2[:, l] = np.sum((z - centers[l]) ** 2, axis=1)
    u = _memberships_from_d2(d2, opts.fuzziness)

    eye = np.eye(dim)
    for it in range(opts.max_iter):
        um = u ** opts.fuzziness
        weight_sums = um.sum(axis=0)
        if np.any(weight_sums <= 0.0):
            raise ClusteringError("cluster lost all of its membership mass", it)
        new_centers = (um.T @ z) / weight_sums[:, None]
        shift = float(np.max(np.linalg.norm(new_centers - centers, axis=1)))
        centers = new_centers

        for l in range(count):
            diff = z - centers[l]
            w = um[:, l]
            cov = (diff * w[:, None]).T @ diff / weight_sums[l]
            cov = cov + opts.cov_reg * np.trace(cov) * eye
            sign, logdet = np.linalg.slogdet(cov)
            if sign <= 0 or not np.isfinite(logdet):
                raise ClusteringError("singular cluster covariance", it)
            try:
                cov_inv = np.linalg.inv(cov)
            except np.linalg.LinAlgError:
                raise ClusteringError("singular cluster covariance", it) from None
            # Volume-normalized metric: det(A) is fixed to the volume prior.
            metric = (opts.volume * np.exp(logdet)) ** (1.0 / dim) * cov_inv
            d2[:, l] = np.einsum("nd,de,ne->n", diff, metric, diff)
        np.maximum(d2, 0.0, out=d2)
        u = _memberships_from_d2(d2, opts.fuzziness)

        if shift < opts.tol:
            break

    return ClusterSet(centers=centers, memberships=u)
