"""Discrete time-varying state-space form of the blended arm model.

State X = [q; v], input u = tau - F so the blended offset midpoint rides
on the input channel, and the offset half-width dF enters through its own
column scaled by an unknown per-joint factor in [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IllConditionedModelError
from .fuzzy import DEFAULT_COND_CAP, BlendedDynamics


@dataclass(frozen=True)
class LtvMatrices:
    """One-step matrices: X(k+1) = A X(k) + B u(k) + Fm lam(k), y = C X."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Fm: np.ndarray
    u_offset: np.ndarray
    dF: np.ndarray


def assemble_ltv(bd: BlendedDynamics, dt: float,
                 cond_cap: float = DEFAULT_COND_CAP) -> LtvMatrices:
    """Build the discrete matrices from blended dynamics at one step."""
    n = bd.M.shape[0]
    cond = np.linalg.cond(bd.M)
    if not np.isfinite(cond) or cond > cond_cap:
        raise IllConditionedModelError(
            f"inertia condition number {cond:.3e} exceeds {cond_cap:.1e}")
    minv = np.linalg.inv(bd.M)

    A = np.zeros((2 * n, 2 * n))
    A[:n, :n] = np.eye(n)
    A[:n, n:] = dt * np.eye(n)
    A[n:, :n] = -dt * minv @ bd.D
    A[n:, n:] = np.eye(n) - dt * minv @ bd.C

    B = np.zeros((2 * n, n))
    B[n:, :] = dt * minv

    Fm = np.zeros((2 * n, n))
    Fm[n:, :] = -dt * minv * bd.dF[None, :]   # = -dt * minv @ diag(dF)

    return LtvMatrices(A=A, B=B, C=np.eye(2 * n), Fm=Fm,
                       u_offset=bd.F.copy(), dF=bd.dF.copy())
