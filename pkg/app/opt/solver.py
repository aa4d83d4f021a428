# app/opt/solver.py
"""
Dual active-set solver for  min ½ xᵀHx + cᵀx  s.t.  A x ≤ b,  H diagonal > 0.

Starts from the unconstrained minimizer and adds the most violated row
each round, dropping active rows whose multipliers would turn negative
(Goldfarb–Idnani). Small dense problems only; no factor updates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

EPS = 1e-12
INNER_FEAS_TOL = 1e-10


@dataclass
class QpSolution:
    x: np.ndarray
    status: str          # "optimal" | "infeasible"
    iterations: int
    residual: float = 0.0


def _residual(A: np.ndarray, b: np.ndarray, x: np.ndarray) -> float:
    if A.shape[0] == 0:
        return 0.0
    return float(max(np.max(A @ x - b), 0.0))


def solve_dense_qp(
    h_diag: np.ndarray,
    c: np.ndarray,
    A: np.ndarray,
    b: np.ndarray,
    tol: float = 1e-6,
    max_iter: int = 10_000,
) -> QpSolution:
    h = np.asarray(h_diag, dtype=float)
    hinv = 1.0 / h
    n = h.size
    x = -hinv * np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float).reshape(-1, n)
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.shape[0] == 0:
        return QpSolution(x, "optimal", 0)

    norms = np.linalg.norm(A, axis=1)
    zero = norms <= EPS
    if np.any(b[zero] < -tol):
        return QpSolution(x, "infeasible", 0, float(np.max(-b[zero])))
    keep = ~zero
    # internal form: N x ≥ d with unit-norm rows
    N_all = -A[keep] / norms[keep, None]
    d_all = -b[keep] / norms[keep]

    active: list = []
    lam: list = []
    it = 0
    while True:
        slack = N_all @ x - d_all
        if active:
            slack[active] = np.inf
        p = int(np.argmin(slack))
        if slack[p] >= -INNER_FEAS_TOL:
            break
        n_p = N_all[p]
        lam_p = 0.0
        while True:
            it += 1
            if it > max_iter:
                logger.warning("QP iteration cap %d reached", max_iter)
                return QpSolution(x, "infeasible", it - 1, _residual(A, b, x))
            if active:
                N = N_all[active].T
                HN = hinv[:, None] * N
                r = np.linalg.lstsq(N.T @ HN, HN.T @ n_p, rcond=None)[0]
                z = hinv * (n_p - N @ r)
            else:
                r = np.zeros(0)
                z = hinv * n_p

            t1, drop = np.inf, -1
            for j, rj in enumerate(r):
                if rj > EPS and lam[j] / rj < t1:
                    t1, drop = lam[j] / rj, j
            zn = float(z @ n_p)
            t2 = -(float(n_p @ x) - d_all[p]) / zn if zn > EPS else np.inf

            if not np.isfinite(t1) and not np.isfinite(t2):
                return QpSolution(x, "infeasible", it, _residual(A, b, x))
            t = min(t1, t2)
            if np.isfinite(t2):
                x = x + t * z
            lam = [lj - t * rj for lj, rj in zip(lam, r)]
            lam_p += t
            if np.isfinite(t2) and t2 <= t1:
                active.append(p)
                lam.append(lam_p)
                break
            active.pop(drop)
            lam.pop(drop)

    residual = _residual(A, b, x)
    if residual > tol:
        return QpSolution(x, "infeasible", it, residual)
    return QpSolution(x, "optimal", it, residual)
