"""Absolute-stability constants for the quantized formation loop.

For ``V = e^T e / 4`` the decay bound ``dV/dt <= -k |e|^2`` holds on the
basin ``|e| < delta`` with

    k = lambda_min - lambda_max * c * (eps_e + eps_z * (1 + eps_e)),
    eps = 0.5 / 10**(sigma - 1),

where ``lambda_min`` is the smallest eigenvalue of the rigidity Gram matrix
``R(z) R(z)^T`` at the target shape, ``lambda_max`` the largest eigenvalue
of ``Bbar^T Bbar`` and ``c = sum d_k^2 + sqrt(|E|) delta`` bounds ``|z|^2``.
With ``sigma_z == sigma_e`` this is the single-sigma expression.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import NotRigid
from .graph import FormationGraph, FormationState, rigidity_matrix


def jacobi_eigh(A, tol: float = 1e-12, max_sweeps: int = 100):
    """Cyclic Jacobi eigen-decomposition of a small dense symmetric matrix.

    Returns ascending eigenvalues and the matching orthonormal eigenvectors
    (as columns).  Iterates until the off-diagonal Frobenius norm drops below
    ``tol * |A|_F``.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
        raise ValueError("matrix must be symmetric")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    scale = np.linalg.norm(A)
    if scale == 0.0:
        return np.zeros(n), V
    for _ in range(max_sweeps):
        off = math.sqrt(max(0.0, np.sum(A * A) - np.sum(np.diag(A) ** 2)))
        if off < tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # rotate rows/cols p, q
                Ap, Aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * Ap - s * Aq
                A[:, q] = s * Ap + c * Aq
                Ap, Aq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * Ap - s * Aq
                A[q, :] = s * Ap + c * Aq
                A[p, q] = A[q, p] = 0.0
                Vp, Vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * Vp - s * Vq
                V[:, q] = s * Vp + c * Vq
    else:
        raise RuntimeError("Jacobi iteration did not converge")
    w = np.diag(A).copy()
    order = np.argsort(w)
    return w[order], V[:, order]


def lyapunov(e) -> float:
    e = np.asarray(e, dtype=float)
    return 0.25 * float(e @ e)


def compute_c(delta: float, d) -> float:
    """Bound on ``|z|^2`` over ``|e| < delta``: ``sum d_k^2 + sqrt(|E|) delta``."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    d = np.asarray(d, dtype=float)
    return float(np.sum(d * d) + math.sqrt(d.size) * delta)


def compute_lambda_max(graph: FormationGraph) -> float:
    B = graph.incidence
    w, _ = jacobi_eigh(B.T @ B)
    return float(w[-1])


def rigidity_gram(graph: FormationGraph, target_positions) -> np.ndarray:
    R = rigidity_matrix(FormationState(target_positions, graph))
    return R @ R.T


def compute_lambda_min(graph: FormationGraph, target_positions) -> float:
    G = rigidity_gram(graph, target_positions)
    w, _ = jacobi_eigh(G)
    tol = G.shape[0] * np.finfo(float).eps * max(abs(w[-1]), 1.0) * 10
    if w[0] <= tol:
        raise NotRigid(f"rigidity Gram matrix is singular (lambda_min={w[0]:.3e})")
    return float(w[0])


def sector_eps(sigma: int) -> float:
    return 0.5 / 10 ** (sigma - 1)


def compute_k(sigma: int, lambda_min: float, lambda_max: float, c: float,
              sigma_z: int | None = None) -> float:
    ee = sector_eps(sigma)
    ez = ee if sigma_z is None else sector_eps(sigma_z)
    return lambda_min - lambda_max * c * (ee + ez * (1.0 + ee))


def choose_sigma(graph: FormationGraph, target_positions, delta: float, max_sigma: int = 30) -> int:
    """Smallest ``sigma`` (used for both signals) with ``k > 0``."""
    lmin = compute_lambda_min(graph, target_positions)
    lmax = compute_lambda_max(graph)
    c = compute_c(delta, graph.desired_distances)
    for sigma in range(1, max_sigma + 1):
        if compute_k(sigma, lmin, lmax, c) > 0:
            return sigma
    raise ValueError(f"no sigma <= {max_sigma} gives k > 0")


@dataclass(frozen=True)
class StabilityReport:
    lambda_min: float
    lambda_max: float
    c: float
    delta: float
    sigma_z: int
    sigma_e: int
    k: float
    sigma_required: int

    @property
    def stable(self) -> bool:
        return self.k > 0

    def to_text(self, prefix: str = "") -> str:
        lines = [f"{prefix}{key} = {_fmt(val)}" for key, val in asdict(self).items()]
        lines.append(f"{prefix}condition_satisfied = {'yes' if self.stable else 'no'}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def analyze(graph: FormationGraph, target_positions, delta: float,
            sigma_z: int = 4, sigma_e: int = 4) -> StabilityReport:
    lmin = compute_lambda_min(graph, target_positions)
    lmax = compute_lambda_max(graph)
    c = compute_c(delta, graph.desired_distances)
    return StabilityReport(
        lambda_min=lmin,
        lambda_max=lmax,
        c=c,
        delta=float(delta),
        sigma_z=sigma_z,
        sigma_e=sigma_e,
        k=compute_k(sigma_e, lmin, lmax, c, sigma_z=sigma_z),
        sigma_required=choose_sigma(graph, target_positions, delta),
    )
