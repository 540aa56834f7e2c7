"""Matrix-free eigensolvers over a :class:`~filtercut.operators.CutOperator`.

Three operator modes are supported:

``normalized``
    ``N = D^-1/2 W D^-1/2``.  Eigenvalues ``mu`` of N map to cut eigenvalues
    ``lambda = 1 - mu`` and generalized eigenvectors ``y = D^-1/2 z``.
``association``
    ``W`` itself (average association cut), ``lambda = mu``.
``average_cut``
    ``c I - (D - W)`` with ``c = 2 max(d)``; the smallest eigenvalues of the
    Laplacian become the largest of the shifted operator, ``lambda = c - mu``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .operators import CutOperator, DegenerateGraphError

log = logging.getLogger(__name__)

MODES = ("normalized", "association", "average_cut")


@dataclass
class EigenResult:
    """Leading eigenpairs of a cut operator, ``mu`` in descending order.

    ``sym_vectors`` are the orthonormal eigenvectors of the symmetric form;
    ``vectors`` are the generalized eigenvectors ``y`` (columns).
    """

    mode: str
    mu: np.ndarray
    lam: np.ndarray
    sym_vectors: np.ndarray
    vectors: np.ndarray
    degree: np.ndarray | None = None
    iterations: int = 0
    filter_applications: int = 0
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    converged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    shift: float = 0.0

    @property
    def k(self) -> int:
        return int(self.mu.size)

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))


@dataclass(frozen=True)
class SolverConfig:
    k: int = 2
    tol: float = 1e-6
    max_iterations: int = 300
    seed: int = 0
    mode: str = "normalized"
    degree_floor: float = 1e-12

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


def _floored_degree(op: CutOperator, floor: float) -> np.ndarray:
    d = op.degree()
    if not np.all(np.isfinite(d)) or np.any(d < floor):
        raise DegenerateGraphError("operator has a nonpositive degree; the graph is degenerate")
    return d


def average_cut_shift(d: np.ndarray) -> float:
    return 2.0 * float(np.max(d))


def symmetric_apply(op: CutOperator, mode: str, z, degree_floor: float = 1e-12) -> np.ndarray:
    """Apply the symmetric operator of ``mode`` to ``z`` (vector or column block)."""
    z = np.asarray(z, dtype=np.float64)
    if mode == "association":
        return op.apply_w(z)
    d = _floored_degree(op, degree_floor)
    if z.ndim == 2:
        d = d[:, None]
    if mode == "normalized":
        s = 1.0 / np.sqrt(d)
        return s * op.apply_w(s * z)
    if mode == "average_cut":
        c = average_cut_shift(d)
        return c * z - (d * z - op.apply_w(z))
    raise ValueError(f"unknown mode {mode!r}")


def _start_vector(n: int, seed: int, basis: np.ndarray | None, attempts: int = 5) -> np.ndarray:
    for attempt in range(attempts):
        rng = np.random.default_rng(seed + attempt)
        b = rng.uniform(-1.0, 1.0, n)
        scale = np.linalg.norm(b)
        if basis is not None and basis.shape[1]:
            b = _orthogonalize(b, basis)
        norm = np.linalg.norm(b)
        if norm > 1e-10 * scale:
            return b / norm
    raise DegenerateGraphError("random start vector was annihilated by deflation")


def _orthogonalize(w: np.ndarray, basis: np.ndarray) -> np.ndarray:
    # classical Gram-Schmidt, applied twice
    for _ in range(2):
        w = w - basis @ (basis.T @ w)
    return w


def _lambda_from_mu(mode: str, mu: np.ndarray, shift: float) -> np.ndarray:
    if mode == "normalized":
        return 1.0 - mu
    if mode == "average_cut":
        return shift - mu
    return mu.copy()


def _back_transform(op: CutOperator, mode: str, z: np.ndarray, floor: float) -> np.ndarray:
    if mode != "normalized":
        return z.copy()
    d = _floored_degree(op, floor)
    return z / np.sqrt(d)[:, None]


def _canonical_sign(z: np.ndarray) -> np.ndarray:
    z = z.copy()
    for j in range(z.shape[1]):
        if z[np.argmax(np.abs(z[:, j])), j] < 0:
            z[:, j] = -z[:, j]
    return z


def power_iterate(op: CutOperator, mode: str, deflate=None, cfg: SolverConfig | None = None):
    """Dominant eigenpair of the symmetric operator on the complement of ``deflate``.

    Returns ``(mu, z, iterations)``; hitting ``max_iterations`` is logged,
    not raised.
    """
    cfg = cfg or SolverConfig(mode=mode)
    basis = None if deflate is None else np.asarray(deflate, dtype=np.float64).reshape(op.n, -1)
    z = _start_vector(op.n, cfg.seed, basis)
    mu = 0.0
    for it in range(1, cfg.max_iterations + 1):
        az = symmetric_apply(op, mode, z, cfg.degree_floor)
        if basis is not None:
            az = _orthogonalize(az, basis)
        mu = float(z @ az)
        if np.linalg.norm(az - mu * z) <= cfg.tol * max(abs(mu), 1.0):
            return mu, z, it
        norm = np.linalg.norm(az)
        if norm == 0.0:
            return 0.0, z, it
        z = az / norm
    log.warning("power iteration stopped at max_iterations=%d without converging", cfg.max_iterations)
    return mu, z, cfg.max_iterations


def lanczos(op: CutOperator, cfg: SolverConfig, deflate=None) -> EigenResult:
    """Largest ``cfg.k`` eigenpairs by Lanczos with full reorthogonalization.

    The Krylov basis grows until the ``k`` leading Ritz pairs meet the
    residual tolerance (checked once at least ``max(2k+10, 30)`` steps have
    run) or ``max_iterations`` steps are spent.  On breakdown (``beta`` below
    1e-12) the recurrence restarts from a fresh random vector orthogonal to
    everything found so far.
    """
    n = op.n
    basis = None if deflate is None else np.asarray(deflate, dtype=np.float64).reshape(n, -1)
    p = 0 if basis is None else basis.shape[1]
    dim = n - p
    k = cfg.k
    if k > dim or (k >= n):
        raise ValueError(f"k={k} is too large for an operator of dimension {n} with {p} deflated vectors")
    apps_before = op.applications
    d = None if cfg.mode == "association" else _floored_degree(op, cfg.degree_floor)
    shift = average_cut_shift(d) if cfg.mode == "average_cut" else 0.0

    m_min = min(dim, max(2 * k + 10, 30))
    max_steps = min(dim, max(cfg.max_iterations, m_min))
    V = np.zeros((n, max_steps))
    alphas = np.zeros(max_steps)
    betas = np.zeros(max_steps)
    v = _start_vector(n, cfg.seed, basis)
    restarts = 0
    steps = 0
    while steps < max_steps:
        V[:, steps] = v
        w = symmetric_apply(op, cfg.mode, v, cfg.degree_floor)
        alpha = float(v @ w)
        alphas[steps] = alpha
        w = w - alpha * v
        if steps > 0:
            w = w - betas[steps - 1] * V[:, steps - 1]
        if basis is not None:
            w = _orthogonalize(w, basis)
        w = _orthogonalize(w, V[:, : steps + 1])
        beta = float(np.linalg.norm(w))
        steps += 1

        if steps >= m_min or steps == max_steps:
            T = np.diag(alphas[:steps]) + np.diag(betas[: steps - 1], 1) + np.diag(betas[: steps - 1], -1)
            theta, s = np.linalg.eigh(T)
            top = np.argsort(theta)[::-1][: min(k, steps)]
            est = np.abs(beta * s[-1, top])
            if steps >= k and np.all(est <= cfg.tol * np.maximum(np.abs(theta[top]), 1.0)):
                break
        if steps == max_steps:
            break
        if beta < 1e-12:
            full = V[:, :steps] if basis is None else np.hstack([basis, V[:, :steps]])
            restarts += 1
            v = _start_vector(n, cfg.seed + 7919 * restarts, full)
            betas[steps - 1] = 0.0
        else:
            betas[steps - 1] = beta
            v = w / beta

    T = np.diag(alphas[:steps]) + np.diag(betas[: steps - 1], 1) + np.diag(betas[: steps - 1], -1)
    theta, s = np.linalg.eigh(T)
    top = np.argsort(theta)[::-1][:k]
    mu = theta[top]
    z = _canonical_sign(V[:, :steps] @ s[:, top])
    # ||N z - mu z|| = |beta_m * s_mj| for the Lanczos relation N V = V T + beta v e_m^T
    residuals = np.abs(beta * s[-1, top])
    converged = residuals <= cfg.tol * np.maximum(np.abs(mu), 1.0)
    if not converged.all():
        log.warning("lanczos: %d of %d pairs unconverged after %d steps", int((~converged).sum()), k, steps)
    return EigenResult(
        mode=cfg.mode,
        mu=mu,
        lam=_lambda_from_mu(cfg.mode, mu, shift),
        sym_vectors=z,
        vectors=_back_transform(op, cfg.mode, z, cfg.degree_floor),
        degree=d,
        iterations=steps,
        filter_applications=op.applications - apps_before,
        residuals=residuals,
        converged=converged,
        shift=shift,
    )


def ncut_eigs(op: CutOperator, cfg: SolverConfig, check_constraint: bool = True) -> EigenResult:
    """Trivial pair plus the next ``cfg.k`` normalized-cut eigenpairs.

    The top eigenvector of N is known in closed form (``d^1/2``), so it is
    deflated explicitly and only the nontrivial pairs are computed by
    Lanczos.  Column 0 of the result is the trivial pair.
    """
    if cfg.mode != "normalized":
        raise ValueError("ncut_eigs requires mode='normalized'")
    apps_before = op.applications
    d = _floored_degree(op, cfg.degree_floor)
    q = np.sqrt(d)
    q = q / np.linalg.norm(q)
    nq = symmetric_apply(op, "normalized", q, cfg.degree_floor)
    mu1 = float(q @ nq)
    resid1 = float(np.linalg.norm(nq - mu1 * q))
    rest = lanczos(op, cfg, deflate=q)
    z = np.column_stack([q, rest.sym_vectors])
    y = _back_transform(op, "normalized", z, cfg.degree_floor)
    if check_constraint:
        # y_j^T D 1 = 0 for every nontrivial pair
        rel = np.abs(y[:, 1:].T @ d) / (np.linalg.norm(y[:, 1:], axis=0) * np.linalg.norm(d))
        if np.any(rel > 1e-8):
            raise AssertionError(f"returned eigenvectors violate y^T D 1 = 0 (max {rel.max():.3g})")
    mu = np.concatenate([[mu1], rest.mu])
    return EigenResult(
        mode="normalized",
        mu=mu,
        lam=1.0 - mu,
        sym_vectors=z,
        vectors=y,
        degree=d,
        iterations=rest.iterations,
        filter_applications=op.applications - apps_before,
        residuals=np.concatenate([[resid1], rest.residuals]),
        converged=np.concatenate([[resid1 <= cfg.tol], rest.converged]),
    )
