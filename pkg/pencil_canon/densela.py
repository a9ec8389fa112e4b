"""
Small dense real linear-algebra kernels (n up to about 12).

Thin, tolerance-aware wrappers over numpy / scipy.linalg. Every kernel is pure.
"""
from __future__ import annotations
import math
import warnings

import numpy as np
from loguru import logger
from numpy.polynomial import polynomial as npoly
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve, qr, solve_sylvester

from pencil_canon.errors import (
    ComplexRootsError,
    DependentColumnsError,
    DimensionMismatchError,
    ResidualError,
    SingularMatrixError,
    SpectraOverlapError,
)
from pencil_canon.models import RealPoly
from pencil_canon.settings import Settings, get_settings


def default_rank_tol(n: int) -> float:
    return n * 2.0 ** -40


def _square(M, what: str) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatchError(f"{what} needs a square matrix, got shape {M.shape}")
    return M


def _lu(M: np.ndarray):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        warnings.simplefilter("ignore", RuntimeWarning)
        return lu_factor(M, check_finite=True)


def _pivots_underflow(lu: np.ndarray, scale: float, tol: float) -> bool:
    return bool(np.any(np.abs(np.diag(lu)) <= tol * scale))


def det(M, tol: float | None = None) -> float:
    """Determinant by partially pivoted LU; exactly 0 when a pivot falls under the rank tolerance"""
    M = _square(M, "det")
    n = M.shape[0]
    if n == 0:
        return 1.0
    scale = float(np.max(np.abs(M)))
    if scale == 0.0:
        return 0.0
    lu, piv = _lu(M)
    if _pivots_underflow(lu, scale, tol if tol is not None else default_rank_tol(n)):
        return 0.0
    swaps = int(np.count_nonzero(piv != np.arange(n)))
    return float((-1) ** swaps * np.prod(np.diag(lu)))


def inverse(M, tol: float | None = None) -> np.ndarray:
    M = _square(M, "inverse")
    n = M.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    scale = float(np.max(np.abs(M)))
    if scale == 0.0:
        raise SingularMatrixError("Zero matrix has no inverse")
    lu, piv = _lu(M)
    if _pivots_underflow(lu, scale, tol if tol is not None else default_rank_tol(n)):
        raise SingularMatrixError(f"Matrix of order {n} is singular to tolerance")
    return lu_solve((lu, piv), np.eye(n))


def rank(M, tol: float | None = None) -> int:
    """Column-pivoted QR rank: pivots larger than tol times the largest pivot"""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0
    tol = tol if tol is not None else default_rank_tol(max(M.shape))
    R, _ = qr(M, mode="r", pivoting=True)
    pivots = np.abs(np.diag(R))
    if pivots.size == 0 or pivots[0] == 0.0:
        return 0
    return int(np.count_nonzero(pivots > tol * pivots[0]))


def gram_schmidt(columns, tol: float = 1e-12) -> np.ndarray:
    """Orthonormalise columns in order (classical Gram-Schmidt with one reorthogonalisation pass)"""
    V = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    n, k = V.shape
    Q = np.zeros((n, k))
    for j in range(k):
        v = V[:, j].copy()
        norm0 = float(np.linalg.norm(v))
        for _ in range(2):
            v -= Q[:, :j] @ (Q[:, :j].T @ v)
        r = float(np.linalg.norm(v))
        if norm0 == 0.0 or r <= tol * norm0:
            raise DependentColumnsError(f"Column {j + 1} depends on the previous ones", column=j + 1)
        Q[:, j] = v / r
    return Q


def rank_normal_form(M, tol: float | None = None) -> tuple[np.ndarray, np.ndarray, int]:
    """P, Q, r with P @ M @ Q = diag(E_r, 0); the trailing columns of Q span ker M"""
    M = _square(M, "rank_normal_form")
    n = M.shape[0]
    U, s, Vt = np.linalg.svd(M)
    tol = tol if tol is not None else default_rank_tol(n)
    r = int(np.count_nonzero(s > tol * s[0])) if n and s[0] > 0 else 0
    scaling = np.ones(n)
    scaling[:r] = 1.0 / s[:r]
    return scaling[:, None] * U.T, Vt.T, r


def cond(M) -> float:
    M = _square(M, "cond")
    if M.shape[0] == 0:
        return 1.0
    return float(np.linalg.cond(M))


def nilpotency_index(M, tol: float = 1e-9) -> int | None:
    """Smallest k <= n with ||M^k|| <= tol * ||M||^k; the zero matrix has index 1, None if not nilpotent"""
    M = _square(M, "nilpotency_index")
    n = M.shape[0]
    norm = float(np.linalg.norm(M, 2)) if n else 0.0
    if norm == 0.0:
        return 1
    power = np.eye(n)
    for k in range(1, n + 1):
        power = power @ M
        if np.linalg.norm(power, 2) <= tol * norm ** k:
            return k
    return None


def sylvester_solve(F, G, C, gap_tol: float | None = None) -> np.ndarray:
    """X with F @ X - X @ G = C"""
    F = _square(F, "sylvester_solve")
    G = _square(G, "sylvester_solve")
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape != (F.shape[0], G.shape[0]):
        raise DimensionMismatchError(f"Right-hand side {C.shape} does not match {F.shape[0]}x{G.shape[0]}")
    if C.size == 0:
        return np.zeros(C.shape)
    gap_tol = gap_tol if gap_tol is not None else get_settings().spectral_gap_tol
    gap = float(np.min(np.abs(np.subtract.outer(np.linalg.eigvals(F), np.linalg.eigvals(G)))))
    if gap <= gap_tol:
        raise SpectraOverlapError(f"Spectra are {gap:.3e} apart (needs > {gap_tol:.1e})", gap=gap)
    X = solve_sylvester(F, -G, C)
    residual = float(np.linalg.norm(F @ X - X @ G - C))
    bound = 1e-9 * (np.linalg.norm(F) + np.linalg.norm(G)) * np.linalg.norm(X) + 1e-14 * np.linalg.norm(C)
    if residual > bound:
        raise ResidualError(f"Sylvester residual {residual:.3e} exceeds {bound:.3e}", residual=residual)
    return X


# --------------------------------------------------------------------------- #
# Polynomials                                                                 #
# --------------------------------------------------------------------------- #

def poly_eval(p: RealPoly, value):
    return npoly.polyval(value, p.coefficients)


def poly_from_roots(roots: list[tuple[float, int]], leading: float = 1.0) -> RealPoly:
    expanded = [r for r, k in roots for _ in range(k)]
    return RealPoly(leading * npoly.polyfromroots(expanded) if expanded else np.array([leading]))


def _certified_multiple(coeffs: np.ndarray, centre: complex, k: int, cluster_tol: float, floor: float) -> bool:
    """Derivatives 0..k-1 of p vanish at the centre up to their rounding scale"""
    magnitude = abs(centre)
    abs_coeffs = np.abs(coeffs)
    for j in range(k):
        value = abs(npoly.polyval(centre, npoly.polyder(coeffs, j) if j else coeffs))
        scale = npoly.polyval(magnitude, npoly.polyder(abs_coeffs, j) if j else abs_coeffs)
        if value > max(cluster_tol ** (k - j), floor) * scale:
            return False
    return True


def _polish(coeffs: np.ndarray, centre: complex, k: int, spread: float) -> complex:
    """Newton on p^(k-1), which has a simple root at a k-fold root of p"""
    target = npoly.polyder(coeffs, k - 1) if k > 1 else coeffs
    slope = npoly.polyder(target)
    x = centre
    for _ in range(8):
        d = npoly.polyval(x, slope)
        if d == 0:
            break
        step = npoly.polyval(x, target) / d
        x -= step
        if abs(step) <= 1e-16 * (1 + abs(x)):
            break
    if not np.isfinite(x) or abs(x - centre) > max(spread, 1e-12 * (1 + abs(centre))):
        return centre
    return x


def _merge_once(clusters: list[list[complex]], coeffs: np.ndarray, settings: Settings) -> bool:
    """Merge the closest admissible pair of clusters in place; False when none qualifies"""
    centres = [np.mean(c) for c in clusters]
    pairs = sorted(
        (abs(centres[i] - centres[j]), i, j)
        for i in range(len(clusters))
        for j in range(i + 1, len(clusters))
    )
    for dist, i, j in pairs:
        merged = clusters[i] + clusters[j]
        centre = np.mean(merged)
        scale = 1.0 + abs(centre)
        if dist < settings.cluster_tol * scale:
            admissible = True
        else:
            spread = max(abs(r - centre) for r in merged)
            if spread > settings.root_capture * scale:
                continue
            admissible = _certified_multiple(
                coeffs, centre, len(merged), settings.cluster_tol, settings.root_noise_floor
            )
        if admissible:
            clusters[i] = merged
            del clusters[j]
            return True
    return False


def poly_roots(p: RealPoly, settings: Settings | None = None) -> list[tuple[float, int]]:
    """Real roots with multiplicities, ascending; raises when a root cluster is not real"""
    settings = settings or get_settings()
    if p.is_zero:
        raise ValueError("The zero polynomial has no finite root set")
    coeffs = p.coefficients
    if p.degree == 0:
        return []
    zeros = p.lowest_degree
    reduced = coeffs[zeros:]
    raw = list(npoly.polyroots(reduced)) if len(reduced) > 1 else []
    raw = [complex(r) for r in raw] + [0j] * zeros

    clusters: list[list[complex]] = [[r] for r in raw]
    while len(clusters) > 1 and _merge_once(clusters, coeffs, settings):
        pass

    roots: list[tuple[float, int]] = []
    for cluster in clusters:
        k = len(cluster)
        centre = np.mean(cluster)
        spread = max(abs(r - centre) for r in cluster)
        if abs(centre.imag) > settings.imag_tol * (1.0 + abs(centre)):
            raise ComplexRootsError(
                f"Root {centre.real:.6g}{centre.imag:+.6g}i of multiplicity {k} is not real",
                root=(float(centre.real), float(centre.imag)),
            )
        if all(r == 0 for r in cluster):
            roots.append((0.0, k))
            continue
        polished = _polish(coeffs, complex(centre.real, 0.0), k, spread)
        roots.append((float(polished.real), k))
    roots.sort()
    logger.trace("poly_roots degree {} -> {}", p.degree, roots)
    return roots


def chebyshev_nodes(count: int, radius: float) -> np.ndarray:
    k = np.arange(count)
    return radius * np.cos((2 * k + 1) * math.pi / (2 * count))
