"""
Pointwise construction of the canonical form

    P(x) (A(x) + lambda*B(x)) Q(x) = diag{E_d, M(x), E_lhat} + lambda*diag{J(x), E_l, N(x)}

Every stage runs over the whole grid in lexicographic order. Bases and
unitary factors are aligned with the previously processed neighbour, so the
sampled transforms vary continuously wherever the data allows it.
"""
from __future__ import annotations
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from loguru import logger
from scipy.linalg import block_diag, orthogonal_procrustes
from scipy.optimize import linear_sum_assignment

from pencil_canon import densela
from pencil_canon.enums import PipelineStage
from pencil_canon.errors import (
    ClusterMismatchError,
    ConditioningBlowupError,
    GapTooSmallError,
    NonzeroEigenvalueError,
    PencilError,
    RankChangeError,
    ResidualError,
)
from pencil_canon.models import CanonicalForm, EquivalencePair, Grid, RankDegreeClass, ShiftFunction, SpectrumProfile
from pencil_canon.pencilcore import Pencil
from pencil_canon.settings import Settings, get_settings

# Jumps of a unit column above this between neighbours are reported as lost continuity
_CONTINUITY_JUMP = 0.5
_DECOUPLE_SWEEPS = 6


def _parents(grid: Grid | None, count: int) -> np.ndarray:
    if grid is None:
        return np.arange(count) - 1
    return grid.parents


def _where(grid: Grid | None, flat: int):
    return grid.point(flat) if grid is not None else flat


def _map(fn, count: int, workers: int) -> list:
    if workers <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(count)))


def _orient(V: np.ndarray) -> np.ndarray:
    """Deterministic column signs: the largest entry of every column is positive"""
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def _align_columns(V: np.ndarray, reference: np.ndarray) -> np.ndarray:
    signs = np.sign(np.sum(V * reference, axis=0))
    signs[signs == 0] = 1.0
    return V * signs


# --------------------------------------------------------------------------- #
# Spectral splitting                                                          #
# --------------------------------------------------------------------------- #

@dataclass
class Cluster:
    """Predicted eigenvalue group of A1^-1 B: sampled value and multiplicity"""
    values: np.ndarray  # (points,)
    multiplicity: int
    label: str


@dataclass
class SpectralSplit:
    T: np.ndarray  # (points, n, n)
    blocks: list[np.ndarray]  # per cluster, (points, p, p)
    centres: np.ndarray  # (points, clusters) refined from the computed spectrum


def _predicted_gap(values: list[float]) -> float:
    if len(values) < 2:
        return np.inf
    v = np.asarray(values)
    diff = np.abs(v[:, None] - v[None, :])
    return float(np.min(diff[np.triu_indices(len(v), 1)]))


def _cluster_basis(G: np.ndarray, centre: float, p: int) -> np.ndarray:
    """Orthonormal basis of the generalized eigenspace of G belonging to `centre`"""
    n = G.shape[0]
    K = np.linalg.matrix_power(G - centre * np.eye(n), p)
    _, _, Vt = np.linalg.svd(K)
    return Vt[n - p:].T


def _raw_split(G: np.ndarray, predicted: list[float], mults: list[int], gap_tol: float, where) -> tuple:
    gap = _predicted_gap(predicted)
    if gap <= gap_tol:
        raise GapTooSmallError(
            f"Predicted eigenvalue clusters {np.round(predicted, 8).tolist()} are only {gap:.3e} apart at {where}",
            point=where, gap=gap,
        )
    eigs = np.linalg.eigvals(G)
    slots = np.repeat(np.arange(len(predicted)), mults)
    slot_values = np.asarray(predicted)[slots]
    cost = np.abs(eigs[:, None] - slot_values[None, :])
    rows, cols = linear_sum_assignment(cost)
    assigned = cost[rows, cols]
    limit = 0.5 * gap if np.isfinite(gap) else np.inf
    if np.any(assigned >= limit):
        worst = int(np.argmax(assigned))
        raise ClusterMismatchError(
            f"Eigenvalue {eigs[rows[worst]]:.6g} of A1^-1 B is {assigned[worst]:.3e} away from its predicted "
            f"cluster {slot_values[cols[worst]]:.6g} at {where}",
            point=where,
        )
    centres = np.array([
        float(np.mean(eigs[rows[slots[cols] == j]]).real) for j in range(len(predicted))
    ])
    bases = [_cluster_basis(G, centres[j], mults[j]) for j in range(len(predicted))]
    return centres, bases


def _offblock(H: np.ndarray, bounds: list[tuple[int, int]]) -> float:
    mask = np.ones(H.shape, dtype=bool)
    for lo, hi in bounds:
        mask[lo:hi, lo:hi] = False
    return float(np.max(np.abs(H[mask]))) if mask.any() else 0.0


def _decouple(G: np.ndarray, T: np.ndarray, bounds: list[tuple[int, int]], settings: Settings, where) -> tuple:
    """Sylvester sweeps T <- T(E + Y) until T^-1 G T is block diagonal"""
    n = G.shape[0]
    norm_g = max(float(np.linalg.norm(G, 2)), np.finfo(float).tiny)
    basis_cond = densela.cond(T)
    if not np.isfinite(basis_cond) or basis_cond > settings.cond_limit:
        raise ConditioningBlowupError(
            f"Spectral subspaces are nearly dependent (cond {basis_cond:.3e}) at {where}", point=where
        )
    H = np.linalg.solve(T, G @ T)
    for _ in range(_DECOUPLE_SWEEPS):
        if _offblock(H, bounds) <= 1e-13 * norm_g:
            break
        Y = np.zeros((n, n))
        for i, (ilo, ihi) in enumerate(bounds):
            for j, (jlo, jhi) in enumerate(bounds):
                if i != j:
                    Y[ilo:ihi, jlo:jhi] = densela.sylvester_solve(
                        H[ilo:ihi, ilo:ihi], H[jlo:jhi, jlo:jhi], -H[ilo:ihi, jlo:jhi], settings.spectral_gap_tol
                    )
        T = T @ (np.eye(n) + Y)
        H = np.linalg.solve(T, G @ T)
    residual = _offblock(H, bounds)
    if residual > 1e-9 * norm_g:
        raise ResidualError(f"Block decoupling left off-block residual {residual:.3e} at {where}", point=where)
    return T, H


def spectral_split(
    G: np.ndarray,
    clusters: list[Cluster],
    grid: Grid | None = None,
    settings: Settings | None = None,
) -> SpectralSplit:
    """T(x) with T^-1 G T = diag of one block per predicted cluster, in cluster order"""
    settings = settings or get_settings()
    G = np.asarray(G, dtype=float)
    count, n = G.shape[0], G.shape[1]
    clusters = [c for c in clusters if c.multiplicity > 0]
    mults = [c.multiplicity for c in clusters]
    if sum(mults) != n:
        raise ClusterMismatchError(f"Cluster multiplicities {mults} do not add up to n={n}")
    bounds, offset = [], 0
    for p in mults:
        bounds.append((offset, offset + p))
        offset += p

    raw = _map(
        lambda i: _raw_split(G[i], [float(c.values[i]) for c in clusters], mults,
                             settings.spectral_gap_tol, _where(grid, i)),
        count, settings.workers,
    )

    parents = _parents(grid, count)
    aligned: list[list[np.ndarray]] = []
    for i in range(count):
        _, bases = raw[i]
        parent = int(parents[i])
        out = []
        for j, V in enumerate(bases):
            if parent < 0:
                V = _orient(V)
            elif V.shape[1] == 1:
                V = _align_columns(V, aligned[parent][j])
            else:
                R, _ = orthogonal_procrustes(V, aligned[parent][j])
                V = V @ R
            out.append(V)
        aligned.append(out)

    def decouple(i: int):
        return _decouple(G[i], np.hstack(aligned[i]), bounds, settings, _where(grid, i))

    decoupled = _map(decouple, count, settings.workers)
    T = np.stack([t for t, _ in decoupled])
    blocks = [np.stack([h[lo:hi, lo:hi] for _, h in decoupled]) for lo, hi in bounds]
    centres = np.stack([c for c, _ in raw])
    return SpectralSplit(T, blocks, centres)


# --------------------------------------------------------------------------- #
# Nilpotent reduction                                                         #
# --------------------------------------------------------------------------- #

@dataclass
class NilpotentReduction:
    U: np.ndarray  # (points, q, q) orthogonal
    N: np.ndarray  # (points, q, q) strictly upper triangular
    rank: int
    warnings: list[str]


def _block_rank(K: np.ndarray, rtol: float, scale: float) -> int:
    if np.linalg.norm(K, 2) <= rtol * scale:
        return 0
    return densela.rank(K, rtol)


def _kernel_frame(K: np.ndarray, rtol: float, scale: float, preferred: np.ndarray | None) -> np.ndarray:
    """Orthonormal frame Q' whose last column spans a kernel vector of K (closest to `preferred`)"""
    q = K.shape[0]
    if np.linalg.norm(K, 2) <= rtol * scale:
        _, Q, r = np.eye(q), np.eye(q), 0
    else:
        _, Q, r = densela.rank_normal_form(K, rtol)
    if r >= q:
        raise NonzeroEigenvalueError("Block has trivial kernel, so it is not nilpotent")
    W = Q[:, r:]
    if preferred is not None and W.shape[1] > 1:
        coords = W.T @ preferred
        if np.linalg.norm(coords) > 1e-8:
            full, _ = np.linalg.qr(np.column_stack([coords, np.eye(len(coords))]))
            if full[:, 0] @ coords < 0:
                full = -full
            W = W @ full
            W = np.column_stack([W[:, 1:], W[:, 0]])
    return np.column_stack([Q[:, :r], W])


def _reduce_point(K: np.ndarray, rtol: float, scale: float, preferred: np.ndarray | None) -> np.ndarray:
    """Orthogonal U with U^T K U strictly upper triangular (Schur step by deflating one kernel vector)"""
    q = K.shape[0]
    if q == 1:
        return np.eye(1)
    frame = _kernel_frame(K, rtol, scale, None if preferred is None else preferred[:, 0])
    # Z_1 is the kernel vector, Z_i the remaining frame columns in reverse order
    Z = [frame[:, q - 1 - i] for i in range(q)]
    U1 = densela.gram_schmidt(Z)
    K1 = U1.T @ K @ U1
    sub_pref = None if preferred is None else U1[:, 1:].T @ preferred[:, 1:]
    U_sub = _reduce_point(K1[1:, 1:], rtol, scale, sub_pref)
    return U1 @ block_diag(np.eye(1), U_sub)


def nilpotent_reduce(
    K: np.ndarray,
    grid: Grid | None = None,
    settings: Settings | None = None,
    scale: float | None = None,
) -> NilpotentReduction:
    """Orthogonal U(x) and strictly upper N(x) with U^T K U = N at every sample"""
    settings = settings or get_settings()
    K = np.asarray(K, dtype=float)
    count, q = K.shape[0], K.shape[1]
    if q == 0:
        return NilpotentReduction(np.zeros((count, 0, 0)), np.zeros((count, 0, 0)), 0, [])
    rtol = settings.eig_tol
    scale = scale if scale is not None else max(1.0, float(np.max(np.linalg.norm(K, 2, axis=(1, 2)))))
    parents = _parents(grid, count)

    ranks = []
    for i in range(count):
        if np.linalg.norm(K[i], 2) > rtol * scale and densela.nilpotency_index(K[i], settings.eig_tol) is None:
            raise NonzeroEigenvalueError(f"Block is not nilpotent at {_where(grid, i)}", point=_where(grid, i))
        ranks.append(_block_rank(K[i], rtol, scale))
    changed = [i for i in range(count) if ranks[i] != ranks[0]]
    if changed:
        i = changed[0]
        raise RankChangeError(
            f"Nilpotent block rank is {ranks[0]} at {_where(grid, 0)} but {ranks[i]} at {_where(grid, i)}",
            points=[_where(grid, 0), _where(grid, i)],
        )

    U = np.empty((count, q, q))
    N = np.empty((count, q, q))
    warnings: list[str] = []
    for i in range(count):
        parent = int(parents[i])
        preferred = U[parent] if parent >= 0 else None
        Ui = _reduce_point(K[i], rtol, scale, preferred)
        Ui = _orient(Ui) if preferred is None else _align_columns(Ui, preferred)
        S = Ui.T @ K[i] @ Ui
        Ni = np.triu(S, 1)
        residual = float(np.max(np.abs(S - Ni)))
        if residual > settings.similarity_tol * scale:
            raise ResidualError(
                f"Nilpotent reduction residual {residual:.3e} at {_where(grid, i)}", point=_where(grid, i)
            )
        if preferred is not None:
            jump = float(np.max(np.abs(Ui - preferred)))
            if jump > _CONTINUITY_JUMP:
                message = (
                    f"LostContinuity: unitary factor jumps by {jump:.3f} between {_where(grid, parent)} and "
                    f"{_where(grid, i)}; refine the grid"
                )
                logger.warning(message)
                warnings.append(message)
        U[i], N[i] = Ui, Ni
    return NilpotentReduction(U, N, int(ranks[0]), warnings)


# --------------------------------------------------------------------------- #
# Canonization                                                                #
# --------------------------------------------------------------------------- #

def _stage(stage: PipelineStage, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PencilError as e:
        raise e.tagged(stage)


def _predicted_clusters(sp: SpectrumProfile, shift: ShiftFunction) -> list[Cluster]:
    c = shift.values
    clusters = [
        Cluster(1.0 / (c - sp.branches[:, i]), p, f"lambda_{i + 1}") for i, p in enumerate(sp.multiplicities)
    ]
    clusters.append(Cluster(1.0 / c, sp.l, "zero_root"))
    clusters.append(Cluster(np.zeros_like(c), sp.l_hat, "infinite"))
    return clusters


def _eps_check(G: np.ndarray, clusters: list[Cluster]) -> np.ndarray:
    """Coefficient deviation between the monic char poly of G and the predicted factorisation"""
    out = np.empty(G.shape[0])
    for i in range(G.shape[0]):
        predicted = np.concatenate([np.full(c.multiplicity, c.values[i]) for c in clusters])
        actual = np.poly(G[i]).real
        expected = np.poly(predicted)
        out[i] = float(np.max(np.abs(actual - expected)) / (1.0 + np.max(np.abs(expected))))
    return out


def _inverse_all(blocks: np.ndarray) -> np.ndarray:
    return np.stack([densela.inverse(b) for b in blocks]) if blocks.shape[1] else blocks.copy()


def canonize(
    p: Pencil,
    sp: SpectrumProfile,
    shift: ShiftFunction,
    settings: Settings | None = None,
    classification: RankDegreeClass | None = None,
) -> tuple[CanonicalForm, EquivalencePair]:
    settings = settings or get_settings()
    A, B = p.samples
    count, n = A.shape[0], p.n
    d, l, l_hat = sp.d, sp.l, sp.l_hat
    grid = p.grid
    c = shift.values
    E = np.eye(n)
    logger.info("Canonizing {} ({} points, d={}, l={}, l_hat={})", p.name, count, d, l, l_hat)

    # (1) A1 = A + cB, G = A1^-1 B
    A1 = A + c[:, None, None] * B
    A1_inv = _stage(PipelineStage.SHIFT, lambda: np.stack([densela.inverse(a) for a in A1]))
    G = A1_inv @ B

    # (2) block diagonalisation of G by predicted clusters
    clusters = _predicted_clusters(sp, shift)
    split = _stage(PipelineStage.SPLIT, spectral_split, G, clusters, grid, settings)
    used = [cl for cl in clusters if cl.multiplicity > 0]
    blocks = dict(zip([cl.label for cl in used], split.blocks))
    J = [blocks[f"lambda_{i + 1}"] for i in range(sp.k)]
    M = blocks["zero_root"]
    N = blocks["infinite"]
    eps_deviation = _eps_check(G, used)
    logger.debug("Spectral split done, max eps deviation {:.3e}", float(eps_deviation.max()))

    # (3) unitary reduction of N
    scale_g = max(1.0, float(np.max(np.linalg.norm(G, 2, axis=(1, 2)))))
    reduced_n = _stage(PipelineStage.REDUCE_N, nilpotent_reduce, N, grid, settings, scale_g)
    U_tilde = np.stack([block_diag(np.eye(d + l), u) for u in reduced_n.U])

    # (4) invert E - cJ_i and E - cN_hat
    def invert_blocks():
        inv_j = [_inverse_all(np.eye(j.shape[1]) - c[:, None, None] * j) for j in J]
        inv_n = _inverse_all(np.eye(l_hat) - c[:, None, None] * reduced_n.N)
        return inv_j, inv_n

    inv_j, inv_n = _stage(PipelineStage.INVERT, invert_blocks)
    calJ = [inv @ j for inv, j in zip(inv_j, J)]
    calN = np.triu(inv_n @ reduced_n.N, 1)
    J_bar = np.stack([block_diag(*[b[i] for b in inv_j], np.eye(l), inv_n[i]) for i in range(count)])

    # (5) M_hat = M^-1 - cE
    M_inv = _stage(PipelineStage.INVERT, _inverse_all, M)
    M_hat = M_inv - c[:, None, None] * np.eye(l)
    M_bar = np.stack([block_diag(np.eye(d), M_inv[i], np.eye(l_hat)) for i in range(count)])

    # (6) unitary reduction of M_hat
    scale_m = max(1.0, float(np.max(np.linalg.norm(M_hat, 2, axis=(1, 2)))))
    reduced_m = _stage(PipelineStage.REDUCE_M, nilpotent_reduce, M_hat, grid, settings, scale_m)
    U_hat = np.stack([block_diag(np.eye(d), u, np.eye(l_hat)) for u in reduced_m.U])

    # (7) P = U_hat^-1 M_bar J_bar U_tilde^-1 T^-1 A1^-1,  Q = T U_tilde U_hat
    def assemble():
        T_inv = np.stack([densela.inverse(t) for t in split.T])
        P = np.transpose(U_hat, (0, 2, 1)) @ M_bar @ J_bar @ np.transpose(U_tilde, (0, 2, 1)) @ T_inv @ A1_inv
        Q = split.T @ U_tilde @ U_hat
        return P, Q

    P, Q = _stage(PipelineStage.ASSEMBLE, assemble)
    form = CanonicalForm(
        d=d, l=l, l_hat=l_hat, multiplicities=sp.multiplicities,
        j_blocks=calJ, m_block=reduced_m.N, n_block=calN, grid=grid,
    )
    residual_a = np.max(np.abs(P @ A @ Q - form.left()), axis=(1, 2))
    residual_b = np.max(np.abs(P @ B @ Q - form.right()), axis=(1, 2))
    cond_p = np.array([densela.cond(m) for m in P])
    cond_q = np.array([densela.cond(m) for m in Q])
    pair = EquivalencePair(P, Q, cond_p, cond_q, residual_a, residual_b)

    worst_cond = max(float(cond_p.max()), float(cond_q.max()))
    if worst_cond > settings.cond_limit:
        i = int(np.argmax(np.maximum(cond_p, cond_q)))
        raise ConditioningBlowupError(
            f"cond(P), cond(Q) reach {worst_cond:.3e} > {settings.cond_limit:.1e} at x={grid.point(i)}",
            stage=PipelineStage.ASSEMBLE, point=grid.point(i), cond=worst_cond,
        )
    canon_tol = settings.canon_tol(p.norm_a, p.norm_b)
    worst = float(max(residual_a.max(), residual_b.max()))
    if worst > canon_tol:
        i = int(np.argmax(np.maximum(residual_a, residual_b)))
        raise ResidualError(
            f"Canonical residual {worst:.3e} exceeds {canon_tol:.3e} at x={grid.point(i)}",
            stage=PipelineStage.ASSEMBLE, point=grid.point(i), residual=worst,
        )

    form.diagnostics = _diagnostics(sp, shift, split, calJ, form, eps_deviation, classification, settings)
    form.diagnostics["warnings"] = reduced_n.warnings + reduced_m.warnings
    form.diagnostics["canon_tol"] = canon_tol
    logger.info("Canonical form reached, max residual {:.3e} (tol {:.3e}), max cond {:.3e}",
                worst, canon_tol, worst_cond)
    return form, pair


def _diagnostics(
    sp: SpectrumProfile,
    shift: ShiftFunction,
    split: SpectralSplit,
    calJ: list[np.ndarray],
    form: CanonicalForm,
    eps_deviation: np.ndarray,
    classification: RankDegreeClass | None,
    settings: Settings,
) -> dict:
    c = shift.values
    refined = np.stack([c - 1.0 / split.centres[:, i] for i in range(sp.k)], axis=1) if sp.k else sp.branches
    eig_error = np.zeros(c.shape)
    j_nilpotent = True
    for i, block in enumerate(calJ):
        trace_mean = np.trace(block, axis1=1, axis2=2) / block.shape[1]
        eig_error = np.maximum(eig_error, np.abs(trace_mean + 1.0 / refined[:, i]))
        j_nilpotent = j_nilpotent and all(
            _single_eigenvalue(b, -1.0 / r, settings.eig_tol) for b, r in zip(block, refined[:, i])
        )
    nil_m = [densela.nilpotency_index(m) for m in form.m_block]
    nil_n = [densela.nilpotency_index(m) for m in form.n_block]
    out = {
        "refined_branches": refined,
        "eps_deviation": eps_deviation,
        "eps_identity_holds": bool(np.all(eps_deviation <= 1e-6)),
        "j_eigen_error": eig_error,
        "j_eigen_ok": bool(np.all(eig_error <= settings.eig_tol)) and j_nilpotent,
        "nilpotency_m": nil_m,
        "nilpotency_n": nil_n,
        "nilpotency_ok": all(k is not None and k <= max(form.l, 1) for k in nil_m)
        and all(k is not None and k <= max(form.l_hat, 1) for k in nil_n),
    }
    if classification is not None:
        norm_m = float(np.max(np.abs(form.m_block))) if form.l else 0.0
        norm_n = float(np.max(np.abs(form.n_block))) if form.l_hat else 0.0
        out["rank_degree"] = classification.satisfied
        out["zero_blocks_expected"] = classification.satisfied
        out["max_abs_m"] = norm_m
        out["max_abs_n"] = norm_n
        if classification.satisfied and max(norm_m, norm_n) > 1e-6:
            logger.warning("Rank-degree criterion holds but M, N are not zero (max {:.3e})", max(norm_m, norm_n))
    return out


def _single_eigenvalue(block: np.ndarray, value: float, tol: float) -> bool:
    """True when `block` minus `value` E is nilpotent, i.e. `value` is its only eigenvalue"""
    shifted = block - value * np.eye(block.shape[0])
    if np.linalg.norm(shifted, 2) <= tol * max(1.0, abs(value)):
        return True
    return densela.nilpotency_index(shifted, tol=tol) is not None
