"""
Numerical certification of equivalences P (A + lambda*B) Q = A~ + lambda*B~ and of
unitary similarities U^-1 A U = N.

Residuals and determinant margins decide pass/fail. Continuity diagnostics
compare adjacent-point jumps with the neighbouring steps; they are reported
as diagnostics and never as a proof of smoothness.
"""
from __future__ import annotations
from dataclasses import dataclass

import numpy as np
from loguru import logger

from pencil_canon import densela
from pencil_canon.enums import PipelineStage, ReportKind
from pencil_canon.errors import DimensionMismatchError, PencilError
from pencil_canon.models import (
    CanonicalForm,
    ContinuityDiagnostic,
    EquivalencePair,
    Grid,
    VerificationReport,
)
from pencil_canon.pencilcore import MatrixFunction, Pencil
from pencil_canon.settings import Settings, get_settings


@dataclass
class ClosedFormTransforms:
    """P(x), Q(x) given as expression matrices"""
    P: MatrixFunction
    Q: MatrixFunction


@dataclass
class ClosedFormTarget:
    """Target pencil A~(x) + lambda*B~(x) given as expression matrices"""
    A: MatrixFunction
    B: MatrixFunction


Sampled = tuple[np.ndarray, np.ndarray]


def _sample(obj, points: np.ndarray) -> np.ndarray:
    if isinstance(obj, MatrixFunction):
        return obj.sample(points)
    return np.asarray(obj, dtype=float)


def _transforms(pair, points: np.ndarray) -> Sampled:
    match pair:
        case EquivalencePair(P=P, Q=Q):
            return P, Q
        case ClosedFormTransforms(P=P, Q=Q):
            return P.sample(points), Q.sample(points)
        case (P, Q):
            return _sample(P, points), _sample(Q, points)
    raise TypeError(f"Unsupported transforms {type(pair).__name__}")


def _target(target, p: Pencil, points: np.ndarray) -> Sampled:
    match target:
        case None:
            return p.samples
        case CanonicalForm():
            return target.left(), target.right()
        case ClosedFormTarget(A=A, B=B):
            return A.sample(points), B.sample(points)
        case (A, B):
            return _sample(A, points), _sample(B, points)
    raise TypeError(f"Unsupported target {type(target).__name__}")


def _check_shape(name: str, samples: np.ndarray, count: int, n: int) -> None:
    if samples.shape != (count, n, n):
        raise DimensionMismatchError(
            f"{name} has shape {samples.shape[1:]} on {samples.shape[0]} points, expected {n}x{n} on {count}",
            stage=PipelineStage.VERIFY,
        )


def continuity_diagnostics(name: str, samples: np.ndarray, grid: Grid, settings: Settings) -> list[ContinuityDiagnostic]:
    """Per axis: the largest adjacent jump and whether it dwarfs the neighbouring steps"""
    out: list[ContinuityDiagnostic] = []
    if samples.size == 0:
        return out
    values = samples.reshape(grid.shape + samples.shape[1:])
    floor = 1e-12 * (1.0 + float(np.max(np.abs(samples))))
    entry_axes = tuple(range(grid.m, values.ndim))
    for axis in range(grid.m):
        steps = np.max(np.abs(np.diff(values, axis=axis)), axis=entry_axes)
        steps = np.moveaxis(steps, axis, -1)
        zero = np.zeros_like(steps[..., :1])
        before = np.concatenate([zero, steps[..., :-1]], axis=-1)
        after = np.concatenate([steps[..., 1:], zero], axis=-1)
        local = np.maximum(np.maximum(before, after), floor)
        worst = np.unravel_index(int(np.argmax(steps)), steps.shape)
        suspicious = bool(np.any(steps > settings.continuity_factor * local))
        diagnostic = ContinuityDiagnostic(
            name=name,
            axis=axis + 1,
            max_jump=float(steps[worst]),
            fd_scale=float(local[worst]),
            suspicious=suspicious,
        )
        if suspicious:
            logger.warning("Continuity diagnostic: {} jumps by {:.3e} along x{} (neighbouring steps {:.3e})",
                           name, diagnostic.max_jump, axis + 1, diagnostic.fd_scale)
        out.append(diagnostic)
    return out


def verify_equivalence(
    p: Pencil,
    pair: EquivalencePair | ClosedFormTransforms | Sampled,
    target: CanonicalForm | ClosedFormTarget | Sampled | None = None,
    settings: Settings | None = None,
) -> VerificationReport:
    """Check P A Q = A~ and P B Q = B~ at every grid point, plus nonsingularity of P and Q"""
    settings = settings or get_settings()
    grid = p.grid
    points = grid.points
    n, count = p.n, grid.size
    try:
        A, B = p.samples
        P, Q = _transforms(pair, points)
        tA, tB = _target(target, p, points)
    except PencilError as e:
        raise e.tagged(PipelineStage.VERIFY)
    for name, samples in (("P", P), ("Q", Q), ("target A", tA), ("target B", tB)):
        _check_shape(name, samples, count, n)

    residual_a = np.max(np.abs(P @ A @ Q - tA), axis=(1, 2))
    residual_b = np.max(np.abs(P @ B @ Q - tB), axis=(1, 2))
    det_p = np.array([abs(densela.det(m)) for m in P])
    det_q = np.array([abs(densela.det(m)) for m in Q])

    canon_tol = settings.canon_tol(p.norm_a, p.norm_b)
    regularity_tol = settings.regularity_tol(p.norm_a)
    failures: list[str] = []
    for label, residual in (("A", residual_a), ("B", residual_b)):
        bad = np.flatnonzero(residual > canon_tol)
        if bad.size:
            i = int(bad[np.argmax(residual[bad])])
            failures.append(
                f"P {label} Q differs from the target by {residual[i]:.3e} > {canon_tol:.3e} "
                f"at x={grid.point(i)} ({bad.size} points)"
            )
    for label, margin in (("P", det_p), ("Q", det_q)):
        bad = np.flatnonzero(margin <= regularity_tol)
        if bad.size:
            failures.append(f"|det {label}| = {margin[bad[0]]:.3e} <= {regularity_tol:.3e} at x={grid.point(int(bad[0]))}")

    nilpotency: dict[str, list[int | None]] = {}
    if isinstance(target, CanonicalForm):
        for label, block, size in (("M", target.m_block, target.l), ("N", target.n_block, target.l_hat)):
            indices = [densela.nilpotency_index(m, settings.similarity_tol) for m in block]
            nilpotency[label] = indices
            if any(k is None or k > max(size, 1) for k in indices):
                failures.append(f"Canonical block {label} is not nilpotent of index <= {size}")

    report = VerificationReport(
        kind=ReportKind.EQUIVALENCE,
        residuals={"A": residual_a, "B": residual_b},
        det_margins={"P": det_p, "Q": det_q},
        nilpotency=nilpotency,
        continuity=continuity_diagnostics("P", P, grid, settings) + continuity_diagnostics("Q", Q, grid, settings),
        tolerances={
            "canon_tol": canon_tol,
            "regularity_tol": regularity_tol,
            "continuity_factor": settings.continuity_factor,
        },
        failures=failures,
    )
    _log(report)
    return report


def verify_similarity(
    A: MatrixFunction | np.ndarray,
    U: MatrixFunction | np.ndarray,
    N: MatrixFunction | np.ndarray,
    points: np.ndarray | None = None,
    grid: Grid | None = None,
    settings: Settings | None = None,
) -> VerificationReport:
    """Check U orthogonal, U^-1 A U = N, N strictly upper triangular and nilpotent"""
    settings = settings or get_settings()
    if grid is not None:
        points = grid.points
    if points is None and any(isinstance(x, MatrixFunction) for x in (A, U, N)):
        raise DimensionMismatchError("Closed-form inputs need sample points or a grid")
    try:
        A, U, N = (_sample(x, points) for x in (A, U, N))
    except PencilError as e:
        raise e.tagged(PipelineStage.VERIFY)
    A, U, N = (np.asarray(x, dtype=float).reshape((-1,) + np.shape(x)[-2:]) for x in (A, U, N))
    count, n = A.shape[0], A.shape[1]
    for name, samples in (("A", A), ("U", U), ("N", N)):
        _check_shape(name, samples, count, n)

    E = np.eye(n)
    unitary = np.max(np.abs(np.transpose(U, (0, 2, 1)) @ U - E), axis=(1, 2))
    det_u = np.array([abs(densela.det(m)) for m in U])
    similarity = np.empty(count)
    lower = np.max(np.abs(np.tril(N)), axis=(1, 2))
    for i in range(count):
        if det_u[i] == 0.0:
            similarity[i] = np.inf
            continue
        similarity[i] = np.max(np.abs(np.linalg.solve(U[i], A[i] @ U[i]) - N[i]))
    nilpotency = [densela.nilpotency_index(m, settings.similarity_tol) for m in N]

    scale = max(1.0, float(np.max(np.linalg.norm(A, 2, axis=(1, 2)))))
    similarity_tol = settings.similarity_tol * scale
    failures: list[str] = []
    if np.any(unitary > settings.unitary_tol):
        failures.append(f"U is not orthogonal: max |U^T U - E| = {unitary.max():.3e} > {settings.unitary_tol:.1e}")
    if np.any(similarity > similarity_tol):
        failures.append(f"U^-1 A U differs from N by {similarity.max():.3e} > {similarity_tol:.3e}")
    if np.any(lower > similarity_tol):
        failures.append(f"N is not strictly upper triangular (lower part {lower.max():.3e})")
    if any(k is None for k in nilpotency):
        failures.append("N is not nilpotent")

    report = VerificationReport(
        kind=ReportKind.SIMILARITY,
        residuals={"unitary": unitary, "similarity": similarity, "lower": lower},
        det_margins={"U": det_u},
        nilpotency={"N": nilpotency},
        continuity=continuity_diagnostics("U", U, grid, settings) if grid is not None else [],
        tolerances={"unitary_tol": settings.unitary_tol, "similarity_tol": similarity_tol},
        failures=failures,
    )
    _log(report)
    return report


def _log(report: VerificationReport) -> None:
    if report.passed:
        logger.info("{} verification passed (max residual {:.3e})", report.kind.value, report.max_residual())
    else:
        for failure in report.failures:
            logger.warning("{} verification: {}", report.kind.value, failure)
