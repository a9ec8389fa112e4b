"""
Pencil A(x) + lambda*B(x) on a sample grid and its structural profile.

The profile is the numerical reading of the canonization hypotheses: real
roots of constant multiplicity, a characteristic polynomial that is not
identically zero, and singular A, B of constant rank.
"""
from __future__ import annotations
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from loguru import logger
from numpy.polynomial import chebyshev
from scipy.optimize import linear_sum_assignment

from pencil_canon import densela
from pencil_canon.enums import PipelineStage, ShiftStrategy
from pencil_canon.errors import (
    DegenerateStructureError,
    DimensionMismatchError,
    FullRankError,
    MultiplicityChangeError,
    NoShiftFoundError,
    PencilError,
    RankChangeError,
    RootCollisionError,
    SingularPencilError,
)
from pencil_canon.exprlang import Expr, eval_grid, evaluate, parse, pretty
from pencil_canon.models import (
    Box,
    Grid,
    Point,
    RankDegreeClass,
    RankProfile,
    RealPoly,
    ShiftFunction,
    SpectrumProfile,
)
from pencil_canon.settings import Settings, get_settings

# Upper bound on the lambda-scale used for interpolation nodes
_MAX_NODE_RADIUS = 1e4


@dataclass(frozen=True)
class MatrixFunction:
    """n x n matrix of entry expressions over x1..xm"""
    n: int
    m: int
    entries: tuple[tuple[Expr, ...], ...]

    def __post_init__(self):
        if len(self.entries) != self.n or any(len(row) != self.n for row in self.entries):
            raise DimensionMismatchError(f"Matrix-function of order {self.n} needs {self.n}x{self.n} entries")

    @classmethod
    def from_strings(cls, rows: list[list[str]], m: int) -> MatrixFunction:
        n = len(rows)
        if n == 0 or any(len(row) != n for row in rows):
            raise DimensionMismatchError(f"Entry array must be square, got row lengths {[len(r) for r in rows]}")
        return cls(n, m, tuple(tuple(parse(str(text), m) for text in row) for row in rows))

    @classmethod
    def from_exprs(cls, rows: list[list[Expr]], m: int) -> MatrixFunction:
        return cls(len(rows), m, tuple(tuple(row) for row in rows))

    def to_strings(self) -> list[list[str]]:
        return [[pretty(e) for e in row] for row in self.entries]

    def at(self, point: Point) -> np.ndarray:
        return np.array([[evaluate(e, point) for e in row] for row in self.entries])

    def sample(self, points: np.ndarray) -> np.ndarray:
        """Values at an (N, m) array of points, shape (N, n, n)"""
        points = np.atleast_2d(points)
        out = np.empty((len(points), self.n, self.n))
        for i, row in enumerate(self.entries):
            for j, e in enumerate(row):
                out[:, i, j] = eval_grid(e, points)
        return out


@dataclass
class Pencil:
    A: MatrixFunction
    B: MatrixFunction
    domain: Box
    grid: Grid
    name: str = "pencil"
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.A.n != self.B.n:
            raise DimensionMismatchError(f"A is {self.A.n}x{self.A.n} but B is {self.B.n}x{self.B.n}")
        if self.A.m != self.B.m or self.A.m != self.domain.m:
            raise DimensionMismatchError(
                f"Variable counts disagree: A has m={self.A.m}, B has m={self.B.m}, domain has m={self.domain.m}"
            )
        if self.grid.box != self.domain:
            raise DimensionMismatchError("Grid must cover the pencil domain")

    @classmethod
    def on_box(cls, A: MatrixFunction, B: MatrixFunction, domain: Box, points: int | tuple[int, ...], **kwargs) -> Pencil:
        counts = (points,) * domain.m if isinstance(points, int) else tuple(points)
        return cls(A, B, domain, Grid(domain, counts), **kwargs)

    @property
    def n(self) -> int:
        return self.A.n

    @property
    def m(self) -> int:
        return self.A.m

    @cached_property
    def samples(self) -> tuple[np.ndarray, np.ndarray]:
        """Sampled (A, B) on the grid, each (points, n, n)"""
        try:
            return self.A.sample(self.grid.points), self.B.sample(self.grid.points)
        except PencilError as e:
            raise e.tagged(PipelineStage.SAMPLE)

    @cached_property
    def norm_a(self) -> float:
        return float(np.max(np.linalg.norm(self.samples[0], 2, axis=(1, 2))))

    @cached_property
    def norm_b(self) -> float:
        return float(np.max(np.linalg.norm(self.samples[1], 2, axis=(1, 2))))


# --------------------------------------------------------------------------- #
# Characteristic polynomials                                                  #
# --------------------------------------------------------------------------- #

def char_poly(A: np.ndarray, B: np.ndarray, settings: Settings | None = None) -> RealPoly:
    """det(A + lambda*B) recovered by interpolation at n+1 Chebyshev nodes"""
    settings = settings or get_settings()
    n = A.shape[0]
    norm_a = float(np.linalg.norm(A, 2))
    norm_b = float(np.linalg.norm(B, 2))
    rho = min(norm_a / norm_b, _MAX_NODE_RADIUS) if norm_b > 0 else 0.0
    radius = 1.0 + rho
    t = densela.chebyshev_nodes(n + 1, 1.0)
    values = np.empty(n + 1)
    hadamard = 0.0
    for j, tj in enumerate(t):
        M = A + radius * tj * B
        values[j] = densela.det(M)
        hadamard = max(hadamard, float(np.prod(np.linalg.norm(M, axis=0))))
    if np.max(np.abs(values)) <= settings.snap_rtol * hadamard:
        return RealPoly(np.zeros(1))
    q = chebyshev.cheb2poly(chebyshev.chebfit(t, values, n))
    q[np.abs(q) < settings.snap_rtol * np.max(np.abs(q))] = 0.0
    return RealPoly(q / radius ** np.arange(len(q)))


def char_poly_at(p: Pencil, x: Point, settings: Settings | None = None) -> RealPoly:
    try:
        return char_poly(p.A.at(x), p.B.at(x), settings)
    except PencilError as e:
        raise e.tagged(PipelineStage.SAMPLE)


def char_poly_mu_at(p: Pencil, x: Point, settings: Settings | None = None) -> RealPoly:
    """det(mu*A + B)"""
    try:
        return char_poly(p.B.at(x), p.A.at(x), settings)
    except PencilError as e:
        raise e.tagged(PipelineStage.SAMPLE)


def _map_points(fn, count: int, workers: int) -> list:
    if workers <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(count)))


# --------------------------------------------------------------------------- #
# Spectrum profile                                                            #
# --------------------------------------------------------------------------- #

@dataclass
class _PointSpectrum:
    poly: RealPoly
    low: int
    top: int
    roots: list[tuple[float, int]]


def _point_spectrum(p: Pencil, flat: int, settings: Settings) -> _PointSpectrum:
    A, B = p.samples
    point = p.grid.point(flat)
    poly = char_poly(A[flat], B[flat], settings)
    if poly.is_zero:
        raise SingularPencilError(
            f"det(A + lambda*B) vanishes identically at x={point}", stage=PipelineStage.PROFILE, point=point
        )
    low, top = poly.lowest_degree, poly.degree
    try:
        roots = densela.poly_roots(RealPoly(poly.coefficients[low:]), settings) if top > low else []
    except PencilError as e:
        e.details.setdefault("point", point)
        e.message = f"{e.message} at x={point}"
        raise e.tagged(PipelineStage.PROFILE)
    for value, _ in roots:
        if abs(value) <= settings.separation_tol:
            raise RootCollisionError(
                f"Nonzero root branch reaches 0 (value {value:.3e}) at x={point}",
                stage=PipelineStage.PROFILE, point=point,
            )
    return _PointSpectrum(poly, low, top, roots)


def spectrum_profile(p: Pencil, settings: Settings | None = None) -> SpectrumProfile:
    settings = settings or get_settings()
    grid = p.grid
    logger.info("Profiling spectrum of {} on {} grid points", p.name, grid.size)
    spectra = _map_points(lambda i: _point_spectrum(p, i, settings), grid.size, settings.workers)

    first = spectra[0]
    low, top = first.low, first.top
    multiplicities = tuple(k for _, k in first.roots)
    branches = np.empty((grid.size, len(multiplicities)))
    branches[0] = [r for r, _ in first.roots]

    for flat in range(1, grid.size):
        spec = spectra[flat]
        parent = int(grid.parents[flat])
        here, there = grid.point(flat), grid.point(parent)
        if spec.low != low:
            cls = RootCollisionError if spec.low > low else MultiplicityChangeError
            raise cls(
                f"Multiplicity of the zero root changes from {low} to {spec.low} between x={there} and x={here}",
                stage=PipelineStage.PROFILE, points=[there, here],
            )
        if spec.top != top:
            raise MultiplicityChangeError(
                f"Degree of det(A + lambda*B) changes from {top} to {spec.top} between x={there} and x={here}",
                stage=PipelineStage.PROFILE, points=[there, here],
            )
        branches[flat] = _match_branches(spec.roots, branches[parent], multiplicities, there, here)

    l, d, l_hat = low, top - low, p.n - top
    if l < 1 or l_hat < 1:
        raise DegenerateStructureError(
            f"Structure l={l}, d={d}, l_hat={l_hat} needs l >= 1 and l_hat >= 1",
            stage=PipelineStage.PROFILE, l=l, d=d, l_hat=l_hat,
        )
    s_coeffs = np.array([np.pad(s.poly.coefficients, (0, p.n + 1))[low:top + 1] for s in spectra])
    profile = SpectrumProfile(
        n=p.n, l=l, d=d, l_hat=l_hat, multiplicities=multiplicities,
        branches=branches, s_coeffs=s_coeffs, grid=grid,
    )
    profile.warnings.extend(_lipschitz_warnings(branches, grid, settings))
    logger.info("Spectrum profile: l={}, d={}, l_hat={}, multiplicities={}", l, d, l_hat, multiplicities)
    return profile


def _match_branches(
    roots: list[tuple[float, int]],
    parent_values: np.ndarray,
    multiplicities: tuple[int, ...],
    there: Point,
    here: Point,
) -> np.ndarray:
    pattern = tuple(k for _, k in roots)
    if len(roots) != len(multiplicities):
        if len(roots) < len(multiplicities) and sorted(pattern) != sorted(multiplicities):
            raise RootCollisionError(
                f"Root branches collide between x={there} and x={here}: pattern {multiplicities} -> {pattern}",
                stage=PipelineStage.PROFILE, points=[there, here],
            )
        raise MultiplicityChangeError(
            f"Root multiplicities change between x={there} and x={here}: {multiplicities} -> {pattern}",
            stage=PipelineStage.PROFILE, points=[there, here],
        )
    if not roots:
        return np.empty(0)
    values = np.array([r for r, _ in roots])
    cost = np.abs(values[:, None] - parent_values[None, :])
    rows, cols = linear_sum_assignment(cost)
    matched = np.empty(len(roots))
    for r, c in zip(rows, cols):
        if roots[r][1] != multiplicities[c]:
            raise MultiplicityChangeError(
                f"Branch {c + 1} changes multiplicity {multiplicities[c]} -> {roots[r][1]} "
                f"between x={there} and x={here}",
                stage=PipelineStage.PROFILE, points=[there, here],
            )
        matched[c] = values[r]
    return matched


def _lipschitz_warnings(values: np.ndarray, grid: Grid, settings: Settings) -> list[str]:
    """Flag adjacent jumps much larger than the previous step along the same axis"""
    warnings: list[str] = []
    if values.shape[1] == 0:
        return warnings
    for axis in range(grid.m):
        a, b, c = grid.axis_triples(axis)
        before = np.abs(values[b] - values[a])
        after = np.abs(values[c] - values[b])
        floor = 1e-8 * (1.0 + np.abs(values[b]))
        suspicious = (after > settings.continuity_factor * np.maximum(before, floor)) & (after > floor)
        for row, branch in zip(*np.nonzero(suspicious)):
            message = (
                f"Branch {branch + 1} jumps by {after[row, branch]:.3e} along x{axis + 1} after a step of "
                f"{before[row, branch]:.3e} at x={grid.point(int(c[row]))}; consider a finer grid"
            )
            logger.warning(message)
            warnings.append(message)
    return warnings


# --------------------------------------------------------------------------- #
# Ranks                                                                       #
# --------------------------------------------------------------------------- #

def _constant_rank(samples: np.ndarray, name: str, grid: Grid, tol: float) -> tuple[int, np.ndarray]:
    ranks = np.array([densela.rank(M, tol) for M in samples])
    changed = np.flatnonzero(ranks != ranks[0])
    if changed.size:
        where = int(changed[0])
        raise RankChangeError(
            f"rank {name} is {ranks[0]} at x={grid.point(0)} but {ranks[where]} at x={grid.point(where)}",
            stage=PipelineStage.RANKS, matrix=name, points=[grid.point(0), grid.point(where)],
        )
    n = samples.shape[1]
    if ranks[0] >= n:
        raise FullRankError(f"{name} has full rank {n}; it must be singular", stage=PipelineStage.RANKS, matrix=name)
    return int(ranks[0]), ranks


def rank_profile(p: Pencil, settings: Settings | None = None) -> RankProfile:
    settings = settings or get_settings()
    A, B = p.samples
    tol = settings.rank_tol(p.n)
    rank_a, ranks_a = _constant_rank(A, "A", p.grid, tol)
    rank_b, ranks_b = _constant_rank(B, "B", p.grid, tol)
    logger.info("Rank profile: rank A = {}, rank B = {}", rank_a, rank_b)
    return RankProfile(rank_a, rank_b, ranks_a, ranks_b)


def rank_degree_classify(
    p: Pencil, sp: SpectrumProfile, ranks: RankProfile | None = None, settings: Settings | None = None
) -> RankDegreeClass:
    settings = settings or get_settings()
    ranks = ranks or rank_profile(p, settings)
    A, B = p.samples
    deg_lambda = sp.l + sp.d
    deg_mu = [char_poly(B[i], A[i], settings).degree for i in range(p.grid.size)]
    result = RankDegreeClass(
        rank_a=ranks.rank_a,
        rank_b=ranks.rank_b,
        deg_lambda=deg_lambda,
        deg_mu=max(deg_mu),
        lambda_equality=ranks.rank_b == deg_lambda,
        mu_equality=all(k == ranks.rank_a for k in deg_mu),
        all_roots_simple=sp.l == 1 and all(k == 1 for k in sp.multiplicities),
    )
    logger.info(
        "Rank-degree criterion {}: rank B={} vs deg_lambda={}, rank A={} vs deg_mu={}",
        "holds" if result.satisfied else "fails",
        result.rank_b, result.deg_lambda, result.rank_a, result.deg_mu,
    )
    return result


# --------------------------------------------------------------------------- #
# Shift                                                                       #
# --------------------------------------------------------------------------- #

@dataclass
class _Margins:
    zero: float
    root: float
    det: float


def _margins(values: np.ndarray, sp: SpectrumProfile, p: Pencil) -> _Margins:
    A, B = p.samples
    dets = np.array([abs(densela.det(A[i] + values[i] * B[i])) for i in range(p.grid.size)])
    root = float(np.min(np.abs(sp.branches - values[:, None]))) if sp.k else np.inf
    return _Margins(zero=float(np.min(np.abs(values))), root=root, det=float(np.min(dets)))


def _shift_candidates(sp: SpectrumProfile) -> list[float]:
    candidates = [1.0, -1.0]
    intervals = [(0.0, 0.0)] + [(float(sp.branches[:, i].min()), float(sp.branches[:, i].max())) for i in range(sp.k)]
    intervals.sort()
    for (_, upper), (lower, _) in zip(intervals, intervals[1:]):
        if upper < lower:
            candidates.append(0.5 * (upper + lower))
    candidates.append(max(u for _, u in intervals) + 1.0)
    candidates.append(min(lo for lo, _ in intervals) - 1.0)
    return list(dict.fromkeys(candidates))


def choose_shift(
    sp: SpectrumProfile, p: Pencil, settings: Settings | None = None, forced: float | None = None
) -> ShiftFunction:
    settings = settings or get_settings()
    sep = settings.separation_tol
    det_tol = settings.regularity_tol(p.norm_a)
    size = p.grid.size

    def accept(values: np.ndarray, strategy: ShiftStrategy, constant: float | None) -> ShiftFunction | None:
        margins = _margins(values, sp, p)
        tried.append({"strategy": strategy.value, "c": constant, **margins.__dict__})
        if margins.zero > sep and margins.root > sep and margins.det > det_tol:
            logger.info("Accepted {} shift c={} (root margin {:.3e}, det margin {:.3e})",
                        strategy.value, constant if constant is not None else "c(x)", margins.root, margins.det)
            return ShiftFunction(values, strategy, constant, margins.root, margins.zero, margins.det)
        logger.debug("Rejected {} shift {}: {}", strategy.value, constant, margins)
        return None

    tried: list[dict] = []
    if forced is not None:
        shift = accept(np.full(size, float(forced)), ShiftStrategy.FORCED, float(forced))
        if shift is None:
            raise NoShiftFoundError(f"Forced shift c={forced} violates the shift conditions",
                                    stage=PipelineStage.SHIFT, margins=tried)
        return shift

    for c in _shift_candidates(sp):
        shift = accept(np.full(size, c), ShiftStrategy.CONSTANT, c)
        if shift is not None:
            return shift

    if sp.k:
        positive = [i for i in range(sp.k) if np.all(sp.branches[:, i] > 0)]
        negative = [i for i in range(sp.k) if np.all(sp.branches[:, i] < 0)]
        if positive:
            j = min(positive, key=lambda i: float(sp.branches[:, i].min()))
        elif negative:
            j = max(negative, key=lambda i: float(sp.branches[:, i].max()))
        else:
            j = None
        if j is not None:
            shift = accept(0.5 * sp.branches[:, j], ShiftStrategy.BRANCH_MEAN, None)
            if shift is not None:
                logger.warning("Using a point-dependent shift; its smoothness is only diagnosed on the grid")
                return shift

    raise NoShiftFoundError("No shift c satisfies c != 0, c != lambda_i(x) and det(A + cB) != 0 on the grid",
                            stage=PipelineStage.SHIFT, margins=tried)


@dataclass
class Analysis:
    spectrum: SpectrumProfile
    ranks: RankProfile
    classification: RankDegreeClass
    shift: ShiftFunction


def analyze(p: Pencil, settings: Settings | None = None, forced_shift: float | None = None) -> Analysis:
    """Every hypothesis check in the order the command line reports them"""
    settings = settings or get_settings()
    spectrum = spectrum_profile(p, settings)
    ranks = rank_profile(p, settings)
    classification = rank_degree_classify(p, spectrum, ranks, settings)
    shift = choose_shift(spectrum, p, settings, forced=forced_shift)
    return Analysis(spectrum, ranks, classification, shift)
