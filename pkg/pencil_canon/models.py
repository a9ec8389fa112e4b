"""
Plain dataclasses shared across the toolkit.

Nothing here imports the numerical modules, so exprlang, densela, pencilcore,
canonizer, verifier and the serializers can all depend on this module without
import cycles.
"""
from __future__ import annotations
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np

from pencil_canon.enums import ReportKind, ShiftStrategy, WitnessMode

Point = tuple[float, ...]


@dataclass(frozen=True)
class Box:
    """Closed box [a_1, b_1] x ... x [a_m, b_m]"""
    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.intervals:
            raise ValueError("Box needs at least one axis")
        for i, (a, b) in enumerate(self.intervals):
            if not (np.isfinite(a) and np.isfinite(b)) or not a < b:
                raise ValueError(f"Axis {i + 1} interval [{a}, {b}] must satisfy a < b")

    @property
    def m(self) -> int:
        return len(self.intervals)

    def contains(self, point: Point) -> bool:
        return len(point) == self.m and all(a <= v <= b for v, (a, b) in zip(point, self.intervals))


@dataclass(frozen=True)
class Grid:
    """Uniform sample grid over a box, points in lexicographic order (last axis fastest)"""
    box: Box
    counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.counts) != self.box.m:
            raise ValueError(f"Grid has {len(self.counts)} axes but the box has {self.box.m}")
        if any(c < 3 for c in self.counts):
            raise ValueError(f"Grid needs at least 3 points per axis, got {self.counts}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def m(self) -> int:
        return self.box.m

    @cached_property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, c) for (a, b), c in zip(self.box.intervals, self.counts)]

    @cached_property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.m)

    @cached_property
    def parents(self) -> np.ndarray:
        """Previously processed neighbour of every point (-1 for the first point)"""
        parents = np.full(self.size, -1, dtype=int)
        for flat in range(1, self.size):
            multi = list(np.unravel_index(flat, self.shape))
            axis = max(k for k, v in enumerate(multi) if v > 0)
            multi[axis] -= 1
            parents[flat] = int(np.ravel_multi_index(tuple(multi), self.shape))
        return parents

    def point(self, flat: int) -> Point:
        return tuple(float(v) for v in self.points[flat])

    def axis_pairs(self, axis: int) -> tuple[np.ndarray, np.ndarray]:
        """Flat indices (i, j) of every pair of points adjacent along `axis`"""
        idx = np.arange(self.size).reshape(self.shape)
        count = self.shape[axis]
        first = np.take(idx, range(0, count - 1), axis=axis).ravel()
        second = np.take(idx, range(1, count), axis=axis).ravel()
        return first, second

    def axis_triples(self, axis: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flat indices of three successive points along `axis`"""
        idx = np.arange(self.size).reshape(self.shape)
        count = self.shape[axis]
        return tuple(np.take(idx, range(s, count - 2 + s), axis=axis).ravel() for s in range(3))


@dataclass
class RealPoly:
    """Real polynomial with ascending coefficients c_0..c_deg"""
    coefficients: np.ndarray

    def __post_init__(self):
        coeffs = np.atleast_1d(np.asarray(self.coefficients, dtype=float))
        nonzero = np.flatnonzero(coeffs)
        if nonzero.size == 0:
            coeffs = np.zeros(1)
        else:
            coeffs = coeffs[: nonzero[-1] + 1]
        self.coefficients = coeffs

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    @property
    def is_zero(self) -> bool:
        return self.degree == 0 and self.coefficients[0] == 0.0

    @property
    def lowest_degree(self) -> int:
        """Index of the first nonzero coefficient (0 for the zero polynomial)"""
        nonzero = np.flatnonzero(self.coefficients)
        return int(nonzero[0]) if nonzero.size else 0

    def __call__(self, value: float) -> float:
        return float(np.polynomial.polynomial.polyval(value, self.coefficients))


@dataclass
class RankProfile:
    rank_a: int
    rank_b: int
    ranks_a: np.ndarray
    ranks_b: np.ndarray


@dataclass
class SpectrumProfile:
    """Structure data l, d, l_hat and the sampled root branches with multiplicities"""
    n: int
    l: int
    d: int
    l_hat: int
    multiplicities: tuple[int, ...]
    branches: np.ndarray  # (points, k)
    s_coeffs: np.ndarray  # (points, d + 1): S_l .. S_{l+d}
    grid: Grid
    warnings: list[str] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.multiplicities)

    def structure(self) -> tuple[int, int, int, tuple[int, ...]]:
        return self.d, self.l, self.l_hat, tuple(sorted(self.multiplicities))


@dataclass
class RankDegreeClass:
    rank_a: int
    rank_b: int
    deg_lambda: int
    deg_mu: int
    lambda_equality: bool
    mu_equality: bool
    all_roots_simple: bool

    @property
    def satisfied(self) -> bool:
        return self.lambda_equality and self.mu_equality

    @property
    def simple_roots_flag(self) -> bool:
        return self.satisfied and self.all_roots_simple


@dataclass
class ShiftFunction:
    values: np.ndarray  # (points,)
    strategy: ShiftStrategy
    constant: float | None
    root_margin: float
    zero_margin: float
    det_margin: float


@dataclass
class CanonicalForm:
    """diag{E_d, M(x), E_lhat} + lambda * diag{J_1(x)..J_k(x), E_l, N(x)} on the grid"""
    d: int
    l: int
    l_hat: int
    multiplicities: tuple[int, ...]
    j_blocks: list[np.ndarray]  # each (points, p_i, p_i)
    m_block: np.ndarray  # (points, l, l)
    n_block: np.ndarray  # (points, l_hat, l_hat)
    grid: Grid
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.d + self.l + self.l_hat

    def left(self) -> np.ndarray:
        """Sampled A-part diag{E_d, M, E_lhat}"""
        out = np.zeros((self.grid.size, self.n, self.n))
        d, l = self.d, self.l
        out[:, :d, :d] = np.eye(d)
        out[:, d:d + l, d:d + l] = self.m_block
        out[:, d + l:, d + l:] = np.eye(self.l_hat)
        return out

    def right(self) -> np.ndarray:
        """Sampled lambda-part diag{J, E_l, N}"""
        out = np.zeros((self.grid.size, self.n, self.n))
        offset = 0
        for block in self.j_blocks:
            p = block.shape[1]
            out[:, offset:offset + p, offset:offset + p] = block
            offset += p
        d, l = self.d, self.l
        out[:, d:d + l, d:d + l] = np.eye(l)
        out[:, d + l:, d + l:] = self.n_block
        return out


@dataclass
class EquivalencePair:
    P: np.ndarray  # (points, n, n)
    Q: np.ndarray
    cond_p: np.ndarray
    cond_q: np.ndarray
    residual_a: np.ndarray
    residual_b: np.ndarray


@dataclass
class ContinuityDiagnostic:
    """Adjacent-point jumps of a sampled family along one axis; never a proof of smoothness"""
    name: str
    axis: int
    max_jump: float
    fd_scale: float
    suspicious: bool


@dataclass
class VerificationReport:
    kind: ReportKind
    residuals: dict[str, np.ndarray]
    det_margins: dict[str, np.ndarray]
    nilpotency: dict[str, list[int | None]]
    continuity: list[ContinuityDiagnostic]
    tolerances: dict[str, float]
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def max_residual(self, name: str | None = None) -> float:
        names = [name] if name else list(self.residuals)
        values = [float(np.max(self.residuals[k])) for k in names if self.residuals[k].size]
        return max(values, default=0.0)


@dataclass
class StructureSpec:
    """Prescribed canonical structure for the generator"""
    n: int
    m: int
    d: int
    l: int
    l_hat: int
    multiplicities: tuple[int, ...]
    branches: tuple[str, ...]
    m_blocks: tuple[int, ...]
    n_blocks: tuple[int, ...]
    domain: Box
    seed: int = 0
    witnesses: WitnessMode = WitnessMode.RANDOM
    grid_points: int = 5
    j_coupling: float = 0.5
