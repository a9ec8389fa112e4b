"""
Pencils with a prescribed canonical structure.

The canonical pair (A_c, B_c) is built from the structure spec and hidden
behind witnesses P0, Q0 made of elementary smooth factors (shears with a
bounded coefficient and diagonal scalings in [1, 2]). Both are nonsingular
on the whole box, so the generated pencil is a ground truth for round trips.
"""
from __future__ import annotations
from dataclasses import dataclass, field

import numpy as np
from loguru import logger

from pencil_canon import exprlang as ex
from pencil_canon.enums import WitnessMode
from pencil_canon.errors import GeneratorSpecError, PencilError
from pencil_canon.exprlang import Expr
from pencil_canon.models import Box, Grid, StructureSpec
from pencil_canon.pencilcore import MatrixFunction, Pencil
from pencil_canon.settings import Settings, get_settings

ExprMatrix = list[list[Expr]]

SHEARS_PER_WITNESS = 3
# Base magnitudes of random branches; kept away from 0 and +-1
_BRANCH_BASES = (2.0, 3.5, 5.0, 6.5, 8.0, 9.5)
_BRANCH_WIGGLE = 0.3


@dataclass
class Factor:
    """One elementary witness factor, recorded for the ground-truth sidecar"""
    kind: str  # shear | scaling
    matrix: ExprMatrix
    inverse: ExprMatrix
    description: dict


@dataclass
class GeneratedInstance:
    spec: StructureSpec
    pencil: Pencil
    canonical_a: MatrixFunction
    canonical_b: MatrixFunction
    P0: MatrixFunction
    Q0: MatrixFunction
    factors: dict[str, list[dict]] = field(default_factory=dict)


# --------------------------------------------------------------------------- #
# Symbolic matrix helpers                                                     #
# --------------------------------------------------------------------------- #

def identity(n: int) -> ExprMatrix:
    return [[ex.ONE if i == j else ex.ZERO for j in range(n)] for i in range(n)]


def matmul(X: ExprMatrix, Y: ExprMatrix) -> ExprMatrix:
    inner = len(Y)
    return [
        [ex.total([ex.mul(X[i][k], Y[k][j]) for k in range(inner)]) for j in range(len(Y[0]))]
        for i in range(len(X))
    ]


def block_diagonal(blocks: list[ExprMatrix]) -> ExprMatrix:
    n = sum(len(b) for b in blocks)
    out = [[ex.ZERO] * n for _ in range(n)]
    offset = 0
    for block in blocks:
        for i, row in enumerate(block):
            for j, e in enumerate(row):
                out[offset + i][offset + j] = e
        offset += len(block)
    return out


# --------------------------------------------------------------------------- #
# Spec validation                                                             #
# --------------------------------------------------------------------------- #

def _parse_branches(spec: StructureSpec) -> list[Expr]:
    try:
        return [ex.parse(text, spec.m) for text in spec.branches]
    except PencilError as e:
        raise GeneratorSpecError(f"Invalid branch expression: {e}") from e


def validate(spec: StructureSpec, settings: Settings | None = None) -> list[Expr]:
    settings = settings or get_settings()
    if min(spec.l, spec.l_hat) < 1 or spec.d < 0:
        raise GeneratorSpecError(f"Need l >= 1, l_hat >= 1, d >= 0; got d={spec.d}, l={spec.l}, l_hat={spec.l_hat}")
    if spec.d + spec.l + spec.l_hat != spec.n:
        raise GeneratorSpecError(f"d + l + l_hat = {spec.d + spec.l + spec.l_hat} but n = {spec.n}")
    if any(k < 1 for k in spec.multiplicities) or sum(spec.multiplicities) != spec.d:
        raise GeneratorSpecError(f"Multiplicities {list(spec.multiplicities)} must be positive and sum to d={spec.d}")
    if len(spec.branches) != len(spec.multiplicities):
        raise GeneratorSpecError(
            f"{len(spec.branches)} branch expressions for {len(spec.multiplicities)} multiplicities"
        )
    for name, parts, total in (("m_blocks", spec.m_blocks, spec.l), ("n_blocks", spec.n_blocks, spec.l_hat)):
        if any(k < 1 for k in parts) or sum(parts) != total:
            raise GeneratorSpecError(f"{name} {list(parts)} must be a partition of {total}")
    if spec.domain.m != spec.m:
        raise GeneratorSpecError(f"Domain has {spec.domain.m} axes but m = {spec.m}")
    if spec.grid_points < 3:
        raise GeneratorSpecError("grid_points must be at least 3")
    branches = _parse_branches(spec)
    _check_separation(spec, branches, settings)
    return branches


def _check_separation(spec: StructureSpec, branches: list[Expr], settings: Settings) -> None:
    if not branches:
        return
    grid = Grid(spec.domain, (spec.grid_points,) * spec.m)
    try:
        values = np.stack([ex.eval_grid(b, grid.points) for b in branches], axis=1)
    except PencilError as e:
        raise GeneratorSpecError(f"Branch evaluation failed: {e}") from e
    sep = settings.separation_tol
    if np.any(np.abs(values) <= sep):
        raise GeneratorSpecError("A root branch vanishes on the grid")
    if np.any(np.abs(values - 1.0) <= sep):
        logger.warning("A root branch reaches 1; the default shift c=1 will be rejected")
    if values.shape[1] > 1:
        diffs = np.abs(values[:, :, None] - values[:, None, :])
        iu = np.triu_indices(values.shape[1], 1)
        gap = float(np.min(diffs[:, iu[0], iu[1]]))
        if gap <= sep:
            raise GeneratorSpecError(f"Root branches come {gap:.3e} close on the grid")


# --------------------------------------------------------------------------- #
# Canonical blocks and witnesses                                              #
# --------------------------------------------------------------------------- #

def _coupling(rng: np.random.Generator, bound: float) -> Expr:
    return ex.const(round(float(rng.uniform(-bound, bound)), 3))


def _j_block(branch: Expr, p: int, rng: np.random.Generator, bound: float) -> ExprMatrix:
    """(-1/lambda) E + strictly upper coupling"""
    diagonal = ex.neg(ex.div(ex.ONE, branch))
    return [
        [diagonal if i == j else (_coupling(rng, bound) if j > i else ex.ZERO) for j in range(p)]
        for i in range(p)
    ]


def _nilpotent(parts: tuple[int, ...], rng: np.random.Generator) -> ExprMatrix:
    """Block diagonal of Jordan-type shifts, one per part, with superdiagonal entries in [0.5, 1.5]"""
    blocks = []
    for size in parts:
        block = [[ex.ZERO] * size for _ in range(size)]
        for i in range(size - 1):
            block[i][i + 1] = ex.const(round(float(rng.uniform(0.5, 1.5)), 3))
        blocks.append(block)
    return block_diagonal(blocks)


def canonical_pair(spec: StructureSpec, branches: list[Expr], rng: np.random.Generator) -> tuple[ExprMatrix, ExprMatrix]:
    j_blocks = [_j_block(b, p, rng, spec.j_coupling) for b, p in zip(branches, spec.multiplicities)]
    M = _nilpotent(spec.m_blocks, rng)
    N = _nilpotent(spec.n_blocks, rng)
    A_c = block_diagonal([identity(spec.d), M, identity(spec.l_hat)])
    B_c = block_diagonal(j_blocks + [identity(spec.l), N])
    return A_c, B_c


def _smooth_coefficient(rng: np.random.Generator, m: int, centre: float, amplitude: float) -> tuple[Expr, dict]:
    a = round(float(rng.uniform(-centre, centre)), 2) if centre else 0.0
    b = round(float(rng.uniform(-amplitude, amplitude)), 2)
    k = int(rng.integers(1, m + 1))
    expr = ex.add(ex.const(a), ex.mul(ex.const(b), ex.func("sin", ex.var(k))))
    return expr, {"a": a, "b": b, "variable": k}


def _shear(n: int, rng: np.random.Generator, m: int) -> Factor:
    """E + alpha(x) e_i e_j^T with |alpha| <= 1"""
    i, j = (int(v) for v in rng.choice(n, size=2, replace=False))
    alpha, info = _smooth_coefficient(rng, m, 0.6, 0.4)
    matrix, inverse = identity(n), identity(n)
    matrix[i][j] = alpha
    inverse[i][j] = ex.neg(alpha)
    return Factor("shear", matrix, inverse, {"kind": "shear", "row": i + 1, "col": j + 1, **info})


def _scaling(n: int, rng: np.random.Generator, m: int) -> Factor:
    """diag(s_1(x) .. s_n(x)) with every s_k in [1, 2]"""
    matrix, inverse, entries = identity(n), identity(n), []
    for k in range(n):
        s, info = _smooth_coefficient(rng, m, 0.0, 0.5)
        s = ex.add(ex.const(1.5), s)
        matrix[k][k] = s
        inverse[k][k] = ex.div(ex.ONE, s)
        entries.append(info)
    return Factor("scaling", matrix, inverse, {"kind": "scaling", "entries": entries})


def witness(n: int, m: int, rng: np.random.Generator, mode: WitnessMode) -> list[Factor]:
    if mode is WitnessMode.IDENTITY:
        return []
    return [_shear(n, rng, m) for _ in range(SHEARS_PER_WITNESS)] + [_scaling(n, rng, m)]


def _product(factors: list[Factor], n: int, inverse: bool) -> ExprMatrix:
    out = identity(n)
    sequence = reversed(factors) if inverse else factors
    for f in sequence:
        out = matmul(out, f.inverse if inverse else f.matrix)
    return out


# --------------------------------------------------------------------------- #
# Operations                                                                  #
# --------------------------------------------------------------------------- #

def generate(spec: StructureSpec, settings: Settings | None = None, name: str | None = None) -> GeneratedInstance:
    """Pencil A = P0^-1 A_c Q0^-1, B = P0^-1 B_c Q0^-1 with known canonical structure"""
    settings = settings or get_settings()
    branches = validate(spec, settings)
    rng = np.random.default_rng(spec.seed)
    A_c, B_c = canonical_pair(spec, branches, rng)
    n, m = spec.n, spec.m
    p_factors = witness(n, m, rng, spec.witnesses)
    q_factors = witness(n, m, rng, spec.witnesses)
    P0, P0_inv = _product(p_factors, n, inverse=False), _product(p_factors, n, inverse=True)
    Q0, Q0_inv = _product(q_factors, n, inverse=False), _product(q_factors, n, inverse=True)
    A = matmul(matmul(P0_inv, A_c), Q0_inv)
    B = matmul(matmul(P0_inv, B_c), Q0_inv)
    pencil = Pencil.on_box(
        MatrixFunction.from_exprs(A, m),
        MatrixFunction.from_exprs(B, m),
        spec.domain,
        spec.grid_points,
        name=name or f"generated-{spec.seed}",
    )
    logger.info("Generated pencil n={}, structure d={}, l={}, l_hat={}, p={} (seed {}, witnesses {})",
                n, spec.d, spec.l, spec.l_hat, list(spec.multiplicities), spec.seed, spec.witnesses.value)
    return GeneratedInstance(
        spec=spec,
        pencil=pencil,
        canonical_a=MatrixFunction.from_exprs(A_c, m),
        canonical_b=MatrixFunction.from_exprs(B_c, m),
        P0=MatrixFunction.from_exprs(P0, m),
        Q0=MatrixFunction.from_exprs(Q0, m),
        factors={"P0": [f.description for f in p_factors], "Q0": [f.description for f in q_factors]},
    )


def _partition(total: int, rng: np.random.Generator, largest: int) -> tuple[int, ...]:
    parts = []
    while total > 0:
        part = int(rng.integers(1, min(largest, total) + 1))
        parts.append(part)
        total -= part
    return tuple(parts)


def random_structure(
    rng: np.random.Generator,
    n: int,
    m: int,
    witnesses: WitnessMode = WitnessMode.RANDOM,
    grid_points: int = 5,
) -> StructureSpec:
    """Random admissible structure: l, l_hat >= 1, multiplicities <= 3, well separated branches"""
    if n < 2:
        raise GeneratorSpecError("Random structures need n >= 2")
    l = int(rng.integers(1, n))
    l_hat = int(rng.integers(1, n - l + 1))
    d = n - l - l_hat
    multiplicities = _partition(d, rng, 3)
    bases = rng.permutation(_BRANCH_BASES[: max(len(multiplicities), 1) + 1])[: len(multiplicities)]
    branches = []
    for base in bases:
        sign = "-" if rng.random() < 0.5 else ""
        k = int(rng.integers(1, m + 1))
        branches.append(f"{sign}({base:g} + {_BRANCH_WIGGLE:g}*sin(x{k}))")
    return StructureSpec(
        n=n, m=m, d=d, l=l, l_hat=l_hat,
        multiplicities=multiplicities,
        branches=tuple(branches),
        m_blocks=_partition(l, rng, l),
        n_blocks=_partition(l_hat, rng, l_hat),
        domain=Box(tuple((1.0, 2.0) for _ in range(m))),
        seed=int(rng.integers(0, 2 ** 31)),
        witnesses=witnesses,
        grid_points=grid_points,
    )
