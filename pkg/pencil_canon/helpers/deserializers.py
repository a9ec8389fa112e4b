"""
Deserialization helpers for pencil files, structure specs and transforms.

Pencil files and structure specs are YAML documents. A transforms file is
either a YAML document of closed-form expression matrices or a canonize
result document (JSON) with sampled P, Q and canonical blocks.
"""
from __future__ import annotations
from typing import Any
import json
import re
from pathlib import Path

import numpy as np
import yaml

from pencil_canon.enums import WitnessMode
from pencil_canon.errors import DimensionMismatchError, PencilFileError
from pencil_canon.exprlang import FUNCTIONS
from pencil_canon.models import Box, Grid, StructureSpec
from pencil_canon.pencilcore import MatrixFunction, Pencil
from pencil_canon.settings import get_settings
from pencil_canon.verifier import ClosedFormTarget, ClosedFormTransforms

_IDENT = re.compile(r"(?<![0-9A-Za-z_.])[A-Za-z_][A-Za-z_0-9]*")
_VARIABLE = re.compile(r"x[1-9]\d*")


def load_document(path: str | Path) -> dict:
    """Read a YAML or JSON document into a dict"""
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except (OSError, UnicodeDecodeError) as e:
        raise PencilFileError(f"Cannot read {path}: {e}") from e
    try:
        data = json.loads(text) if path.suffix == '.json' else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise PencilFileError(f"{path} is not a valid document: {e}") from e
    if not isinstance(data, dict):
        raise PencilFileError(f"{path} must hold a mapping at the top level")
    return data


# --------------------------------------------------------------------------- #
# let definitions                                                             #
# --------------------------------------------------------------------------- #

def apply_lets(text: str, lets: dict[str, str]) -> str:
    """Replace every defined identifier by its parenthesised definition"""
    if not lets:
        return text
    return _IDENT.sub(lambda m: f"({lets[m.group()]})" if m.group() in lets else m.group(), text)


def expand_lets(raw: dict | None) -> dict[str, str]:
    """Definitions in order; each may use the ones before it"""
    expanded: dict[str, str] = {}
    for name, text in (raw or {}).items():
        name = str(name)
        if not re.fullmatch(r"[A-Za-z_][A-Za-z_0-9]*", name):
            raise PencilFileError(f"Invalid let name {name!r}")
        if _VARIABLE.fullmatch(name) or name in FUNCTIONS:
            raise PencilFileError(f"let name {name!r} shadows a variable or function")
        expanded[name] = apply_lets(str(text), expanded)
    return expanded


def _matrix(data: dict, key: str, m: int, lets: dict[str, str]) -> MatrixFunction:
    rows = data.get(key)
    if not isinstance(rows, list) or not all(isinstance(r, list) for r in rows):
        raise PencilFileError(f"'{key}' must be a list of rows")
    return MatrixFunction.from_strings([[apply_lets(str(v), lets) for v in row] for row in rows], m)


def _box(raw: Any) -> Box:
    try:
        return Box(tuple((float(a), float(b)) for a, b in raw))
    except (TypeError, ValueError) as e:
        raise PencilFileError(f"Invalid domain {raw!r}: {e}") from e


def _counts(raw: Any, m: int) -> tuple[int, ...]:
    counts = (int(raw),) * m if isinstance(raw, (int, float)) else tuple(int(c) for c in raw)
    if len(counts) != m:
        raise PencilFileError(f"Grid spec {raw!r} does not match m={m}")
    return counts


# --------------------------------------------------------------------------- #
# Pencil files                                                                #
# --------------------------------------------------------------------------- #

def dict_to_pencil(data: dict, grid: int | None = None, name: str | None = None) -> Pencil:
    """Convert a pencil-file document to a Pencil; `grid` overrides the file's grid spec"""
    missing = [k for k in ('n', 'm', 'domain', 'A', 'B') if k not in data]
    if missing:
        raise PencilFileError(f"Pencil file lacks {missing}")
    n, m = int(data['n']), int(data['m'])
    lets = expand_lets(data.get('let'))
    A = _matrix(data, 'A', m, lets)
    B = _matrix(data, 'B', m, lets)
    if A.n != n or B.n != n:
        raise DimensionMismatchError(f"Declared n={n} but A is {A.n}x{A.n} and B is {B.n}x{B.n}")
    domain = _box(data['domain'])
    if domain.m != m:
        raise DimensionMismatchError(f"Declared m={m} but the domain has {domain.m} axes")
    tolerances = dict(data.get('tolerances') or {})
    counts = _counts(grid if grid is not None else data.get('grid', tolerances.get('grid_points', get_settings().grid_points)), m)
    try:
        grid_obj = Grid(domain, counts)
    except ValueError as e:
        raise PencilFileError(str(e)) from e
    return Pencil(A, B, domain, grid_obj, name=name or str(data.get('name', 'pencil')), tolerances=tolerances)


def load_pencil(path: str | Path, grid: int | None = None) -> Pencil:
    data = load_document(path)
    return dict_to_pencil(data, grid=grid, name=str(data.get('name', Path(path).stem)))


# --------------------------------------------------------------------------- #
# Structure specs                                                             #
# --------------------------------------------------------------------------- #

def dict_to_structure(data: dict, seed: int | None = None) -> StructureSpec:
    """Convert a structure-spec document to a StructureSpec; `seed` overrides the file's seed"""
    try:
        return StructureSpec(
            n=int(data['n']),
            m=int(data['m']),
            d=int(data['d']),
            l=int(data['l']),
            l_hat=int(data['l_hat']),
            multiplicities=tuple(int(k) for k in data.get('multiplicities') or ()),
            branches=tuple(str(b) for b in data.get('branches') or ()),
            m_blocks=tuple(int(k) for k in data.get('m_blocks') or (int(data['l']),)),
            n_blocks=tuple(int(k) for k in data.get('n_blocks') or (int(data['l_hat']),)),
            domain=_box(data['domain']),
            seed=int(seed if seed is not None else data.get('seed', 0)),
            witnesses=WitnessMode(data.get('witnesses', WitnessMode.RANDOM.value)),
            grid_points=int(data.get('grid_points', 5)),
            j_coupling=float(data.get('j_coupling', 0.5)),
        )
    except KeyError as e:
        raise PencilFileError(f"Structure spec lacks {e.args[0]!r}") from e
    except (TypeError, ValueError) as e:
        raise PencilFileError(f"Invalid structure spec: {e}") from e


def load_structure(path: str | Path, seed: int | None = None) -> StructureSpec:
    return dict_to_structure(load_document(path), seed=seed)


# --------------------------------------------------------------------------- #
# Transforms                                                                  #
# --------------------------------------------------------------------------- #

def _sampled(payload: dict, *keys: str) -> np.ndarray:
    node: Any = payload
    for key in keys:
        if not isinstance(node, dict) or key not in node:
            raise PencilFileError(f"Result document lacks {'.'.join(keys)}")
        node = node[key]
    return np.asarray(node, dtype=float)


def dict_to_transforms(data: dict, m: int) -> tuple[Any, Any]:
    """(transforms, target) for verify_equivalence; target None means the pencil itself"""
    if 'payload' in data:
        payload = data['payload']
        transforms = (_sampled(payload, 'transforms', 'P'), _sampled(payload, 'transforms', 'Q'))
        target = (_sampled(payload, 'canonical', 'left'), _sampled(payload, 'canonical', 'right'))
        return transforms, target
    if 'P' not in data or 'Q' not in data:
        raise PencilFileError("Transforms file needs 'P' and 'Q' (or a canonize result document)")
    lets = expand_lets(data.get('let'))
    transforms = ClosedFormTransforms(_matrix(data, 'P', m, lets), _matrix(data, 'Q', m, lets))
    has_a, has_b = 'target_A' in data, 'target_B' in data
    if has_a != has_b:
        raise PencilFileError("Give both target_A and target_B or neither")
    target = ClosedFormTarget(_matrix(data, 'target_A', m, lets), _matrix(data, 'target_B', m, lets)) if has_a else None
    return transforms, target


def load_transforms(path: str | Path, m: int) -> tuple[Any, Any]:
    return dict_to_transforms(load_document(path), m)
