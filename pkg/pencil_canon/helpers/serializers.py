"""
Serialization helpers for pencil files, structure specs and reports.

Converts toolkit objects to plain dicts (YAML for inputs, JSON for reports)
and writes them atomically.
"""
from __future__ import annotations
from typing import TYPE_CHECKING, Any
import json
import math
import os
import tempfile
from enum import Enum
from pathlib import Path

import numpy as np
import yaml

if TYPE_CHECKING:
    from pencil_canon.errors import PencilError
    from pencil_canon.generator import GeneratedInstance
    from pencil_canon.models import (
        CanonicalForm,
        ContinuityDiagnostic,
        EquivalencePair,
        Grid,
        RankDegreeClass,
        RankProfile,
        ShiftFunction,
        SpectrumProfile,
        StructureSpec,
        VerificationReport,
    )
    from pencil_canon.pencilcore import Analysis, Pencil

SCHEMA_VERSION = 1


def plain(obj: Any) -> Any:
    """numpy and enum values to JSON-ready builtins; non-finite floats become None"""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def grid_to_dict(grid: Grid) -> dict:
    return {
        'intervals': [list(iv) for iv in grid.box.intervals],
        'counts': list(grid.counts),
        'points': grid.points,
    }


def pencil_to_dict(pencil: Pencil) -> dict:
    """Convert Pencil to a pencil-file document"""
    doc = {
        'name': pencil.name,
        'n': pencil.n,
        'm': pencil.m,
        'domain': [list(iv) for iv in pencil.domain.intervals],
        'grid': list(pencil.grid.counts),
        'A': pencil.A.to_strings(),
        'B': pencil.B.to_strings(),
    }
    if pencil.tolerances:
        doc['tolerances'] = dict(pencil.tolerances)
    return doc


def structure_to_dict(spec: StructureSpec) -> dict:
    return {
        'n': spec.n,
        'm': spec.m,
        'd': spec.d,
        'l': spec.l,
        'l_hat': spec.l_hat,
        'multiplicities': list(spec.multiplicities),
        'branches': list(spec.branches),
        'm_blocks': list(spec.m_blocks),
        'n_blocks': list(spec.n_blocks),
        'domain': [list(iv) for iv in spec.domain.intervals],
        'seed': spec.seed,
        'witnesses': spec.witnesses.value,
        'grid_points': spec.grid_points,
        'j_coupling': spec.j_coupling,
    }


def truth_to_dict(instance: GeneratedInstance) -> dict:
    """Ground-truth sidecar of a generated pencil"""
    spec = instance.spec
    return {
        'structure': {
            'd': spec.d,
            'l': spec.l,
            'l_hat': spec.l_hat,
            'multiplicities': sorted(spec.multiplicities),
        },
        'spec': structure_to_dict(spec),
        'canonical': {
            'A': instance.canonical_a.to_strings(),
            'B': instance.canonical_b.to_strings(),
        },
        'P0': instance.P0.to_strings(),
        'Q0': instance.Q0.to_strings(),
        'factors': instance.factors,
    }


# --------------------------------------------------------------------------- #
# Reports                                                                     #
# --------------------------------------------------------------------------- #

def spectrum_to_dict(sp: SpectrumProfile) -> dict:
    return {
        'n': sp.n,
        'l': sp.l,
        'd': sp.d,
        'l_hat': sp.l_hat,
        'multiplicities': list(sp.multiplicities),
        'branches': sp.branches,
        'warnings': list(sp.warnings),
    }


def ranks_to_dict(ranks: RankProfile) -> dict:
    return {'rank_a': ranks.rank_a, 'rank_b': ranks.rank_b}


def classification_to_dict(rdc: RankDegreeClass) -> dict:
    return {
        'rank_a': rdc.rank_a,
        'rank_b': rdc.rank_b,
        'deg_lambda': rdc.deg_lambda,
        'deg_mu': rdc.deg_mu,
        'lambda_equality': rdc.lambda_equality,
        'mu_equality': rdc.mu_equality,
        'satisfied': rdc.satisfied,
        'simple_roots': rdc.simple_roots_flag,
    }


def shift_to_dict(shift: ShiftFunction) -> dict:
    return {
        'strategy': shift.strategy.value,
        'constant': shift.constant,
        'values': shift.values if shift.constant is None else None,
        'root_margin': shift.root_margin,
        'zero_margin': shift.zero_margin,
        'det_margin': shift.det_margin,
    }


def analysis_to_dict(analysis: Analysis) -> dict:
    return {
        'spectrum': spectrum_to_dict(analysis.spectrum),
        'ranks': ranks_to_dict(analysis.ranks),
        'rank_degree': classification_to_dict(analysis.classification),
        'shift': shift_to_dict(analysis.shift),
        'hypotheses_hold': True,
    }


def canonical_to_dict(form: CanonicalForm) -> dict:
    return {
        'structure': {
            'd': form.d,
            'l': form.l,
            'l_hat': form.l_hat,
            'multiplicities': list(form.multiplicities),
        },
        'J': [block for block in form.j_blocks],
        'M': form.m_block,
        'N': form.n_block,
        'left': form.left(),
        'right': form.right(),
        'diagnostics': form.diagnostics,
    }


def pair_to_dict(pair: EquivalencePair) -> dict:
    return {
        'P': pair.P,
        'Q': pair.Q,
        'cond_P': pair.cond_p,
        'cond_Q': pair.cond_q,
        'residual_A': pair.residual_a,
        'residual_B': pair.residual_b,
    }


def continuity_to_dict(diagnostic: ContinuityDiagnostic) -> dict:
    return {
        'name': diagnostic.name,
        'axis': diagnostic.axis,
        'max_jump': diagnostic.max_jump,
        'fd_scale': diagnostic.fd_scale,
        'suspicious': diagnostic.suspicious,
    }


def report_to_dict(report: VerificationReport) -> dict:
    return {
        'kind': report.kind.value,
        'passed': report.passed,
        'max_residual': report.max_residual(),
        'residuals': report.residuals,
        'det_margins': report.det_margins,
        'nilpotency': report.nilpotency,
        'continuity': [continuity_to_dict(c) for c in report.continuity],
        'tolerances': report.tolerances,
        'failures': list(report.failures),
    }


def error_to_dict(error: PencilError) -> dict:
    return {
        'kind': error.kind,
        'exit_code': int(error.exit_code),
        'stage': error.stage.value if error.stage else None,
        'message': error.message,
        'details': error.details,
    }


# --------------------------------------------------------------------------- #
# Writers                                                                     #
# --------------------------------------------------------------------------- #

def _atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8') as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def dump_json(doc: dict) -> str:
    return json.dumps(plain(doc), indent=2, allow_nan=False)


def write_json(path: str | Path, doc: dict) -> None:
    _atomic_write(path, dump_json(doc) + '\n')


def write_yaml(path: str | Path, doc: dict) -> None:
    _atomic_write(path, yaml.safe_dump(plain(doc), sort_keys=False, default_flow_style=None, allow_unicode=True))
