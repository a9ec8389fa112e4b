"""
Command line front end: analyze, canonize, verify and gen.

Reports go to stdout as JSON (and to --out when given); logs go to stderr.
Exit codes: 0 pass, 1 input error, 2 hypothesis violation, 3 conditioning
failure, 4 verification failure.
"""
from __future__ import annotations
import argparse
import sys
from pathlib import Path
from typing import Any

import numpy as np
from loguru import logger

from pencil_canon import __version__
from pencil_canon.canonizer import canonize
from pencil_canon.enums import ExitCode
from pencil_canon.errors import PencilError, PencilFileError
from pencil_canon.exprlang import eval_grid, parse
from pencil_canon.generator import generate
from pencil_canon.helpers.deserializers import load_document, load_pencil, load_structure, load_transforms
from pencil_canon.helpers.serializers import (
    SCHEMA_VERSION,
    analysis_to_dict,
    canonical_to_dict,
    dump_json,
    error_to_dict,
    grid_to_dict,
    pair_to_dict,
    pencil_to_dict,
    report_to_dict,
    structure_to_dict,
    truth_to_dict,
    write_json,
    write_yaml,
)
from pencil_canon.models import CanonicalForm
from pencil_canon.pencilcore import Pencil, analyze
from pencil_canon.settings import Settings, get_settings
from pencil_canon.verifier import verify_equivalence

TOOL = "pencil-canon"


class CommandResult:
    """Exit code, status and payload of one command"""

    def __init__(self, exit_code: ExitCode, payload: dict[str, Any], settings: Settings):
        self.exit_code = exit_code
        self.payload = payload
        self.settings = settings

    @property
    def status(self) -> str:
        if self.exit_code is ExitCode.PASS:
            return "pass"
        if self.exit_code is ExitCode.VERIFICATION_FAILURE:
            return "fail"
        return "error"


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    return {
        "grid_points": args.grid,
        "rank_rtol": args.tol_rank,
        "canon_rtol": args.tol_canon,
        "workers": args.workers,
        "log_level": args.log_level,
    }


def _settings_for(pencil: Pencil | None, args: argparse.Namespace) -> Settings:
    """Environment, then per-file tolerances, then flags; kept on `args` for error reports"""
    settings = get_settings()
    if pencil is not None:
        settings = settings.with_overrides(pencil.tolerances)
    args.settings = settings.with_overrides(_overrides(args))
    return args.settings


def configure_logging(level: str) -> None:
    logger.remove()
    logger.add(sys.stderr, level=level.upper(), format="{time:HH:mm:ss} | {level: <7} | {name}:{function} - {message}")


# --------------------------------------------------------------------------- #
# Commands                                                                    #
# --------------------------------------------------------------------------- #

def cmd_analyze(args: argparse.Namespace) -> CommandResult:
    pencil = load_pencil(args.file, grid=args.grid)
    settings = _settings_for(pencil, args)
    payload: dict[str, Any] = {"pencil": pencil.name, "grid": list(pencil.grid.counts)}
    try:
        analysis = analyze(pencil, settings, forced_shift=args.shift)
    except PencilError as e:
        if e.exit_code is not ExitCode.HYPOTHESIS_VIOLATION:
            raise
        logger.warning("Hypothesis violated: {}", e)
        payload["hypotheses_hold"] = False
        payload["failed_hypothesis"] = e.kind
        payload["error"] = error_to_dict(e)
        return CommandResult(ExitCode.HYPOTHESIS_VIOLATION, payload, settings)
    payload.update(analysis_to_dict(analysis))
    if not analysis.classification.satisfied:
        logger.info("Rank-degree criterion fails (rank A={}, rank B={}, deg={}, deg_mu={})",
                    analysis.classification.rank_a, analysis.classification.rank_b,
                    analysis.classification.deg_lambda, analysis.classification.deg_mu)
    return CommandResult(ExitCode.PASS, payload, settings)


def _truth_path(args: argparse.Namespace) -> Path | None:
    if args.truth:
        return Path(args.truth)
    sibling = Path(args.file).with_suffix(".truth.json")
    return sibling if sibling.exists() else None


def structure_match(truth: dict, form: CanonicalForm, pencil: Pencil) -> dict[str, Any]:
    """Compare a canonical form with a generator sidecar"""
    expected = truth.get("structure", {})
    found = {"d": form.d, "l": form.l, "l_hat": form.l_hat, "multiplicities": sorted(form.multiplicities)}
    matches = all(expected.get(k) == v for k, v in found.items())
    out: dict[str, Any] = {"expected": expected, "found": found, "matches": matches}
    branches = truth.get("spec", {}).get("branches", [])
    refined = form.diagnostics.get("refined_branches")
    if matches and branches and refined is not None:
        worst = 0.0
        for text in branches:
            values = eval_grid(parse(text, pencil.m), pencil.grid.points)
            worst = max(worst, float(np.min(np.max(np.abs(refined - values[:, None]), axis=0))))
        out["max_branch_error"] = worst
    return out


def cmd_canonize(args: argparse.Namespace) -> CommandResult:
    pencil = load_pencil(args.file, grid=args.grid)
    settings = _settings_for(pencil, args)
    analysis = analyze(pencil, settings, forced_shift=args.shift)
    form, pair = canonize(pencil, analysis.spectrum, analysis.shift, settings, analysis.classification)
    report = verify_equivalence(pencil, pair, form, settings)
    payload: dict[str, Any] = {
        "pencil": pencil.name,
        "grid": grid_to_dict(pencil.grid),
        "analysis": analysis_to_dict(analysis),
        "canonical": canonical_to_dict(form),
        "transforms": pair_to_dict(pair),
        "verification": report_to_dict(report),
    }
    passed = report.passed
    truth_path = _truth_path(args)
    if truth_path is not None:
        match = structure_match(load_document(truth_path), form, pencil)
        payload["structure_match"] = match
        passed = passed and match["matches"]
        logger.info("Structure {} the generator ground truth", "matches" if match["matches"] else "differs from")
    return CommandResult(ExitCode.PASS if passed else ExitCode.VERIFICATION_FAILURE, payload, settings)


def cmd_verify(args: argparse.Namespace) -> CommandResult:
    pencil = load_pencil(args.file, grid=args.grid)
    settings = _settings_for(pencil, args)
    transforms, target = load_transforms(args.transforms, pencil.m)
    report = verify_equivalence(pencil, transforms, target, settings)
    payload = {"pencil": pencil.name, "grid": list(pencil.grid.counts), "verification": report_to_dict(report)}
    return CommandResult(ExitCode.PASS if report.passed else ExitCode.VERIFICATION_FAILURE, payload, settings)


def cmd_gen(args: argparse.Namespace) -> CommandResult:
    settings = _settings_for(None, args)
    spec = load_structure(args.spec, seed=args.seed)
    if args.out is None:
        raise PencilFileError("gen needs --out for the generated pencil file")
    instance = generate(spec, settings, name=Path(args.out).stem)
    out = Path(args.out)
    sidecar = out.with_suffix(".truth.json")
    write_yaml(out, pencil_to_dict(instance.pencil))
    write_json(sidecar, truth_to_dict(instance))
    logger.info("Wrote {} and {}", out, sidecar)
    payload = {"pencil_file": str(out), "truth_file": str(sidecar), "spec": structure_to_dict(spec)}
    return CommandResult(ExitCode.PASS, payload, settings)


COMMANDS = {
    "analyze": cmd_analyze,
    "canonize": cmd_canonize,
    "verify": cmd_verify,
    "gen": cmd_gen,
}


# --------------------------------------------------------------------------- #
# Entry point                                                                 #
# --------------------------------------------------------------------------- #

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--grid", type=int, default=None, help="Sample points per axis (default 9)")
    common.add_argument("--tol-rank", type=float, default=None, help="Relative rank tolerance")
    common.add_argument("--tol-canon", type=float, default=None, help="Relative canonical residual tolerance")
    common.add_argument("--shift", type=float, default=None, help="Force a constant shift c")
    common.add_argument("--workers", type=int, default=None, help="Threads for per-point work")
    common.add_argument("--log-level", default=None, help="Log level on stderr")
    common.add_argument("--out", default=None, help="Output path")

    parser = argparse.ArgumentParser(prog=TOOL, description="Canonical forms of parameter-dependent matrix pencils")
    parser.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common], help="Check the canonization hypotheses")
    p.add_argument("file")
    p = sub.add_parser("canonize", parents=[common], help="Compute P, Q and the canonical blocks")
    p.add_argument("file")
    p.add_argument("--truth", default=None, help="Generator sidecar to compare the structure with")
    p = sub.add_parser("verify", parents=[common], help="Check given transforms against the pencil")
    p.add_argument("file")
    p.add_argument("transforms")
    p = sub.add_parser("gen", parents=[common], help="Generate a pencil with a prescribed structure")
    p.add_argument("spec")
    p.add_argument("--seed", type=int, default=None, help="Override the spec's seed")
    return parser


def report(command: str, exit_code: ExitCode, status: str, settings: Settings, payload: dict) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": TOOL,
        "version": __version__,
        "command": command,
        "status": status,
        "exit_code": int(exit_code),
        "tolerances": settings.echo(),
        "payload": payload,
    }


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = get_settings().with_overrides(_overrides(args))
    except PencilError as e:
        settings = get_settings()
        doc = report(args.command, e.exit_code, "error", settings, {"error": error_to_dict(e)})
        print(dump_json(doc))
        return int(e.exit_code)
    configure_logging(settings.log_level)

    try:
        result = COMMANDS[args.command](args)
        doc = report(args.command, result.exit_code, result.status, result.settings, result.payload)
    except PencilError as e:
        logger.error("{}", e)
        settings = getattr(args, "settings", settings)
        doc = report(args.command, e.exit_code, "error", settings, {"error": error_to_dict(e)})
    if args.out and args.command != "gen":
        write_json(args.out, doc)
    print(dump_json(doc))
    return doc["exit_code"]
