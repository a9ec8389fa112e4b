"""
Tests for the file helpers: let definitions, pencil and structure documents,
transforms files and the JSON/YAML writers.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from pencil_canon.enums import ExitCode, PipelineStage, WitnessMode
from pencil_canon.errors import DimensionMismatchError, PencilFileError, RankChangeError
from pencil_canon.helpers.deserializers import (
    apply_lets,
    dict_to_pencil,
    dict_to_transforms,
    expand_lets,
    load_document,
    load_pencil,
    load_structure,
)
from pencil_canon.helpers.serializers import (
    dump_json,
    error_to_dict,
    pencil_to_dict,
    plain,
    write_json,
    write_yaml,
)
from pencil_canon.verifier import ClosedFormTarget, ClosedFormTransforms

FIXTURES = Path(__file__).resolve().parents[2] / "pencils"


@pytest.fixture
def minimal_doc():
    return {
        "n": 2,
        "m": 1,
        "domain": [[0.0, 1.0]],
        "A": [["x1", "0"], ["0", "1"]],
        "B": [["1", "0"], ["0", "0"]],
    }


# ---------------------------------------------------------------------------
# let definitions
# ---------------------------------------------------------------------------

class TestLets:
    def test_definitions_expand_in_order(self):
        lets = expand_lets({"g": "x1*x2", "s": "x1 + x2", "v": "g*s"})
        assert lets["v"] == "(x1*x2)*(x1 + x2)"

    def test_substitution_is_parenthesised(self):
        assert apply_lets("2*s - s^2", {"s": "x1 + x2"}) == "2*(x1 + x2) - (x1 + x2)^2"

    def test_only_whole_identifiers_are_replaced(self):
        assert apply_lets("sin(x1) + s1 + s", {"s": "x2"}) == "sin(x1) + s1 + (x2)"

    def test_number_exponents_are_left_alone(self):
        assert apply_lets("1e2*e", {"e": "x1"}) == "1e2*(x1)"

    @pytest.mark.parametrize("name", ["x1", "x12", "sin", "sqrt"])
    def test_shadowing_is_rejected(self, name):
        with pytest.raises(PencilFileError):
            expand_lets({name: "1"})

    def test_invalid_name(self):
        with pytest.raises(PencilFileError):
            expand_lets({"2a": "1"})


# ---------------------------------------------------------------------------
# Pencil documents
# ---------------------------------------------------------------------------

class TestPencilDocuments:
    def test_load_fixture(self):
        p = load_pencil(FIXTURES / "ex2.yaml")
        assert p.name == "ex2"
        assert (p.n, p.m) == (3, 2)
        assert p.grid.counts == (9, 9)
        assert p.A.at((1.0, 2.0))[0, 2] == pytest.approx(6.0)

    def test_grid_argument_wins(self):
        assert load_pencil(FIXTURES / "ex1.yaml", grid=5).grid.counts == (5, 5)

    def test_name_defaults_to_stem(self, tmp_path, minimal_doc):
        path = tmp_path / "tiny.yaml"
        write_yaml(path, minimal_doc)
        assert load_pencil(path).name == "tiny"

    def test_grid_from_tolerances(self, minimal_doc):
        minimal_doc["tolerances"] = {"grid_points": 7, "canon_rtol": 1e-6}
        p = dict_to_pencil(minimal_doc)
        assert p.grid.counts == (7,)
        assert p.tolerances["canon_rtol"] == 1e-6

    @pytest.mark.parametrize("key", ["n", "m", "domain", "A", "B"])
    def test_missing_keys(self, minimal_doc, key):
        del minimal_doc[key]
        with pytest.raises(PencilFileError):
            dict_to_pencil(minimal_doc)

    def test_declared_order_is_checked(self, minimal_doc):
        minimal_doc["n"] = 3
        with pytest.raises(DimensionMismatchError):
            dict_to_pencil(minimal_doc)

    def test_rows_must_be_lists(self, minimal_doc):
        minimal_doc["A"] = "x1"
        with pytest.raises(PencilFileError):
            dict_to_pencil(minimal_doc)

    def test_grid_too_coarse(self, minimal_doc):
        minimal_doc["grid"] = 2
        with pytest.raises(PencilFileError):
            dict_to_pencil(minimal_doc)

    def test_non_mapping_document(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(PencilFileError):
            load_document(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(PencilFileError):
            load_document(tmp_path / "absent.yaml")

    def test_written_pencil_reloads(self, tmp_path):
        p = load_pencil(FIXTURES / "ex2.yaml")
        path = tmp_path / "copy.yaml"
        write_yaml(path, pencil_to_dict(p))
        again = load_pencil(path)
        np.testing.assert_allclose(again.samples[0], p.samples[0], rtol=1e-15)
        np.testing.assert_allclose(again.samples[1], p.samples[1], rtol=1e-15)


def test_load_structure():
    spec = load_structure(FIXTURES / "gen_ex2_shape.yaml")
    assert (spec.n, spec.d, spec.l, spec.l_hat) == (3, 0, 1, 2)
    assert spec.multiplicities == ()
    assert spec.n_blocks == (2,)
    assert spec.witnesses is WitnessMode.RANDOM
    assert load_structure(FIXTURES / "gen_ex2_shape.yaml", seed=99).seed == 99


# ---------------------------------------------------------------------------
# Transforms documents
# ---------------------------------------------------------------------------

class TestTransforms:
    def test_closed_form_with_target(self):
        transforms, target = dict_to_transforms(
            {"P": [["1"]], "Q": [["x1"]], "target_A": [["0"]], "target_B": [["1"]]}, 1
        )
        assert isinstance(transforms, ClosedFormTransforms)
        assert isinstance(target, ClosedFormTarget)

    def test_closed_form_without_target(self):
        _, target = dict_to_transforms({"P": [["1"]], "Q": [["1"]]}, 1)
        assert target is None

    def test_half_a_target_is_rejected(self):
        with pytest.raises(PencilFileError):
            dict_to_transforms({"P": [["1"]], "Q": [["1"]], "target_A": [["1"]]}, 1)

    def test_needs_p_and_q(self):
        with pytest.raises(PencilFileError):
            dict_to_transforms({"P": [["1"]]}, 1)

    def test_result_document(self):
        eye = np.eye(2)[None].tolist()
        doc = {"payload": {"transforms": {"P": eye, "Q": eye}, "canonical": {"left": eye, "right": eye}}}
        (P, Q), (left, right) = dict_to_transforms(doc, 1)
        assert P.shape == (1, 2, 2)
        np.testing.assert_array_equal(right, np.eye(2)[None])

    def test_incomplete_result_document(self):
        with pytest.raises(PencilFileError):
            dict_to_transforms({"payload": {"transforms": {}}}, 1)


# ---------------------------------------------------------------------------
# Serializers
# ---------------------------------------------------------------------------

class TestPlain:
    def test_numpy_and_enums(self):
        out = plain({"a": np.arange(3), "b": np.float64(0.5), "c": np.bool_(True), "d": ExitCode.PASS,
                     "e": WitnessMode.IDENTITY, "f": (np.int64(2),)})
        assert out == {"a": [0, 1, 2], "b": 0.5, "c": True, "d": 0, "e": "identity", "f": [2]}
        assert type(out["c"]) is bool

    def test_non_finite_values_become_null(self):
        assert plain([np.inf, np.nan, 1.0]) == [None, None, 1.0]
        assert json.loads(dump_json({"x": np.array([np.inf])})) == {"x": [None]}


def test_error_to_dict():
    error = RankChangeError("rank drops", matrix="A").tagged(PipelineStage.RANKS)
    doc = error_to_dict(error)
    assert doc == {
        "kind": "RankChange",
        "exit_code": 2,
        "stage": "ranks",
        "message": "rank drops",
        "details": {"matrix": "A"},
    }


def test_write_json_is_atomic_and_complete(tmp_path):
    path = tmp_path / "out" / "report.json"
    write_json(path, {"value": np.float64(1.5)})
    assert json.loads(path.read_text()) == {"value": 1.5}
    assert [p.name for p in path.parent.iterdir()] == ["report.json"]
