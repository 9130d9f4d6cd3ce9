"""Instance/solution IO and feasibility validation."""

import json

import numpy as np
import pytest

from posecut.candidates import select_top
from posecut.errors import ParseError, SchemaError, ValidationError
from posecut.model import (
    Candidate,
    PartClass,
    ProblemInstance,
    Solution,
    load_instance,
    load_solution,
    make_solution,
    save_instance,
    save_solution,
    validate_instance,
    validate_solution,
)
from posecut.synth import SynthParams, generate


def _doc(n_classes=2, candidates=(), extra=None):
    names = [f"part{i}" for i in range(n_classes)]
    doc = {
        "classes": [{"id": i, "name": n} for i, n in enumerate(names)],
        "scale": 10.0,
        "candidates": list(candidates),
    }
    if extra:
        doc.update(extra)
    return doc


def _cand(idx, n_classes=2, unary_override=None):
    names = [f"part{i}" for i in range(n_classes)]
    unary = {n: 0.5 for n in names}
    if unary_override:
        unary.update(unary_override)
    return {
        "id": idx,
        "loc": [1.0 * idx, 2.0],
        "unary": unary,
        "refine": {n: [0.0, 0.0] for n in names},
        "pair": {
            f"{a}->{b}": [1.0, -1.0] for a in names for b in names if a != b
        },
    }


class TestLoadInstance:
    def test_empty_candidate_list_14_classes(self):
        doc = _doc(n_classes=14)
        inst = load_instance(json.dumps(doc))
        assert inst.n_classes == 14
        assert len(inst.candidates) == 0

    def test_unary_out_of_bounds_names_candidate(self):
        doc = _doc(candidates=[_cand(0, unary_override={"part0": 1.2})])
        with pytest.raises(ValidationError, match="candidate 0"):
            load_instance(json.dumps(doc))

    def test_malformed_json_is_parse_error(self):
        with pytest.raises(ParseError):
            load_instance(b"{not json")

    def test_missing_field_names_it(self):
        doc = _doc()
        del doc["scale"]
        with pytest.raises(SchemaError, match="scale"):
            load_instance(json.dumps(doc))

    def test_unknown_key_rejected(self):
        doc = _doc(extra={"mystery": 1})
        with pytest.raises(SchemaError, match="mystery"):
            load_instance(json.dumps(doc))

    def test_unknown_candidate_key_rejected(self):
        cand = _cand(0)
        cand["bogus"] = True
        doc = _doc(candidates=[cand])
        with pytest.raises(SchemaError, match="bogus"):
            load_instance(json.dumps(doc))

    def test_sparse_pair_offsets_rejected(self):
        cand = _cand(0)
        del cand["pair"]["part0->part1"]
        doc = _doc(candidates=[cand])
        with pytest.raises(ValidationError, match="not dense"):
            load_instance(json.dumps(doc))

    def test_non_dense_candidate_ids_rejected(self):
        doc = _doc(candidates=[_cand(1)])
        with pytest.raises(ValidationError, match="dense"):
            load_instance(json.dumps(doc))

    def test_restricted_and_fixed_keys(self):
        cand = _cand(0)
        cand["restricted"] = "part1"
        other = _cand(1)
        other["fixed"] = "part0"
        doc = _doc(candidates=[cand, other])
        inst = load_instance(json.dumps(doc))
        assert inst.candidates[0].allowed_classes == frozenset({1})
        assert inst.candidates[1].fixed_class == 0


class TestRoundTrip:
    def test_save_load_byte_identical_on_synthetic_instance(self):
        # oracle: the generator's canonical bytes survive a load/save cycle
        inst = generate(SynthParams(persons=3, clutter_rate=1.0, seed=5))
        inst = select_top(inst, 50)
        assert len(inst.candidates) == 50
        blob = save_instance(inst)
        again = save_instance(load_instance(blob))
        assert blob == again

    def test_ground_truth_survives(self):
        inst = generate(SynthParams(persons=2, seed=3))
        loaded = load_instance(save_instance(inst))
        assert loaded.ground_truth is not None
        assert len(loaded.ground_truth) == 2
        assert loaded.ground_truth[0].joints == inst.ground_truth[0].joints

    def test_solution_round_trip(self):
        inst = generate(SynthParams(persons=1, seed=1))
        n = len(inst.candidates)
        label = {i: (0 if i == 0 else None) for i in range(n)}
        sol = make_solution(label, [[0]], -1.5)
        blob = save_solution(sol, inst)
        back = load_solution(blob, inst)
        assert back == sol
        assert save_solution(back, inst) == blob


class TestValidateSolution:
    def _instance(self, n=4, n_classes=2):
        classes = tuple(PartClass(i, f"part{i}") for i in range(n_classes))
        cands = tuple(
            Candidate(
                id=i,
                location=(float(i), 0.0),
                unary={0: 0.5},
                pair_offset={
                    (a, b): (0.0, 0.0)
                    for a in range(n_classes)
                    for b in range(n_classes)
                    if a != b
                },
            )
            for i in range(n)
        )
        return ProblemInstance(classes=classes, candidates=cands, scale=1.0)

    def test_candidate_in_two_clusters(self):
        inst = self._instance()
        sol = Solution({0: 0, 1: 0, 2: None, 3: None}, ((0, 1), (1,)), 0.0)
        report = validate_solution(inst, sol)
        assert len([v for v in report.violations if "more than one" in v]) == 1

    def test_suppressed_candidate_in_cluster(self):
        inst = self._instance()
        sol = Solution({0: 0, 1: None, 2: None, 3: None}, ((0, 1),), 0.0)
        report = validate_solution(inst, sol)
        assert any("suppressed candidate 1" in v for v in report.violations)

    def test_labeled_but_unclustered(self):
        inst = self._instance()
        sol = Solution({0: 0, 1: 1, 2: None, 3: None}, ((0,),), 0.0)
        report = validate_solution(inst, sol)
        assert any("belongs to no cluster" in v for v in report.violations)

    def test_fixed_class_contradicted(self):
        classes = (PartClass(0, "a"), PartClass(1, "b"))
        cand = Candidate(
            id=0,
            location=(0.0, 0.0),
            unary={0: 0.5},
            pair_offset={(0, 1): (0.0, 0.0), (1, 0): (0.0, 0.0)},
            fixed_class=0,
        )
        inst = ProblemInstance(classes=classes, candidates=(cand,), scale=1.0)
        sol = Solution({0: 1}, ((0,),), 0.0)
        report = validate_solution(inst, sol)
        assert any("contradicting fixed class" in v for v in report.violations)
        sol = Solution({0: None}, (), 0.0)
        report = validate_solution(inst, sol)
        assert any("is suppressed" in v for v in report.violations)

    def test_feasible_solution_is_clean(self):
        inst = self._instance()
        sol = make_solution({0: 0, 1: 1, 2: None, 3: 0}, [[0, 1], [3]], 0.0)
        assert validate_solution(inst, sol).ok


class TestValidateInstance:
    def test_scale_must_be_positive(self):
        inst = generate(SynthParams(persons=1, seed=0))
        bad = ProblemInstance(inst.classes, inst.candidates, scale=0.0,
                              ground_truth=inst.ground_truth)
        with pytest.raises(ValidationError, match="scale"):
            validate_instance(bad)

    def test_generated_instances_validate(self):
        for seed in range(5):
            inst = generate(
                SynthParams(persons=2, jitter_sigma=2.0, clutter_rate=1.0, seed=seed)
            )
            validate_instance(inst)
