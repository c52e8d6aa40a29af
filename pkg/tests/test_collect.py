import json

from codeloop.collect import (
    FEEDBACK_DELIM,
    CollectionRun,
    export_dataset,
    run_collection,
)
from codeloop.config import validate_config
from codeloop.execution import DirectiveExecutor
from codeloop.exploration import build_initial_instruction
from codeloop.prompts import default_registry, render_instruction
from codeloop.types import TrajectoryRecord

import pytest

from conftest import (
    directive_solution,
    directive_test,
    make_problem,
    mock_backend,
    scenario_record,
    two_fence_response,
    write_scenario,
)


def _solution_only(source):
    return f"```python\n{source}```\nDone.\n"


GOOD = directive_solution(["gt1", "gt2"])


def _two_channel_run(tmp_path):
    records = [
        # round 1, t=0.2: one full pass, one partial pass (enters neither channel)
        scenario_record("p1", 1, 0, two_fence_response(GOOD, [directive_test("t1")])),
        scenario_record("p1", 1, 1, two_fence_response(directive_solution(["gt1"]), [directive_test("t2")])),
        # round 2, t=0.8: duplicate of the round-1 winner, plus a total failure
        scenario_record("p1", 2, 0, _solution_only(GOOD)),
        scenario_record(
            "p1",
            2,
            1,
            two_fence_response(
                directive_solution([]),
                [directive_test("f1", error_class="TypeError", message="boom")],
            ),
        ),
        # reflection attempt 0 for that failure
        scenario_record("p1", 100, 0, _solution_only(directive_solution(["gt1", "gt2"], name="impl2"))),
        scenario_record("p1", 100, 1, _solution_only(directive_solution(["gt1"], name="impl3"))),
    ]
    scenario = write_scenario(tmp_path / "s.jsonl", records)
    cfg = validate_config({"k": 2})
    problem = make_problem(
        pid="p1",
        gt_tests=("# case: gt1\nassert check('gt1')", "# case: gt2\nassert check('gt2')"),
    )
    run = run_collection(
        [problem],
        cfg,
        mock_backend(scenario),
        DirectiveExecutor(),
        source_dataset="unit.jsonl",
        source_hash="deadbeef",
        temperatures=(0.2, 0.8),
    )
    return run, cfg, problem


def test_two_channel_collection(tmp_path):
    run, cfg, problem = _two_channel_run(tmp_path)
    assert run.generated == 6
    assert run.verified == 6
    assert run.kept_temperature == 1
    assert run.kept_reflection == 1
    assert run.skipped_problems == 0
    assert run.partial is False
    assert len(run.records) == 2

    temp_rec, refl_rec = run.records
    base_input = render_instruction(
        build_initial_instruction(problem, default_registry()), default_registry(), cfg.m
    )
    assert temp_rec.kind == "temperature"
    assert temp_rec.temperature == 0.2
    assert temp_rec.input_text == base_input
    assert temp_rec.output_text == GOOD.rstrip("\n")
    assert temp_rec.pass_rate == 1.0

    assert refl_rec.kind == "reflection"
    assert refl_rec.temperature == cfg.t
    assert refl_rec.input_text == f"{base_input}\n\n{FEEDBACK_DELIM}\nboom"
    assert "impl2" in refl_rec.output_text


def test_duplicate_outputs_kept_once(tmp_path):
    run, _, _ = _two_channel_run(tmp_path)
    outputs = [r.output_text for r in run.records]
    assert len(outputs) == len(set(outputs))
    # the round-2 repeat of the round-1 winner was verified but not re-kept
    assert run.verified == 6 and run.kept_temperature == 1


def test_problems_without_ground_truth_are_skipped(tmp_path):
    scenario = write_scenario(tmp_path / "s.jsonl", [])
    run = run_collection(
        [make_problem(pid="naked", gt_tests=())],
        validate_config({"k": 2}),
        mock_backend(scenario),
        DirectiveExecutor(),
    )
    assert run.skipped_problems == 1
    assert run.generated == 0
    assert run.records == []
    assert run.partial is False


def test_backend_exhaustion_marks_partial(tmp_path):
    scenario = write_scenario(
        tmp_path / "s.jsonl",
        [scenario_record("p1", 1, 0, two_fence_response(directive_solution(["g"]), []))],
    )
    problems = [
        make_problem(pid="p1", gt_tests=("# case: g\nassert check('g')",)),
        make_problem(pid="p2", gt_tests=("# case: g\nassert check('g')",)),
    ]
    run = run_collection(
        problems,
        validate_config({"k": 1}),
        mock_backend(scenario),
        DirectiveExecutor(),
        temperatures=(0.2,),
    )
    assert run.partial is True
    # work done before the failure is retained
    assert run.kept_temperature == 1
    assert run.records[0].problem_id == "p1"


def _record(pid, kind, output="out", temp=0.5):
    return TrajectoryRecord(
        problem_id=pid,
        input_text="in",
        output_text=output,
        temperature=temp,
        pass_rate=1.0,
        kind=kind,
    )


def test_export_orders_by_problem_then_kind_then_insertion(tmp_path):
    run = CollectionRun(
        source_dataset="d",
        source_hash="h",
        k=2,
        temperature_grid=(0.2,),
        records=[
            _record("p2", "temperature"),
            _record("p1", "temperature", output="first"),
            _record("p1", "temperature", output="second"),
            _record("p1", "reflection"),
        ],
        kept_temperature=3,
        kept_reflection=1,
    )
    out = tmp_path / "data.jsonl"
    export_dataset(run, out)
    rows = [json.loads(l) for l in out.read_text().splitlines()]
    assert [(r["problem_id"], r["kind"]) for r in rows] == [
        ("p1", "reflection"),
        ("p1", "temperature"),
        ("p1", "temperature"),
        ("p2", "temperature"),
    ]
    assert [r["output_text"] for r in rows[1:3]] == ["first", "second"]


def test_export_is_byte_stable(tmp_path):
    run, _, _ = _two_channel_run(tmp_path)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    export_dataset(run, a)
    export_dataset(run, b)
    assert a.read_bytes() == b.read_bytes()
    assert (
        a.with_name("a.jsonl.manifest.json").read_bytes()
        == b.with_name("b.jsonl.manifest.json").read_bytes()
    )


def test_export_manifest_contents(tmp_path):
    run, _, _ = _two_channel_run(tmp_path)
    out = tmp_path / "data.jsonl"
    manifest_path = export_dataset(run, out)
    assert manifest_path.name == "data.jsonl.manifest.json"
    manifest = json.loads(manifest_path.read_text())
    assert manifest["counts"] == {"total": 2, "temperature": 1, "reflection": 1}
    assert manifest["generated"] == 6
    assert manifest["verified"] == 6
    assert manifest["temperature_grid"] == [0.2, 0.8]
    assert manifest["temperature_histogram"] == {"0.2": 1, "0.5": 1}
    assert manifest["source_dataset"] == "unit.jsonl"
    assert manifest["source_hash"] == "deadbeef"


def test_export_refuses_unverified_records(tmp_path):
    bad = _record("p1", "temperature")
    bad = TrajectoryRecord(
        problem_id=bad.problem_id,
        input_text=bad.input_text,
        output_text=bad.output_text,
        temperature=bad.temperature,
        pass_rate=0.5,
        kind=bad.kind,
    )
    run = CollectionRun(
        source_dataset="d", source_hash="h", k=1, temperature_grid=(0.5,), records=[bad]
    )
    with pytest.raises(ValueError, match="0.5"):
        export_dataset(run, tmp_path / "data.jsonl")
