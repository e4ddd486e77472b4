"""Scenario parsing, sweep execution, report round-tripping, and the CLI."""
from __future__ import annotations

import json

import pytest

from aggspec.bench import (
    ABLATION_STAGES,
    ParseError,
    ResultRow,
    ResultTable,
    Scenario,
    cell_seed,
    emit_report,
    format_report,
    load_scenario,
    make_requests,
    read_report,
    run_cell,
    run_sweep,
    scenario_from_dict,
)
from aggspec.bench import Workload
from aggspec.cli import _parse_range, main
from aggspec.core import AggSpecError, ConfigInvalid


def minimal_doc(**overrides) -> dict:
    doc = {
        "engine": {"vocab_size": 16},
        "ssms": [{"fidelity": 0.8, "noise_seed": 1}],
        "cost": {"c0": 1.0, "c1": 0.1, "d0": 10.0, "d1": 1.0, "d2": 0.5},
    }
    doc.update(overrides)
    return doc


def small_doc(**overrides) -> dict:
    """A scenario small enough to actually run in a test."""
    doc = minimal_doc(
        engine={
            "vocab_size": 16,
            "b_llm": 2,
            "b_ssm": 2,
            "s_init": 2,
            "s_min": 1,
            "s_max": 4,
            "decision_threshold": 4,
            "seed": 3,
        },
        workload={"num_requests": 4, "max_new_tokens": 16},
    )
    doc.update(overrides)
    return doc


class TestScenarioFromDict:
    def test_minimal_valid_gets_defaults(self):
        scenario = scenario_from_dict(minimal_doc())
        assert scenario.name == "scenario"
        assert scenario.mode == "pipelined"
        assert scenario.sweep is None
        assert scenario.workload == Workload()
        assert scenario.cfg.vocab_size == 16
        assert scenario.cfg.initial_weights == (1.0,)
        assert scenario.llm.order == 2

    def test_weights_default_to_one_per_drafter(self):
        doc = minimal_doc(
            ssms=[{"fidelity": 0.8, "noise_seed": 1}, {"fidelity": 0.5, "noise_seed": 2}]
        )
        assert scenario_from_dict(doc).cfg.initial_weights == (1.0, 1.0)

    @pytest.mark.parametrize(
        "mutate, needle",
        [
            (lambda d: d.update(extra=1), "'extra'"),
            (lambda d: d["engine"].update(gpu_count=4), "'gpu_count'"),
            (lambda d: d["ssms"][0].update(temperature=1.0), "'temperature'"),
            (lambda d: d["cost"].update(d3=1.0), "'d3'"),
        ],
    )
    def test_unknown_fields_named(self, mutate, needle):
        doc = minimal_doc()
        mutate(doc)
        with pytest.raises(ParseError) as exc:
            scenario_from_dict(doc)
        assert needle in str(exc.value)

    @pytest.mark.parametrize("missing", ["engine", "ssms", "cost"])
    def test_missing_required_sections(self, missing):
        doc = minimal_doc()
        del doc[missing]
        with pytest.raises(ParseError):
            scenario_from_dict(doc)

    def test_empty_ssms_rejected(self):
        with pytest.raises(ParseError):
            scenario_from_dict(minimal_doc(ssms=[]))

    def test_engine_bounds_rejected(self):
        doc = minimal_doc(engine={"vocab_size": 16, "s_min": 8, "s_max": 4, "s_init": 6})
        with pytest.raises(ConfigInvalid):
            scenario_from_dict(doc)

    def test_missing_vocab_size(self):
        doc = minimal_doc(engine={"b_llm": 4})
        with pytest.raises(ParseError) as exc:
            scenario_from_dict(doc)
        assert "vocab_size" in str(exc.value)

    def test_bad_mode(self):
        with pytest.raises(ParseError):
            scenario_from_dict(minimal_doc(mode="parallel"))

    def test_sweep_validation(self):
        with pytest.raises(ParseError):
            scenario_from_dict(minimal_doc(sweep={"axis": "temperature", "values": [1]}))
        with pytest.raises(ParseError):
            scenario_from_dict(minimal_doc(sweep={"axis": "s"}))  # values required
        with pytest.raises(ParseError):
            scenario_from_dict(minimal_doc(sweep={"axis": "s", "values": [99]}))
        with pytest.raises(ParseError):
            scenario_from_dict(minimal_doc(sweep={"axis": "batch", "values": [2.5]}))

    def test_ablation_sweep_defaults_to_all_stages(self):
        scenario = scenario_from_dict(minimal_doc(sweep={"axis": "ablation"}))
        assert scenario.sweep.values == ABLATION_STAGES


class TestLoadScenario:
    def test_reads_file_and_names_after_stem(self, tmp_path):
        path = tmp_path / "demo.json"
        path.write_text(json.dumps(minimal_doc()))
        assert load_scenario(path).name == "demo"

    def test_syntax_error_reports_line(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{\n "engine": {,}\n}')
        with pytest.raises(ParseError) as exc:
            load_scenario(path)
        assert "line 2" in str(exc.value)

    def test_non_object_rejected(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[1, 2]")
        with pytest.raises(ParseError):
            load_scenario(path)


class TestSeedsAndRequests:
    def test_cell_seed_deterministic_and_distinct(self):
        assert cell_seed(1, "s", 3) == cell_seed(1, "s", 3)
        seen = {cell_seed(1, "s", v) for v in range(1, 9)}
        seen |= {cell_seed(1, "batch", v) for v in range(1, 9)}
        seen |= {cell_seed(2, "s", v) for v in range(1, 9)}
        assert len(seen) == 24

    def test_make_requests_deterministic(self):
        wl = Workload(num_requests=5, prompt_len_min=2, prompt_len_max=6)
        a = make_requests(wl, 16, 7)
        b = make_requests(wl, 16, 7)
        assert [r.prompt for r in a] == [r.prompt for r in b]
        assert [r.id for r in a] == [f"req-{i:03d}" for i in range(5)]
        for r in a:
            assert 2 <= len(r.prompt) <= 6
            assert all(0 <= t < 16 for t in r.prompt)


class TestRunSweep:
    def test_sweepless_scenario_yields_single_row(self):
        table = run_sweep(scenario_from_dict(small_doc()))
        assert len(table.rows) == 1
        row = table.rows[0]
        assert row.sweep_value == "-"
        assert row.throughput > 0
        assert 0.0 <= row.mean_acceptance <= 1.0

    def test_s_axis_rows_pin_final_s(self):
        doc = small_doc(sweep={"axis": "s", "values": [1, 2, 3]})
        table = run_sweep(scenario_from_dict(doc))
        assert [r.sweep_value for r in table.rows] == ["1", "2", "3"]
        assert [r.final_s for r in table.rows] == [1, 2, 3]

    def test_traces_written(self, tmp_path):
        doc = small_doc(sweep={"axis": "s", "values": [1, 2]})
        scenario = scenario_from_dict(doc, name="tr")
        run_sweep(scenario, out_dir=tmp_path)
        files = sorted(p.name for p in tmp_path.iterdir())
        assert files == ["tr-1.trace.jsonl", "tr-2.trace.jsonl"]
        first = (tmp_path / files[0]).read_text().splitlines()
        assert json.loads(first[0])["kind"] == "draft"

    def test_pipelined_not_slower_than_sequential(self):
        scenario = scenario_from_dict(small_doc())
        seq, _ = run_cell(scenario, mode="sequential", adaptive=False)
        pipe, _ = run_cell(scenario, mode="pipelined", adaptive=False)
        assert pipe.total_time <= seq.total_time + 1e-9
        assert pipe.tokens_emitted == seq.tokens_emitted

    def test_ablation_covers_all_stages(self):
        doc = small_doc(sweep={"axis": "ablation"})
        table = run_sweep(scenario_from_dict(doc))
        assert [r.sweep_value for r in table.rows] == list(ABLATION_STAGES)


class TestReports:
    def table(self) -> ResultTable:
        return ResultTable(
            rows=[
                ResultRow("demo", "3", 123.456789, 8.1, 0.625, 3, 0.875),
                ResultRow("demo", "4", 150.0, 7.0, 0.5, 4, 0.9),
            ]
        )

    def test_csv_single_row(self):
        table = ResultTable(rows=self.table().rows[:1])
        lines = format_report(table, "csv").splitlines()
        assert len(lines) == 2
        assert lines[0].startswith("scenario_id,sweep_value,")
        assert lines[1].startswith("demo,3,")

    def test_text_alignment(self):
        text = format_report(self.table(), "text")
        lines = text.splitlines()
        assert len(lines) == 3
        assert lines[0].index("throughput") == lines[1].index("123.46")

    def test_empty_table_rejected(self):
        with pytest.raises(ValueError):
            format_report(ResultTable(), "csv")

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            format_report(self.table(), "yaml")

    def test_round_trip(self, tmp_path):
        table = self.table()
        path = emit_report(table, "csv", tmp_path / "r.csv")
        assert read_report(path) == table

    def test_read_rejects_foreign_header(self, tmp_path):
        path = tmp_path / "other.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ParseError):
            read_report(path)


class TestCli:
    def write_scenario(self, tmp_path, doc=None):
        path = tmp_path / "scn.json"
        path.write_text(json.dumps(doc or small_doc()))
        return path

    def test_run_writes_results_csv(self, tmp_path, capsys):
        path = self.write_scenario(tmp_path)
        out = tmp_path / "out"
        code = main(["run", "--scenario", str(path), "--out", str(out)])
        assert code == 0
        table = read_report(out / "results.csv")
        assert len(table.rows) == 1
        assert "wrote" in capsys.readouterr().out

    def test_sweep_s_range(self, tmp_path, capsys):
        path = self.write_scenario(tmp_path)
        out = tmp_path / "out"
        code = main(
            ["sweep", "--scenario", str(path), "--sweep-s", "1..3", "--out", str(out)]
        )
        assert code == 0
        table = read_report(out / "results.csv")
        assert [r.sweep_value for r in table.rows] == ["1", "2", "3"]

    def test_bad_scenario_is_an_error_exit(self, tmp_path, capsys):
        path = tmp_path / "broken.json"
        path.write_text("{")
        code = main(["run", "--scenario", str(path), "--out", str(tmp_path / "o")])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_parse_range(self):
        assert _parse_range("2..5") == (2, 3, 4, 5)
        with pytest.raises(AggSpecError):
            _parse_range("5")
        with pytest.raises(AggSpecError):
            _parse_range("4..2")
        with pytest.raises(AggSpecError):
            _parse_range("0..3")
