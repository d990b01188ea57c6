import json

from hetflow.cli import main
from hetflow.metrics import parse_report_csv
from hetflow.workflow import load_workflow


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def small_workflow(tmp_path, tasks, run=None):
    doc = {
        "pilot": {"nodes": 2, "cores_per_node": 4},
        "run": run or {"run_id": "cli-test", "log_path": "cli.events.log",
                       "report_path": "cli.report.csv"},
        "tasks": tasks,
    }
    return write_json(tmp_path / "wf.json", doc)


class TestGen:
    def test_gen_writes_a_parseable_file(self, tmp_path):
        out = tmp_path / "exp1.json"
        code = main(["--out-dir", str(tmp_path), "gen", "exp1",
                     "--nodes", "4", "-o", str(out)])
        assert code == 0
        wf = load_workflow(str(out))
        assert wf.pilot.nodes == 4
        assert len(wf.tasks) == 32

    def test_gen_iwp_flags(self, tmp_path):
        out = tmp_path / "iwp.json"
        code = main(["gen", "iwp", "--nodes", "2", "--tasks-per-node", "3",
                     "--gpus-per-task", "1", "-o", str(out)])
        assert code == 0
        wf = load_workflow(str(out))
        assert len(wf.tasks) == 6
        assert all(t.gpus == 1 for t in wf.tasks)

    def test_gen_rejects_impossible_geometry(self, tmp_path):
        code = main(["gen", "exp1", "--nodes", "1",
                     "-o", str(tmp_path / "x.json")])
        assert code == 2


class TestRun:
    def test_successful_run_exits_zero_and_writes_outputs(self, tmp_path, capsys):
        path = small_workflow(tmp_path, [
            {"uid": "a", "kind": "function", "function": "noop",
             "synthetic_duration": 0.1},
            {"uid": "b", "kind": "function", "function": "noop",
             "depends_on": ["a"]},
        ])
        code = main(["--out-dir", str(tmp_path), "run", path])
        assert code == 0
        out = capsys.readouterr().out
        assert "2/2 tasks done" in out
        assert (tmp_path / "cli.events.log").exists()
        rows = parse_report_csv(str(tmp_path / "cli.report.csv"))
        assert rows[0][0].run_id == "cli-test"
        assert rows[0][0].n_tasks == 2

    def test_cycle_exits_two_with_message(self, tmp_path, capsys):
        path = small_workflow(tmp_path, [
            {"uid": "a", "kind": "function", "function": "noop",
             "depends_on": ["b"]},
            {"uid": "b", "kind": "function", "function": "noop",
             "depends_on": ["a"]},
        ])
        code = main(["--out-dir", str(tmp_path), "run", path])
        assert code == 2
        assert "cycle" in capsys.readouterr().err.lower()

    def test_task_failure_exits_one(self, tmp_path, capsys):
        path = small_workflow(tmp_path, [
            {"uid": "bad", "kind": "function", "function": "raise_error"},
        ])
        code = main(["--out-dir", str(tmp_path), "run", path])
        assert code == 1
        assert "raise_error" in capsys.readouterr().err

    def test_unparseable_file_exits_two(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        assert main(["run", str(bad)]) == 2

    def test_unknown_field_exits_two(self, tmp_path):
        path = write_json(tmp_path / "wf.json", {
            "pilot": {"nodes": 1, "cores_per_node": 1, "frobnicate": 1},
            "tasks": [],
        })
        assert main(["run", path]) == 2


class TestReport:
    def test_report_recomputes_from_log(self, tmp_path, capsys):
        path = small_workflow(tmp_path, [
            {"uid": "a", "kind": "function", "function": "noop",
             "synthetic_duration": 0.25},
        ])
        assert main(["--out-dir", str(tmp_path), "run", path]) == 0
        code = main(["--out-dir", str(tmp_path), "report",
                     str(tmp_path / "cli.events.log"),
                     "-o", "recomputed.csv", "--run-id", "again"])
        assert code == 0
        rows = parse_report_csv(str(tmp_path / "recomputed.csv"))
        assert rows[0][0].run_id == "again"
        assert rows[0][0].tpt_s == 0.25

    def test_report_on_garbage_exits_two(self, tmp_path):
        bad = tmp_path / "bad.log"
        bad.write_text("not,a,log\n")
        assert main(["--out-dir", str(tmp_path), "report", str(bad)]) == 2


class TestBench:
    def test_tiny_sweep(self, tmp_path, capsys):
        sweep = write_json(tmp_path / "sweep.json", {
            "experiment": "exp1",
            "scaling": "weak",
            "nodes": [2, 4],
            "repetitions": 2,
            "params": {"tasks_per_node": 2, "duration_s": 0.2},
        })
        code = main(["--out-dir", str(tmp_path), "bench", sweep,
                     "-o", "agg.csv"])
        assert code == 0
        lines = (tmp_path / "agg.csv").read_text().splitlines()
        assert len(lines) == 3  # header + one row per node count
        # Virtual-time repetitions are identical: zero stddev.
        for line in lines[1:]:
            cells = line.split(",")
            assert float(cells[5]) == 0.0  # tpt std

    def test_strong_sweep_tpt_decreases(self, tmp_path):
        sweep = write_json(tmp_path / "strong.json", {
            "experiment": "exp1",
            "scaling": "strong",
            "nodes": [2, 4, 8],
            "repetitions": 1,
            "params": {"total_tasks": 64, "duration_s": 0.2},
        })
        assert main(["--out-dir", str(tmp_path), "bench", sweep,
                     "-o", "strong.csv"]) == 0
        lines = (tmp_path / "strong.csv").read_text().splitlines()[1:]
        tpts = [float(line.split(",")[4]) for line in lines]
        assert tpts == sorted(tpts, reverse=True)
        assert tpts[0] > tpts[-1]

    def test_bad_sweep_spec_exits_two(self, tmp_path):
        sweep = write_json(tmp_path / "sweep.json", {"experiment": "nope"})
        assert main(["bench", sweep]) == 2
