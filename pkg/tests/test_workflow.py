import json

import pytest

from hetflow.core import TaskKind
from hetflow.generators import gen_colmena, gen_exp1, gen_iwp
from hetflow.workflow import (WorkflowParseError, load_workflow,
                              parse_workflow, save_workflow, workflow_to_dict)


def minimal_doc(**overrides):
    doc = {
        "pilot": {"nodes": 2, "cores_per_node": 4},
        "tasks": [{"uid": "a", "kind": "function", "function": "noop"}],
    }
    doc.update(overrides)
    return doc


class TestParsing:
    def test_minimal_document(self):
        wf = parse_workflow(minimal_doc())
        assert wf.pilot.nodes == 2
        assert wf.run.clock == "virtual"
        assert wf.tasks[0].kind is TaskKind.FUNCTION
        assert wf.tasks[0].ranks is None  # filled at translation time

    @pytest.mark.parametrize("mutate", [
        lambda d: d.update(extra=1),
        lambda d: d["pilot"].update(colour="red"),
        lambda d: d.update(run={"tempo": "fast"}),
        lambda d: d["tasks"][0].update(shiny=True),
        lambda d: d.update(defaults={"ranks": 1, "bogus": 2}),
        lambda d: d["pilot"].update(launcher={"kind": "instant", "warp": 9}),
    ])
    def test_unknown_fields_rejected(self, mutate):
        doc = minimal_doc()
        mutate(doc)
        with pytest.raises(WorkflowParseError, match="unknown"):
            parse_workflow(doc)

    def test_missing_required_fields(self):
        with pytest.raises(WorkflowParseError, match="missing"):
            parse_workflow({"tasks": []})
        with pytest.raises(WorkflowParseError, match="missing"):
            parse_workflow({"pilot": {"nodes": 1}, "tasks": []})

    def test_type_errors(self):
        doc = minimal_doc()
        doc["pilot"]["nodes"] = 2.5
        with pytest.raises(WorkflowParseError, match="integer"):
            parse_workflow(doc)
        doc = minimal_doc()
        doc["tasks"][0]["ranks"] = True
        with pytest.raises(WorkflowParseError, match="integer"):
            parse_workflow(doc)

    def test_payload_field_mismatch(self):
        doc = minimal_doc()
        doc["tasks"][0]["program"] = "simulate"
        with pytest.raises(WorkflowParseError):
            parse_workflow(doc)
        doc = minimal_doc()
        doc["tasks"][0] = {"uid": "x", "kind": "executable", "function": "noop"}
        with pytest.raises(WorkflowParseError):
            parse_workflow(doc)

    def test_invalid_pilot_geometry(self):
        doc = minimal_doc()
        doc["pilot"]["nodes"] = 0
        with pytest.raises(WorkflowParseError, match="nodes"):
            parse_workflow(doc)

    def test_bad_clock_value(self):
        doc = minimal_doc(run={"clock": "sundial"})
        with pytest.raises(WorkflowParseError, match="clock"):
            parse_workflow(doc)

    def test_invalid_json_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{nope")
        with pytest.raises(WorkflowParseError, match="not valid JSON"):
            load_workflow(str(path))

    def test_executable_env_pairs(self):
        doc = minimal_doc()
        doc["tasks"] = [{"uid": "x", "kind": "executable", "program": "true",
                         "args": ["-v"], "env": {"B": "2", "A": "1"}}]
        wf = parse_workflow(doc)
        assert wf.tasks[0].payload.env == (("A", "1"), ("B", "2"))
        assert wf.tasks[0].payload.args == ("-v",)


class TestRoundTrip:
    @pytest.mark.parametrize("gen,kwargs", [
        (gen_exp1, {"scaling": "weak"}),
        (gen_colmena, {"triples_per_node": 2}),
        (gen_iwp, {"tasks_per_node": 1}),
    ])
    def test_save_load_identity(self, tmp_path, gen, kwargs):
        wf = gen(2, **kwargs)
        path = tmp_path / "wf.json"
        save_workflow(wf, str(path))
        loaded = load_workflow(str(path))
        assert workflow_to_dict(loaded) == workflow_to_dict(wf)


class TestGenerators:
    def test_seed_determinism_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_workflow(gen_exp1(4, seed=7), str(a))
        save_workflow(gen_exp1(4, seed=7), str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_exp1_geometry_spans_two_nodes(self):
        wf = gen_exp1(4, cores_per_node=8)
        assert all(t.ranks == 16 and t.cores_per_rank == 1 for t in wf.tasks)

    def test_exp1_weak_scaling_keeps_per_node_load(self):
        sizes = {n: len(gen_exp1(n, scaling="weak", tasks_per_node=8).tasks)
                 for n in (2, 4, 8, 16)}
        assert sizes == {2: 16, 4: 32, 8: 64, 16: 128}

    def test_exp1_strong_scaling_keeps_total(self):
        for n in (2, 4, 8, 16):
            assert len(gen_exp1(n, scaling="strong", total_tasks=256).tasks) == 256

    def test_colmena_triples_are_chained(self):
        wf = gen_colmena(1, triples_per_node=1)
        pre, sim, post = wf.tasks
        assert pre.depends_on == ()
        assert sim.depends_on == (pre.uid,)
        assert post.depends_on == (sim.uid,)
        assert sim.cores_per_rank == wf.pilot.cores_per_node  # whole node

    def test_iwp_task_shape(self):
        wf = gen_iwp(2)
        assert wf.pilot.cores_per_node == 16 and wf.pilot.gpus_per_node == 4
        assert all(t.ranks == 8 and t.gpus == 2 for t in wf.tasks)

    def test_two_node_tasks_need_two_nodes(self):
        with pytest.raises(ValueError):
            gen_exp1(1)
