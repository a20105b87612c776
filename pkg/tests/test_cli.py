"""
End-to-end tests for the command line interface
"""
import json
import random

import pytest

from constrained_inference import __version__
from constrained_inference.cli import _run_config, build_parser, main
from constrained_inference.components import ingest
from constrained_inference.config import InferenceServerConfig
from constrained_inference.models import Clustering, CorefGold, CorefInstance, SrlGold
from tests.conftest import make_mentions


def read_records(path):
    """Non-header records of a JSONL file"""
    lines = path.read_text(encoding="utf-8").splitlines()
    return [json.loads(line) for line in lines if json.loads(line).get("kind") != "header"]


@pytest.fixture
def srl_files(temp_dir, toy_srl_instance):
    instances = temp_dir / "srl.jsonl"
    gold = temp_dir / "srl_gold.jsonl"
    ingest.write_jsonl(instances, [ingest.srl_instance_record(toy_srl_instance)])
    ingest.write_jsonl(gold, [ingest.srl_gold_record(
        SrlGold("toy", (("a", ("Elrond",)), ("b", ("Aragorn",)), ("c", ("the sword",))))
    )])
    return instances, gold


@pytest.fixture
def coref_files(temp_dir, three_mention_doc):
    instances = temp_dir / "coref.jsonl"
    gold = temp_dir / "coref_gold.jsonl"
    ingest.write_jsonl(instances, [ingest.coref_instance_record(three_mention_doc)])
    ingest.write_jsonl(gold, [ingest.coref_gold_record(CorefGold("doc3", Clustering((("1", "2"), ("3",)))))])
    return instances, gold


class TestVersion:
    """--version flag"""

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert __version__ in capsys.readouterr().out


class TestInferSrl:
    """infer --task srl"""

    def test_constrained(self, temp_dir, srl_files):
        instances, _ = srl_files
        output = temp_dir / "pred.jsonl"
        assert main(["infer", "--task", "srl", "--input", str(instances), "--output", str(output)]) == 0
        [record] = read_records(output)
        texts = {a["role_id"]: a["text"] for a in record["assignments"]}
        assert texts == {"a": "Elrond", "b": "Aragorn", "c": "the sword"}
        assert record["total_cost"] == 1.0

        header = json.loads(output.read_text(encoding="utf-8").splitlines()[0])
        assert header["kind"] == "header"
        assert header["run_config"]["solver"] == "constrained"

        manifest = json.loads((temp_dir / "pred.jsonl.manifest.json").read_text(encoding="utf-8"))
        assert manifest["srl"]["complete"] == 1
        assert manifest["srl"]["rho"] == 0.0
        assert manifest["srl"]["rho_structure"] == 0.0
        assert manifest["srl"]["comparable_pairs"] == 3
        assert manifest["diagnostics"] == []

    def test_unconstrained_manifest_reports_overlap(self, temp_dir, srl_files):
        instances, _ = srl_files
        output = temp_dir / "loose.jsonl"
        main(["infer", "--task", "srl", "--solver", "unconstrained",
              "--input", str(instances), "--output", str(output)])
        manifest = json.loads((temp_dir / "loose.jsonl.manifest.json").read_text(encoding="utf-8"))
        assert manifest["srl"]["violating_pairs"] == 1
        assert manifest["srl"]["rho_pair"] == pytest.approx(100 / 3)
        assert manifest["srl"]["rho_structure"] == 100.0

    def test_partial_skips_bad_lines(self, temp_dir, srl_files):
        instances, _ = srl_files
        with instances.open("a", encoding="utf-8") as handle:
            handle.write("{oops\n")
        output = temp_dir / "pred.jsonl"
        args = ["infer", "--task", "srl", "--input", str(instances), "--output", str(output)]
        assert main(args) == 2
        assert main([*args, "--partial"]) == 0
        assert len(read_records(output)) == 1
        manifest = json.loads((temp_dir / "pred.jsonl.manifest.json").read_text(encoding="utf-8"))
        [diagnostic] = manifest["diagnostics"]
        assert diagnostic["line_number"] == 2
        assert "Invalid JSON" in diagnostic["message"]
        assert manifest["run_config"]["partial"] is True

    def test_eval_constrained_against_unconstrained(self, temp_dir, srl_files, capsys):
        instances, gold = srl_files
        constrained = temp_dir / "constrained.jsonl"
        unconstrained = temp_dir / "unconstrained.jsonl"
        main(["infer", "--task", "srl", "--input", str(instances), "--output", str(constrained)])
        main(["infer", "--task", "srl", "--solver", "unconstrained",
              "--input", str(instances), "--output", str(unconstrained)])
        capsys.readouterr()

        assert main(["eval", "--task", "srl", "--pred", str(constrained), "--gold", str(gold)]) == 0
        assert "Exact_q" in capsys.readouterr().out
        good = json.loads((temp_dir / "constrained.jsonl.report.json").read_text(encoding="utf-8"))
        assert good["task"] == "srl"
        assert good["exact_s"] == 100.0
        assert good["rho"] == 0.0

        report = temp_dir / "loose.json"
        main(["eval", "--task", "srl", "--pred", str(unconstrained), "--gold", str(gold), "--report", str(report)])
        loose = json.loads(report.read_text(encoding="utf-8"))
        assert loose["exact_q"] == pytest.approx(200 / 3)
        assert loose["rho"] == pytest.approx(100 / 3)

    def test_repeat_runs_are_identical(self, temp_dir, srl_files):
        instances, _ = srl_files
        output = temp_dir / "pred.jsonl"
        args = ["infer", "--task", "srl", "--input", str(instances), "--output", str(output)]
        main(args)
        first = output.read_bytes()
        main(args)
        assert output.read_bytes() == first


class TestInferCoref:
    """infer --task coref"""

    @pytest.mark.parametrize("solver,clusters,antecedents", [
        ("constrained", [["1", "2"], ["3"]], 0),
        ("r2l", [["1", "2", "3"]], 3),
        ("all-yes", [["1", "2", "3"]], 3),
        ("all-no", [["1"], ["2"], ["3"]], 0),
    ])
    def test_solvers(self, temp_dir, coref_files, solver, clusters, antecedents):
        instances, _ = coref_files
        output = temp_dir / f"{solver}.jsonl"
        assert main(["infer", "--task", "coref", "--solver", solver,
                     "--input", str(instances), "--output", str(output)]) == 0
        [record] = read_records(output)
        assert record["clusters"] == clusters
        manifest = json.loads((temp_dir / f"{solver}.jsonl.manifest.json").read_text(encoding="utf-8"))
        assert manifest["coref"]["rho"] == 0.0
        assert manifest["coref"]["violations"] == 0
        assert manifest["coref"]["antecedents"] == antecedents

    def test_unconstrained_has_no_clusters(self, temp_dir, coref_files, capsys):
        instances, gold = coref_files
        output = temp_dir / "pred.jsonl"
        main(["infer", "--task", "coref", "--solver", "unconstrained",
              "--input", str(instances), "--output", str(output)])
        [record] = read_records(output)
        assert record["clusters"] is None
        manifest = json.loads((temp_dir / "pred.jsonl.manifest.json").read_text(encoding="utf-8"))
        assert manifest["coref"]["violations"] == manifest["coref"]["antecedents"] == 1
        assert manifest["coref"]["rho"] == 100.0

        main(["eval", "--task", "coref", "--pred", str(output), "--gold", str(gold)])
        assert "N/A" in capsys.readouterr().out
        report = json.loads((temp_dir / "pred.jsonl.report.json").read_text(encoding="utf-8"))
        assert report["conll"] is None
        assert report["rho"] == 100.0

    def test_constrained_eval(self, temp_dir, coref_files):
        instances, gold = coref_files
        output = temp_dir / "pred.jsonl"
        main(["infer", "--task", "coref", "--input", str(instances), "--output", str(output)])
        main(["eval", "--task", "coref", "--pred", str(output), "--gold", str(gold)])
        report = json.loads((temp_dir / "pred.jsonl.report.json").read_text(encoding="utf-8"))
        assert report["conll"] == 100.0
        assert report["rho"] == 0.0

    def test_parallel_workers_match_serial(self, temp_dir, coref_instance_factory):
        rng = random.Random(3)
        docs = [coref_instance_factory(rng, rng.randint(2, 7), f"d{n}") for n in range(8)]
        instances = temp_dir / "docs.jsonl"
        ingest.write_jsonl(instances, [ingest.coref_instance_record(d) for d in docs])
        serial, parallel = temp_dir / "serial.jsonl", temp_dir / "parallel.jsonl"
        main(["infer", "--task", "coref", "--input", str(instances), "--output", str(serial)])
        main(["infer", "--task", "coref", "--jobs", "2", "--input", str(instances), "--output", str(parallel)])
        assert read_records(serial) == read_records(parallel)


class TestExitCodes:
    """Failures map to documented exit codes"""

    def test_missing_input_file(self, temp_dir):
        code = main(["infer", "--task", "srl", "--input", str(temp_dir / "missing.jsonl"),
                     "--output", str(temp_dir / "out.jsonl")])
        assert code == 3

    def test_malformed_input(self, temp_dir):
        bad = temp_dir / "bad.jsonl"
        bad.write_text("{oops\n", encoding="utf-8")
        assert main(["infer", "--task", "srl", "--input", str(bad), "--output", str(temp_dir / "o.jsonl")]) == 2

    def test_solver_not_available_for_srl(self, temp_dir, srl_files):
        instances, _ = srl_files
        code = main(["infer", "--task", "srl", "--solver", "r2l",
                     "--input", str(instances), "--output", str(temp_dir / "o.jsonl")])
        assert code == 2

    def test_misaligned_eval(self, temp_dir, srl_files):
        _, gold = srl_files
        pred = temp_dir / "pred.jsonl"
        ingest.write_jsonl(pred, [{"schema_version": 1, "kind": "srl_structure", "instance_id": "other",
                                   "assignments": [{"role_id": "a", "text": "x"}]}])
        assert main(["eval", "--task", "srl", "--pred", str(pred), "--gold", str(gold)]) == 2

    @pytest.fixture
    def hard_document(self, temp_dir):
        ids = ["a", "b", "c", "d"]
        doc = CorefInstance.build(
            "big", make_mentions(ids), {(x, y): 1.0 for i, x in enumerate(ids) for y in ids[i + 1:]}
        )
        path = temp_dir / "hard.jsonl"
        ingest.write_jsonl(path, [ingest.coref_instance_record(doc)])
        return path

    def test_node_budget_keeps_incumbent(self, temp_dir, hard_document):
        output = temp_dir / "pred.jsonl"
        code = main(["infer", "--task", "coref", "--node-limit", "1",
                     "--input", str(hard_document), "--output", str(output)])
        assert code == 4
        [record] = read_records(output)
        assert record["optimal"] is False
        manifest = json.loads((temp_dir / "pred.jsonl.manifest.json").read_text(encoding="utf-8"))
        assert manifest["coref"]["non_optimal"] == ["big"]

    def test_fail_on_budget_writes_nothing(self, temp_dir, hard_document):
        output = temp_dir / "pred.jsonl"
        code = main(["infer", "--task", "coref", "--node-limit", "1", "--fail-on-budget",
                     "--input", str(hard_document), "--output", str(output)])
        assert code == 4
        assert not output.exists()


class TestPromptsAndScore:
    """prompts and score with the mock backend"""

    def test_srl_prompts(self, temp_dir, srl_files):
        instances, _ = srl_files
        output = temp_dir / "prompts.jsonl"
        assert main(["prompts", "--task", "srl", "--family", "flan-qa",
                     "--input", str(instances), "--output", str(output)]) == 0
        records = read_records(output)
        assert [r["key"] for r in records] == ["a", "b", "c"]
        assert records[0]["text"] == "Elrond gave Aragorn the sword \n In the above sentence, Who gave something?"

    def test_iterative_prompts_are_staged(self, temp_dir, srl_files):
        instances, _ = srl_files
        output = temp_dir / "prompts.jsonl"
        main(["prompts", "--task", "srl", "--family", "flan-iterative",
              "--input", str(instances), "--output", str(output)])
        assert [r["staged"] for r in read_records(output)] == [False, True, True]

    def test_coref_prompts_with_window(self, temp_dir):
        doc = CorefInstance.build("w", make_mentions(["a", "b", "c"], [0, 1, 5]))
        instances = temp_dir / "docs.jsonl"
        ingest.write_jsonl(instances, [ingest.coref_instance_record(doc)])
        output = temp_dir / "prompts.jsonl"
        main(["prompts", "--task", "coref", "--window", "3",
              "--input", str(instances), "--output", str(output)])
        assert [r["key"] for r in read_records(output)] == ["a|b"]

    def test_family_must_match_task(self, temp_dir, srl_files):
        instances, _ = srl_files
        code = main(["prompts", "--task", "srl", "--family", "coref-flan",
                     "--input", str(instances), "--output", str(temp_dir / "p.jsonl")])
        assert code == 2

    def test_score_then_infer_srl(self, temp_dir, srl_files):
        instances, _ = srl_files
        scored = temp_dir / "scored.jsonl"
        assert main(["score", "--task", "srl", "--backend", "mock", "--seed", "11", "--top-n", "5",
                     "--input", str(instances), "--output", str(scored)]) == 0
        [record] = read_records(scored)
        assert all(1 <= len(role["candidates"]) <= 5 for role in record["roles"])
        output = temp_dir / "pred.jsonl"
        assert main(["infer", "--task", "srl", "--input", str(scored), "--output", str(output)]) == 0

    def test_score_then_infer_coref(self, temp_dir, coref_files):
        instances, _ = coref_files
        scored = temp_dir / "scored.jsonl"
        assert main(["score", "--task", "coref", "--backend", "mock",
                     "--input", str(instances), "--output", str(scored)]) == 0
        [record] = read_records(scored)
        assert len(record["pair_scores"]) == 3
        output = temp_dir / "pred.jsonl"
        assert main(["infer", "--task", "coref", "--input", str(scored), "--output", str(output)]) == 0

    def test_score_with_cache_is_stable(self, temp_dir, srl_files):
        instances, _ = srl_files
        cache = temp_dir / "cache.jsonl"
        output = temp_dir / "scored.jsonl"
        args = ["score", "--task", "srl", "--backend", "mock", "--cache-file", str(cache),
                "--input", str(instances), "--output", str(output)]
        main(args)
        first = output.read_bytes()
        assert cache.exists()
        main(args)
        assert output.read_bytes() == first

    def test_file_backend_without_path(self, temp_dir, srl_files):
        instances, _ = srl_files
        code = main(["score", "--task", "srl", "--backend", "file",
                     "--input", str(instances), "--output", str(temp_dir / "s.jsonl")])
        assert code == 2


class TestRunConfigLayers:
    """Server defaults, then the config file, then flags"""

    def _config(self, argv, server=None):
        args = build_parser().parse_args(argv)
        return _run_config(args, server or InferenceServerConfig())

    def test_server_defaults_apply(self):
        server = InferenceServerConfig(default_k=7, default_top_n=3, node_limit=99, strict=True)
        config = self._config(["infer", "--task", "srl"], server)
        assert (config.k, config.top_n, config.node_limit, config.strict) == (7, 3, 99, True)
        assert config.case_insensitive_fallback is False

    def test_config_file_beats_server_defaults(self, temp_dir):
        path = temp_dir / "run.json"
        path.write_text(json.dumps({"task": "coref", "node_limit": 500}), encoding="utf-8")
        config = self._config(["--config", str(path), "infer"], InferenceServerConfig(node_limit=99))
        assert config.node_limit == 500

    def test_flags_beat_everything(self, temp_dir):
        path = temp_dir / "run.json"
        path.write_text(json.dumps({"task": "srl", "k": 5}), encoding="utf-8")
        config = self._config(["--config", str(path), "infer", "--k", "9"], InferenceServerConfig(default_k=7))
        assert config.k == 9

    def test_unset_flags_keep_defaults(self):
        config = self._config(["infer", "--task", "srl"])
        assert config.k == 20
        assert config.partial is False
