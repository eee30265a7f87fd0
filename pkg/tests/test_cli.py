import shutil
from pathlib import Path

import pytest
import yaml

from posbias.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from posbias.config import parse_config
from posbias.io import read_csv, read_json, write_log_jsonl
from posbias.report import REPORT_COLUMNS
from tests.helpers import examination_log

MINIMAL = Path(__file__).resolve().parents[1] / "configs" / "minimal.yaml"


def manifest_paths(files):
    if isinstance(files, str):
        yield files
    elif isinstance(files, dict):
        for v in files.values():
            yield from manifest_paths(v)
    else:
        for v in files:
            yield from manifest_paths(v)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "mini"
    assert main(["simulate", "--config", str(MINIMAL), "--out", str(out)]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def exam_logs(tmp_path_factory):
    from posbias.domain import generate_world

    world = generate_world(50, 4, {"family": "exponential_tail", "scale": 0.2}, seed=1)
    base = tmp_path_factory.mktemp("logs")
    paths = {}
    for beta in (0.0, 1.0):
        paths[beta] = base / f"beta_{beta}.jsonl"
        write_log_jsonl(examination_log(world, beta, 50_000), paths[beta])
    return paths


class TestSimulate:
    def test_outputs(self, run_dir):
        names = {p.name for p in run_dir.rglob("*")}
        assert {"manifest.json", "metrics.csv", "fits.csv", "iteration_000.jsonl"} <= names
        manifest = read_json(run_dir / "manifest.json")
        assert manifest["schema_version"] == 1 and manifest["status"] == "ok"
        assert read_csv(run_dir / "metrics.csv")[0].keys() == {"metric", "parameter", "variant", "iteration", "value"}

    def test_manifest_indexes_every_file(self, run_dir):
        manifest = read_json(run_dir / "manifest.json")
        listed = set(manifest_paths(manifest["files"]))
        on_disk = {
            str(p.relative_to(run_dir)) for p in run_dir.rglob("*")
            if p.is_file() and p.name not in ("manifest.json", "report.csv")
        }
        assert listed == on_disk
        assert all(not Path(p).is_absolute() for p in listed)

    def test_rerun_is_byte_identical(self, run_dir, tmp_path):
        out = tmp_path / "again"
        assert main(["simulate", "--config", str(MINIMAL), "--out", str(out), "--threads", "3"]) == EXIT_OK
        for name in ("metrics.csv", "fits.csv", "naive/iteration_002.jsonl", "ipw/policy_002.json"):
            assert (out / name).read_bytes() == (run_dir / name).read_bytes(), name

    def test_echoed_config_reproduces_run(self, run_dir, tmp_path):
        echoed = read_json(run_dir / "manifest.json")["config"]
        parse_config(echoed)
        path = tmp_path / "echo.yaml"
        path.write_text(yaml.safe_dump(echoed))
        out = tmp_path / "echo"
        assert main(["simulate", "--config", str(path), "--out", str(out)]) == EXIT_OK
        assert (out / "metrics.csv").read_bytes() == (run_dir / "metrics.csv").read_bytes()

    def test_seed_override_and_variant_filter(self, run_dir, tmp_path):
        out = tmp_path / "seeded"
        argv = ["simulate", "--config", str(MINIMAL), "--out", str(out), "--seed", "8", "--variant", "ipw"]
        assert main(argv) == EXIT_OK
        manifest = read_json(out / "manifest.json")
        assert list(manifest["variants"]) == ["ipw"] and manifest["config"]["seed"] == 8
        assert (out / "metrics.csv").read_bytes() != (run_dir / "metrics.csv").read_bytes()

    def test_slate_longer_than_catalog_exits_2(self, tmp_path, capsys):
        text = MINIMAL.read_text().replace("n_items: 40", "n_items: 3")
        path = tmp_path / "bad.yaml"
        path.write_text(text)
        assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
        err = capsys.readouterr().err
        assert "slate_length 4 exceeds n_items 3" in err and "bad.yaml:" in err
        assert not (tmp_path / "x").exists()

    def test_unknown_variant_exits_2(self, tmp_path):
        argv = ["simulate", "--config", str(MINIMAL), "--out", str(tmp_path / "x"), "--variant", "zzz"]
        assert main(argv) == EXIT_CONFIG

    def test_training_failure_exits_1_and_flags_manifest(self, tmp_path):
        text = MINIMAL.read_text().replace(
            "- {name: ipw, policy: ipw_ctr}",
            "- {name: pa, policy: position_aware, hyperparams: {learning_rate: 1.0e+308}}",
        )
        path = tmp_path / "diverge.yaml"
        path.write_text(text)
        out = tmp_path / "run"
        assert main(["simulate", "--config", str(path), "--out", str(out)]) == EXIT_RUNTIME
        manifest = read_json(out / "manifest.json")
        assert manifest["status"] == "failed"
        assert manifest["variants"]["pa"]["failed"] and not manifest["variants"]["naive"]["failed"]
        assert (out / "pa" / "iteration_000.jsonl").exists()


class TestEstimatePropensity:
    def test_beta_one(self, exam_logs, tmp_path, capsys):
        out = tmp_path / "fit.json"
        assert main(["estimate-propensity", "--log", str(exam_logs[1.0]), "--out", str(out)]) == EXIT_OK
        fit = read_json(out)
        assert 0.9 <= fit["beta_hat"] <= 1.1 and fit["converged"]
        assert "beta_hat=" in capsys.readouterr().out

    def test_beta_zero(self, exam_logs, tmp_path):
        out = tmp_path / "fit.json"
        assert main(["estimate-propensity", "--log", str(exam_logs[0.0]), "--out", str(out)]) == EXIT_OK
        assert abs(read_json(out)["beta_hat"]) <= 0.05

    def test_malformed_line(self, exam_logs, tmp_path, capsys):
        lines = exam_logs[1.0].read_text().splitlines()[:5]
        lines[3] = lines[3][:-4]
        path = tmp_path / "broken.jsonl"
        path.write_text("\n".join(lines) + "\n")
        assert main(["estimate-propensity", "--log", str(path)]) == EXIT_RUNTIME
        assert "line 4:" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["estimate-propensity", "--log", str(tmp_path / "none.jsonl")]) == EXIT_RUNTIME


class TestFitSkewAndEvaluate:
    def test_fit_skew_with_reference(self, run_dir, tmp_path):
        out = tmp_path / "skew"
        argv = ["fit-skew", "--log", str(run_dir / "naive" / "iteration_002.jsonl"),
                "--reference", str(run_dir / "naive" / "iteration_000.jsonl"),
                "--n-items", "40", "--out", str(out)]
        assert main(argv) == EXIT_OK
        fit = read_json(out / "fit.json")
        fits = read_csv(run_dir / "fits.csv")
        row = next(r for r in fits if r["variant"] == "naive" and r["iteration"] == "2")
        assert fit["lambda_hat"] == float(row["lambda_hat"])
        assert fit["skew_change"] == pytest.approx(float(row["skew_change"]))
        assert (out / "histogram.csv").read_bytes() == (run_dir / "naive" / "histogram_002.csv").read_bytes()

    def test_fit_skew_catalog_too_small(self, run_dir, tmp_path):
        argv = ["fit-skew", "--log", str(run_dir / "naive" / "iteration_001.jsonl"), "--n-items", "2",
                "--out", str(tmp_path / "s")]
        assert main(argv) == EXIT_CONFIG

    def test_evaluate(self, run_dir, tmp_path):
        out = tmp_path / "eval.csv"
        argv = ["evaluate", "--policy", str(run_dir / "naive" / "policy_001.json"),
                "--log", str(run_dir / "naive" / "iteration_000.jsonl"), "--k", "2", "--k", "4",
                "--propensity", str(run_dir / "propensity.json"), "--out", str(out)]
        assert main(argv) == EXIT_OK
        rows = read_csv(out)
        assert {(r["metric"], r["parameter"]) for r in rows} == {
            (m, k) for m in ("recall", "ips_ndcg", "arp") for k in ("2", "4")}
        recall4 = next(r for r in rows if r["metric"] == "recall" and r["parameter"] == "4")
        assert float(recall4["value"]) == 1.0

    def test_evaluate_k_too_large(self, run_dir, tmp_path):
        argv = ["evaluate", "--policy", str(run_dir / "naive" / "policy_001.json"),
                "--log", str(run_dir / "naive" / "iteration_000.jsonl"), "--k", "9",
                "--out", str(tmp_path / "e.csv")]
        assert main(argv) == EXIT_CONFIG


class TestReport:
    def report(self, run_dir, tmp_path, baseline):
        out = tmp_path / f"report_{baseline}.csv"
        assert main(["report", str(run_dir), "--baseline", baseline, "--out", str(out)]) == EXIT_OK
        return out

    def test_one_delta_column(self, run_dir, tmp_path):
        out = self.report(run_dir, tmp_path, "naive")
        header = out.read_text().splitlines()[0].split(",")
        assert tuple(header) == REPORT_COLUMNS
        assert sum("delta" in h for h in header) == 1
        rows = read_csv(out)
        assert {r["metric"] for r in rows} >= {"recall", "ips_ndcg", "arp", "ecs", "lambda_hat", "skew_change"}

    def test_baseline_against_itself(self, run_dir, tmp_path):
        rows = read_csv(self.report(run_dir, tmp_path, "ipw"))
        own = [r for r in rows if r["variant"] == "ipw" and r["delta_vs_baseline"] != "nan"]
        assert own and all(float(r["delta_vs_baseline"]) == 0.0 for r in own)

    def test_missing_variant_exits_2(self, run_dir, tmp_path, capsys):
        assert main(["report", str(run_dir), "--baseline", "nope"]) == EXIT_CONFIG
        assert "nope" in capsys.readouterr().err

    def test_variant_alias(self, run_dir, tmp_path):
        copy = tmp_path / "copy"
        shutil.copytree(run_dir, copy)
        assert main(["report", str(copy), "--variant", "naive"]) == EXIT_OK
        assert (copy / "report.csv").exists()

    def test_incomplete_run_dir(self, tmp_path):
        assert main(["report", str(tmp_path), "--baseline", "naive"]) == EXIT_RUNTIME
