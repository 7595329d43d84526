import json

import pytest
from click.testing import CliRunner
from starlette.testclient import TestClient

from hybridseg.cli import main as cli_main
from hybridseg.service.app import create_app

MICRO_OVERRIDES = {
    "num_classes": "2", "base_channels": "4", "levels": "3",
    "embed_dim": "4", "heads": "1,1", "num_stages": "2", "window": "2,2,2",
    "synth_shape": "8,8,8", "synth_count": "6",
    "max_steps": "3", "eval_every": "3", "batch_size": "2",
}


@pytest.fixture()
def client():
    with TestClient(create_app()) as c:
        yield c


class TestEndpoints:
    def test_health(self, client):
        body = client.get("/health").json()
        assert body["status"] == "ok"
        assert "version" in body

    def test_generate_default_split(self, client, tmp_path):
        resp = client.post("/generate", json={
            "out_dir": str(tmp_path / "ds"), "seed": 0, "shape": [8, 8, 8],
            "num_classes": 3, "noise_sigma": 0.05, "count": 20,
        })
        assert resp.status_code == 200
        assert resp.json()["splits"] == {"train": 11, "val": 4, "test": 5}
        assert (tmp_path / "ds" / "manifest.json").exists()

    def test_generate_schema_violation_is_422(self, client, tmp_path):
        resp = client.post("/generate", json={
            "out_dir": str(tmp_path / "ds"), "num_classes": 7,
        })
        assert resp.status_code == 422

    def test_generate_bad_spec_is_400(self, client, tmp_path):
        resp = client.post("/generate", json={
            "out_dir": str(tmp_path / "ds"), "shape": [4, 4, 4],
        })
        assert resp.status_code == 400
        assert "shape" in resp.json()["detail"]

    def test_train_eval_predict_pipeline(self, client, tmp_path):
        overrides = dict(MICRO_OVERRIDES, out_dir=str(tmp_path / "run"))
        resp = client.post("/train", json={"overrides": overrides})
        assert resp.status_code == 200
        body = resp.json()
        assert body["final_step"] == 3
        assert body["evals"] and "mean_dice" in body["evals"][0]

        dataset_dir = str(tmp_path / "run" / "dataset")
        resp = client.post("/eval", json={
            "checkpoint": body["checkpoint"], "dataset_dir": dataset_dir,
            "split": "train",
        })
        assert resp.status_code == 200
        summary = resp.json()
        assert "class 1" in summary["rendered"]
        assert summary["rows"]

        out_path = str(tmp_path / "pred.cv2v")
        resp = client.post("/predict", json={
            "checkpoint": body["checkpoint"],
            "image": f"{dataset_dir}/images/case_000.cv2v",
            "output": out_path,
        })
        assert resp.status_code == 200
        assert resp.json()["output"] == out_path

    def test_train_bad_config_is_400(self, client):
        resp = client.post("/train", json={"config_text": "bogus_key = 1"})
        assert resp.status_code == 400
        assert "bogus_key" in resp.json()["detail"]

    def test_eval_missing_checkpoint_is_400(self, client, tmp_path):
        resp = client.post("/eval", json={
            "checkpoint": str(tmp_path / "missing.ckpt"),
            "dataset_dir": str(tmp_path), "split": "test",
        })
        assert resp.status_code == 400

    def test_check_io_suite(self, client):
        resp = client.post("/check/io")
        assert resp.status_code == 200
        body = resp.json()
        assert body["passed"] is True
        assert all(item["passed"] for item in body["results"])

    def test_check_unknown_suite_is_404(self, client):
        resp = client.post("/check/nonsense")
        assert resp.status_code == 404


class TestCli:
    def run(self, *args):
        return CliRunner().invoke(cli_main, list(args))

    def test_generate_command(self, tmp_path):
        result = self.run("generate", "--out-dir", str(tmp_path / "ds"),
                          "--shape", "8,8,8", "--count", "20",
                          "--num-classes", "3")
        assert result.exit_code == 0, result.output
        body = json.loads(result.output)
        assert body["splits"] == {"train": 11, "val": 4, "test": 5}

    def test_train_then_eval_commands(self, tmp_path):
        args = ["train"]
        for key, value in dict(MICRO_OVERRIDES, out_dir=str(tmp_path / "run")).items():
            args += ["--set", f"{key}={value}"]
        result = self.run(*args)
        assert result.exit_code == 0, result.output
        body = json.loads(result.output)

        result = self.run("eval", "--checkpoint", body["checkpoint"],
                          "--dataset-dir", str(tmp_path / "run" / "dataset"),
                          "--split", "train")
        assert result.exit_code == 0, result.output
        assert "class 1" in result.output

    def test_config_file_with_overrides(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        lines = [f"{k} = {v}" for k, v in MICRO_OVERRIDES.items()]
        lines.append("max_steps = 2")
        cfg.write_text("\n".join(lines) + "\n")
        result = self.run("train", "--config", str(cfg),
                          "--set", f"out_dir={tmp_path / 'run'}",
                          "--set", "max_steps=1")
        assert result.exit_code == 0, result.output
        assert json.loads(result.output)["final_step"] == 1

    def test_error_line_and_exit_code(self, tmp_path):
        result = self.run("train", "--set", "nonsense_key=1")
        assert result.exit_code == 1
        assert "ERROR code=400" in result.output
        assert "nonsense_key" in result.output

    def test_bad_override_syntax(self):
        result = self.run("train", "--set", "missing_equals")
        assert result.exit_code == 1
        assert "ERROR code=2" in result.output

    def test_check_command(self):
        result = self.run("check", "io")
        assert result.exit_code == 0, result.output
        assert "suite io: all passed" in result.output
        assert "[PASS]" in result.output

    def test_check_unknown_suite(self):
        result = self.run("check", "nonsense")
        assert result.exit_code == 1
        assert "ERROR code=404" in result.output
