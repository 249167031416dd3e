from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

from spatialgen.cli import main
from spatialgen.config import PipelineConfig, config_from_dict, config_hash, load_config
from spatialgen.errors import ConfigInvalid, MissingUpstreamManifest
from spatialgen.pipeline import Pipeline

DESK = {
    "builder": {"scenes": 3, "skgs_per_scene": 3},
    "holdout": {"fraction": 0.3, "question_target": None},
    "variants_per_instance": 2,
    "master_seed": 7,
}


def write_config(tmp_path: Path, out_name: str, **overrides) -> Path:
    data = json.loads(json.dumps(DESK))
    data.update(overrides)
    data["output_dir"] = str(tmp_path / out_name)
    path = tmp_path / f"{out_name}.yaml"
    path.write_text(json.dumps(data))  # YAML is a JSON superset
    return path


def dataset_digest(out_dir: Path) -> dict[str, bytes]:
    files = {}
    for name in ("train.json", "holdout.json"):
        files[name] = (out_dir / "dataset" / name).read_bytes()
    for png in sorted((out_dir / "dataset" / "images").rglob("*.png")):
        files[str(png.relative_to(out_dir / "dataset"))] = png.read_bytes()
    return files


# --- config ---------------------------------------------------------------------


def test_config_defaults_follow_documented_constants():
    config = PipelineConfig()
    assert config.builder.scenes == 160
    assert config.builder.skgs_per_scene == 25
    assert config.canvas.width == 512
    assert config.canvas.near_fraction == 0.25
    assert config.canvas.far_fraction == 0.45
    assert config.solver.max_attempts == 1000
    assert config.variants_per_instance == 3
    assert config.holdout.question_target == 566
    assert config.make_canvas().margin == pytest.approx(25.6)


def test_config_validation_rejects_bad_thresholds():
    with pytest.raises(ConfigInvalid):
        config_from_dict({"canvas": {"near_fraction": 0.5, "far_fraction": 0.4}})
    with pytest.raises(ConfigInvalid):
        config_from_dict({"holdout": {"fraction": 1.0}})
    with pytest.raises(ConfigInvalid):
        config_from_dict({"unknown_key": 3})
    with pytest.raises(ConfigInvalid):
        config_from_dict({"text_backend": {"kind": "remote"}})  # endpoint missing


def test_config_env_interpolation(tmp_path: Path, monkeypatch):
    monkeypatch.setenv("SG_TEST_MODEL", "interp-model")
    path = tmp_path / "c.yaml"
    path.write_text('text_backend:\n  model: "${SG_TEST_MODEL}"\n')
    config = load_config(path)
    assert config.text_backend.model == "interp-model"


def test_config_hash_ignores_execution_parameters():
    one = config_from_dict({"output_dir": "a", "workers": 1})
    two = config_from_dict({"output_dir": "b", "workers": 8})
    assert config_hash(one) == config_hash(two)
    three = config_from_dict({"master_seed": 1})
    assert config_hash(one) != config_hash(three)


# --- full runs --------------------------------------------------------------------


def test_full_run_emits_disjoint_datasets(tmp_path: Path):
    config_path = write_config(tmp_path, "run1")
    assert main(["run", "--config", str(config_path)]) == 0
    out = tmp_path / "run1"
    train = json.loads((out / "dataset" / "train.json").read_text())
    holdout = json.loads((out / "dataset" / "holdout.json").read_text())
    assert train and holdout
    train_instances = {row["instance_id"] for row in train}
    holdout_instances = {row["instance_id"] for row in holdout}
    assert not train_instances & holdout_instances
    for row in holdout:
        assert set(row["options"]) == {"A", "B", "C", "D"}
        assert (out / "dataset" / row["image"]).exists()
    for row in train:
        assert row["conversation"][0]["text"].startswith("<image>\n")
        assert (out / "dataset" / row["image"]).exists()


def test_rerun_is_byte_identical_and_seed_changes_output(tmp_path: Path):
    first = write_config(tmp_path, "d1")
    second = write_config(tmp_path, "d2")
    different = write_config(tmp_path, "d3", master_seed=8)
    assert main(["run", "--config", str(first)]) == 0
    assert main(["run", "--config", str(second)]) == 0
    assert main(["run", "--config", str(different)]) == 0
    base = dataset_digest(tmp_path / "d1")
    again = dataset_digest(tmp_path / "d2")
    other = dataset_digest(tmp_path / "d3")
    assert base == again
    assert base != other


def test_resume_skips_and_interrupted_run_matches(tmp_path: Path):
    whole = write_config(tmp_path, "whole")
    staged = write_config(tmp_path, "staged")
    assert main(["run", "--config", str(whole)]) == 0

    # simulate interrupt-and-resume: run three stages, then the full pipeline
    for command in ("gen-scenes", "build-skg", "solve"):
        assert main([command, "--config", str(staged)]) == 0
    assert main(["run", "--config", str(staged)]) == 0
    assert dataset_digest(tmp_path / "whole") == dataset_digest(tmp_path / "staged")

    # a completed run resumes with every stage skipped
    pipeline = Pipeline(load_config(whole))
    for stage in ("scenes", "skgs", "instances", "render", "image_filter", "qa", "emit"):
        assert pipeline.run_stage(stage).skipped


def test_parallel_workers_match_serial_output(tmp_path: Path):
    serial = write_config(tmp_path, "serial", workers=1)
    parallel = write_config(tmp_path, "parallel", workers=4)
    assert main(["run", "--config", str(serial)]) == 0
    assert main(["run", "--config", str(parallel)]) == 0
    assert dataset_digest(tmp_path / "serial") == dataset_digest(tmp_path / "parallel")


def test_stage_requires_upstream_manifest(tmp_path: Path):
    config = load_config(write_config(tmp_path, "bare"))
    pipeline = Pipeline(config)
    with pytest.raises(MissingUpstreamManifest):
        pipeline.run_stage("instances")


def test_cli_exit_codes(tmp_path: Path):
    bad = tmp_path / "bad.yaml"
    bad.write_text('canvas:\n  near_fraction: 0.5\n  far_fraction: 0.4\n')
    assert main(["run", "--config", str(bad)]) == 2
    assert main(["solve", "--config", str(write_config(tmp_path, "empty"))]) == 1


def test_cli_stats_and_sample_and_score(tmp_path: Path, capsys):
    config_path = write_config(tmp_path, "cli")
    assert main(["run", "--config", str(config_path)]) == 0
    out = tmp_path / "cli"

    assert main(["stats", "--config", str(config_path)]) == 0
    stats_output = capsys.readouterr().out
    assert "top 15 objects" in stats_output
    csv_lines = (out / "objects_top15.csv").read_text().splitlines()
    assert csv_lines[0] == "rank,label,count"

    train = json.loads((out / "dataset" / "train.json").read_text())
    size = min(5, len(train))
    assert main(["sample", "--config", str(config_path), "--size", str(size), "--seed", "3"]) == 0
    subset_path = out / "subsets" / f"subset_{size}_all.json"
    assert len(json.loads(subset_path.read_text())) == size

    holdout_path = out / "dataset" / "holdout.json"
    holdout = json.loads(holdout_path.read_text())
    answers_path = tmp_path / "answers.jsonl"
    with open(answers_path, "w") as handle:
        for row in holdout:
            handle.write(json.dumps({"question_id": row["id"], "raw_text": row["answer_key"]}) + "\n")
    assert main(["score", "--holdout", str(holdout_path), "--answers", str(answers_path)]) == 0
    report = json.loads((tmp_path / "eval_report.json").read_text())
    assert report["overall"]["accuracy"] == 1.0


def test_cli_offline_flag_forces_local_backends(tmp_path: Path):
    config_path = write_config(
        tmp_path,
        "forced",
        text_backend={"kind": "remote", "endpoint": "http://example/v1"},
        image_backend={"kind": "remote", "endpoint": "http://example/v1"},
    )
    # --offline must override the remote kinds and still run end to end
    assert main(["run", "--config", str(config_path), "--offline"]) == 0


def test_console_entry_point_help():
    result = subprocess.run(
        [sys.executable, "-m", "spatialgen.cli", "--help"], capture_output=True, text=True
    )
    assert result.returncode == 0
    assert "score" in result.stdout
