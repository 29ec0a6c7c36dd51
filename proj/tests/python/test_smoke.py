"""End-to-end smoke tests for the Python bindings."""

import json
import math

import numpy as np
import pytest

import d2loc


def test_svd_reconstruction_and_rank():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(5, 3))
    sigma, u, v, rank = d2loc.svd(a)
    assert rank == 3
    assert sigma == sorted(sigma, reverse=True)
    recon = u @ np.diag(sigma) @ v.T
    assert np.max(np.abs(recon - a)) < 1e-10


def test_log_condition_number_and_det():
    assert d2loc.log_condition_number(np.eye(3)) == 0.0
    assert d2loc.log_condition_number(np.diag([4.0, 1.0])) == pytest.approx(math.log(4.0))
    assert d2loc.abs_det(np.diag([0.5, 0.5])) == pytest.approx(0.25)


def test_gradcheck_passes():
    for entry in d2loc.gradcheck(seeds=[1], coords=8):
        assert entry["pass"], entry


def test_pdmi_study_trend():
    pearson, rows = d2loc.pdmi_study(samples=2000, seed=3)
    assert rows.shape == (2000, 2)
    assert pearson <= -0.5


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("dataset")
    cfg = {
        "synth": {
            "num_classes": 3,
            "num_train": 6,
            "num_test": 3,
            "snippets_min": 12,
            "snippets_max": 16,
            "feature_dim": 8,
            "seed": 5,
        }
    }
    return d2loc.generate_synthetic(json.dumps(cfg), out), cfg


def test_pipeline_runs_end_to_end(tiny_dataset, tmp_path):
    ds, cfg = tiny_dataset
    assert ds["num_videos"] == 9
    assert ds["num_classes"] == 3

    run_cfg = dict(cfg)
    run_cfg["model"] = {"feature_dim": 8, "num_classes": 3}
    run_cfg["train"] = {"iterations": 40, "batch_size": 4}
    result = d2loc.train(json.dumps(run_cfg), ds["train_manifest"], tmp_path / "run")
    assert result["iterations"] == 40
    assert math.isfinite(result["final_loss"])

    first = d2loc.infer(json.dumps(run_cfg), result["checkpoint"], ds["test_manifest"],
                        tmp_path / "det1")
    second = d2loc.infer(json.dumps(run_cfg), result["checkpoint"], ds["test_manifest"],
                         tmp_path / "det2")
    assert first["detections"] == second["detections"]

    report = d2loc.evaluate(first["detections_path"], ds["test_manifest"],
                            [0.1, 0.3, 0.5], tmp_path / "eval")
    assert set(report["map"]) == {0.1, 0.3, 0.5}
    for value in report["map"].values():
        assert 0.0 <= value <= 1.0
    assert report["tp"] + report["fn"] > 0


def test_forward_shapes(tiny_dataset, tmp_path):
    ds, cfg = tiny_dataset
    run_cfg = dict(cfg)
    run_cfg["model"] = {"feature_dim": 8, "num_classes": 3}
    run_cfg["train"] = {"iterations": 5, "batch_size": 4}
    result = d2loc.train(json.dumps(run_cfg), ds["train_manifest"], tmp_path / "run")

    rng = np.random.default_rng(0)
    s = 10
    rgb = rng.normal(size=(s, 8))
    flow = rng.normal(size=(s, 8))
    embeddings, tcam, lambda_prime, p = d2loc.forward(result["checkpoint"], rgb, flow)
    assert embeddings.shape == (s, 4)
    assert tcam.shape == (s, 3)
    assert len(lambda_prime) == s
    assert len(p) == 3
    assert np.all((tcam > 0.0) & (tcam < 1.0))
    assert all(0.0 <= v <= 1.0 for v in lambda_prime)


def test_usage_errors_surface_as_value_error():
    with pytest.raises(ValueError):
        d2loc.svd(np.zeros(3))  # not 2-D
