"""Python smoke tests for the bound core operations."""

import json
import tempfile

import numpy as np
import pytest

import patchrl


def test_make_mask_rectangle():
    a = patchrl.make_mask(2, 1, 2, 3, 5, 6)
    assert a.shape == (5, 6)
    assert a.sum() == 6
    assert a[1:3, 2:5].all()


def test_paste_identity_and_support():
    rng = np.random.default_rng(7)
    x = rng.random((6, 6, 3))
    xt = rng.random((6, 6, 3))
    out = patchrl.paste(x, xt, 1, 2, 3, 2)
    mask = np.zeros((6, 6), dtype=bool)
    mask[2:5, 1:3] = True
    assert np.array_equal(out[~mask], x[~mask])
    assert np.allclose(out[mask], np.clip(xt[mask], 0.0, 1.0))


def test_valid_region_matches_python_brute_force():
    H, W, ph, pw = 7, 6, 2, 3
    exclusions = [(2, 1, 2, 2)]
    allowed = patchrl.compute_valid_region(H, W, exclusions, ph, pw)

    expected = np.zeros((H, W), dtype=bool)
    for r in range(H):
        for c in range(W):
            if r + ph > H or c + pw > W:
                continue
            hit = False
            for er, ec, eh, ew in exclusions:
                if r < er + eh and er < r + ph and c < ec + ew and ec < c + pw:
                    hit = True
            expected[r, c] = not hit
    assert np.array_equal(allowed, expected)


def test_smooth_patch_checkerboard():
    patch = np.zeros((2, 2, 1))
    patch[0, 1, 0] = 1.0
    patch[1, 0, 0] = 1.0
    out = patchrl.smooth_patch(patch)
    assert np.allclose(out, 0.5)


def test_step_grid():
    grid = patchrl.step_grid()
    assert len(grid) == 20
    assert grid[0] == pytest.approx(0.01)
    assert grid[-1] == pytest.approx(0.20)


def test_png_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    image = rng.random((9, 11, 3))
    path = str(tmp_path / "img.png")
    patchrl.save_png(path, image)
    back = patchrl.load_png(path)
    assert back.shape == image.shape
    assert np.abs(back - image).max() <= 0.5 / 255.0 + 1e-12


def test_config_validation():
    cfg = patchrl.default_config()
    assert patchrl.validate_config(cfg) == []
    cfg["models"]["target"] = cfg["models"]["surrogates"][0]
    errors = patchrl.validate_config(cfg)
    assert any("leave-one-out" in e for e in errors)


def test_tiny_experiment_end_to_end(tmp_path):
    cfg = patchrl.default_config()
    cfg["dataset"].update(
        {"n_identities": 4, "per_identity": 5, "test_per_identity": 1,
         "height": 12, "width": 12}
    )
    cfg["models"].update({"surrogates": ["mlp_small", "mlp_medium"],
                          "target": "mlp_deep", "epochs": 14})
    cfg["patch"] = {"height": 3, "width": 3}
    cfg["exclusions"] = [{"row": 4, "col": 4, "h": 3, "w": 3}]
    cfg["episode"].update({"samples_per_epoch": 2, "max_epochs": 3, "query_cap": 6})
    cfg["episode"]["mifgsm"]["iterations"] = 4
    cfg["episode"]["agent"] = {"levels": 1, "base_channels": 4}
    cfg["zo"]["max_queries"] = 40
    cfg["methods"] = ["so", "perturbation_only"]
    cfg["seeds"] = [1]
    cfg["n_test_images"] = 2
    cfg["threads"] = 2
    cfg["output_dir"] = str(tmp_path / "run")

    summary = patchrl.run_experiment(cfg)
    methods = {m["method"]: m for m in summary["methods"]}
    assert set(methods) == {"so", "perturbation_only"}
    assert all(m["attempted"] >= 1 for m in methods.values())
    for record in summary["records"]:
        assert record["nq"] == record["oracle_delta"]
    assert (tmp_path / "run" / "records.jsonl").exists()
    with open(tmp_path / "run" / "records.jsonl") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    assert len(lines) == len(summary["records"])
