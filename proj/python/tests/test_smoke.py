import json

import numpy as np
import pytest

import cdm


def blade(i, value=1.0):
    v = np.zeros(8)
    v[i] = value
    return v


def test_generator_products():
    e1, e2, e12 = blade(1), blade(2), blade(6)
    np.testing.assert_array_equal(cdm.geometric_product(e1, e1), blade(0))
    np.testing.assert_array_equal(cdm.geometric_product(e1, e2), e12)
    np.testing.assert_array_equal(cdm.geometric_product(e2, e1), -e12)
    index, sign = cdm.cayley_table()
    assert index.shape == (8, 8)
    assert set(np.unique(sign)) == {-1, 1}


def test_bad_shapes_raise():
    with pytest.raises(ValueError):
        cdm.geometric_product(np.zeros(7), np.zeros(8))
    with pytest.raises(IndexError):
        cdm.grade_project(np.zeros(8), 4)


def test_orthogonal_action_is_an_automorphism():
    rng = np.random.default_rng(0)
    for det in (1, -1):
        R = cdm.random_orthogonal(seed=3, det=det)
        np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
        a, b = rng.normal(size=8), rng.normal(size=8)
        lhs = cdm.apply_orthogonal(R, cdm.geometric_product(a, b))
        rhs = cdm.geometric_product(cdm.apply_orthogonal(R, a), cdm.apply_orthogonal(R, b))
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)
        # Vectors rotate like R, bivectors like det(R) R.
        block = cdm.grade_blocks(R)
        np.testing.assert_allclose(block[1:4, 1:4], R, atol=1e-12)
        np.testing.assert_allclose(block[4:7, 4:7], det * R, atol=1e-12)


def test_schedule():
    s = cdm.schedule("polynomial", 200)
    assert s["alpha_bar"].shape == (200,)
    assert np.all(np.diff(s["alpha_bar"]) < 0)
    assert abs(s["alpha_bar"][-1] - 1e-5) < 1e-9
    with pytest.raises(ValueError):
        cdm.schedule("linear", 10)


def test_metrics_on_template():
    tpl = cdm.rigid_template()
    assert tpl["elements"] == ["C", "H", "H", "H", "H"]
    m = cdm.evaluate([tpl])
    assert m["atom_stability"] == 100.0
    assert m["mol_stability"] == 100.0
    back = cdm.parse_xyz(cdm.format_xyz([tpl]))
    assert cdm.matched_distance_error(back[0], tpl) < 1e-5


def test_train_and_sample(tmp_path):
    cfg = {
        "mode": "all_grade",
        "model": {"layers": 1, "mv_channels": 2, "scalar_hidden": 8, "encoder_layers": 1},
        "diffusion": {"timesteps": 10},
        "train": {"lr": 0.01, "batch_size": 4, "steps": 5, "seed": 1},
        "data": {"source": "synth", "kind": "rigid_shape", "n_samples": 8},
        "out_dir": str(tmp_path / "run"),
    }
    out = cdm.train(json.dumps(cfg))
    assert len(out["loss"]) == 5
    info = cdm.checkpoint_info(out["checkpoint"])
    assert info["id"] == out["checkpoint_id"]
    assert info["mode"] == "all_grade"
    mols = cdm.sample(out["checkpoint"], 3, seed=4)
    again = cdm.sample(out["checkpoint"], 3, seed=4)
    assert len(mols) == 3
    for a, b in zip(mols, again):
        assert a["positions"].shape == (5, 3)
        np.testing.assert_array_equal(a["positions"], b["positions"])
        assert np.abs(a["positions"].mean(axis=0)).max() < 1e-9


def test_config_errors():
    with pytest.raises(cdm.ConfigError):
        cdm.train(json.dumps({"mode": "one_vector", "unknown": 1}))


def test_selftest():
    assert all(r["passed"] for r in cdm.selftest())
    assert not all(r["passed"] for r in cdm.selftest(corrupt_cayley=True))
