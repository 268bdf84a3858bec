import json

import numpy as np
import pytest

import anchorcal as ac


def small_domain(mean, seed):
    d = ac.SyntheticDomain()
    d.mean_size = ac.AnchorSizes(*mean)
    d.size_stddev = [0.01 * m for m in mean]
    d.seed = seed
    return d


def test_anchor_sizes_roundtrip():
    s = ac.AnchorSizes(1.6, 3.9, 1.5)
    assert (s.w, s.l, s.h) == (1.6, 3.9, 1.5)
    assert s == ac.AnchorSizes(1.6, 3.9, 1.5)
    with pytest.raises(ac.Error):
        ac.AnchorSizes(-1.0, 3.9, 1.5)


def test_gmm_fitness_is_count_invariant():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(300, 3))
    cfg = ac.EmConfig()
    cfg.k = 2
    model = ac.fit_em(x, cfg)
    assert model.dim == 3 and model.components == 2
    assert abs(sum(model.weights) - 1.0) < 1e-9
    assert ac.fitness(x, model) == pytest.approx(ac.fitness(np.vstack([x, x, x]), model), abs=1e-12)


def test_empty_database_raises_with_kind():
    model = ac.Gmm(np.array([1.0]), np.zeros((1, 2)), np.ones((1, 2)))
    with pytest.raises(ac.Error) as info:
        ac.fitness(np.zeros((0, 2)), model)
    assert info.value.kind == "zero features"


def test_synthetic_domain_and_reference_db():
    ex = ac.generate_domain(small_domain((2.1, 4.8, 1.8), 1), 20)
    assert ex.feature_dim == 64
    assert ex.frame_count == 20
    props = ex.propose(0, ex.source_anchor)
    assert all(0.0 <= p["score"] <= 1.0 and p["feature"].shape == (64,) for p in props)
    db = ac.build_reference_db(ex)
    assert db.ndim == 2 and db.shape[1] == 64 and db.shape[0] > 0
    np.testing.assert_allclose(db.sum(axis=1), 1.0, atol=1e-9)


def test_calibrate_moves_toward_target():
    src = ac.generate_domain(small_domain((2.1, 4.8, 1.8), 1), 60)
    tgt = ac.generate_domain(small_domain((1.6, 3.9, 1.5), 2), 40).with_anchor(src.source_anchor)
    settings = ac.CalibrationSettings()
    settings.em.k = 4
    settings.de.max_iters = 15
    settings.sweeps = [ac.SweepConfig(a, 0.5, 7) for a in "wlh"]
    r = ac.calibrate(src, tgt, settings)
    assert r["calibrated_fitness"] >= r["source_fitness"]
    assert r["calibrated"].l < r["source"].l
    assert set(r["sweep_curves"]) == {"w", "l", "h"}


def test_sfdb_roundtrip(tmp_path):
    x = np.arange(12, dtype=np.float32).reshape(4, 3).astype(np.float64)
    ac.write_sfdb(tmp_path / "a.sfdb", x)
    np.testing.assert_array_equal(ac.read_sfdb(tmp_path / "a.sfdb"), x)


def test_cli_exit_codes(tmp_path):
    code, _, err = ac.run_cli(["gen", "--config", str(tmp_path / "missing.json")])
    assert code == 3 and "missing.json" in err
    cfg = {
        "seed": 1,
        "source": {"frames": 4, "objects_per_frame": -1},
        "target": {"frames": 4},
    }
    (tmp_path / "bad.json").write_text(json.dumps(cfg))
    code, _, err = ac.run_cli(["gen", "--config", str(tmp_path / "bad.json")])
    assert code == 2 and "source.objects_per_frame" in err
