import numpy as np
import pytest

import voxcast


def test_voxelize_points_into_type_box():
    lo, hi, res = voxcast.default_grid_spec_bounds("A")
    assert tuple(res) == (32, 32, 64)
    pts = np.array([lo, hi, [(a + b) / 2 for a, b in zip(lo, hi)]])
    grid = voxcast.voxelize(pts, "A")
    assert grid.shape == (32, 32, 64)
    assert grid.dtype == bool
    assert grid[0, 0, 0] and grid[-1, -1, -1]
    assert grid.sum() == 3


def test_voxelize_rejects_out_of_bounds():
    with pytest.raises(ValueError):
        voxcast.voxelize(np.array([[-1e6, 0.0, 0.0]]), "C")


def test_small_dataset_counts_and_split():
    store = voxcast.gen_dataset("C", augment=2, seed=3)
    assert len(store) == 216
    assert store.class_counts("C") == [24] * 9
    train, test = voxcast.split_rows(store)
    assert len(test) == 54 and len(train) == 162
    assert all(test.row(i) == 3 for i in range(len(test)))
    windows = voxcast.make_windows(train, 4, seed=1)
    assert len(windows) == 20
    s = windows.sample(0)
    assert s["target_label"] == s["window"] + 4


def test_prf_matches_manual_counts():
    cm = np.zeros((9, 9), dtype=np.uint64)
    cm[0, 0] = 3
    cm[0, 1] = 1
    cm[1, 1] = 2
    r = voxcast.prf(cm)
    assert r.precision[0] == pytest.approx(1.0)
    assert r.recall[0] == pytest.approx(0.75)
    assert r.precision[1] == pytest.approx(2 / 3)
    assert r.f_score[2] == 0.0


def test_self_checks():
    layers = voxcast.run_gradient_suite(trials=2)
    assert len(layers) == 9 and all(c["passed"] for c in layers)
    bad = voxcast.run_gradient_suite(trials=2, inject_fault="dense")
    assert [c["layer"] for c in bad if not c["passed"]] == ["dense"]
    assert voxcast.run_adjoint_suite(cases=10)["passed"]


def test_train_eval_roundtrip(tmp_path):
    store = voxcast.gen_dataset("E", augment=2, seed=4)
    train, test = voxcast.split_rows(store)
    plan = voxcast.TrainPlan()
    plan.epochs = 1
    plan.batch = 32
    plan.seed = 2
    clf = voxcast.train_classifier(train, test, "E", voxcast.ClassifierConfig.reduced(), plan)
    assert clf.kind == "classifier" and clf.type == "E"
    path = tmp_path / "c.vfck"
    voxcast.save_checkpoint(path, clf)
    assert voxcast.load_checkpoint(path).to_bytes() == clf.to_bytes()
    res = voxcast.eval_classifier(clf, test)
    assert res.confusion.sum() == len(test)
    assert "Mean V-IX" in voxcast.render_table([res.report])

    sp = voxcast.TrainPlan()
    sp.epochs = 1
    sp.batch = 4
    sp.alpha = 0.1
    windows = voxcast.make_windows(train, 1, seed=5)
    sim = voxcast.train_simulator(train, windows, clf, voxcast.SimulatorConfig.reduced(), sp)
    assert sim.meta["label"] == voxcast.arch_label(0.1) == "arch-2"
    held = voxcast.make_windows(test, 1, seed=6)
    rep = voxcast.eval_simulation(sim, clf, test, held).report
    assert rep.classes == [4, 5, 6, 7, 8]


def test_missing_checkpoint(tmp_path):
    with pytest.raises(FileNotFoundError):
        voxcast.load_checkpoint(tmp_path / "none.vfck")
