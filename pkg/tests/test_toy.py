import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsbm.toy import (SHAPES, ToyTask, cos_sim, default_tasks, evaluate, fde, generate_dataset,
                      load_csv, mse, save_csv, shape_waypoints)

traj = st.lists(st.floats(-100, 100, allow_nan=False), min_size=16, max_size=16).map(
    lambda v: np.array(v).reshape(8, 2))


def test_task_validation():
    with pytest.raises(ValueError):
        ToyTask(shape="circle")
    with pytest.raises(ValueError):
        ToyTask(noise=-1.0)
    with pytest.raises(ValueError):
        ToyTask(scale=0.0)


def test_noise_free_task_is_reproducible():
    task = ToyTask("star_patrol", scale=2.0, rotation=0.1, phase=0.2, noise=0.0)
    a = generate_dataset(3, [task], np.random.default_rng(0))
    b = generate_dataset(3, [task], np.random.default_rng(99))
    np.testing.assert_array_equal(a.a0, b.a0)


def test_figure8_through_origin():
    pts = shape_waypoints("figure8", 1.0, 0.0, 0.0)
    np.testing.assert_array_equal(pts[0], [0.0, 0.0])
    assert pts.shape == (8, 2)


def test_star_on_pentagram():
    pts = shape_waypoints("star_patrol", 1.0, 0.0, 0.0)
    np.testing.assert_allclose(pts[0], [0.0, 1.0], atol=1e-15)
    assert np.all(np.linalg.norm(pts, axis=1) <= 1.0 + 1e-12)


def test_class_means_separate():
    ds = generate_dataset(1000, default_tasks(), np.random.default_rng(0))
    means = [ds.a0[ds.shape_id == i].mean(axis=0) for i in range(len(SHAPES))]
    assert np.mean((means[0] - means[1]) ** 2) > 0.5


def test_context_layout_and_hidden_phase():
    ds = generate_dataset(50, default_tasks(), np.random.default_rng(1))
    hidden = generate_dataset(50, default_tasks(), np.random.default_rng(1), hide_phase=True)
    assert ds.context.shape == (50, 8)
    np.testing.assert_array_equal(ds.context[:, :2].sum(axis=1), 1.0)
    np.testing.assert_allclose(ds.context[:, 5], np.cos(ds.params[:, 2]))
    np.testing.assert_array_equal(hidden.context[:, 5:7], 0.0)
    np.testing.assert_array_equal(hidden.a0, ds.a0)


def test_generate_errors():
    with pytest.raises(ValueError):
        generate_dataset(0, default_tasks(), np.random.default_rng(0))
    with pytest.raises(ValueError):
        generate_dataset(5, [], np.random.default_rng(0))


def test_split():
    ds = generate_dataset(20, default_tasks(), np.random.default_rng(0))
    tr, te = ds.split(5)
    assert len(tr) == 15 and len(te) == 5
    np.testing.assert_array_equal(te.a0, ds.a0[15:])
    with pytest.raises(ValueError):
        ds.split(20)


def test_csv_round_trip(tmp_path):
    ds = generate_dataset(25, default_tasks(), np.random.default_rng(3))
    path = tmp_path / "d.csv"
    save_csv(ds, path)
    header = path.read_text().splitlines()[0]
    assert header == "shape,scale,rotation,phase,noise," + ",".join(f"x{j},y{j}" for j in range(8))
    back = load_csv(path)
    np.testing.assert_array_equal(back.a0, ds.a0)
    np.testing.assert_array_equal(back.params, ds.params)
    np.testing.assert_array_equal(back.shape_id, ds.shape_id)


def test_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError):
        load_csv(path)


def test_flattening_is_waypoint_major():
    a = np.arange(16.0).reshape(8, 2)
    flat = a.reshape(-1)
    assert list(flat[:4]) == [a[0, 0], a[0, 1], a[1, 0], a[1, 1]]
    # metrics, CSV rows and the model all use this flattening
    assert cos_sim(a, a) == pytest.approx(1.0)
    b = a.copy()
    b[0, 1] += 1.0
    assert mse(b, a) == pytest.approx(1.0 / 16)


def test_metric_examples():
    gt = np.ones((8, 2))
    assert mse(gt, gt) == 0.0
    assert mse(gt + 1.0, gt) == 1.0
    assert mse(2 * gt, gt) == 1.0
    assert cos_sim(gt, gt) == pytest.approx(1.0)
    assert cos_sim(-gt, gt) == pytest.approx(-1.0)
    assert cos_sim(3.5 * gt, gt) == pytest.approx(1.0)
    p, g = np.zeros((8, 2)), np.zeros((8, 2))
    g[-1] = [3.0, 4.0]
    assert fde(p, g) == 5.0
    p2 = p.copy()
    p2[:-1] = 7.0
    assert fde(p2, g) == 5.0


def test_metric_errors():
    with pytest.raises(ValueError):
        mse(np.zeros((8, 2)), np.zeros((7, 2)))
    with pytest.raises(ValueError):
        cos_sim(np.ones((8, 2)), np.zeros((8, 2)))
    with pytest.raises(ValueError):
        fde(np.zeros((8, 2)), np.zeros((4, 2)))


def test_eval_report():
    rng = np.random.default_rng(0)
    gt = rng.normal(size=(10, 8, 2))
    rep = evaluate(gt + 0.1, gt, nfe=5)
    assert rep.nfe == 5 and len(rep.records) == 10
    assert rep.mse == pytest.approx(0.01)
    assert rep.mse == pytest.approx(np.mean([r["mse"] for r in rep.records]))
    assert -1.0 <= rep.cos_sim <= 1.0
    assert set(rep.summary()) == {"mse", "cos_sim", "fde", "nfe", "n"}


@settings(max_examples=100, deadline=None)
@given(a=traj, c=st.floats(1e-3, 1e3))
def test_cos_sim_homogeneous(a, c):
    if np.linalg.norm(a) < 1e-6:
        return
    assert cos_sim(c * a, a) == pytest.approx(1.0, abs=1e-12)
    assert cos_sim(-c * a, a) == pytest.approx(-1.0, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(a=traj, b=traj)
def test_mse_symmetric_nonnegative(a, b):
    assert mse(a, b) == mse(b, a) >= 0.0
