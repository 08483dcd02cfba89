import csv
import json

import pytest

from rsbm.cli import main


@pytest.fixture
def data(tmp_path):
    path = tmp_path / "data.csv"
    assert main(["generate", "--n", "240", "--seed", "7", "--out", str(path)]) == 0
    return path


def _train(tmp_path, data, *extra):
    out = tmp_path / "run"
    args = ["train", "--data", str(data), "--out-dir", str(out), "--epochs", "2",
            "--prior-epochs", "2", "--seed", "1", *extra]
    assert main(args) == 0
    return out


def test_generate_rows_and_reproducible(tmp_path, data):
    rows = data.read_text().splitlines()
    assert len(rows) == 241
    again = tmp_path / "again.csv"
    main(["generate", "--n", "240", "--seed", "7", "--out", str(again)])
    assert again.read_bytes() == data.read_bytes()


def test_generate_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--n", "0", "--out", str(tmp_path / "x.csv")])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        main(["generate", "--shapes", "circle", "--out", str(tmp_path / "x.csv")])


def test_train_defaults_and_outputs(tmp_path, data):
    out = _train(tmp_path, data)
    header = json.loads((out / "velocity.rsbm").read_text().split("\n", 1)[1])
    cfg = header["extra"]["config"]
    assert cfg["epsilon"] == 0.5 and cfg["prior"] == "learned" and header["target"] == "v"
    assert cfg["lr"] == 1e-4 and cfg["batch"] == 256
    assert header["bridge"]["epsilon"] == 0.5
    with open(out / "loss_trace.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["stage"] for r in rows].count("velocity") == 2


def test_train_zero_epochs(tmp_path, data):
    out = tmp_path / "zero"
    assert main(["train", "--data", str(data), "--out-dir", str(out), "--epochs", "0",
                 "--prior", "gaussian"]) == 0
    assert (out / "velocity.rsbm").exists()


def test_train_missing_data(tmp_path):
    with pytest.raises(SystemExit):
        main(["train", "--data", str(tmp_path / "nope.csv")])


def test_config_precedence(tmp_path, data):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"epsilon": 0.3, "target": "x0", "epochs": 1, "prior_epochs": 1}))
    out = tmp_path / "run"
    main(["train", "--data", str(data), "--out-dir", str(out), "--config", str(conf), "--epsilon", "0.7"])
    header = json.loads((out / "velocity.rsbm").read_text().split("\n", 1)[1])
    assert header["bridge"]["epsilon"] == 0.7
    assert header["target"] == "x0"
    conf.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(SystemExit):
        main(["train", "--data", str(data), "--config", str(conf)])


@pytest.mark.parametrize("k,nfe", [(3, 5), (10, 19)])
def test_sample_nfe(tmp_path, data, k, nfe):
    out = _train(tmp_path, data)
    metrics = tmp_path / "m.json"
    assert main(["sample", "--data", str(data), "--ckpt-dir", str(out), "--k", str(k),
                 "--n-eval", "30", "--metrics", str(metrics)]) == 0
    rep = json.loads(metrics.read_text())
    assert rep["nfe"] == nfe and rep["n"] == 30


def test_sample_reproducible_and_writes_predictions(tmp_path, data):
    out = _train(tmp_path, data)
    reps = []
    for i in range(2):
        m = tmp_path / f"m{i}.json"
        main(["sample", "--data", str(data), "--ckpt-dir", str(out), "--seed", "3", "--n-eval", "20",
              "--metrics", str(m), "--out", str(tmp_path / f"p{i}.csv")])
        reps.append(json.loads(m.read_text()))
    assert reps[0] == reps[1]
    assert (tmp_path / "p0.csv").read_bytes() == (tmp_path / "p1.csv").read_bytes()
    assert len((tmp_path / "p0.csv").read_text().splitlines()) == 21


def test_sample_mismatch_is_hard_error(tmp_path, data, capsys):
    out = _train(tmp_path, data)
    assert main(["sample", "--data", str(data), "--ckpt-dir", str(out), "--epsilon", "1.0"]) == 1
    assert "epsilon" in capsys.readouterr().err
    assert main(["sample", "--data", str(data), "--ckpt-dir", str(out), "--target", "x0"]) == 1


def test_sample_missing_checkpoint(tmp_path, data):
    with pytest.raises(SystemExit):
        main(["sample", "--data", str(data), "--ckpt-dir", str(tmp_path / "none")])


def test_ablate_target_sweep(tmp_path, data):
    out = tmp_path / "sweep.csv"
    assert main(["ablate", "--sweep", "target", "--data", str(data), "--n-test", "20", "--seeds", "0,1",
                 "--epochs", "1", "--prior-epochs", "1", "--out", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6
    assert [r["target"] for r in rows] == ["v", "v", "x0", "x0", "eps", "eps"]
    assert all(r["nfe"] == "5" for r in rows)


def test_ablate_epsilon_row_count(tmp_path, data):
    out = tmp_path / "sweep.csv"
    main(["ablate", "--sweep", "epsilon", "--data", str(data), "--n-test", "20", "--seeds", "0",
          "--epochs", "1", "--prior", "gaussian", "--out", str(out)])
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 20
    assert {(r["epsilon"], r["k"]) for r in rows} == {
        (repr(e), str(k)) for e in (0.1, 0.3, 0.5, 0.7, 1.0) for k in (1, 3, 5, 10)}


def test_ablate_solver_has_matched_nfe(tmp_path, data):
    out = tmp_path / "sweep.csv"
    main(["ablate", "--sweep", "solver", "--data", str(data), "--n-test", "20", "--seeds", "0",
          "--epochs", "1", "--prior", "gaussian", "--out", str(out)])
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    pairs = {(r["solver"], r["k"]): r["nfe"] for r in rows}
    assert pairs[("euler", "5")] == pairs[("heun", "3")] == "5"


def test_ablate_parallel_matches_serial(tmp_path, data):
    outs = []
    for workers in ("1", "2"):
        out = tmp_path / f"s{workers}.csv"
        main(["ablate", "--sweep", "target", "--data", str(data), "--n-test", "20", "--seeds", "0",
              "--epochs", "1", "--prior", "gaussian", "--workers", workers, "--out", str(out)])
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_ablate_unknown_sweep(tmp_path, data):
    with pytest.raises(SystemExit):
        main(["ablate", "--sweep", "nope", "--data", str(data)])


def test_verify_pass_and_negative_control(tmp_path, capsys):
    report = tmp_path / "r.json"
    assert main(["verify", "--json", str(report)]) == 0
    rep = json.loads(report.read_text())
    assert rep["all_pass"]
    assert main(["verify", "--perturb-kernel", "1e-3"]) != 0
    assert "FAIL  dlog_eps_spread" in capsys.readouterr().out
