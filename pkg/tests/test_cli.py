import csv
import json

import numpy as np
import pytest

from mfmtensor.cli import main
from mfmtensor.config import ConfigError, ingest_settings, load_yaml, sampler_config
from mfmtensor.tensor import CountTensor, load_dataset, save_dataset

SMOKE = "preset: smoke\ninit_clusters: 2\n"


@pytest.fixture
def smoke_cfg(tmp_path):
    p = tmp_path / "smoke.yaml"
    p.write_text(SMOKE)
    return p


@pytest.fixture
def small_dataset(tmp_path):
    rng = np.random.default_rng(0)
    data = [CountTensor(f"u{i}", rng.poisson(2.0, size=(3, 3, 4))) for i in range(8)]
    path = tmp_path / "data.json"
    save_dataset(data, path)
    return path


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize("design_id, dims", [(1, (3, 3, 4)), (2, (11, 12, 4))])
def test_simulate_dims(tmp_path, design_id, dims):
    out = tmp_path / "sim"
    assert main(["simulate", "--design", str(design_id), "--n-rep", "1", "--out", str(out), "--seed", "1"]) == 0
    data = load_dataset(out / "rep000" / "dataset.json")
    assert len(data) == 150 and data[0].dims == dims
    truth = json.loads((out / "rep000" / "truth.json").read_text())
    assert len(truth["labels"]) == 3 and min(truth["labels"][0]) == 1
    assert (out / "config_echo.yaml").exists()


def test_simulate_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["simulate", "--design", "1", "--n-rep", "2", "--out", str(tmp_path / name), "--seed", "5"]) == 0
    for rel in ("rep000/dataset.json", "rep001/truth.json", "config_echo.yaml"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_fit_requires_seed(tmp_path, small_dataset, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["fit", "--data", str(small_dataset), "--out", str(tmp_path / "fit")])
    assert exc.value.code == 1


def test_usage_errors_exit_one(tmp_path, small_dataset):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("n_iters: 10\n")
    assert main(["fit", "--data", str(small_dataset), "--config", str(bad), "--out", str(tmp_path / "f"),
                 "--seed", "1"]) == 1


def test_fit_outputs_and_seed_dependence(tmp_path, small_dataset, smoke_cfg):
    outs = []
    for seed in ("1", "1", "2"):
        out = tmp_path / f"fit{len(outs)}"
        assert main(["fit", "--data", str(small_dataset), "--config", str(smoke_cfg), "--out", str(out),
                     "--seed", seed, "--no-plots"]) == 0
        outs.append(out)
    for name in ("chain.jsonl", "labels_angle.csv", "effects.csv", "k_histogram.csv", "summary.json",
                 "config_echo.yaml", "trace.csv", "membership_quarter.csv"):
        assert (outs[0] / name).exists(), name
    assert (outs[0] / "chain.jsonl").read_bytes() == (outs[1] / "chain.jsonl").read_bytes()
    assert (outs[0] / "chain.jsonl").read_bytes() != (outs[2] / "chain.jsonl").read_bytes()
    lines = (outs[0] / "chain.jsonl").read_text().splitlines()
    assert len(lines) == 1 + 100


def test_fit_writes_figures(tmp_path, small_dataset, smoke_cfg):
    out = tmp_path / "fit"
    assert main(["fit", "--data", str(small_dataset), "--config", str(smoke_cfg), "--out", str(out), "--seed", "3"]) == 0
    for name in ("k_histogram.png", "trace.png", "effects.png", "membership_angle.png"):
        assert (out / name).stat().st_size > 0


def test_fit_single_unit(tmp_path, smoke_cfg):
    path = tmp_path / "one.json"
    save_dataset([CountTensor("solo", np.arange(36).reshape(3, 3, 4))], path)
    out = tmp_path / "fit"
    assert main(["fit", "--data", str(path), "--config", str(smoke_cfg), "--out", str(out), "--seed", "1",
                 "--no-plots"]) == 0
    for name in ("angle", "distance", "quarter"):
        rows = _read_csv(out / f"labels_{name}.csv")
        assert rows == [{"unit_id": "solo", "cluster": "1"}]


def test_fit_default_schedule():
    cfg = sampler_config({}, seed=4)
    assert cfg.n_samples == 5000 and cfg.n_samples - cfg.burn_in == 3000


def test_evaluate_self_and_truth(tmp_path, smoke_cfg):
    sim = tmp_path / "sim"
    assert main(["simulate", "--design", "1", "--n-units", "40", "--out", str(sim), "--seed", "2"]) == 0
    fit = tmp_path / "fit"
    assert main(["fit", "--data", str(sim / "rep000" / "dataset.json"), "--config", str(smoke_cfg),
                 "--out", str(fit), "--seed", "1", "--no-plots"]) == 0
    assert main(["evaluate", "--fit", str(fit), "--other-fit", str(fit), "--out", str(tmp_path / "self")]) == 0
    rep = json.loads((tmp_path / "self" / "report.json").read_text())
    assert [rep[n]["rand_index"] for n in ("angle", "distance", "quarter")] == [1.0, 1.0, 1.0]
    assert main(["evaluate", "--fit", str(fit), "--truth", str(sim / "rep000" / "truth.json"),
                 "--out", str(tmp_path / "ev")]) == 0
    rep = json.loads((tmp_path / "ev" / "report.json").read_text())
    for n in ("angle", "distance", "quarter"):
        assert 0 <= rep[n]["rand_index"] <= 1
        assert rep[n]["wasserstein_to_truth"] >= 0
        assert set(rep[n]) >= {"k_mode", "k_histogram"}
    assert len(_read_csv(tmp_path / "ev" / "report.csv")) == 3


def test_evaluate_errors(tmp_path, small_dataset, smoke_cfg, capsys):
    fit = tmp_path / "fit"
    main(["fit", "--data", str(small_dataset), "--config", str(smoke_cfg), "--out", str(fit), "--seed", "1",
          "--no-plots"])
    code = main(["evaluate", "--fit", str(fit), "--truth", str(tmp_path / "nope.json"), "--out", str(tmp_path / "e")])
    assert code == 2
    assert "nope.json" in capsys.readouterr().err
    assert main(["evaluate", "--fit", str(fit), "--out", str(tmp_path / "e")]) == 1


SHOTS = "player_id,x,y,period\np1,25,10,1\np1,20,12,2\np1,30,20,4\n"


def _ingest(tmp_path, text):
    csv_path = tmp_path / "shots.csv"
    csv_path.write_text(text)
    out = tmp_path / "players.json"
    code = main(["ingest", "--csv", str(csv_path), "--out", str(out), "--min-attempts", "1"])
    report = json.loads(out.with_suffix(".rejections.json").read_text())
    return code, load_dataset(out), report


def test_ingest_three_rows(tmp_path):
    code, data, report = _ingest(tmp_path, SHOTS)
    assert code == 0
    assert len(data) == 1 and data[0].total == 3 and data[0].dims == (11, 12, 4)
    assert report["rejected"] == {}
    assert (tmp_path / "players.cells.csv").exists() and (tmp_path / "players.chart.png").exists()


def test_ingest_overtime_row(tmp_path):
    code, data, report = _ingest(tmp_path, SHOTS + "p1,25,15,5\n")
    assert code == 0 and data[0].total == 3
    assert report["rejected"] == {"overtime": 1}


def test_ingest_malformed_row(tmp_path, caplog):
    code, data, report = _ingest(tmp_path, SHOTS + "p1,oops,15,2\n")
    assert code == 0 and data[0].total == 3
    assert report["rejected"] == {"parse_error": 1}
    assert "malformed" in caplog.text


def test_ingest_scheme_config(tmp_path):
    scheme = tmp_path / "scheme.yaml"
    scheme.write_text("radius: 25\nmin_attempts: 1\ncolumns: {player_id: P}\n")
    (tmp_path / "s.csv").write_text("P,x,y,period\nz,25,30,1\n")
    out = tmp_path / "d.json"
    assert main(["ingest", "--csv", str(tmp_path / "s.csv"), "--scheme", str(scheme), "--out", str(out),
                 "--no-plots"]) == 0
    echo = load_yaml(out.with_suffix(".scheme_echo.yaml"))
    assert echo["radius"] == 25 and echo["columns"] == {"player_id": "P"}
    scheme.write_text("radious: 25\n")
    assert main(["ingest", "--csv", str(tmp_path / "s.csv"), "--scheme", str(scheme), "--out", str(out)]) == 1


def test_baseline_command(tmp_path):
    sim = tmp_path / "sim"
    main(["simulate", "--design", "1", "--n-units", "30", "--out", str(sim), "--seed", "3"])
    out = tmp_path / "base"
    assert main(["baseline", "--data", str(sim / "rep000" / "dataset.json"), "--k", "2",
                 "--truth", str(sim / "rep000" / "truth.json"), "--out", str(out), "--seed", "0"]) == 0
    rows = _read_csv(out / "baseline_labels.csv")
    assert len(rows) == 90 and set(rows[0]) >= {"kmeans", "dbscan-25", "dbscan-100"}
    ri = _read_csv(out / "baseline_ri.csv")
    assert len(ri) == 15 and all(0 <= float(r["rand_index"]) <= 1 for r in ri)
    assert main(["baseline", "--data", str(sim / "rep000" / "dataset.json"), "--out", str(out), "--seed", "0"]) == 1


def test_bench_command(tmp_path, smoke_cfg, capsys):
    out = tmp_path / "bench"
    assert main(["bench", "--design", "1", "--n-units", "20", "--n-rep", "2", "--config", str(smoke_cfg),
                 "--out", str(out), "--seed", "1"]) == 0
    rows = _read_csv(out / "summary.csv")
    assert len(rows) == 18
    assert len((out / "replicates.jsonl").read_text().splitlines()) == 2
    assert (out / "ri_boxplots.png").exists() and (out / "k_mode_histogram.png").exists()
    assert "mean RI" in capsys.readouterr().out


def test_sampler_config_rules():
    cfg = sampler_config({"preset": "desk", "burn_in": 100, "mfm": {"dirichlet_gamma": 2.0}}, seed=3)
    assert (cfg.n_iter, cfg.burn_in, cfg.seed) == (3000, 100, 3)
    assert all(m.dirichlet_gamma == 2.0 for m in cfg.mfm)
    for bad in ({"preset": "huge"}, {"seed": 9}, {"mfm": {"gama": 1}}, {"thin": 0}, {"adjacency": [None]}):
        with pytest.raises(ConfigError):
            sampler_config(bad, seed=3)
    cfg = sampler_config({"adjacency": [None, {"size": 3, "edges": [[0, 2], [1, 2]]}, None]}, seed=1)
    assert cfg.adjacency[1].edges() == [(0, 2), (1, 2)]


def test_ingest_settings_rules():
    scheme, m, p, cols = ingest_settings({"radius": 28, "basket_origin": [25, 4]})
    assert scheme.radius == 28 and scheme.basket_origin == (25.0, 4.0) and (m, p, cols) == (300, 4, None)
    with pytest.raises(ConfigError):
        ingest_settings({"columns": {"team": "T"}})


def test_config_echo_roundtrip(tmp_path, small_dataset, smoke_cfg):
    out = tmp_path / "fit"
    main(["fit", "--data", str(small_dataset), "--config", str(smoke_cfg), "--out", str(out), "--seed", "7",
          "--no-plots"])
    echo = load_yaml(out / "config_echo.yaml")
    out2 = tmp_path / "fit2"
    assert main(["fit", "--data", str(small_dataset), "--config", str(out / "config_echo.yaml"), "--out", str(out2),
                 "--seed", str(echo["seed"]), "--no-plots"]) == 0
    assert (out / "chain.jsonl").read_bytes() == (out2 / "chain.jsonl").read_bytes()
