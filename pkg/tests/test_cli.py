"""End-to-end CLI flow over a small random-scenario dataset."""

import csv
import json

import numpy as np
import pytest

from mdpmix import cli
from mdpmix.core import load_mixture, load_trajectories


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliflow")
    cli.main(
        [
            "mdpmix", "generate", "--scenario", "random", "--s", "10", "--a", "1",
            "--k", "2", "--delta", "1.2", "--horizon", "400", "--n", "60",
            "--seed", "0", "--out", str(root / "data.jsonl"),
        ]
    )
    return root


def test_generate_writes_data_and_sidecar(workdir):
    data = load_trajectories(workdir / "data.jsonl")
    assert len(data) == 60
    assert all(t.horizon == 400 for t in data)
    mixture = load_mixture(workdir / "data.jsonl.model.json")
    assert mixture.num_components == 2
    sidecar = json.loads((workdir / "data.jsonl.model.json").read_text())
    assert sidecar["mixing"]["t_mix"] >= 1


def test_subspace_cluster_estimate_classify_chain(workdir, capsys):
    cli.main(
        [
            "mdpmix", "subspace", "--in", str(workdir / "data.jsonl"), "--k", "2",
            "--out", str(workdir / "bank.npz"),
            "--eigen-out", str(workdir / "eigen.csv"),
        ]
    )
    bank = np.load(workdir / "bank.npz")
    assert bank["projectors"].shape == (10, 2, 10)

    cli.main(
        [
            "mdpmix", "cluster", "--in", str(workdir / "data.jsonl"),
            "--bank", str(workdir / "bank.npz"), "--k", "2", "--beta", "0.05",
            "--tau", "0.7", "--out", str(workdir / "labels.csv"),
            "--hist-out", str(workdir / "hist.csv"),
            "--block-out", str(workdir / "block.csv"),
        ]
    )
    with open(workdir / "labels.csv") as fh:
        labels = list(csv.DictReader(fh))
    assert len(labels) == 30  # the clustering half of the split
    assert (workdir / "hist.csv").exists() and (workdir / "block.csv").exists()

    cli.main(
        [
            "mdpmix", "estimate", "--in", str(workdir / "data.jsonl"),
            "--labels", str(workdir / "labels.csv"), "--k", "2",
            "--beta", "0.05", "--out", str(workdir / "model.json"),
        ]
    )
    model = json.loads((workdir / "model.json").read_text())
    assert model["K"] == 2 and len(model["frequent"]) >= 1

    cli.main(
        [
            "mdpmix", "classify", "--in", str(workdir / "data.jsonl"),
            "--model", str(workdir / "model.json"),
            "--out", str(workdir / "classified.csv"),
        ]
    )
    with open(workdir / "classified.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 60
    assert {r["label"] for r in rows} <= {"0", "1"}

    cli.main(
        [
            "mdpmix", "evaluate", "--labels", str(workdir / "labels.csv"),
            "--truth", str(workdir / "data.jsonl"), "--k", "2",
        ]
    )
    out = capsys.readouterr().out
    assert "permutation accuracy" in out


def test_em_subcommand_with_labels_init(workdir):
    cli.main(
        [
            "mdpmix", "em", "--in", str(workdir / "data.jsonl"), "--k", "2",
            "--init", str(workdir / "labels.csv"),
            "--out-resp", str(workdir / "resp.csv"),
            "--out-trace", str(workdir / "trace.csv"),
            "--out-params", str(workdir / "params.json"),
        ]
    )
    with open(workdir / "resp.csv") as fh:
        rows = list(csv.DictReader(fh))
    # EM runs over the trajectories present in the labels CSV
    assert len(rows) == 30
    for row in rows:
        total = float(row["p0"]) + float(row["p1"])
        assert total == pytest.approx(1.0, abs=1e-9)
    with open(workdir / "trace.csv") as fh:
        trace = [float(r["loglik"]) for r in csv.DictReader(fh)]
    assert np.all(np.diff(trace) >= -1e-9)
    params = json.loads((workdir / "params.json").read_text())
    assert len(params["weights"]) == 2


def test_em_subcommand_random_restarts(workdir):
    cli.main(
        [
            "mdpmix", "em", "--in", str(workdir / "data.jsonl"), "--k", "2",
            "--init", "random:0:3", "--max-iter", "50",
            "--out-resp", str(workdir / "resp_rand.csv"),
        ]
    )
    assert (workdir / "resp_rand.csv").exists()


def test_experiment_subcommand(workdir):
    cli.main(
        [
            "mdpmix", "experiment", "--scenario", "random", "--s", "10", "--a", "1",
            "--k", "2", "--horizons", "400", "--n", "40", "--trials", "1",
            "--variants", "learned", "--beta", "0.05", "--tau", "0.7",
            "--out", str(workdir / "results.csv"),
        ]
    )
    with open(workdir / "results.csv") as fh:
        assert fh.readline().startswith("# schema=")
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    assert rows[0]["variant"] == "learned"


def test_config_file_overrides_defaults(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\ntau=0.7\nbeta=0.05\n")
    parser = cli.build_parser()
    cli._apply_config(parser, ["mdpmix", "cluster", "--config", str(cfg)])
    args = parser.parse_args(
        ["cluster", "--config", str(cfg), "--in", "x", "--bank", "y", "--k", "2",
         "--out", "z"]
    )
    assert args.tau == 0.7
    assert args.beta == 0.05


def test_em_subcommand_is_order_insensitive_to_labels_csv(workdir):
    # labels CSV rows are joined by id, not by position
    with open(workdir / "labels.csv") as fh:
        rows = list(csv.DictReader(fh))
    shuffled = tmp = workdir / "labels_shuffled.csv"
    with open(tmp, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["id", "label"])
        writer.writeheader()
        writer.writerows(reversed(rows))
    cli.main(
        [
            "mdpmix", "estimate", "--in", str(workdir / "data.jsonl"),
            "--labels", str(shuffled), "--k", "2", "--beta", "0.05",
            "--out", str(workdir / "model_shuffled.json"),
        ]
    )
    a = json.loads((workdir / "model.json").read_text())
    b = json.loads((workdir / "model_shuffled.json").read_text())
    assert a["trans"] == b["trans"]
    assert a["weights"] == b["weights"]
