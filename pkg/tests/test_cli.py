import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xrayad.cli import DATA_ROOT_ENV, ConfigError, RunConfig, build_parser, main, resolve_config
from xrayad.synthetic import fixture_records, make_fixture, write_tree

from conftest import write_image


@pytest.fixture(scope="module")
def small_tree(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    records, _ = fixture_records(12, 4, seed=3)
    return write_tree(root, records)


@pytest.fixture
def run(tmp_path, small_tree):
    """Invoke the CLI against the small tree with a 1-epoch override config."""
    config = tmp_path / "run.yaml"
    config.write_text(RunConfig(str(small_tree), str(tmp_path / "out"), train={"epochs": 1}).to_yaml())

    def invoke(*args):
        return main([args[0], "--config", str(config), *args[1:]])

    invoke.out = tmp_path / "out"
    return invoke


def manifest_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@given(
    st.sampled_from(["CAE", "VAE", "aGAN"]),
    st.sampled_from(["raw", "crop", "full"]),
    st.booleans(),
    st.lists(st.integers(0, 2**31), min_size=1, max_size=4),
    st.integers(1, 8),
)
def test_config_round_trip(model, variant, equalize, seeds, workers):
    cfg = RunConfig("/data", "/out", model, variant, equalize, seeds=seeds, workers=workers,
                    train={"epochs": 3}, metrics=["MSE"])
    assert RunConfig.from_yaml(cfg.to_yaml()) == cfg


def test_config_rejects_unknown_keys_and_bad_values(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.from_yaml("colour: red\n")
    with pytest.raises(ConfigError):
        RunConfig(str(tmp_path), seeds=[]).validate()
    with pytest.raises(ConfigError):
        RunConfig(str(tmp_path / "missing")).validate()
    with pytest.raises(ConfigError):
        RunConfig(str(tmp_path), metrics=["KLD"]).validate()
    with pytest.raises(ConfigError):
        RunConfig(str(tmp_path), train={"epochs": -1}).validate()


def test_data_root_from_environment(tmp_path):
    args = build_parser().parse_args(["split"])
    assert resolve_config(args, {DATA_ROOT_ENV: str(tmp_path)}).data_root == str(tmp_path)
    args = build_parser().parse_args(["split", "--data-root", "/elsewhere"])
    assert resolve_config(args, {DATA_ROOT_ENV: str(tmp_path)}).data_root == "/elsewhere"


def test_flag_overrides(tmp_path):
    args = build_parser().parse_args(
        ["train", "--seed", "1", "--seed", "2", "--equalize", "on", "--variant", "crop", "--model", "BAE"])
    cfg = resolve_config(args, {})
    assert (cfg.seeds, cfg.equalize, cfg.variant, cfg.model) == ([1, 2], True, "crop", "BAE")


def test_preprocess_outputs_and_idempotence(tmp_path, capsys):
    rng = np.random.default_rng(0)
    for p in range(3):
        for s in range(2):
            fx = make_fixture(rng, anomalous=(p == 0 and s == 1))
            label = "positive" if fx.anomaly.any() else "negative"
            write_image(tmp_path / "data", f"patient{p}", f"study{s}_{label}", "image1.png", fx.pixels)
    args = ["--data-root", str(tmp_path / "data"), "--output-root", str(tmp_path / "out")]
    assert main(["preprocess", *args]) == 0
    out = tmp_path / "out" / "preprocessed" / "full"
    assert len(list(out.glob("*.mask.png"))) == 6
    assert len([p for p in out.glob("*.png") if not p.name.endswith(".mask.png")]) == 6
    assert len(manifest_rows(out / "manifest.csv")) == 6
    capsys.readouterr()
    assert main(["preprocess", *args]) == 0
    assert "preprocessed 0 new images" in capsys.readouterr().out
    assert main(["preprocess", *args, "--force"]) == 0
    assert "preprocessed 6 new images" in capsys.readouterr().out


def test_preprocess_two_hands(tmp_path):
    fx = make_fixture(np.random.default_rng(5), hands=2, carrier=True)
    write_image(tmp_path / "data", "patient0", "study1_negative", "image1.png", fx.pixels)
    assert main(["preprocess", "--data-root", str(tmp_path / "data"), "--output-root", str(tmp_path / "out")]) == 0
    rows = manifest_rows(tmp_path / "out" / "preprocessed" / "full" / "manifest.csv")
    assert len(rows) == 2
    assert {r["source_image_id"] for r in rows} == {"patient0_study1_image1"}


def test_train_without_split_fails(run):
    assert run("preprocess") == 0
    assert run("train") == 1


def test_missing_data_root_fails(tmp_path):
    assert main(["split", "--data-root", str(tmp_path / "none"), "--output-root", str(tmp_path)]) == 1


def test_missing_config_file_fails(tmp_path):
    assert main(["split", "--config", str(tmp_path / "none.yaml")]) == 1


def test_full_cycle(run, capsys):
    seeds = ["--seed", "1", "--seed", "2", "--seed", "3", "--seed", "4"]
    metrics = ["--metric", "MSE", "--metric", "L1_topk"]
    assert run("preprocess") == 0
    assert run("split") == 0
    assert run("train", *seeds) == 0
    models = run.out / "models" / "CAE_full_nohe"
    assert sorted(p.parent.name for p in models.glob("seed*/checkpoint.pt")) == ["seed1", "seed2", "seed3", "seed4"]
    assert all((models / f"seed{s}" / "history.csv").is_file() for s in range(1, 5))

    assert run("score", *seeds, *metrics) == 0
    capsys.readouterr()
    assert run("evaluate", *seeds, *metrics, "--heatmap", "p0015_study1_image1") == 0
    report = capsys.readouterr().out.splitlines()
    body = [line for line in report[1:] if line.startswith("  ")]
    assert len(body) == 2 and all("±" in line for line in body)
    assert (models / "seed1" / "heatmaps" / "p0015_study1_image1_overlay.png").is_file()
    assert (models / "seed1" / "heatmaps" / "p0015_study1_image1.npy").is_file()

    assert run("evaluate", *seeds, *metrics, "--grid") == 0
    grid = (run.out / "reports" / "CAE_grid.txt").read_text().splitlines()
    assert len([c for c in grid[0].split("  ") if c.strip()]) == 6

    assert run("heatmap", "--heatmap", "nope") == 1
    assert run("evaluate", "--seed", "9") == 1


def test_train_refuses_positive_patients_in_train(run, tmp_path):
    assert run("preprocess") == 0
    assert run("split") == 0
    split = run.out / "split.tsv"
    lines = split.read_text().splitlines()
    # move a positive patient into train
    positive = "p0015"
    split.write_text("\n".join(
        f"{positive}\ttrain" if line.startswith(positive + "\t") else line for line in lines) + "\n")
    assert run("train") == 1
