import json
import os
import shutil

import numpy as np
import pytest

from sodkit import cli, netpbm


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    assert cli.main(["gen-data", "--out", str(out), "--count", "12",
                     "--size", "32", "--seed", "5"]) == 0
    return out


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    cfg = {
        "epochs": 2, "batch_size": 3, "lr_backbone_max": 0.005,
        "lr_rest_max": 0.05, "momentum": 0.9, "weight_decay": 5e-05,
        "warmup_epochs": 1, "input_size": 32, "seed": 0, "merge": "add",
        "interactor": {"kind": "rgc_dagger", "kernel": 3, "depth": 2,
                       "shared": True, "channels": 8, "fuse_bn_relu": True},
        "backbone": {"stem_channels": 8, "stage_channels": [8, 12, 16, 20],
                     "blocks_per_stage": [1, 1, 1, 1]},
    }
    path = tmp_path_factory.mktemp("cfg") / "small.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def trained(dataset, small_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "m.ckpt"
    assert cli.main(["train", "--config", str(small_config),
                     "--data", str(dataset), "--out", str(out)]) == 0
    return out


def test_gen_data_layout(dataset):
    assert (dataset / "manifest.tsv").is_file()
    assert len(list((dataset / "images").iterdir())) == 12
    assert len(list((dataset / "masks").iterdir())) == 12


def test_gen_data_deterministic(tmp_path):
    for sub in ("a", "b"):
        assert cli.main(["gen-data", "--out", str(tmp_path / sub),
                         "--count", "3", "--size", "32", "--seed", "9"]) == 0
    fa = (tmp_path / "a" / "images" / "sample_0000.ppm").read_bytes()
    fb = (tmp_path / "b" / "images" / "sample_0000.ppm").read_bytes()
    assert fa == fb


def test_train_writes_artifacts(trained, capsys):
    base = os.path.splitext(str(trained))[0]
    assert trained.is_file()
    assert os.path.isfile(base + ".best.ckpt")
    assert os.path.isfile(base + ".log.csv")
    assert os.path.isfile(base + ".log.png")
    assert os.path.isfile(base + ".config.json")


def test_train_progress_lines(dataset, small_config, tmp_path, capsys):
    out = tmp_path / "p.ckpt"
    assert cli.main(["train", "--config", str(small_config),
                     "--data", str(dataset), "--out", str(out)]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines()
             if l.startswith("epoch")]
    assert len(lines) == 2
    assert "val max-Fb" in lines[0]


def test_eval_ckpt_writes_report(trained, dataset, tmp_path, capsys):
    rep = tmp_path / "r.json"
    pr = tmp_path / "pr.csv"
    assert cli.main(["eval", "--ckpt", str(trained), "--data", str(dataset),
                     "--report", str(rep), "--pr", str(pr)]) == 0
    d = json.loads(rep.read_text())
    assert d["n_images"] == 12
    assert 0.0 <= d["f_beta_max"] <= 1.0
    header = pr.read_text().splitlines()[0]
    assert header == "threshold,precision,recall"
    assert (tmp_path / "pr.png").is_file()


def test_eval_pred_dir_perfect_scores(dataset, tmp_path):
    # ground truth offered as predictions must score perfectly
    preds = tmp_path / "preds"
    shutil.copytree(dataset / "masks", preds)
    rep = tmp_path / "r.json"
    assert cli.main(["eval", "--pred-dir", str(preds), "--data", str(dataset),
                     "--report", str(rep), "--pr", str(tmp_path / "pr.csv")]) == 0
    d = json.loads(rep.read_text())
    assert d["f_beta_max"] == pytest.approx(1.0, abs=1e-6)
    assert d["mae"] == 0.0
    assert d["s_alpha"] == pytest.approx(1.0, abs=1e-6)


def test_eval_needs_one_source(dataset, trained, tmp_path):
    args = ["eval", "--data", str(dataset), "--report",
            str(tmp_path / "r.json"), "--pr", str(tmp_path / "p.csv")]
    assert cli.main(args) == 1
    assert cli.main(args + ["--ckpt", str(trained),
                            "--pred-dir", str(tmp_path)]) == 1


def test_eval_missing_prediction_is_data_error(dataset, tmp_path):
    preds = tmp_path / "empty"
    preds.mkdir()
    rc = cli.main(["eval", "--pred-dir", str(preds), "--data", str(dataset),
                   "--report", str(tmp_path / "r.json"),
                   "--pr", str(tmp_path / "p.csv")])
    assert rc == 2


def test_predict_writes_map(trained, dataset, tmp_path):
    out = tmp_path / "sal.pgm"
    assert cli.main(["predict", "--ckpt", str(trained),
                     "--image", str(dataset / "images" / "sample_0001.ppm"),
                     "--out", str(out)]) == 0
    sal = netpbm.read_pgm(out)
    assert sal.shape == (1, 32, 32)
    assert sal.min() >= 0.0 and sal.max() <= 1.0


def test_missing_config_exits_1(dataset, tmp_path):
    rc = cli.main(["train", "--config", str(tmp_path / "nope.json"),
                   "--data", str(dataset), "--out", str(tmp_path / "m.ckpt")])
    assert rc == 1


def test_malformed_config_exits_2(dataset, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    rc = cli.main(["train", "--config", str(bad), "--data", str(dataset),
                   "--out", str(tmp_path / "m.ckpt")])
    assert rc == 2


def test_unknown_config_key_exits_2(dataset, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"epochs": 2, "batch_size": 3,
                               "warmup_epochs": 1, "input_size": 32,
                               "backbone": {"blocks": [1, 1, 1, 1]}}))
    rc = cli.main(["train", "--config", str(bad), "--data", str(dataset),
                   "--out", str(tmp_path / "m.ckpt")])
    assert rc == 2
    assert "blocks" in capsys.readouterr().err


def test_partial_backbone_keys_take_defaults(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"backbone": {"stem_channels": 8},
                               "interactor": {"channels": 8}}))
    assert cli.main(["count-params", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "total" in out


def test_bad_manifest_exits_2(trained, tmp_path):
    ds = tmp_path / "ds"
    ds.mkdir()
    (ds / "manifest.tsv").write_text("no tab here\n")
    rc = cli.main(["eval", "--ckpt", str(trained), "--data", str(ds),
                   "--report", str(tmp_path / "r.json"),
                   "--pr", str(tmp_path / "p.csv")])
    assert rc == 2


def test_argparse_errors_exit_1(capsys):
    assert cli.main(["frobnicate"]) == 1
    assert cli.main(["gen-data"]) == 1  # missing required args
    assert cli.main([]) == 1


def test_gradcheck_command_passes(capsys):
    assert cli.main(["gradcheck", "--module", "conv", "--seeds", "2"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("PASS conv")


class _FailingReport:
    max_rel_err = 1.0
    passed = False


def test_gradcheck_failure_exits_3(monkeypatch, capsys):
    monkeypatch.setattr(cli, "run_scenario",
                        lambda name, seed: _FailingReport())
    assert cli.main(["gradcheck", "--module", "conv", "--seeds", "1"]) == 3
    assert "FAIL conv" in capsys.readouterr().out


def test_count_params_full_total(capsys):
    assert cli.main(["count-params", "--config", "full"]) == 0
    rows = dict(line.split("\t") for line in
                capsys.readouterr().out.strip().splitlines())
    assert rows["total"] == "11612673"
    assert rows["interactor_body"] == "221952"


def test_count_params_json(tmp_path, capsys):
    out = tmp_path / "t.json"
    assert cli.main(["count-params", "--config", "desk",
                     "--json", str(out)]) == 0
    d = json.loads(out.read_text())
    assert d["total"] == sum(d[k] for k in
                             ("backbone", "projections", "interactor_body",
                              "decoder", "head"))


def test_flops_convention_line(capsys):
    assert cli.main(["flops", "--config", "desk", "--size", "64"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "convention: flops = 2 * MAC"
    total = [l for l in out if l.startswith("total\t")][0].split("\t")
    assert int(total[2]) == 2 * int(total[1])


def test_interp_demo_norms_and_files(dataset, tmp_path, capsys):
    img = str(dataset / "images" / "sample_0002.ppm")
    norms = {}
    for rate in (2, 4):
        out = tmp_path / f"r{rate}"
        assert cli.main(["interp-demo", "--image", img, "--rate", str(rate),
                         "--out-dir", str(out)]) == 0
        txt = (out / f"summary_rate{rate}.txt").read_text()
        vals = dict(l.split("=") for l in txt.splitlines() if "=" in l)
        norms[rate] = (float(vals["down_then_up_l2"]),
                       float(vals["up_then_down_l2"]))
        assert (out / f"interp_rate{rate}.png").is_file()
        assert (out / f"down_up_rate{rate}.pgm").is_file()
        assert (out / f"diff_up_down_rate{rate}.pgm").is_file()
    for du, ud in norms.values():
        assert du > 0.0 and ud > 0.0
    # losing resolution first destroys more signal at coarser rates; the
    # up-first trip instead converges toward identity as the rate grows
    assert norms[4][0] > norms[2][0]
    assert norms[4][0] > norms[4][1]


def test_interp_demo_rejects_bad_rate(dataset, tmp_path):
    img = str(dataset / "images" / "sample_0000.ppm")
    assert cli.main(["interp-demo", "--image", img, "--rate", "3",
                     "--out-dir", str(tmp_path)]) == 1  # 32 % 3 != 0
    assert cli.main(["interp-demo", "--image", img, "--rate", "1",
                     "--out-dir", str(tmp_path)]) == 1


def test_dump_features_both_stages(trained, dataset, tmp_path):
    img = str(dataset / "images" / "sample_0003.ppm")
    for stage in ("before", "after"):
        out = tmp_path / stage
        assert cli.main(["dump-features", "--ckpt", str(trained),
                         "--image", img, "--out-dir", str(out),
                         "--stage", stage]) == 0
        names = sorted(p.name for p in out.iterdir())
        assert names == [f"stage{i}_{stage}.pgm" for i in range(1, 6)]


def test_ablate_guard_rails(dataset, tmp_path):
    # 32px images are too small for the largest pooling bin
    rc = cli.main(["ablate", "--data", str(dataset),
                   "--rows", str(tmp_path / "rows.csv")])
    assert rc == 1


def test_val_data_flag(dataset, small_config, tmp_path):
    val = tmp_path / "val"
    assert cli.main(["gen-data", "--out", str(val), "--count", "3",
                     "--size", "32", "--seed", "11"]) == 0
    out = tmp_path / "m.ckpt"
    assert cli.main(["train", "--config", str(small_config),
                     "--data", str(dataset), "--val-data", str(val),
                     "--out", str(out)]) == 0
    assert out.is_file()
