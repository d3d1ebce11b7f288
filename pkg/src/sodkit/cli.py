"""Command-line entry point.

Commands map onto the library one-to-one; every report that goes to a
CSV/JSON file also gets a rendered figure written next to it. Errors
exit with the code carried by the exception: 1 usage, 2 data format,
3 numerical.
"""

import argparse
import json
import os
import sys
import tempfile

import numpy as np

from . import data, netpbm
from .analysis import (bottleneck_additions, bottleneck_backbone_params,
                       count_params, estimate_flops)
from .backbone import tiny_backbone
from .checkpoint import load_checkpoint
from .errors import DataFormatError, NumericalError, SodkitError, UsageError
from .figures import (ablation_figure, interp_figure, pr_curve_figure,
                      training_curves_figure)
from .gradcheck import SCENARIOS, run_scenario
from .interactors import InteractorConfig, dump_features
from .metrics import DatasetMetrics
from .model import STREAM_DATA, ModelConfig, stream_rng
from .ops import bilinear_resize
from .tensor import Tensor, no_grad
from .trainer import TrainConfig, desk_train, evaluate, full_train, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _read_json(path, what: str) -> dict:
    if not os.path.isfile(path):
        raise UsageError(f"{what} {path} does not exist")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as e:
            raise DataFormatError(f"{path}: not valid JSON: {e}") from None


def _from_dict(parse, d: dict, path: str):
    # bad key names or value shapes surface as TypeError/KeyError/ValueError
    try:
        return parse(d)
    except (KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"{path}: bad config: {e}") from None


def _train_config(source: str) -> TrainConfig:
    if source == "full":
        return full_train()
    if source == "desk":
        return desk_train()
    d = _read_json(source, "config file")
    return _from_dict(TrainConfig.from_dict, d, source)


def _model_config(source: str) -> ModelConfig:
    if source == "full":
        return full_train().model_config()
    if source == "desk":
        return desk_train().model_config()
    d = _read_json(source, "config file")
    if "epochs" in d:  # a full train config also describes the model
        return _from_dict(TrainConfig.from_dict, d, source).model_config()
    return _from_dict(ModelConfig.from_dict, d, source)


def _holdout(samples):
    """Deterministic 1-in-5 validation split when no val dir is given."""
    val = samples[::5]
    tr = [s for i, s in enumerate(samples) if i % 5]
    return tr, val


def _split_data(args):
    samples = data.load_dataset(args.data)
    if args.val_data:
        return samples, data.load_dataset(args.val_data)
    return _holdout(samples)


# -- commands ---------------------------------------------------------------


def cmd_gen_data(args) -> int:
    rng = stream_rng(args.seed, STREAM_DATA)
    manifest = data.gen_synthetic(args.count, args.size, rng, args.out)
    print(f"wrote {args.count} pairs, manifest {manifest}")
    return 0


def cmd_train(args) -> int:
    cfg = _train_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    tr, va = _split_data(args)

    def progress(epoch, mean_loss, val_f):
        print(f"epoch {epoch:3d}/{cfg.epochs}  loss {mean_loss:.4f}  "
              f"val max-Fb {val_f:.4f}")

    result = train(cfg, tr, va, args.out, progress=progress)
    curves = os.path.splitext(result.log_path)[0] + ".png"
    training_curves_figure(result.log_rows, curves)
    print(f"final {result.final_path}")
    print(f"best  {result.best_path} (max-Fb {result.best_f_beta:.4f} "
          f"at epoch {result.best_epoch})")
    print(f"log   {result.log_path}")
    print(f"curves {curves}")
    return 0


def _predictions_from_dir(pred_dir, pairs):
    for img_path, mask_path in pairs:
        stem = os.path.splitext(os.path.basename(img_path))[0]
        pred_path = os.path.join(pred_dir, stem + ".pgm")
        if not os.path.isfile(pred_path):
            raise DataFormatError(f"missing prediction {pred_path}")
        yield netpbm.read_pgm(pred_path)[0], netpbm.read_mask(mask_path)[0]


def cmd_eval(args) -> int:
    if bool(args.ckpt) == bool(args.pred_dir):
        raise UsageError("eval needs exactly one of --ckpt or --pred-dir")
    dm = DatasetMetrics(pooled_pr=args.pooled_pr)
    if args.pred_dir:
        pairs = data.read_manifest(os.path.join(args.data, data.MANIFEST_NAME))
        for pred, gt in _predictions_from_dir(args.pred_dir, pairs):
            dm.add(pred, gt)
        report = dm.report()
    else:
        model = load_checkpoint(args.ckpt)
        samples = data.load_dataset(args.data)
        report = evaluate(model, samples, batch_size=args.batch,
                          pooled_pr=args.pooled_pr)
    with open(args.report, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    with open(args.pr, "w") as fh:
        fh.write("threshold,precision,recall\n")
        for t, p, r in report.pr_curve:
            fh.write(f"{t:.6f},{p:.6f},{r:.6f}\n")
    figure = os.path.splitext(args.pr)[0] + ".png"
    pr_curve_figure(report, figure)
    print(f"images {report.n_images} (degenerate {report.degenerate_count})  "
          f"max-Fb {report.f_beta_max:.4f}  MAE {report.mae:.4f}  "
          f"Sa {report.s_alpha:.4f}")
    print(f"report {args.report}\npr {args.pr}\nfigure {figure}")
    return 0


def cmd_predict(args) -> int:
    model = load_checkpoint(args.ckpt)
    img = netpbm.read_ppm(args.image)
    with no_grad():
        sal = model(Tensor(img[None])).data[0]
    netpbm.write_pgm(sal, args.out)
    print(f"wrote {args.out}")
    return 0


ABLATION_ROWS = (
    # the four lateral-connection settings, then the interactor sweep
    ("connections", "1x1x1-per-stage", InteractorConfig("plain", 1, 1, False)),
    ("connections", "3x3x2-per-stage", InteractorConfig("plain", 3, 2, False)),
    ("connections", "3x3x2-shared", InteractorConfig("plain", 3, 2, True)),
    ("connections", "3x3x4-shared", InteractorConfig("plain", 3, 4, True)),
    ("interactor", "plain-convs", InteractorConfig("plain", 3, 4, True)),
    ("interactor", "rgc", InteractorConfig("rgc")),
    ("interactor", "rgc-dagger", InteractorConfig("rgc_dagger")),
    ("interactor", "ppm", InteractorConfig("ppm")),
    ("interactor", "ppm-dagger", InteractorConfig("ppm_dagger")),
)


def ablate(train_samples, val_samples, rows_path, epochs=4, batch=4,
           seed=0, channels=16, progress=None):
    size = train_samples[0].image.shape[1]
    if size < 192:
        raise UsageError(
            f"ablation needs images of at least 192x192 so the coarsest "
            f"stage can hold the largest pooling bin; got {size}")
    if len(train_samples) % batch == 1:
        raise UsageError(
            f"{len(train_samples)} train samples with batch {batch} leave a "
            f"single-image final batch, which train-mode batchnorm rejects "
            f"once a pooling branch reduces to 1x1; adjust count or batch")
    results, cache = [], {}
    with tempfile.TemporaryDirectory(prefix="sodkit-ablate-") as tmp:
        for group, label, icfg in ABLATION_ROWS:
            icfg = InteractorConfig(**{**icfg.to_dict(), "channels": channels})
            key = json.dumps(icfg.to_dict(), sort_keys=True)
            if key not in cache:
                cfg = TrainConfig(
                    epochs=epochs, batch_size=batch, warmup_epochs=1,
                    input_size=size, seed=seed, interactor=icfg,
                    backbone=tiny_backbone())
                out = os.path.join(tmp, f"{label}.ckpt")
                res = train(cfg, train_samples, val_samples, out)
                best = load_checkpoint(res.best_path)
                cache[key] = evaluate(best, val_samples, batch_size=batch)
            rep = cache[key]
            results.append((group, label, icfg, rep))
            if progress is not None:
                progress(group, label, rep)

    with open(rows_path, "w") as fh:
        fh.write("group,label,kind,kernel,depth,shared,"
                 "f_beta_max,mae,s_alpha\n")
        for group, label, icfg, rep in results:
            fh.write(f"{group},{label},{icfg.kind},{icfg.kernel},"
                     f"{icfg.depth},{int(icfg.shared)},{rep.f_beta_max:.6f},"
                     f"{rep.mae:.6f},{rep.s_alpha:.6f}\n")
    return results


def cmd_ablate(args) -> int:
    tr, va = _split_data(args)

    def progress(group, label, rep):
        print(f"{group:12s} {label:18s} max-Fb {rep.f_beta_max:.4f}  "
              f"MAE {rep.mae:.4f}  Sa {rep.s_alpha:.4f}")

    results = ablate(tr, va, args.rows, epochs=args.epochs, batch=args.batch,
                     seed=args.seed, progress=progress)
    figure = os.path.splitext(args.rows)[0] + ".png"
    ablation_figure([(label, rep.f_beta_max, rep.mae, rep.s_alpha)
                     for _, label, _, rep in results], figure)

    by_label = {label: rep for _, label, _, rep in results}
    shared = by_label["3x3x2-shared"].f_beta_max
    unshared = by_label["3x3x2-per-stage"].f_beta_max
    rgc = by_label["rgc"].f_beta_max
    dagger = by_label["rgc-dagger"].f_beta_max
    print(f"shared >= unshared at equal depth: {shared >= unshared} "
          f"({shared:.4f} vs {unshared:.4f})")
    print(f"rgc-dagger >= rgc: {dagger >= rgc} ({dagger:.4f} vs {rgc:.4f})")
    print(f"rows {args.rows}\nfigure {figure}")
    return 0


def cmd_count_params(args) -> int:
    table = count_params(_model_config(args.config))
    for name, val in table.rows():
        print(f"{name}\t{val}")
    print(f"body_instances\t{table.body_instances}")
    if args.bottleneck:
        base = bottleneck_backbone_params()
        adds = bottleneck_additions()
        print(f"bottleneck_50_backbone\t{base}")
        for k in ("projections", "body", "decoder", "head", "total"):
            print(f"bottleneck_50_add_{k}\t{adds[k]}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(table.to_dict(), fh, indent=2)
        print(f"json {args.json}")
    return 0


def cmd_flops(args) -> int:
    report = estimate_flops(_model_config(args.config), args.size)
    print("convention: flops = 2 * MAC")
    for comp, macs in sorted(report.component_macs().items()):
        print(f"{comp}\t{macs}\t{2 * macs}")
    print(f"total\t{report.total_macs}\t{report.total_flops}")
    if args.per_layer:
        for comp, layer, macs in report.rows:
            print(f"  {comp}\t{layer}\t{macs}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2)
        print(f"json {args.json}")
    return 0


def cmd_gradcheck(args) -> int:
    names = list(SCENARIOS) if args.module == "all" else [args.module]
    failed = []
    for name in names:
        worst = 0.0
        ok = True
        for seed in range(args.seeds):
            rep = run_scenario(name, seed)
            worst = max(worst, rep.max_rel_err)
            ok = ok and rep.passed
        print(f"{'PASS' if ok else 'FAIL'} {name}  "
              f"max rel err {worst:.3e} over {args.seeds} seeds")
        if not ok:
            failed.append(name)
    if failed:
        raise NumericalError(f"gradient check failed: {', '.join(failed)}")
    return 0


def _luminance(img: np.ndarray) -> np.ndarray:
    r, g, b = img[0], img[1], img[2]
    return 0.299 * r + 0.587 * g + 0.114 * b


def interp_demo(image_path, rate: int, out_dir):
    """Round-trip resampling at the given rate; returns both L2 norms
    and the file paths it wrote."""
    if rate < 2:
        raise UsageError(f"rate {rate} must be >= 2")
    img = netpbm.read_ppm(image_path)
    lum = _luminance(img)
    h, w = lum.shape
    if h % rate or w % rate:
        raise UsageError(f"image {h}x{w} not divisible by rate {rate}")
    os.makedirs(out_dir, exist_ok=True)
    t = Tensor(lum[None, None].astype(np.float64))
    with no_grad():
        down_up = bilinear_resize(
            bilinear_resize(t, h // rate, w // rate), h, w).data[0, 0]
        up_down = bilinear_resize(
            bilinear_resize(t, h * rate, w * rate), h, w).data[0, 0]
    diff_du = np.abs(lum - down_up)
    diff_ud = np.abs(lum - up_down)
    norms = {"down_then_up_l2": float(np.linalg.norm(diff_du)),
             "up_then_down_l2": float(np.linalg.norm(diff_ud))}

    paths = {}
    for name, arr in (("down_up", down_up), ("up_down", up_down)):
        paths[name] = os.path.join(out_dir, f"{name}_rate{rate}.pgm")
        netpbm.write_pgm(arr, paths[name])
    for name, arr in (("diff_down_up", diff_du), ("diff_up_down", diff_ud)):
        # residuals are small; stretch to full range for the image file
        scaled = arr / max(1e-12, float(arr.max()))
        paths[name] = os.path.join(out_dir, f"{name}_rate{rate}.pgm")
        netpbm.write_pgm(scaled, paths[name])

    summary = os.path.join(out_dir, f"summary_rate{rate}.txt")
    with open(summary, "w") as fh:
        fh.write(f"rate={rate}\n")
        for k, v in norms.items():
            fh.write(f"{k}={v:.6f}\n")
        fh.write("note=difference images are stretched to full range\n")
    paths["summary"] = summary

    figure = os.path.join(out_dir, f"interp_rate{rate}.png")
    interp_figure([("original", lum),
                   (f"down {rate}x then up", down_up),
                   (f"up {rate}x then down", up_down),
                   ("|diff| down-up", diff_du),
                   ("|diff| up-down", diff_ud)], figure)
    paths["figure"] = figure
    return norms, paths


def cmd_interp_demo(args) -> int:
    norms, paths = interp_demo(args.image, args.rate, args.out_dir)
    print(f"rate {args.rate}  down-then-up L2 {norms['down_then_up_l2']:.4f}  "
          f"up-then-down L2 {norms['up_then_down_l2']:.4f}")
    for k in ("summary", "figure"):
        print(f"{k} {paths[k]}")
    return 0


def cmd_dump_features(args) -> int:
    model = load_checkpoint(args.ckpt)
    img = netpbm.read_ppm(args.image)
    with no_grad():
        pyramid, interacted = model.forward_features(Tensor(img[None]))
    tensors = list(pyramid) if args.stage == "before" else interacted
    paths = dump_features(tensors, args.out_dir, args.stage)
    for p in paths:
        print(p)
    return 0


# -- wiring ------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="sodkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True,
                   help="'full', 'desk', or a JSON config path")
    p.add_argument("--data", required=True)
    p.add_argument("--val-data", default=None)
    p.add_argument("--out", required=True, help="final checkpoint path")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config's seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint or prediction dir")
    p.add_argument("--ckpt")
    p.add_argument("--pred-dir")
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True, help="JSON output path")
    p.add_argument("--pr", required=True, help="PR-curve CSV path")
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--pooled-pr", action="store_true",
                   help="pool P/R over the dataset instead of per-image")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="saliency map for one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", help="run the connection/interactor matrix")
    p.add_argument("--data", required=True)
    p.add_argument("--val-data", default=None)
    p.add_argument("--rows", required=True, help="output CSV path")
    p.add_argument("--epochs", type=int, default=4)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("count-params", help="per-component parameter table")
    p.add_argument("--config", required=True)
    p.add_argument("--bottleneck", action="store_true",
                   help="also print the analytic 50-layer table")
    p.add_argument("--json", default=None)
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("flops", help="analytic FLOP estimate")
    p.add_argument("--config", required=True)
    p.add_argument("--size", type=int, default=224)
    p.add_argument("--per-layer", action="store_true")
    p.add_argument("--json", default=None)
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--module", default="all",
                   choices=["all"] + sorted(SCENARIOS))
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("interp-demo",
                       help="aliasing from round-trip interpolation")
    p.add_argument("--image", required=True)
    p.add_argument("--rate", type=int, default=4)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_interp_demo)

    p = sub.add_parser("dump-features", help="write per-stage feature maps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--stage", choices=["before", "after"], default="after")
    p.set_defaults(func=cmd_dump_features)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SodkitError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
