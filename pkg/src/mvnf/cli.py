"""Command-line workflow: ``mvnf <command> ...``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
Every command writes a ``*.run.json`` manifest next to its main output.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import metrics, render, sweep
from .baselines import (CopulaSummary, copula_reconstruct, copula_summarize,
                        lerp_reduce_expand, lerp_storage_bytes)
from .field import DatasetError, load_dataset, save_dataset
from .model import (ModelConfig, ModelFormatError, NumericalError, compression_ratio,
                    format_ratio, load_model, param_count, reconstruct, save_model)
from .trainer import TrainConfig, train

log = logging.getLogger("mvnf")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ helpers


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _run_manifest(path: Path, command: str, args, outputs: list[Path], t0: float,
                  extra: dict | None = None) -> None:
    snapshot = {k: v for k, v in vars(args).items() if k != "func"}
    record = {
        "command": command,
        "config": snapshot,
        "outputs": {str(p): _sha256(p) for p in outputs if p.is_file()},
        "wall_seconds": time.perf_counter() - t0,
    }
    if extra:
        record.update(extra)
    _write_json(path, json.loads(json.dumps(record, default=str)))


def _int_tuple(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_pair(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}")
    return lo, hi


def _configs(args, field=None) -> tuple[ModelConfig, TrainConfig]:
    """Merge an optional JSON config file with command-line flags."""
    base: dict = {}
    if getattr(args, "config", None):
        base = json.loads(Path(args.config).read_text(encoding="utf-8"))
    flag_map = {"width": "hidden_width", "blocks": "num_res_blocks", "omega0": "omega0",
                "skip_scale": "skip_scale",
                "lr": "learning_rate", "batch": "batch_size", "epochs": "epochs",
                "decay": "decay_rate", "decay_every": "decay_every",
                "sample_frac": "sample_fraction"}
    for flag, key in flag_map.items():
        val = getattr(args, flag, None)
        if val is not None:
            base[key] = val
    if args.seed is not None:
        base.setdefault("init_seed", args.seed)
        base.setdefault("shuffle_seed", args.seed)
    mkeys = {f.name for f in fields(ModelConfig)}
    tkeys = {f.name for f in fields(TrainConfig)}
    unknown = set(base) - mkeys - tkeys
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    mkw = {k: v for k, v in base.items() if k in mkeys}
    mkw.setdefault("in_dim", field.grid.dims if field else 3)
    mkw.setdefault("out_dim", field.num_vars if field else 1)
    try:
        return ModelConfig(**mkw), TrainConfig(**{k: v for k, v in base.items() if k in tkeys})
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with model/training settings")
    p.add_argument("--width", type=int, help="hidden width (default 120)")
    p.add_argument("--blocks", type=int, help="residual blocks (default 10)")
    p.add_argument("--omega0", type=float, help="sine frequency (default 30)")
    p.add_argument("--skip-scale", type=float,
                   help="residual skip scale in (0, 1] (default 1/sqrt(2); 1 = plain sum)")
    p.add_argument("--lr", type=float, help="learning rate (default 1e-4)")
    p.add_argument("--batch", type=int, help="batch size (default 2048)")
    p.add_argument("--epochs", type=int, help="epochs (default 300)")
    p.add_argument("--decay", type=float, help="lr decay factor (default 0.8)")
    p.add_argument("--decay-every", type=int, help="epochs between decays (default 15)")
    p.add_argument("--sample-frac", type=float, help="fraction of grid points used")
    p.add_argument("--seed", type=int, default=0)


# ----------------------------------------------------------------- commands


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    _configs(args)  # flag validation before any data is touched
    field = load_dataset(args.dataset)
    mconfig, tconfig = _configs(args, field)
    log.info("training %s on %s (%d points, %d variables)", mconfig, args.dataset,
             field.grid.size, field.num_vars)

    def progress(epoch, loss, lr):
        if epoch % max(1, tconfig.epochs // 20) == 0 or epoch == tconfig.epochs - 1:
            log.info("epoch %4d  loss %.4e  lr %.3e", epoch, loss, lr)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    checkpoints = []

    def checkpoint(epoch, model):
        path = out.with_suffix(f".epoch{epoch + 1:04d}.mvnf")
        save_model(model, path)
        checkpoints.append(path)

    if args.checkpoint_every < 0:
        raise UsageError("--checkpoint-every must be >= 0")
    model, report = train(field, mconfig, tconfig, progress=progress, checkpoint=checkpoint,
                          checkpoint_every=args.checkpoint_every)
    nbytes = save_model(model, out)
    report_path = Path(args.report) if args.report else out.with_suffix(".train.json")
    _write_json(report_path, report.to_dict())
    log.info("model: %d bytes (%d parameters), CR %s, %d/%d points used",
             nbytes, param_count(mconfig), format_ratio(compression_ratio(nbytes, field)),
             report.num_samples, report.num_points)
    _run_manifest(out.with_suffix(".run.json"), "train", args,
                  [out, report_path] + checkpoints, t0,
                  {"model_config": asdict(mconfig), "train_config": asdict(tconfig),
                   "model_bytes": nbytes})
    return 0


def cmd_reconstruct(args) -> int:
    t0 = time.perf_counter()
    model = load_model(args.model)
    t1 = time.perf_counter()
    rec = reconstruct(model, batch_size=args.batch)
    inference = time.perf_counter() - t1
    log.info("inference time %.3f s", inference)
    manifest = save_dataset(rec, args.out)
    outputs = [manifest] + [Path(args.out) / e["file"] for e in
                            json.loads(manifest.read_text())["variables"]]
    _run_manifest(Path(args.out) / "reconstruct.run.json", "reconstruct", args, outputs, t0,
                  {"inference_seconds": inference})
    return 0


def _labels(args, n: int) -> list[str]:
    if args.labels:
        labels = args.labels.split(",")
        if len(labels) != n:
            raise UsageError(f"{n} candidates but {len(labels)} labels")
        return labels
    return [f"cand{i}" for i in range(n)]


EVAL_KINDS = ("psnr", "stats", "grad", "contours", "deps", "ssim")


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    which = args.which.split(",") if args.which != "all" else list(EVAL_KINDS)
    bad = [w for w in which if w not in EVAL_KINDS]
    if bad:
        raise UsageError(f"unknown eval kinds {bad}; choose from {EVAL_KINDS}")
    reference = load_dataset(args.reference)
    dataset_name = _dataset_name(args.reference)
    candidates = [load_dataset(c) for c in args.candidates]
    labels = _labels(args, len(candidates))
    for c in candidates:
        if c.grid.shape != reference.grid.shape or c.names != reference.names:
            raise DatasetError("grid mismatch between reference and candidate")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    storage = dict(_kv(s) for s in args.storage) if args.storage else {}

    reports, outputs, deps = {}, [], {}
    for label, cand in zip(labels, candidates):
        rep = metrics.evaluate(reference, cand, gradients="grad" in which)
        if "contours" in which:
            res = metrics.contour_study(reference, cand, args.n_iso, args.seed)
            ch, hd = metrics.aggregate_contours(res)
            rep.contours = {
                "mean_chamfer": ch, "mean_hausdorff": hd,
                "variables": {k: {"mean_chamfer": r.mean_chamfer,
                                  "mean_hausdorff": r.mean_hausdorff,
                                  "excluded": r.excluded} for k, r in res.items()},
            }
        if "deps" in which:
            dep = metrics.dependency_error(reference, cand, bins=args.bins)
            deps[label] = dep
            rep.dependency = {"mean_corr_error": dep.mean_corr_error,
                              "mean_mi_error": dep.mean_mi_error,
                              "corr_error": dep.corr_error.tolist(),
                              "mi_error": dep.mi_error.tolist()}
        if "ssim" in which:
            rep.ssim = {}
            for name in reference.names:
                a = _render_for_ssim(reference, reference, name, args)
                b = _render_for_ssim(reference, cand, name, args)
                try:
                    rep.ssim[name] = metrics.ssim(a.luminance(), b.luminance())
                except ValueError as exc:
                    raise UsageError(f"ssim: {exc}") from exc
                for img, method in ((a, "reference"), (b, label)):
                    img_path = out / render.image_name(dataset_name, name, method)
                    if img_path not in outputs:
                        img.save(img_path)
                        outputs.append(img_path)
        reports[label] = rep
        path = out / f"{label}.eval.json"
        _write_json(path, rep.to_dict())
        outputs.append(path)

    if deps:
        outputs += _write_dependency_outputs(deps, reference.names, out)
    table = out / "comparison.csv"
    _write_comparison(table, reports, storage, which)
    outputs.append(table)
    _run_manifest(out / "eval.run.json", "eval", args, outputs, t0)
    for label, rep in reports.items():
        print(f"{label}: mean PSNR {rep.mean_psnr:.3f} dB")
    return 0


def _dataset_name(manifest: str) -> str:
    path = Path(manifest)
    return (path.parent if path.suffix == ".json" else path).resolve().name


def _kv(text: str):
    key, _, val = text.partition("=")
    return key, float(val)


def _render_for_ssim(reference, field, name, args):
    meta = reference.meta(name)
    axis = args.slice_axis if reference.grid.dims == 3 else None
    index = args.slice_index
    if axis is not None and index is None:
        index = reference.grid.shape[axis] // 2
    return render.render_field(field, name, axis, index, args.colormap,
                               (meta.raw_min, meta.raw_max))


def _write_dependency_outputs(deps: dict, names, out: Path) -> list[Path]:
    """CSV matrices plus heatmaps on a color scale shared by all methods."""
    paths = []
    for key in ("corr_error", "mi_error"):
        vmax = max(float(getattr(d, key).max()) for d in deps.values())
        vmax = vmax if vmax > 0 else 1.0
        for label, dep in deps.items():
            mat = getattr(dep, key)
            csv_path = out / f"{label}_{key}.csv"
            with csv_path.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow([""] + list(names))
                for name, row in zip(names, mat):
                    w.writerow([name] + [f"{x:.9g}" for x in row])
            img_path = out / f"{label}_{key}.ppm"
            render.render_matrix_heatmap(mat, 0.0, vmax).save(img_path)
            paths += [csv_path, img_path]
        (out / f"{key}_scale.json").write_text(json.dumps({"vmin": 0.0, "vmax": vmax}) + "\n")
    return paths


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return f"{x:.6g}"


def _write_comparison(path: Path, reports: dict, storage: dict, which) -> None:
    header = ["method", "storage_kb", "mean_psnr", "max_abs", "p95_abs", "frac_above_0.05"]
    if "grad" in which:
        header.append("gradient_psnr")
    if "contours" in which:
        header += ["chamfer", "hausdorff"]
    if "deps" in which:
        header += ["corr_error", "mi_error"]
    if "ssim" in which:
        header.append("ssim")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for label, rep in reports.items():
            kb = storage.get(label)
            row = [label, _fmt(kb / 1024 if kb else None), _fmt(rep.mean_psnr),
                   _fmt(rep.mean_max_abs), _fmt(rep.mean_p95_abs), _fmt(rep.mean_frac_above)]
            if "grad" in which:
                row.append(_fmt(float(np.mean([v.gradient_psnr for v in rep.variables]))))
            if "contours" in which:
                row += [_fmt(rep.contours["mean_chamfer"]), _fmt(rep.contours["mean_hausdorff"])]
            if "deps" in which:
                row += [_fmt(rep.dependency["mean_corr_error"]),
                        _fmt(rep.dependency["mean_mi_error"])]
            if "ssim" in which:
                row.append(_fmt(float(np.mean(list(rep.ssim.values())))))
            w.writerow(row)


def cmd_baseline(args) -> int:
    t0 = time.perf_counter()
    field = load_dataset(args.dataset)
    out = Path(args.out)
    extra = {}
    if args.method == "lerp":
        factor = args.factor if len(args.factor) > 1 else args.factor[0]
        try:
            rec = lerp_reduce_expand(field, factor)
            extra["storage_bytes"] = lerp_storage_bytes(field.grid.shape, field.num_vars, factor)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        manifest = save_dataset(rec, out)
        outputs = [manifest]
    else:
        if len(args.block) != field.grid.dims:
            raise UsageError(f"--block needs {field.grid.dims} sizes")
        summary = copula_summarize(field, args.block)
        out.mkdir(parents=True, exist_ok=True)
        spath = out / "summary.mvcs"
        extra["storage_bytes"] = summary.save(spath)
        rec = copula_reconstruct(summary, field.grid, seed=args.seed, mode=args.mode)
        manifest = save_dataset(rec, out)
        outputs = [spath, manifest]
    extra["compression_ratio"] = format_ratio(compression_ratio(extra["storage_bytes"], field))
    log.info("%s baseline: %d bytes, CR %s", args.method, extra["storage_bytes"],
             extra["compression_ratio"])
    _run_manifest(out / f"{args.method}.run.json", f"baseline {args.method}", args,
                  outputs, t0, extra)
    return 0


def cmd_query(args) -> int:
    t0 = time.perf_counter()
    try:
        predicate = metrics.parse_predicate(args.predicate)
    except metrics.QueryParseError as exc:
        raise UsageError(f"predicate parse error: {exc}") from exc
    reference = load_dataset(args.reference)
    for c in predicate.clauses:
        if c.variable not in reference.names:
            raise UsageError(f"unknown variable {c.variable!r} in predicate")
    candidates = [load_dataset(c) for c in args.candidates]
    labels = _labels(args, len(candidates))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    ref_mask = metrics.qdv(reference, predicate)
    rows, outputs = [], []
    axis = args.slice_axis if reference.grid.dims == 3 else None
    index = args.slice_index
    if axis is not None and index is None:
        index = reference.grid.shape[axis] // 2
    masks = {"reference": ref_mask}
    for label, cand in zip(labels, candidates):
        masks[label] = metrics.qdv(cand, predicate)
    for label, mask in masks.items():
        img = out / f"{label}_mask.ppm"
        render.render_mask(mask, axis, index).save(img)
        outputs.append(img)
        if label != "reference":
            rows.append({"method": label, "dsc": metrics.dice(ref_mask, mask),
                         "selected": int(mask.sum())})
    if not any(m.any() for m in masks.values()):
        log.warning("predicate selects no points in any input; DSC is 1 by convention")
    result = {"predicate": str(predicate), "reference_selected": int(ref_mask.sum()),
              "results": rows}
    jpath = out / "dice.json"
    _write_json(jpath, result)
    cpath = out / "dice.csv"
    with cpath.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "query", "dsc", "selected"])
        for r in rows:
            w.writerow([r["method"], str(predicate), f"{r['dsc']:.6f}", r["selected"]])
    outputs += [jpath, cpath]
    _run_manifest(out / "query.run.json", "query", args, outputs, t0)
    for r in rows:
        print(f"{r['method']}: DSC {r['dsc']:.4f}")
    return 0


def cmd_render(args) -> int:
    t0 = time.perf_counter()
    field = load_dataset(args.dataset)
    if args.var not in field.names:
        raise UsageError(f"unknown variable {args.var!r}")
    axis, index = args.slice_axis, args.slice_index
    if field.grid.dims == 3 and axis is not None and index is None:
        index = field.grid.shape[axis] // 2
    try:
        img = render.render_field(field, args.var, axis, index, args.colormap, args.range)
    except (IndexError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    img.save(out)
    _run_manifest(out.with_suffix(".run.json"), "render", args, [out], t0)
    return 0


def cmd_sweep(args) -> int:
    t0 = time.perf_counter()
    _configs(args)
    field = load_dataset(args.dataset)
    mconfig, tconfig = _configs(args, field)
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    if args.kind == "blocks":
        points = sweep.sweep_blocks(field, mconfig, tconfig, jobs=args.jobs)
    elif args.kind == "sample-frac":
        points = sweep.sweep_fraction(field, mconfig, tconfig, jobs=args.jobs)
    else:
        points = sweep.sweep_variables(field, mconfig, tconfig, jobs=args.jobs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(sweep.to_csv(points), encoding="utf-8")
    _run_manifest(out.with_suffix(".run.json"), "sweep", args, [out], t0)
    sys.stdout.write(sweep.to_csv(points))
    return 0


def cmd_info(args) -> int:
    path = Path(args.path)
    head = path.read_bytes()[:4] if path.is_file() else b""
    if head == b"MVNF":
        model = load_model(path)
        c = model.config
        info = {"kind": "model", "config": asdict(c), "parameters": model.num_params,
                "bytes": path.stat().st_size}
        if model.normalizer is not None:
            raw = 4 * math.prod(model.normalizer.shape) * c.out_dim
            info["variables"] = list(model.normalizer.names)
            info["grid"] = list(model.normalizer.shape)
            info["compression_ratio"] = format_ratio(compression_ratio(info["bytes"], raw))
    elif head == b"MVCS":
        s = CopulaSummary.load(path)
        info = {"kind": "copula", "shape": list(s.shape), "block_shape": list(s.block_shape),
                "variables": list(s.names), "blocks": s.num_blocks,
                "bytes": path.stat().st_size}
    else:
        field = load_dataset(path)
        info = {"kind": "dataset", "shape": list(field.grid.shape),
                "variables": [{"name": v.name, "raw_min": v.raw_min, "raw_max": v.raw_max,
                               "degenerate": v.degenerate} for v in field.variables],
                "raw_bytes": 4 * field.grid.size * field.num_vars}
    print(json.dumps(info, indent=2))
    return 0


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvnf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model to a dataset")
    p.add_argument("dataset")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--report", help="TrainReport JSON (default: <out>.train.json)")
    p.add_argument("--checkpoint-every", type=int, default=0,
                   help="also save <out>.epochNNNN.mvnf every N epochs (0: off)")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="decode a model to a dataset")
    p.add_argument("model")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--batch", type=int, default=65536)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="compare candidates against a reference")
    p.add_argument("reference")
    p.add_argument("candidates", nargs="+")
    p.add_argument("--which", default="psnr,stats",
                   help=f"comma list of {','.join(EVAL_KINDS)} or 'all'")
    p.add_argument("--labels", help="comma-separated method names")
    p.add_argument("--storage", nargs="*", help="label=bytes entries for the table")
    p.add_argument("--out", required=True)
    p.add_argument("--n-iso", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bins", type=int, default=128)
    p.add_argument("--slice-axis", type=int, default=2)
    p.add_argument("--slice-index", type=int)
    p.add_argument("--colormap", default="viridis", choices=sorted(render.COLORMAPS))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="LERP or Gaussian block baseline")
    bsub = p.add_subparsers(dest="method", required=True)
    lp = bsub.add_parser("lerp")
    lp.add_argument("dataset")
    lp.add_argument("--factor", type=_int_tuple, required=True, help="fx,fy[,fz]")
    lp.add_argument("--out", required=True)
    lp.set_defaults(func=cmd_baseline)
    cp = bsub.add_parser("copula")
    cp.add_argument("dataset")
    cp.add_argument("--block", type=_int_tuple, required=True, help="bx,by[,bz]")
    cp.add_argument("--mode", choices=("sample", "mean"), default="sample")
    cp.add_argument("--seed", type=int, default=0)
    cp.add_argument("--out", required=True)
    cp.set_defaults(func=cmd_baseline)

    p = sub.add_parser("query", help="multivariate range query with Dice scores")
    p.add_argument("reference")
    p.add_argument("candidates", nargs="*")
    p.add_argument("--predicate", required=True, help="e.g. 'A > 0.3 & A < 0.7 & B > 0'")
    p.add_argument("--labels")
    p.add_argument("--slice-axis", type=int, default=2)
    p.add_argument("--slice-index", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("render", help="color-mapped slice as binary PPM")
    p.add_argument("dataset")
    p.add_argument("--var", required=True)
    p.add_argument("--slice-axis", type=int)
    p.add_argument("--slice-index", type=int)
    p.add_argument("--colormap", default="viridis", choices=sorted(render.COLORMAPS))
    p.add_argument("--range", type=_float_pair, help="lo,hi")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("sweep", help="parameter study")
    p.add_argument("dataset")
    p.add_argument("--kind", choices=("blocks", "sample-frac", "variables"), required=True)
    p.add_argument("--out", required=True, help="CSV file")
    p.add_argument("--jobs", type=int, default=1, help="sweep points trained in parallel")
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("info", help="describe a dataset, model or summary")
    p.add_argument("path")
    p.set_defaults(func=cmd_info)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mvnf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, ModelFormatError, KeyError, FileNotFoundError) as exc:
        print(f"mvnf: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"mvnf: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
