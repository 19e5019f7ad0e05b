"""Batch command line: refine, eval-saliency, eval-detect, train-toy, losses, replay.

Every command writes one JSON run manifest holding the resolved argument
vector, input and output digests, the tool version and a timestamp.
``segtricks replay MANIFEST`` re-executes the recorded arguments and checks
that every output file hashes to the recorded digest.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .filtering import GuidedFilterParams, refine_mask
from .graph import (
    EigenSolverError,
    LossWeights,
    gtv_coarse_weights,
    gtv_fine_weights,
    gtv_loss,
    soft_ncut_loss,
    sr_loss,
    tokencut_affinity,
)
from .metrics import BBox, aggregate_reports, corloc_hit, saliency_report
from .model import (
    TrainConfig,
    TrainingDivergedError,
    dataset_digest,
    make_synthetic_dataset,
    manifest_json,
    run_toy,
)
from .tensorio import PngFormatError, TensorFormatError, as_image, as_mask, read_png, read_tensor, write_png

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
LOSS_TERMS = ("ncut", "gtv_coarse", "gtv_fine", "sr")
TRACE_COLUMNS = ("step", "image", "total", "ncut", "gtv_coarse", "gtv_fine", "sr", "eq", "crop_sempart")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class ReplayMismatchError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# helpers


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _report_json(obj) -> str:
    return manifest_json(obj) + "\n"


def _png_stems(directory: Path, what: str) -> dict:
    if not directory.is_dir():
        raise DataError(f"{what} directory not found: {directory}")
    return {p.stem: p for p in sorted(directory.iterdir()) if p.suffix == ".png" and p.is_file()}


def _pair_dirs(left: Path, right: Path, left_name: str, right_name: str):
    a = _png_stems(left, left_name)
    b = _png_stems(right, right_name)
    pairs = [(stem, a[stem], b[stem]) for stem in sorted(a.keys() & b.keys())]
    only_a = sorted(a.keys() - b.keys())
    only_b = sorted(b.keys() - a.keys())
    return pairs, only_a, only_b


def _map(fn, items, jobs: int):
    """Ordered map over a thread pool; results follow the input order."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _load_mask(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".stns":
        return as_mask(read_tensor(path).astype(np.float64))
    x = read_png(path)
    if x.ndim != 2:
        raise DataError(f"{path}: expected a single-channel mask, got shape {x.shape}")
    return x


class _Run:
    """Collects input and output files of one command for the manifest."""

    def __init__(self, command: str, argv: list, params: dict, seed=None):
        self.command = command
        self.argv = argv
        self.params = params
        self.seed = seed
        self.inputs: dict = {}
        self.outputs: dict = {}
        self.extra: dict = {}

    def add_input(self, path) -> None:
        path = Path(path).resolve()
        self.inputs[str(path)] = sha256_file(path)

    def add_output(self, path, root: Path) -> None:
        path = Path(path)
        self.outputs[str(path.resolve().relative_to(root.resolve()))] = sha256_file(path)

    def write_manifest(self, path: Path) -> Path:
        doc = {
            "command": self.command,
            "argv": self.argv,
            "params": self.params,
            "seed": self.seed,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
            "version": __version__,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        doc.update(self.extra)
        _write_text(path, manifest_json(doc) + "\n")
        return path


def _file_manifest_path(out: Path) -> Path:
    return out.with_name(out.stem + ".manifest.json")


def _resolved_argv(command: str, args, path_flags=(), plain_flags=(), switches=()) -> list:
    """Canonical argument vector with absolute paths, suitable for replay."""
    argv = [command]
    for flag in path_flags:
        value = getattr(args, flag.lstrip("-").replace("-", "_"))
        if value is not None:
            argv += [flag, str(Path(value).resolve())]
    for flag in plain_flags:
        value = getattr(args, flag.lstrip("-").replace("-", "_"))
        if value is not None:
            argv += [flag, repr(value) if isinstance(value, float) else str(value)]
    for flag in switches:
        if getattr(args, flag.lstrip("-").replace("-", "_")):
            argv.append(flag)
    return argv


def _jobs(args) -> int:
    return args.jobs if args.jobs is not None else (os.cpu_count() or 1)


# --------------------------------------------------------------------------
# refine


def overlay(mask, image, alpha: float = 0.5) -> np.ndarray:
    """Red mask alpha-blended over the image (gray images are expanded to RGB)."""
    image = as_image(image)
    if image.shape[2] == 1:
        image = np.repeat(image, 3, axis=2)
    red = np.zeros_like(image)
    red[:, :, 0] = 1.0
    a = alpha * np.asarray(mask, dtype=np.float64)[:, :, None]
    return (1.0 - a) * image + a * red


def cmd_refine(args, argv) -> int:
    params = GuidedFilterParams(args.radius, args.eps)
    masks_dir, images_dir, out = Path(args.masks), Path(args.images), Path(args.out)
    pairs, no_image, no_mask = _pair_dirs(masks_dir, images_dir, "masks", "images")
    for stem in no_image:
        print(f"warning: mask {stem} has no image; skipped", file=sys.stderr)
    for stem in no_mask:
        print(f"warning: image {stem} has no mask; skipped", file=sys.stderr)
    if not pairs:
        raise DataError("no pairs found")
    out.mkdir(parents=True, exist_ok=True)
    if args.overlay:
        (out / "overlay").mkdir(exist_ok=True)

    def work(item):
        stem, mpath, ipath = item
        try:
            mask = _load_mask(mpath)
            image = read_png(ipath)
            if image.shape[:2] != mask.shape:
                raise DataError(f"mask {mask.shape} and image {image.shape[:2]} differ in size")
            refined = refine_mask(mask, image, params)
        except (DataError, PngFormatError, ValueError) as exc:
            return stem, str(exc)
        write_png(out / f"{stem}.png", refined)
        if args.overlay:
            write_png(out / "overlay" / f"{stem}.png", overlay(refined, image))
        return stem, None

    results = _map(work, pairs, _jobs(args))
    failed = [(stem, err) for stem, err in results if err is not None]
    for stem, err in failed:
        print(f"error: {stem}: {err}", file=sys.stderr)
    run = _Run("refine", argv, {"radius": params.radius, "eps": params.eps, "overlay": bool(args.overlay)})
    for stem, mpath, ipath in pairs:
        run.add_input(mpath)
        run.add_input(ipath)
    done = [stem for stem, err in results if err is None]
    for stem in done:
        run.add_output(out / f"{stem}.png", out)
        if args.overlay:
            run.add_output(out / "overlay" / f"{stem}.png", out)
    run.extra["skipped"] = no_image + no_mask + [stem for stem, _ in failed]
    run.write_manifest(out / "manifest.json")
    print(f"refined {len(done)} of {len(pairs)} pairs into {out}")
    if not done:
        raise DataError("every pair failed")
    return EXIT_OK


# --------------------------------------------------------------------------
# eval-saliency


def cmd_eval_saliency(args, argv) -> int:
    pred_dir, gt_dir, out = Path(args.pred), Path(args.gt), Path(args.out)
    pairs, no_gt, no_pred = _pair_dirs(pred_dir, gt_dir, "prediction", "ground-truth")
    errors = [{"stem": s, "error": "missing ground truth"} for s in no_gt]
    errors += [{"stem": s, "error": "missing prediction"} for s in no_pred]

    def work(item):
        stem, ppath, gpath = item
        try:
            pred = _load_mask(ppath)
            gt = _load_mask(gpath)
            if pred.shape != gt.shape:
                raise DataError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
        except (DataError, PngFormatError, ValueError) as exc:
            return stem, None, str(exc)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return stem, saliency_report(pred, gt, args.threshold), None

    results = _map(work, pairs, _jobs(args))
    per_image, reports = [], []
    for stem, rep, err in results:
        if err is not None:
            errors.append({"stem": stem, "error": err})
            continue
        reports.append(rep)
        per_image.append({"stem": stem, **rep.as_dict()})
    errors.sort(key=lambda e: e["stem"])
    for e in errors:
        print(f"warning: {e['stem']}: {e['error']}", file=sys.stderr)
    if not reports:
        raise DataError("no evaluable prediction / ground-truth pairs found")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        aggregate = aggregate_reports(reports)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    report = {"per_image": per_image, "aggregate": aggregate, "errors": errors,
              "threshold": args.threshold}
    _write_text(out, _report_json(report))
    run = _Run("eval-saliency", argv, {"threshold": args.threshold, "beta_sq": 0.3})
    for _, ppath, gpath in pairs:
        run.add_input(ppath)
        run.add_input(gpath)
    run.add_output(out, out.parent)
    if args.csv:
        csv_path = Path(args.csv)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["id", "acc", "iou", "max_f_beta"])
        rows = per_image + [{"stem": "aggregate", **aggregate}]
        for row in rows:
            writer.writerow([row["stem"], repr(row["acc"]), repr(row["iou"]),
                             "" if row["max_f_beta"] is None else repr(row["max_f_beta"])])
        _write_text(csv_path, buf.getvalue())
        run.outputs[csv_path.name] = sha256_file(csv_path)
    run.write_manifest(_file_manifest_path(out))
    print(f"acc={aggregate['acc']:.4f} iou={aggregate['iou']:.4f} "
          f"maxF={aggregate['max_f_beta'] if aggregate['max_f_beta'] is None else round(aggregate['max_f_beta'], 4)} "
          f"over {aggregate['count']} images")
    return EXIT_OK


# --------------------------------------------------------------------------
# eval-detect


def parse_boxes_file(path) -> dict:
    """``{stem: [BBox, ...]}`` from lines ``stem t l b r [t l b r ...]``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise DataError(f"boxes file not found: {path}") from exc
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not UTF-8 ({exc})") from exc
    boxes = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        stem, nums = tokens[0], tokens[1:]
        if not nums or len(nums) % 4:
            raise DataError(f"{path}:{lineno}: expected a stem followed by 4*k integers, got {len(nums)} values")
        try:
            vals = [int(t) for t in nums]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: non-integer coordinate ({exc})") from exc
        if stem in boxes:
            raise DataError(f"{path}:{lineno}: duplicate stem {stem!r}")
        try:
            boxes[stem] = [BBox(*vals[k:k + 4]) for k in range(0, len(vals), 4)]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    if not boxes:
        raise DataError(f"{path}: no boxes")
    return boxes


def cmd_eval_detect(args, argv) -> int:
    pred_dir, out = Path(args.pred), Path(args.out)
    gt = parse_boxes_file(args.boxes)
    preds = _png_stems(pred_dir, "prediction")
    stems = sorted(gt)
    missing = [s for s in stems if s not in preds]
    for s in missing:
        print(f"warning: no prediction for {s}; counted as a miss", file=sys.stderr)
    for s in sorted(set(preds) - set(gt)):
        print(f"warning: prediction {s} has no boxes; ignored", file=sys.stderr)

    def work(stem):
        if stem not in preds:
            return {"stem": stem, "hit": False, "iou": 0.0, "box": None, "missing": True}
        try:
            mask = _load_mask(preds[stem])
        except (DataError, PngFormatError, ValueError) as exc:
            raise DataError(f"{stem}: {exc}") from exc
        hit, box, best = corloc_hit(mask, gt[stem], args.threshold)
        return {"stem": stem, "hit": bool(hit), "iou": float(best),
                "box": None if box is None else box.as_list(), "missing": False}

    per_image = _map(work, stems, _jobs(args))
    score = sum(r["hit"] for r in per_image) / len(per_image)
    report = {"corloc": score, "n_images": len(per_image), "per_image": per_image,
              "missing_predictions": missing, "threshold": args.threshold}
    _write_text(out, _report_json(report))
    run = _Run("eval-detect", argv, {"threshold": args.threshold, "iou_threshold": 0.5})
    run.add_input(args.boxes)
    for s in stems:
        if s in preds:
            run.add_input(preds[s])
    run.add_output(out, out.parent)
    if args.csv:
        csv_path = Path(args.csv)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["id", "corloc_hit", "iou"])
        for row in per_image:
            writer.writerow([row["stem"], int(row["hit"]), repr(row["iou"])])
        writer.writerow(["aggregate", repr(score), ""])
        _write_text(csv_path, buf.getvalue())
        run.outputs[csv_path.name] = sha256_file(csv_path)
    run.write_manifest(_file_manifest_path(out))
    print(f"CorLoc={score:.4f} over {len(per_image)} images")
    return EXIT_OK


# --------------------------------------------------------------------------
# train-toy


def parse_ablate(spec: str | None) -> dict:
    """``"crop=off,gf=off"`` -> ``{"crop": False, "gf": False}``."""
    flags = {}
    if not spec:
        return flags
    for item in spec.split(","):
        key, sep, value = item.strip().partition("=")
        if not sep or key not in ("crop", "gf") or value not in ("on", "off"):
            raise UsageError(f"bad --ablate entry {item!r}; use crop=on|off,gf=on|off")
        flags[key] = value == "on"
    return flags


def load_toy_config(path, seed=None, ablate=None):
    """``(TrainConfig, dataset_params)`` from a JSON file (or defaults) plus overrides."""
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise DataError(f"config not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise DataError(f"{path}: config must be a JSON object")
    raw = dict(raw)
    data = {"n": 20, "height": 64, "width": 64, "seed": None}
    extra = raw.pop("dataset", {})
    unknown = set(extra) - set(data)
    if unknown:
        raise DataError(f"unknown dataset keys: {sorted(unknown)}")
    data.update(extra)
    try:
        config = TrainConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid config: {exc}") from exc
    if seed is not None:
        config = replace(config, seed=seed)
    for key, on in (ablate or {}).items():
        config = replace(config, crop=on) if key == "crop" else replace(config, refine_eval=on)
    if data["seed"] is None:
        data["seed"] = config.seed
    return config, data


def cmd_train_toy(args, argv) -> int:
    out = Path(args.out)
    config, data = load_toy_config(args.config, args.seed, parse_ablate(args.ablate))
    try:
        dataset = make_synthetic_dataset(data["n"], data["height"], data["width"], data["seed"])
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    run_out = run_toy(config, dataset)
    out.mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    run = _Run("train-toy", argv, {"config": config.as_dict(), "dataset": data}, seed=config.seed)
    if args.config is not None:
        run.add_input(args.config)

    _write_text(out / "params.json", _report_json(run_out.result.head.as_dict()))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for row in run_out.result.trace:
        writer.writerow([row["step"], row["image"]] + [repr(float(row.get(c, 0.0))) for c in TRACE_COLUMNS[2:]])
    _write_text(out / "trace.csv", buf.getvalue())
    for k, mask in enumerate(run_out.masks):
        write_png(out / "masks" / f"{k:03d}.png", mask)
    evaluation = {"mean_iou": run_out.mean_iou, "per_image_iou": run_out.ious,
                  "threshold": config.threshold, "refined": config.refine_eval}
    _write_text(out / "eval.json", _report_json(evaluation))

    for name in ["params.json", "trace.csv", "eval.json"] + [f"masks/{k:03d}.png" for k in range(len(dataset))]:
        run.add_output(out / name, out)
    run.extra["dataset_digest"] = dataset_digest(dataset)
    run.extra["initial_params"] = run_out.result.manifest["initial_params"]
    run.write_manifest(out / "manifest.json")
    print(f"final mean IoU {run_out.mean_iou:.4f} over {len(dataset)} images")
    return EXIT_OK


# --------------------------------------------------------------------------
# losses


def load_weights(path) -> LossWeights:
    if path is None:
        return LossWeights()
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return LossWeights(**raw)
    except FileNotFoundError as exc:
        raise DataError(f"weights file not found: {path}") from exc
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: invalid weights ({exc})") from exc


def compute_losses(terms, weights: LossWeights, fine=None, coarse=None, features=None, image=None) -> dict:
    """Requested loss terms, their weighted values and the weighted total."""
    lam = {"ncut": 1.0, "gtv_coarse": weights.lambda_gtv_coarse,
           "gtv_fine": weights.lambda_gtv_fine, "sr": weights.lambda_sr}
    values = {}
    W = None
    if "ncut" in terms or "gtv_coarse" in terms:
        W = tokencut_affinity(features, weights.tau, weights.epsilon_aff)
    if "ncut" in terms:
        values["ncut"] = soft_ncut_loss(W, coarse.ravel(), weights.eps_div)
    if "gtv_coarse" in terms:
        values["gtv_coarse"] = gtv_loss(gtv_coarse_weights(W, coarse.shape), coarse)
    if "gtv_fine" in terms:
        values["gtv_fine"] = gtv_loss(gtv_fine_weights(image, weights.sigma), fine)
    if "sr" in terms:
        values["sr"] = sr_loss(fine, coarse, fine.shape[0] // coarse.shape[0])
    weighted = {k: lam[k] * v for k, v in values.items()}
    total = 0.0
    for k in LOSS_TERMS:
        if k in weighted:
            total += weighted[k]
    return {"terms": values, "weighted": weighted, "total": total}


def cmd_losses(args, argv) -> int:
    out = Path(args.out)
    terms = list(LOSS_TERMS) if args.terms is None else [t.strip() for t in args.terms.split(",") if t.strip()]
    bad = [t for t in terms if t not in LOSS_TERMS]
    if bad or not terms:
        raise UsageError(f"unknown loss terms {bad}; choose from {','.join(LOSS_TERMS)}")
    need = {
        "features": {"ncut", "gtv_coarse"} & set(terms),
        "coarse": {"ncut", "gtv_coarse", "sr"} & set(terms),
        "fine": {"gtv_fine", "sr"} & set(terms),
        "image": {"gtv_fine"} & set(terms),
    }
    for name, users in need.items():
        if users and getattr(args, name) is None:
            raise UsageError(f"--{name} is required for terms {sorted(users)}")
    weights = load_weights(args.weights)
    run = _Run("losses", argv, {"terms": terms, "weights": weights.as_dict()})
    fine = coarse = features = image = None
    if need["fine"]:
        fine = _load_mask(args.fine)
        run.add_input(args.fine)
    if need["coarse"]:
        coarse = _load_mask(args.coarse)
        run.add_input(args.coarse)
    if need["features"]:
        features = read_tensor(args.features).astype(np.float64)
        run.add_input(args.features)
        if features.ndim != 3:
            raise DataError(f"{args.features}: features must be h x w x D, got shape {features.shape}")
        if features.shape[:2] != coarse.shape:
            raise DataError(f"features grid {features.shape[:2]} does not match coarse mask {coarse.shape}")
    if need["image"]:
        image = read_png(args.image)
        run.add_input(args.image)
        if image.shape[:2] != fine.shape:
            raise DataError(f"image {image.shape[:2]} and fine mask {fine.shape} differ in size")
    if fine is not None and coarse is not None:
        factor = fine.shape[0] // coarse.shape[0]
        if factor < 1 or coarse.shape[0] * factor != fine.shape[0] or coarse.shape[1] * factor != fine.shape[1]:
            raise DataError(f"fine mask {fine.shape} is not an integer multiple of coarse mask {coarse.shape}")
    result = compute_losses(terms, weights, fine, coarse, features, image)
    result["weights"] = weights.as_dict()
    text = _report_json(result)
    _write_text(out, text)
    run.add_output(out, out.parent)
    run.write_manifest(_file_manifest_path(out))
    sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------
# replay


def _manifest_for(argv_list) -> Path:
    """Where the command in ``argv_list`` writes its manifest."""
    command = argv_list[0]
    out = Path(argv_list[argv_list.index("--out") + 1])
    return out / "manifest.json" if command in ("refine", "train-toy") else _file_manifest_path(out)


def cmd_replay(args, argv) -> int:
    path = Path(args.manifest)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        recorded_argv = list(doc["argv"])
        recorded_out = doc["outputs"]
        recorded_in = doc["inputs"]
    except FileNotFoundError as exc:
        raise DataError(f"manifest not found: {path}") from exc
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: not a run manifest ({exc})") from exc
    for name, digest in recorded_in.items():
        if not Path(name).is_file():
            raise DataError(f"recorded input missing: {name}")
        if sha256_file(name) != digest:
            raise DataError(f"recorded input changed since the run: {name}")
    if args.out is not None:
        i = recorded_argv.index("--out")
        out = Path(args.out).resolve()
        if recorded_argv[0] in ("eval-saliency", "eval-detect", "losses"):
            out = out / Path(recorded_argv[i + 1]).name
            if "--csv" in recorded_argv:
                j = recorded_argv.index("--csv")
                recorded_argv[j + 1] = str(out.with_name(Path(recorded_argv[j + 1]).name))
        recorded_argv[i + 1] = str(out)
    code = _dispatch(recorded_argv)
    if code != EXIT_OK:
        return code
    fresh = json.loads(_manifest_for(recorded_argv).read_text(encoding="utf-8"))["outputs"]
    diff = sorted(k for k in set(recorded_out) | set(fresh) if recorded_out.get(k) != fresh.get(k))
    if diff:
        raise ReplayMismatchError(f"replay produced different outputs: {', '.join(diff)}")
    print(f"replay: {len(fresh)} outputs byte-identical")
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="segtricks", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"segtricks {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("refine", help="guided-filter refinement of predicted masks")
    p.add_argument("--masks", required=True, help="directory of mask PNGs")
    p.add_argument("--images", required=True, help="directory of image PNGs (same stems)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--radius", type=int, default=4)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--overlay", action="store_true", help="also write mask-over-image overlays")
    p.add_argument("--jobs", type=int, default=None, help="worker threads (default: CPU count)")

    p = sub.add_parser("eval-saliency", help="Acc / IoU / max F-beta against ground-truth masks")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True, help="JSON report path")
    p.add_argument("--csv", default=None, help="optional per-image CSV")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--jobs", type=int, default=None)

    p = sub.add_parser("eval-detect", help="CorLoc of largest-component boxes")
    p.add_argument("--pred", required=True)
    p.add_argument("--boxes", required=True, help="lines: stem t l b r [t l b r ...]")
    p.add_argument("--out", required=True, help="JSON report path")
    p.add_argument("--csv", default=None, help="optional per-image CSV")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--jobs", type=int, default=None)

    p = sub.add_parser("train-toy", help="train the toy head on synthetic blobs")
    p.add_argument("--config", default=None, help="JSON config (defaults if omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--ablate", default=None, help="e.g. crop=off,gf=off")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("losses", help="loss breakdown for given masks")
    p.add_argument("--fine", default=None, help="fine mask (PNG or .stns)")
    p.add_argument("--coarse", default=None, help="coarse mask (PNG or .stns)")
    p.add_argument("--features", default=None, help="h x w x D feature tensor (.stns)")
    p.add_argument("--image", default=None, help="image PNG for the fine GTV weights")
    p.add_argument("--weights", default=None, help="JSON with loss weights")
    p.add_argument("--terms", default=None, help=f"comma list from {','.join(LOSS_TERMS)}")
    p.add_argument("--out", required=True, help="JSON report path")

    p = sub.add_parser("replay", help="re-run a manifest and verify outputs")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="write outputs here instead of the recorded location")
    return parser


def _canonical_argv(args) -> list:
    c = args.command
    if c == "refine":
        return _resolved_argv(c, args, ("--masks", "--images", "--out"), ("--radius", "--eps", "--jobs"),
                              ("--overlay",))
    if c == "eval-saliency":
        return _resolved_argv(c, args, ("--pred", "--gt", "--out", "--csv"), ("--threshold", "--jobs"))
    if c == "eval-detect":
        return _resolved_argv(c, args, ("--pred", "--boxes", "--out", "--csv"), ("--threshold", "--jobs"))
    if c == "train-toy":
        return _resolved_argv(c, args, ("--config", "--out"), ("--ablate", "--seed"))
    if c == "losses":
        return _resolved_argv(c, args, ("--fine", "--coarse", "--features", "--image", "--weights", "--out"),
                              ("--terms",))
    return [c]


COMMANDS = {
    "refine": cmd_refine,
    "eval-saliency": cmd_eval_saliency,
    "eval-detect": cmd_eval_detect,
    "train-toy": cmd_train_toy,
    "losses": cmd_losses,
    "replay": cmd_replay,
}


def _dispatch(argv) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", None) is not None and args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    return COMMANDS[args.command](args, _canonical_argv(args))


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        return _dispatch(argv)
    except SystemExit as exc:
        # --help / --version
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, PngFormatError, TensorFormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDivergedError, EigenSolverError, FloatingPointError, ReplayMismatchError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
