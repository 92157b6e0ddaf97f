"""Command-line interface.

One binary with subcommands covering the full pipeline: synthesize test
data, train the reference classifier, run the region-growing segmenter or
the dense-threshold baseline, tune admission thresholds, and evaluate
predictions into CSV tables. Every tunable flag can also come from a
`key=value` config file; explicit flags override file values, which
override built-in defaults. Logs go to stderr, data to files.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .classify import (
    ClassifierConfig,
    FeatureSpec,
    ModelClassifier,
    OracleClassifier,
    ProbmapClassifier,
    load_model,
    new_model,
    save_model,
)
from .dataset import DatasetSplit, Triple, collect_stems, load_dataset, save_triple, split_dataset
from .grow import GrowConfig, dense_threshold_segment, grow_region
from .imgio import FormatError, load_image, load_mask, read_pmap, save_mask, write_pmap
from .metrics import METRIC_NAMES, TuningError, evaluate, tune_threshold
from .synth import SynthParams, generate_synthetic
from .train import TrainConfig, TrainingError, fit


class CliError(Exception):
    pass


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# config file and parameter resolution

def _parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CliError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise CliError(f"cannot parse boolean value {text!r}")


class Resolver:
    """Flag > config file > built-in default, with type casting for file values."""

    def __init__(self, args: argparse.Namespace, defaults: dict):
        self.args = args
        self.defaults = defaults
        self.file_values = _parse_config_file(args.config) if getattr(args, "config", None) else {}

    def get(self, key: str, cast=str, required: bool = False):
        value = getattr(self.args, key, None)
        if value is None and key in self.file_values:
            raw = self.file_values[key]
            value = _parse_bool(raw) if cast is bool else cast(raw)
        if value is None:
            value = self.defaults.get(key)
        if value is None and required:
            raise CliError(f"missing required parameter --{key.replace('_', '-')}")
        return value


DEFAULTS: dict[str, dict] = {
    "synth": {
        "n": 5, "height": 256, "width": 256, "trees": 3, "branch_prob": 0.08,
        "width_min": 1, "width_max": 4, "noise_sigma": 0.05, "seed": 0,
    },
    "train": {
        "epochs": 50, "batch_size": 64, "learning_rate": 1.0, "boundary_weight": 5.0,
        "samples_per_count": 500, "pretrain": True, "pretrain_size": 5000,
        "n_val": 3, "exclude": "", "seed": 0, "tile_size": 80, "out_size": 3, "pool": 8,
    },
    "grow": {"threshold": 0.5, "n_seeds": 10_000, "batch_size": 100, "seed": 0},
    "baseline": {"threshold": 0.5},
    "eval": {"keep_largest": False, "method": "pred"},
    "tune": {
        "metric": "all", "grid": "0.05:0.95:0.05", "segmenter": "grow",
        "keep_largest": False, "n_seeds": 10_000, "batch_size": 100, "seed": 0,
    },
}


def _parse_grid(spec: str) -> list[float]:
    spec = spec.strip()
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise CliError(f"grid must be start:stop:step or comma-separated, got {spec!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise CliError(f"bad grid range {spec!r}")
        n = int(round((stop - start) / step))
        values = [round(start + i * step, 10) for i in range(n + 1) if start + i * step <= stop + 1e-9]
    else:
        values = [float(p) for p in spec.split(",") if p.strip()]
    if not values:
        raise CliError(f"empty threshold grid {spec!r}")
    return values


def _build_classifier(spec: str, out_size: int = 3):
    """Parse 'oracle:<mask>' | 'pmap:<file>' | 'model:<file>' into a classifier."""
    kind, _, arg = spec.partition(":")
    config = ClassifierConfig(out_size=out_size)
    if kind == "oracle" and arg:
        return OracleClassifier(load_mask(arg), config)
    if kind == "pmap" and arg:
        return ProbmapClassifier(read_pmap(arg), config)
    if kind == "model" and arg:
        return ModelClassifier(load_model(arg))
    raise CliError(f"bad classifier spec {spec!r} (use oracle:<mask>|pmap:<file>|model:<file>)")


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(res: Resolver) -> int:
    out_dir = res.get("out", required=True)
    n = res.get("n", int)
    if n < 1:
        raise CliError(f"--n must be >= 1, got {n}")
    params = dict(
        height=res.get("height", int),
        width=res.get("width", int),
        n_trees=res.get("trees", int),
        branch_prob=res.get("branch_prob", float),
        width_range=(res.get("width_min", int), res.get("width_max", int)),
        noise_sigma=res.get("noise_sigma", float),
    )
    base_seed = res.get("seed", int)
    for i in range(n):
        sp = SynthParams(rng_seed=base_seed + i, **params)
        image, gt, roi = generate_synthetic(sp)
        written = save_triple(out_dir, Triple(stem=f"{i:03d}", image=image, gt=gt, roi=roi))
        for path in written:
            _log(path)
    _log(f"wrote {n} triples under {out_dir}")
    return 0


def _load_split(res: Resolver) -> DatasetSplit:
    triples = load_dataset(res.get("data", required=True))
    exclude = tuple(s for s in res.get("exclude", str).split(",") if s)
    return split_dataset(triples, n_val=res.get("n_val", int), exclude=exclude, rng_seed=res.get("seed", int))


def cmd_train(res: Resolver) -> int:
    split = _load_split(res)
    model_out = res.get("model_out", required=True)
    history_out = res.get("history") or os.path.splitext(model_out)[0] + "_history.csv"
    channels = split.train[0].image.shape[2]
    model = new_model(
        ClassifierConfig(tile_size=res.get("tile_size", int), out_size=res.get("out_size", int)),
        FeatureSpec(pool=res.get("pool", int), channels=channels),
    )
    config = TrainConfig(
        epochs=res.get("epochs", int),
        batch_size=res.get("batch_size", int),
        learning_rate=res.get("learning_rate", float),
        boundary_weight=res.get("boundary_weight", float),
        samples_per_count=res.get("samples_per_count", int),
        pretrain=res.get("pretrain", bool),
        pretrain_size=res.get("pretrain_size", int),
        rng_seed=res.get("seed", int),
    )
    fitted, history = fit(model, split, config)
    for stat in history:
        _log(f"epoch {stat.epoch}: train_loss={stat.train_loss:.6f} val_loss={stat.val_loss:.6f}")
    save_model(fitted, model_out)
    with open(history_out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for stat in history:
            writer.writerow([stat.epoch, f"{stat.train_loss:.6f}", f"{stat.val_loss:.6f}"])
    _log(f"model -> {model_out}; history -> {history_out}")
    return 0


def cmd_grow(res: Resolver) -> int:
    image = load_image(res.get("image", required=True))
    roi = load_mask(res.get("roi", required=True))
    classifier = _build_classifier(res.get("classifier", required=True))
    config = GrowConfig(
        threshold=res.get("threshold", float),
        n_seeds=res.get("n_seeds", int),
        batch_size=res.get("batch_size", int),
        rng_seed=res.get("seed", int),
        max_iterations=res.get("max_iterations", int),
    )
    snapshots_dir = res.get("snapshots")
    result = grow_region(image, roi, classifier, config, record_snapshots=snapshots_dir is not None)
    out = res.get("out", required=True)
    save_mask(out, result.mask)
    if snapshots_dir is not None:
        os.makedirs(snapshots_dir, exist_ok=True)
        for i, snap in enumerate(result.snapshots or [], start=1):
            save_mask(os.path.join(snapshots_dir, f"iter_{i:04d}.pgm"), snap)
    votes_out = res.get("votes")
    if votes_out is not None:
        write_pmap(votes_out, result.votes.average().astype(np.float32))
    _log(
        f"grow: iterations={result.iterations} evaluated={result.pixels_evaluated} "
        f"mask_pixels={int(result.mask.sum())} -> {out}"
    )
    return 0


def cmd_baseline(res: Resolver) -> int:
    pmap = read_pmap(res.get("pmap", required=True))
    roi = load_mask(res.get("roi", required=True))
    mask = dense_threshold_segment(pmap, roi, res.get("threshold", float))
    out = res.get("out", required=True)
    save_mask(out, mask)
    _log(f"baseline: mask_pixels={int(mask.sum())} -> {out}")
    return 0


def _format_mssd(value: float | None) -> str:
    return "NaN" if value is None else f"{value:.10g}"


def cmd_eval(res: Resolver) -> int:
    dirs = {name: collect_stems(res.get(name, required=True)) for name in ("pred", "gt", "roi")}
    stems = sorted(set().union(*[set(d) for d in dirs.values()]))
    missing = [
        f"{stem} (missing in {name}/)"
        for stem in stems
        for name, d in dirs.items()
        if stem not in d
    ]
    if missing:
        raise CliError("unpaired files: " + ", ".join(missing))
    keep_largest = res.get("keep_largest", bool)
    method = res.get("method")
    postproc = "largest" if keep_largest else "all"
    rows = []
    for stem in stems:
        report = evaluate(
            load_mask(dirs["pred"][stem]),
            load_mask(dirs["gt"][stem]),
            load_mask(dirs["roi"][stem]),
            keep_largest=keep_largest,
        )
        rows.append([stem, method, postproc, f"{report.dice:.10g}", f"{report.jaccard:.10g}",
                     _format_mssd(report.mssd)])
    dices = np.array([float(r[3]) for r in rows])
    jaccards = np.array([float(r[4]) for r in rows])
    mssds = np.array([float(r[5]) for r in rows])  # NaN parses as nan

    def mean_std(values: np.ndarray) -> str:
        return f"{values.mean():.4f}±{values.std():.4f}"

    out = res.get("out", required=True)
    with open(out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["image_id", "method", "postproc", "dice", "jaccard", "mssd"])
        writer.writerows(rows)
        writer.writerow(["mean±std", method, postproc,
                         mean_std(dices), mean_std(jaccards), mean_std(mssds)])
    _log(f"eval: {len(rows)} images, dice {mean_std(dices)}, jaccard {mean_std(jaccards)}, "
         f"mssd {mean_std(mssds)} -> {out}")
    return 0


def cmd_tune(res: Resolver) -> int:
    triples = load_dataset(res.get("data", required=True))
    spec = res.get("classifier", required=True)
    segmenter = res.get("segmenter")
    grid = _parse_grid(res.get("grid"))
    metric_arg = res.get("metric")
    metrics = list(METRIC_NAMES) if metric_arg == "all" else metric_arg.split(",")
    for m in metrics:
        if m not in METRIC_NAMES:
            raise CliError(f"unknown metric {m!r}")
    keep_largest = res.get("keep_largest", bool)

    kind, _, arg = spec.partition(":")
    pmap_by_stem: dict[str, str] = {}
    if kind == "pmap":
        pmap_by_stem = collect_stems(arg, extensions=(".pmap",)) if os.path.isdir(arg) else {}
    shared_model = ModelClassifier(load_model(arg)) if kind == "model" else None

    def classifier_for(triple: Triple):
        if kind == "oracle":
            return OracleClassifier(triple.gt)
        if kind == "model":
            return shared_model
        if kind == "pmap":
            path = pmap_by_stem.get(triple.stem, arg if not pmap_by_stem else None)
            if path is None:
                raise CliError(f"no probability map for stem {triple.stem!r} under {arg}")
            return ProbmapClassifier(read_pmap(path))
        raise CliError(f"bad classifier spec {spec!r}")

    def segment_fn(triple: Triple, threshold: float) -> np.ndarray:
        if segmenter == "dense":
            clf = classifier_for(triple)
            if not isinstance(clf, ProbmapClassifier):
                raise CliError("dense segmenter requires a pmap classifier spec")
            return dense_threshold_segment(clf.pmap, triple.roi, threshold)
        config = GrowConfig(
            threshold=threshold,
            n_seeds=res.get("n_seeds", int),
            batch_size=res.get("batch_size", int),
            rng_seed=res.get("seed", int),
        )
        return grow_region(triple.image, triple.roi, classifier_for(triple), config).mask

    out = res.get("out", required=True)
    with open(out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["metric", "threshold", "score"])
        for metric in metrics:
            threshold, score = tune_threshold(segment_fn, triples, metric, grid, keep_largest=keep_largest)
            writer.writerow([metric, threshold, f"{score:.6f}"])
            _log(f"tune: {metric}: threshold={threshold} score={score:.6f}")
    _log(f"tune report -> {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key=value config file; flags override file values")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="growseg", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate synthetic image/mask/roi triples")
    _add_common(p)
    p.add_argument("--out", help="output dataset directory")
    p.add_argument("--n", type=int, help="number of triples (default: 5)")
    p.add_argument("--height", type=int, help="image height (default: 256)")
    p.add_argument("--width", type=int, help="image width (default: 256)")
    p.add_argument("--trees", type=int, help="objects per image (default: 3)")
    p.add_argument("--branch-prob", dest="branch_prob", type=float,
                   help="per-step branching probability (default: 0.08)")
    p.add_argument("--width-min", dest="width_min", type=int, help="min stroke width (default: 1)")
    p.add_argument("--width-max", dest="width_max", type=int, help="max stroke width (default: 4)")
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float,
                   help="gaussian noise std (default: 0.05)")
    p.add_argument("--seed", type=int, help="base RNG seed (default: 0)")

    p = subs.add_parser("train", help="train the reference classifier on a dataset")
    _add_common(p)
    p.add_argument("--data", help="dataset directory (images/, masks/, roi/)")
    p.add_argument("--model-out", dest="model_out", help="output model file")
    p.add_argument("--history", help="loss history CSV (default: <model>_history.csv)")
    p.add_argument("--epochs", type=int, help="training epochs (default: 50)")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="mini-batch size (default: 64)")
    p.add_argument("--learning-rate", dest="learning_rate", type=float,
                   help="SGD learning rate (default: 1.0)")
    p.add_argument("--boundary-weight", dest="boundary_weight", type=float,
                   help="loss multiplier on contour pixels (default: 5)")
    p.add_argument("--samples-per-count", dest="samples_per_count", type=int,
                   help="samples per neighborhood-count bucket per epoch (default: 500)")
    p.add_argument("--pretrain", dest="pretrain", action=argparse.BooleanOptionalAction,
                   default=None, help="run a 50/50 pre-training epoch first (default: on)")
    p.add_argument("--pretrain-size", dest="pretrain_size", type=int,
                   help="pre-training sample size (default: 5000)")
    p.add_argument("--n-val", dest="n_val", type=int, help="validation images (default: 3)")
    p.add_argument("--exclude", help="comma-separated stems to drop before splitting")
    p.add_argument("--seed", type=int, help="RNG seed (default: 0)")
    p.add_argument("--tile-size", dest="tile_size", type=int, help="input tile size (default: 80)")
    p.add_argument("--out-size", dest="out_size", type=int,
                   help="predicted neighborhood size (default: 3)")
    p.add_argument("--pool", type=int, help="pooled feature grid (default: 8)")

    p = subs.add_parser("grow", help="segment one image by region growing")
    _add_common(p)
    p.add_argument("--image", help="input image (PNG/PGM/PPM)")
    p.add_argument("--roi", help="region-of-interest mask")
    p.add_argument("--classifier", help="oracle:<mask> | pmap:<file> | model:<file>")
    p.add_argument("--threshold", type=float, help="admission threshold (default: 0.5)")
    p.add_argument("--n-seeds", dest="n_seeds", type=int, help="initial seeds (default: 10000)")
    p.add_argument("--batch-size", dest="batch_size", type=int,
                   help="classifier batch size (default: 100)")
    p.add_argument("--seed", type=int, help="seed-sampling RNG seed (default: 0)")
    p.add_argument("--max-iterations", dest="max_iterations", type=int,
                   help="safety iteration cap (default: H*W)")
    p.add_argument("--out", help="output mask (PGM)")
    p.add_argument("--snapshots", help="directory for numbered per-iteration masks")
    p.add_argument("--votes", help="write the vote-average field as PMAP here")

    p = subs.add_parser("baseline", help="dense-threshold a probability map")
    _add_common(p)
    p.add_argument("--pmap", help="probability map (PMAPv1)")
    p.add_argument("--roi", help="region-of-interest mask")
    p.add_argument("--threshold", type=float, help="threshold (default: 0.5)")
    p.add_argument("--out", help="output mask (PGM)")

    p = subs.add_parser("eval", help="score predictions against ground truth")
    _add_common(p)
    p.add_argument("--pred", help="directory of predicted masks")
    p.add_argument("--gt", help="directory of ground-truth masks")
    p.add_argument("--roi", help="directory of RoI masks")
    p.add_argument("--keep-largest", dest="keep_largest", action=argparse.BooleanOptionalAction,
                   default=None, help="keep only the largest predicted object (default: off)")
    p.add_argument("--method", help="method label for the CSV (default: pred)")
    p.add_argument("--out", help="output CSV")

    p = subs.add_parser("tune", help="grid-search the admission threshold per metric")
    _add_common(p)
    p.add_argument("--data", help="validation dataset directory")
    p.add_argument("--classifier", help="oracle | pmap:<dir|file> | model:<file>")
    p.add_argument("--segmenter", choices=["grow", "dense"], help="segmentation path (default: grow)")
    p.add_argument("--metric", help="dice,jaccard,mssd or all (default: all)")
    p.add_argument("--grid", help="start:stop:step or comma list (default: 0.05:0.95:0.05)")
    p.add_argument("--keep-largest", dest="keep_largest", action=argparse.BooleanOptionalAction,
                   default=None, help="evaluate with largest-object post-processing (default: off)")
    p.add_argument("--n-seeds", dest="n_seeds", type=int, help="initial seeds (default: 10000)")
    p.add_argument("--batch-size", dest="batch_size", type=int,
                   help="classifier batch size (default: 100)")
    p.add_argument("--seed", type=int, help="RNG seed (default: 0)")
    p.add_argument("--out", help="output report CSV")
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "grow": cmd_grow,
    "baseline": cmd_baseline,
    "eval": cmd_eval,
    "tune": cmd_tune,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        res = Resolver(args, DEFAULTS[args.command])
        return COMMANDS[args.command](res)
    except (CliError, ValueError, OSError, FormatError, TrainingError, TuningError) as exc:
        _log(f"error: {exc}")
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
