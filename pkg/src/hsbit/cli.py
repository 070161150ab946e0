"""Command-line entry point: ``hsbit {generate,train,eval,predict,export,report}``.

Settings come from, in increasing priority: built-in defaults, a plain-text
``key=value`` file given with ``--config``, and command-line flags.
Exit codes: 0 success, 1 usage error, 2 data or format error, 3 non-finite loss.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import encoding
from .data import io as dio
from .data.dataset import dataset_hash, generate_dataset, load_dataset
from .data.split import split_scene
from .errors import (
    ConfigError,
    DimensionError,
    FormatError,
    GenerationError,
    NumericalError,
    PresetError,
    SliceError,
    UsageError,
)
from .experiments import report as rep
from .experiments.metrics import evaluate, overlap_composition_analysis
from .experiments.presets import PRESETS, get_preset
from .model import BITFIELD, load, predict_powerset

log = logging.getLogger("hsbit")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# key -> (type, default); every key may appear in a config file
SETTINGS = {
    "seed": (int, 7),
    "preset": (str, "bitfield"),
    "threshold": (float, None),
    "epochs": (int, None),
    "patch": (int, None),
    "bands": (int, 224),
    "scenes": (int, 3),
    "out": (str, None),
    "data": (str, None),
    "model": (str, None),
    "input": (str, None),
    "mask": (str, None),
    "view": (str, None),
    "rgb": (str, None),
    "runs": (str, None),
}


# settings each subcommand reads; these are echoed into its output manifest
USED = {
    "generate": ("seed", "bands", "scenes"),
    "train": ("data", "preset", "seed", "threshold", "epochs", "patch", "bands"),
    "eval": ("model", "data", "preset", "threshold"),
    "predict": ("model", "input", "threshold", "view"),
    "export": ("input", "mask", "rgb", "bands"),
    "report": ("runs",),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _band_triple(text: str) -> tuple[int, int, int]:
    try:
        bands = tuple(int(b) for b in text.split(","))
    except ValueError:
        raise UsageError(f"--rgb expects three comma-separated band indices, got {text!r}") from None
    if len(bands) != 3:
        raise UsageError(f"--rgb expects three band indices, got {text!r}")
    return bands


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="plain-text key=value settings file")
    common.add_argument("--out", help="output directory (file for predict)")
    common.add_argument("-v", "--verbose", action="store_true", default=False)

    training = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    training.add_argument("--seed", type=int)
    training.add_argument("--preset", choices=sorted(PRESETS))
    training.add_argument("--threshold", type=float)
    training.add_argument("--epochs", type=int)
    training.add_argument("--patch", type=int)

    p = _Parser(prog="hsbit", description="Bitfield-encoded hyperspectral segmentation toolkit.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic dataset",
                       argument_default=argparse.SUPPRESS)
    g.add_argument("--seed", type=int)
    g.add_argument("--bands", type=int)
    g.add_argument("--scenes", type=int, help="number of labelled scenes")

    t = sub.add_parser("train", parents=[common, training], help="train a preset and score its test slices",
                       argument_default=argparse.SUPPRESS)
    t.add_argument("--data", help="dataset directory")
    t.add_argument("--bands", type=int, help="expected band count of the dataset")

    e = sub.add_parser("eval", parents=[common], help="score a checkpoint on a dataset's test slices",
                       argument_default=argparse.SUPPRESS)
    e.add_argument("--model")
    e.add_argument("--data")
    e.add_argument("--threshold", type=float)
    e.add_argument("--preset", choices=sorted(PRESETS), help="label used in the report")

    pr = sub.add_parser("predict", parents=[common], help="segment one cube into an HBM1 mask",
                        argument_default=argparse.SUPPRESS)
    pr.add_argument("--model")
    pr.add_argument("--input", help="HSC1 cube")
    pr.add_argument("--threshold", type=float)
    pr.add_argument("--view", help="also write <view>_rgb.ppm and <view>_mask.ppm")

    x = sub.add_parser("export", parents=[common], help="false-colour and mask pixmaps",
                       argument_default=argparse.SUPPRESS)
    x.add_argument("--input", help="HSC1 cube")
    x.add_argument("--mask", help="HBM1 mask")
    x.add_argument("--rgb", help="three band indices, e.g. 168,112,56")
    x.add_argument("--bands", type=int, help="expected band count of the cube")

    r = sub.add_parser("report", parents=[common], help="merge per-preset results into one table",
                       argument_default=argparse.SUPPRESS)
    r.add_argument("runs", nargs="*", help="run directories holding report.csv and manifest.txt")
    return p


def read_config(path) -> dict[str, object]:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"--config: no such file {path}")
    raw = dio.read_manifest(path)
    out = {}
    for k, v in raw.items():
        key = k.replace("-", "_")
        if key not in SETTINGS:
            raise ConfigError(f"{path}: unknown setting {k!r}")
        kind = SETTINGS[key][0]
        try:
            out[key] = kind(v)
        except ValueError:
            raise ConfigError(f"{path}: {k} expects {kind.__name__}, got {v!r}") from None
    return out


def resolve(args: argparse.Namespace) -> dict[str, object]:
    """Defaults, then config file, then flags."""
    cfg = {k: d for k, (_, d) in SETTINGS.items()}
    explicit = set()
    if getattr(args, "config", None):
        from_file = read_config(args.config)
        cfg.update(from_file)
        explicit.update(from_file)
    for k, v in vars(args).items():
        if k in SETTINGS:
            cfg[k] = ",".join(v) if isinstance(v, list) else v
            explicit.add(k)
    cfg["command"] = args.command
    cfg["_explicit"] = frozenset(explicit)
    return cfg


def _require(cfg, *keys):
    for k in keys:
        if not cfg.get(k):
            raise UsageError(f"{cfg['command']}: --{k} is required")


def _existing(path, flag) -> Path:
    p = Path(path)
    if not p.exists():
        raise FormatError(f"{flag}: no such file or directory", path=str(p))
    return p


def _config_items(cfg) -> dict[str, str]:
    items = {"config.command": cfg["command"]}
    for k in USED[cfg["command"]]:
        if cfg[k] is not None:
            items[f"config.{k}"] = str(cfg[k])
    return items


def _preset(cfg):
    try:
        return get_preset(cfg["preset"]).with_overrides(
            seed=cfg["seed"], threshold=cfg["threshold"], epochs=cfg["epochs"], patch=cfg["patch"])
    except PresetError as exc:
        raise UsageError(str(exc)) from None


# subcommands ------------------------------------------------------------------------

def cmd_generate(cfg) -> int:
    _require(cfg, "out")
    if cfg["scenes"] < 1:
        raise UsageError("--scenes must be at least 1")
    ds = generate_dataset(cfg["out"], seed=cfg["seed"], bands=cfg["bands"], n_scenes=cfg["scenes"])
    print(f"wrote {len(ds.scenes)} scenes (+{int(ds.extra is not None)} primary-only) to {cfg['out']}")
    print(f"dataset hash {dataset_hash(cfg['out'])}")
    return EXIT_OK


def _check_bands(cfg, bands, what):
    if "bands" in cfg["_explicit"] and bands != cfg["bands"]:
        raise DimensionError(f"--bands {cfg['bands']} but {what} has {bands} bands")


def cmd_train(cfg) -> int:
    _require(cfg, "data", "out")
    data = _existing(cfg["data"], "--data")
    preset = _preset(cfg)
    ds_bands = int(dio.read_manifest(_existing(data / "manifest.txt", "--data")).get("bands", 0))
    _check_bands(cfg, ds_bands, str(data))
    cfg["bands"] = ds_bands

    def progress(epoch, history):
        log.info("epoch %d/%d train %.5f val %.5f macro-F1 %.4f", epoch + 1, preset.epochs,
                 history.train_loss[-1], history.val_loss[-1], history.val_macro_f1[-1])

    result = rep.run_preset(preset, data, cfg["out"], progress=progress, extra_manifest=_config_items(cfg))
    f1, p, r = result.metrics.macro()
    print(f"{preset.name}: test macro F1 {f1:.3f} precision {p:.3f} recall {r:.3f}")
    print(f"checkpoint {result.files['checkpoint']}")
    return EXIT_OK


def cmd_eval(cfg) -> int:
    _require(cfg, "model", "data", "out")
    model = load(_existing(cfg["model"], "--model"))
    data = _existing(cfg["data"], "--data")
    threshold = encoding.DEFAULT_THRESHOLD if cfg["threshold"] is None else cfg["threshold"]
    ds = load_dataset(data)
    tests = [split_scene(s).test for s in ds.scenes]
    metrics = evaluate(model, tests, threshold)
    comp = overlap_composition_analysis(model, tests, threshold) if model.spec.head == BITFIELD else None
    name = model.meta.get("preset", model.spec.head)
    files = rep.write_evaluation(cfg["out"], name, metrics, rep.blob_counts([t.truth for t in tests]), comp)
    manifest = {
        "preset": name,
        "threshold": repr(threshold),
        "seed.model": str(model.spec.seed),
        "seed.dataset": ds.manifest["seed"],
        "dataset.hash": dataset_hash(data),
        "test.macro_f1": repr(metrics.macro()[0]),
        **_config_items(cfg),
    }
    dio.write_manifest(Path(cfg["out"]) / "manifest.txt", manifest)
    sys.stdout.write(files["report"].read_text(encoding="utf-8"))
    return EXIT_OK


def cmd_predict(cfg) -> int:
    _require(cfg, "model", "input", "out")
    model = load(_existing(cfg["model"], "--model"))
    cube = dio.read_cube(_existing(cfg["input"], "--input"))
    threshold = encoding.DEFAULT_THRESHOLD if cfg["threshold"] is None else cfg["threshold"]
    if cube.shape[2] != model.spec.bands:
        raise DimensionError(f"--input {cfg['input']} has {cube.shape[2]} bands, model expects {model.spec.bands}")
    mask = predict_powerset(model, cube, threshold, pad=True)
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    dio.write_mask(out, mask)
    if cfg["view"]:
        dio.export_view(cube, mask, cfg["view"])
    print(f"wrote {out} ({mask.shape[0]}x{mask.shape[1]})")
    return EXIT_OK


def cmd_export(cfg) -> int:
    _require(cfg, "out")
    if not cfg["input"] and not cfg["mask"]:
        raise UsageError("export: give --input and/or --mask")
    cube = dio.read_cube(_existing(cfg["input"], "--input")) if cfg["input"] else None
    mask = dio.read_mask(_existing(cfg["mask"], "--mask")) if cfg["mask"] else None
    if cube is not None:
        _check_bands(cfg, cube.shape[2], cfg["input"])
    if cube is not None and mask is not None and cube.shape[:2] != mask.shape:
        raise DimensionError(f"--input is {cube.shape[:2]} but --mask is {mask.shape}")
    bands = _band_triple(cfg["rgb"]) if cfg["rgb"] else None
    if bands and cube is not None and not all(0 <= b < cube.shape[2] for b in bands):
        raise UsageError(f"--rgb bands {bands} outside [0, {cube.shape[2]})")
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    for p in dio.export_view(cube, mask, out, bands):
        print(f"wrote {p}")
    return EXIT_OK


def cmd_report(cfg) -> int:
    _require(cfg, "out")
    runs = [r for r in (cfg["runs"] or "").split(",") if r]
    if not runs:
        raise UsageError("report: give one or more run directories")
    results, manifest = {}, {}
    for i, run in enumerate(runs):
        d = _existing(run, "report")
        meta = dio.read_manifest(_existing(d / "manifest.txt", "report"))
        name = meta.get("preset", d.name)
        if name in results:
            name = f"{name}#{i}"
        results[name] = rep.read_report(d / "report.csv")
        for k in ("seed.model", "seed.dataset", "dataset.hash"):
            if k in meta:
                manifest[f"{name}.{k}"] = meta[k]
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    table = rep.merged_table(results)
    (out / "comparison.csv").write_text(table, encoding="utf-8")
    rep.plot_f1_bars(results, out / "f1_comparison.png")
    manifest["presets"] = ",".join(results)
    manifest.update(_config_items(cfg))
    dio.write_manifest(out / "manifest.txt", manifest)
    sys.stdout.write(table)
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "export": cmd_export,
    "report": cmd_report,
}

_DATA_ERRORS = (FormatError, DimensionError, SliceError, GenerationError, PresetError, OSError)


def threads() -> int:
    raw = os.environ.get("HSBIT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"HSBIT_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"HSBIT_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        cfg = resolve(args)
        with threadpool_limits(limits=threads()):
            return COMMANDS[args.command](cfg)
    except (UsageError, ConfigError) as exc:
        print(f"hsbit: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"hsbit: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _DATA_ERRORS as exc:
        print(f"hsbit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
