"""Result tables (CSV), run manifests, figures, and the end-to-end preset runner."""

from __future__ import annotations

import csv
import io as _io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from scipy import ndimage

from .. import encoding
from ..data import io as dio
from ..data.dataset import dataset_hash, load_dataset
from ..data.split import split_scene
from ..errors import FormatError
from ..model import UNetModel, save
from .metrics import CategoryMetrics, OverlapComposition, evaluate, overlap_composition_analysis, pooled_two_way
from .presets import DISPLAY_NAMES, ExperimentPreset
from .train import TrainHistory, supervised_counts, train, training_sources

log = logging.getLogger(__name__)

# background, primaries, then overlaps by value
TABLE_ORDER = (0, 1, 2, 4, 3, 5, 6, 7)
COLUMNS = ("category", "encoding", "blobs", "F1", "precision", "recall")
AVERAGE = "Average"


def blob_counts(truths) -> np.ndarray:
    """8-connected components per powerset category, summed over masks. Background counts as 0."""
    counts = np.zeros(encoding.N_CATEGORIES, dtype=np.int64)
    eight = np.ones((3, 3), dtype=bool)
    for t in truths:
        t = np.asarray(t)
        for cat in range(1, encoding.N_CATEGORIES):
            _, n = ndimage.label(t == cat, structure=eight)
            counts[cat] += n
    return counts


def _code(cat: int) -> str:
    return encoding.format_bitfield(encoding.index_to_bitfield(cat))


def report_rows(metrics: CategoryMetrics, blobs=None) -> list[dict]:
    """Eight category rows in table order plus the Average row."""
    rows = []
    for cat in TABLE_ORDER:
        rows.append({
            "category": encoding.category_name(cat),
            "encoding": _code(cat),
            "blobs": "-" if cat == 0 or blobs is None else str(int(blobs[cat])),
            "F1": float(metrics.f1[cat]),
            "precision": float(metrics.precision[cat]),
            "recall": float(metrics.recall[cat]),
        })
    f1, p, r = metrics.macro()
    rows.append({"category": AVERAGE, "encoding": "", "blobs": "", "F1": f1, "precision": p, "recall": r})
    return rows


def _fmt(v) -> str:
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def report_csv(metrics: CategoryMetrics, blobs=None) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in report_rows(metrics, blobs):
        w.writerow([_fmt(row[c]) for c in COLUMNS])
    return buf.getvalue()


def read_report(path) -> list[dict]:
    """Rows of a report CSV with the metric columns as floats."""
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise FormatError(f"cannot read report: {exc}", path=str(path)) from exc
    if not rows or any(c not in rows[0] for c in COLUMNS):
        raise FormatError(f"report needs columns {', '.join(COLUMNS)}", path=str(path))
    if len(rows) != len(TABLE_ORDER) + 1 or rows[-1]["category"] != AVERAGE:
        raise FormatError(f"report must have {len(TABLE_ORDER)} category rows and a final Average row",
                          path=str(path))
    try:
        for row in rows:
            for c in ("F1", "precision", "recall"):
                row[c] = float(row[c])
    except ValueError as exc:
        raise FormatError(f"non-numeric metric: {exc}", path=str(path)) from exc
    return rows


def merged_table(results: dict[str, list[dict]]) -> str:
    """Side-by-side comparison: one F1/precision/recall triple per preset, rows as in each report."""
    names = list(results)
    first = results[names[0]]
    header = ["category", "encoding", "blobs"]
    for n in names:
        label = DISPLAY_NAMES.get(n, n)
        header += [f"{label} F1", f"{label} precision", f"{label} recall"]
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for i, row in enumerate(first):
        line = [row["category"], row["encoding"], row["blobs"]]
        for n in names:
            other = results[n][i]
            if other["category"] != row["category"]:
                raise FormatError(f"report rows disagree: {row['category']} vs {other['category']} in {n}")
            line += [f"{float(other[c]):.3f}" for c in ("F1", "precision", "recall")]
        w.writerow(line)
    return buf.getvalue()


def composition_csv(comp: dict[int, OverlapComposition]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["category", "encoding", "pixels", "exact_recall", "mean_bit_recall", "subset_fraction",
                "PP_recall", "PE_recall", "PET_recall"])
    for cat in TABLE_ORDER:
        if cat not in comp:
            continue
        c = comp[cat]
        bits = [_fmt(c.bit_recall[k]) if k in c.bit_recall else "" for k in range(encoding.K)]
        w.writerow([encoding.category_name(cat), _code(cat), c.pixels, _fmt(c.exact_recall),
                    _fmt(c.mean_bit_recall), _fmt(c.subset_fraction), *bits])
    return buf.getvalue()


# figures ------------------------------------------------------------------------------

def _save(fig: Figure, path) -> Path:
    FigureCanvasAgg(fig)
    fig.savefig(path, format="png", dpi=100, metadata={"Software": None})
    return Path(path)


def plot_f1_bars(results: dict[str, list[dict]], path) -> Path:
    """Grouped bars of per-category F1, one group per category, one bar per preset."""
    fig = Figure(figsize=(9, 4))
    ax = fig.add_subplot()
    names = list(results)
    labels = [r["category"] for r in results[names[0]]]
    x = np.arange(len(labels))
    width = 0.8 / len(names)
    for i, n in enumerate(names):
        ax.bar(x + (i - (len(names) - 1) / 2) * width, [r["F1"] for r in results[n]], width,
               label=DISPLAY_NAMES.get(n, n))
    ax.set_xticks(x, labels, rotation=30, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("F1")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_history(history: TrainHistory, path, title: str = "") -> Path:
    fig = Figure(figsize=(7, 3.5))
    ax = fig.add_subplot()
    epochs = np.arange(len(history))
    ax.plot(epochs, history.train_loss, label="train loss")
    ax.plot(epochs, history.val_loss, label="validation loss")
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, history.val_macro_f1, color="tab:green", label="validation macro-F1")
    ax2.set_ylim(0, 1)
    ax2.set_ylabel("macro-F1")
    if history.best_epoch >= 0:
        ax.axvline(history.best_epoch, color="grey", linestyle=":")
    lines = ax.get_lines()[:2] + ax2.get_lines()
    ax.legend(lines, [l.get_label() for l in lines], fontsize=8, loc="center right")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_confusion(metrics: CategoryMetrics, path, title: str = "") -> Path:
    """Row-normalized confusion matrix in table order."""
    cm = metrics.confusion[np.ix_(TABLE_ORDER, TABLE_ORDER)].astype(np.float64)
    rows = cm.sum(axis=1, keepdims=True)
    norm = np.divide(cm, rows, out=np.zeros_like(cm), where=rows > 0)
    labels = [encoding.category_name(c) for c in TABLE_ORDER]
    fig = Figure(figsize=(6, 5))
    ax = fig.add_subplot()
    im = ax.imshow(norm, vmin=0, vmax=1, cmap="viridis")
    ax.set_xticks(range(len(labels)), labels, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(len(labels)), labels, fontsize=8)
    ax.set_xlabel("predicted")
    ax.set_ylabel("truth")
    for i in range(len(labels)):
        for j in range(len(labels)):
            if cm[i, j]:
                ax.text(j, i, f"{norm[i, j]:.2f}", ha="center", va="center", fontsize=6,
                        color="white" if norm[i, j] < 0.5 else "black")
    fig.colorbar(im, ax=ax)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


# end-to-end run ------------------------------------------------------------------------

@dataclass
class RunResult:
    model: UNetModel
    history: TrainHistory
    metrics: CategoryMetrics
    composition: dict[int, OverlapComposition]
    files: dict[str, Path] = field(default_factory=dict)


def write_evaluation(out_dir, name: str, metrics: CategoryMetrics, blobs, composition=None,
                     history: TrainHistory | None = None) -> dict[str, Path]:
    """Report CSV plus figures for one evaluated model."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"report": out / "report.csv"}
    files["report"].write_text(report_csv(metrics, blobs), encoding="utf-8")
    if composition is not None:
        files["overlap"] = out / "overlap.csv"
        files["overlap"].write_text(composition_csv(composition), encoding="utf-8")
    title = DISPLAY_NAMES.get(name, name)
    files["f1_figure"] = plot_f1_bars({name: report_rows(metrics, blobs)}, out / "f1.png")
    files["confusion_figure"] = plot_confusion(metrics, out / "confusion.png", title)
    if history is not None and len(history):
        files["history"] = out / "history.csv"
        files["history"].write_text(history.to_csv(), encoding="utf-8")
        files["curves_figure"] = plot_history(history, out / "curves.png", title)
    return files


def run_preset(preset: ExperimentPreset, dataset_dir, out_dir, progress=None,
               extra_manifest: dict | None = None) -> RunResult:
    """Train on the train slices, select on validation, score the test slices, write everything."""
    ds = load_dataset(dataset_dir)
    splits = [split_scene(s) for s in ds.scenes]
    train_scenes = [s.train for s in splits]
    extra = [ds.extra] if ds.extra is not None else []
    model, history = train(preset, train_scenes, [s.validation for s in splits], extra, progress=progress)
    tests = [s.test for s in splits]
    metrics = evaluate(model, tests, preset.threshold)
    comp = overlap_composition_analysis(model, tests, preset.threshold)
    blobs = blob_counts([s.truth for s in tests])

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = write_evaluation(out, preset.name, metrics, blobs, comp, history)
    files["checkpoint"] = out / "model.hsbm"
    save(model, files["checkpoint"])

    supervised = supervised_counts(training_sources(train_scenes, extra, preset.primary_only))
    exact, bits = pooled_two_way(comp)
    manifest = {
        "preset": preset.name,
        **preset.to_items(),
        "seed.model": str(model.spec.seed),
        "seed.dataset": ds.manifest["seed"],
        "dataset.hash": dataset_hash(dataset_dir),
        "best_epoch": str(history.best_epoch),
        "test.macro_f1": repr(metrics.macro()[0]),
        "test.two_way_exact_recall": repr(exact),
        "test.two_way_bit_recall": repr(bits),
    }
    for cat in range(encoding.N_CATEGORIES):
        manifest[f"train.pixels.{_code(cat)}"] = str(int(supervised[cat]))
    manifest.update(extra_manifest or {})
    files["manifest"] = out / "manifest.txt"
    dio.write_manifest(files["manifest"], manifest)
    return RunResult(model, history, metrics, comp, files)
