"""Patch-based training loop with per-epoch validation and best-model selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import encoding
from ..errors import NumericalError, PresetError
from ..model import BITFIELD, ModelSpec, UNetModel, _pad_to_multiple, build
from ..numerics import ops
from ..numerics.optim import AdamState, adam_step
from ..numerics.tensor import Tensor, backward, no_grad, recording
from .metrics import evaluate_predictions
from .presets import ExperimentPreset

log = logging.getLogger(__name__)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_macro_f1: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def __len__(self) -> int:
        return len(self.train_loss)

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,val_macro_f1"]
        for i, (a, b, c) in enumerate(zip(self.train_loss, self.val_loss, self.val_macro_f1)):
            lines.append(f"{i},{a!r},{b!r},{c!r}")
        return "\n".join(lines) + "\n"


@dataclass
class Source:
    cube: np.ndarray  # (B, H, W) float32
    classes: np.ndarray  # (H, W) uint8 powerset indices
    weight: np.ndarray  # (H, W) float32 loss mask

    @property
    def shape(self):
        return self.classes.shape


def training_sources(train_scenes, extra_scenes=(), primary_only: bool = False) -> list[Source]:
    """Turn scenes into loss sources.

    With ``primary_only`` every overlap pixel gets zero loss weight and the
    extra primary-only scenes are added to the pool.
    """
    scenes = list(train_scenes) + (list(extra_scenes) if primary_only else [])
    out = []
    for s in scenes:
        w = np.ones(s.truth.shape, dtype=np.float32)
        if primary_only:
            w[encoding.is_overlap(s.truth)] = 0.0
        cube = np.ascontiguousarray(np.moveaxis(s.cube, -1, 0), dtype=np.float32)
        out.append(Source(cube, s.truth.astype(np.uint8), w))
    return out


def supervised_counts(sources: list[Source]) -> np.ndarray:
    """Pixels per category that carry non-zero loss weight."""
    total = np.zeros(encoding.N_CATEGORIES, dtype=np.int64)
    for s in sources:
        total += np.bincount(s.classes[s.weight > 0].ravel(), minlength=encoding.N_CATEGORIES)
    return total


class PatchSampler:
    """Seeded uniform sampling of square patches across sources."""

    def __init__(self, sources: list[Source], patch: int, seed: int):
        self.sources = [s for s in sources if s.shape[0] >= patch and s.shape[1] >= patch and s.weight.any()]
        if not self.sources:
            raise PresetError(f"no training source is at least {patch}x{patch} with supervised pixels")
        self.patch = patch
        positions = np.array([(s.shape[0] - patch + 1) * (s.shape[1] - patch + 1) for s in self.sources], float)
        self.p = positions / positions.sum()
        self.rng = np.random.default_rng(seed)

    def batch(self, n: int):
        P = self.patch
        xs, cls, ws = [], [], []
        for _ in range(n):
            s = self.sources[int(self.rng.choice(len(self.sources), p=self.p))]
            y = int(self.rng.integers(0, s.shape[0] - P + 1))
            x = int(self.rng.integers(0, s.shape[1] - P + 1))
            xs.append(s.cube[:, y:y + P, x:x + P])
            cls.append(s.classes[y:y + P, x:x + P])
            ws.append(s.weight[y:y + P, x:x + P])
        return np.stack(xs), np.stack(cls), np.stack(ws)


def loss_for(model: UNetModel, logits: Tensor, classes: np.ndarray, weight: np.ndarray | None) -> Tensor:
    if model.spec.head == BITFIELD:
        targets = np.moveaxis(encoding.bitfield_to_target(encoding.index_to_bitfield(classes)), -1, 1)
        return ops.mse_loss(ops.tanh(logits), targets, weight)
    return ops.cross_entropy(logits, classes, weight)


def validate(model: UNetModel, scenes, threshold: float) -> tuple[float, float]:
    """(mean loss, macro-F1) over whole validation scenes."""
    losses, truths, preds = [], [], []
    with no_grad():
        for s in scenes:
            h, w = s.truth.shape
            cube = _pad_to_multiple(s.cube, model.spec.multiple)
            x = Tensor(np.ascontiguousarray(np.moveaxis(cube, -1, 0)[None], dtype=np.float32))
            logits = model.logits(x).data[:, :, :h, :w]
            losses.append(loss_for(model, Tensor(np.ascontiguousarray(logits)), s.truth[None], None).item())
            if model.spec.head == BITFIELD:
                pred = encoding.decode_scores(np.tanh(logits[0]), threshold)
            else:
                pred = logits[0].argmax(axis=0).astype(np.uint8)
            truths.append(s.truth)
            preds.append(pred)
    macro_f1 = evaluate_predictions(truths, preds).macro()[0]
    return float(np.mean(losses)), macro_f1


def train(preset: ExperimentPreset, train_scenes, validation_scenes, extra_scenes=(),
          spec: ModelSpec | None = None, model: UNetModel | None = None,
          progress=None) -> tuple[UNetModel, TrainHistory]:
    """Train a fresh (or given) model per ``preset``; return the best-validation model.

    A fresh model gets its per-band input statistics from the training
    sources. Without validation scenes the final model is returned.
    """
    preset.validate()
    fresh = model is None
    if fresh:
        bands = train_scenes[0].cube.shape[2] if train_scenes else 224
        spec = spec or ModelSpec(bands=bands, head=preset.head, seed=preset.seed)
        if spec.head != preset.head:
            raise PresetError(f"preset {preset.name} needs a {preset.head} head, spec has {spec.head}")
        model = build(spec)
    history = TrainHistory()
    if preset.epochs == 0:
        return model, history

    sources = training_sources(train_scenes, extra_scenes, preset.primary_only)
    if not sources or supervised_counts(sources).sum() == 0:
        raise PresetError(f"preset {preset.name}: training set is empty after filtering")
    sampler = PatchSampler(sources, preset.patch, preset.seed)
    if fresh:
        model.fit_input_stats([s.cube for s in sources])
    params = model.parameters()
    state = AdamState.for_params(params, lr=preset.lr)
    best_f1, best_params = -1.0, None

    for epoch in range(preset.epochs):
        epoch_losses = []
        for _ in range(preset.steps_per_epoch):
            x, cls, w = sampler.batch(preset.batch)
            model.zero_grad()
            with recording() as graph:
                loss = loss_for(model, model.logits(Tensor(x)), cls, w)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(f"non-finite training loss at epoch {epoch}")
            backward(graph, loss)
            adam_step(params, [p.grad for p in params], state)
            epoch_losses.append(value)
        history.train_loss.append(float(np.mean(epoch_losses)))
        if validation_scenes:
            vl, vf1 = validate(model, validation_scenes, preset.threshold)
        else:
            vl, vf1 = float("nan"), float("nan")
        history.val_loss.append(vl)
        history.val_macro_f1.append(vf1)
        log.info("%s epoch %d: train %.4f val %.4f macro-F1 %.4f", preset.name, epoch, history.train_loss[-1], vl, vf1)
        if progress is not None:
            progress(epoch, history)
        if validation_scenes and vf1 > best_f1:
            best_f1 = vf1
            history.best_epoch = epoch
            best_params = {k: v.data.copy() for k, v in model.params.items()}

    if best_params is not None:
        for k, arr in best_params.items():
            model.params[k].data[...] = arr
    else:
        history.best_epoch = len(history) - 1
    model.meta.update({
        "preset": preset.name,
        "seed": preset.seed,
        "epochs": len(history),
        "best_epoch": history.best_epoch,
        "final_train_loss": repr(history.train_loss[-1]),
    })
    return model, history
