from __future__ import annotations

from dataclasses import dataclass, replace

from ..encoding import DEFAULT_THRESHOLD
from ..errors import PresetError
from ..model import BASELINE, BITFIELD

MSE = "mse"
CROSS_ENTROPY = "cross_entropy"


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    head: str
    loss: str
    primary_only: bool
    threshold: float = DEFAULT_THRESHOLD
    epochs: int = 30
    patch: int = 64
    batch: int = 4
    steps_per_epoch: int = 20
    lr: float = 1e-3
    seed: int = 7

    def validate(self) -> None:
        if self.head == BASELINE and (self.loss != CROSS_ENTROPY or self.primary_only):
            raise PresetError(f"{self.name}: the softmax head trains with cross-entropy on all categories")
        if self.head == BITFIELD and self.loss != MSE:
            raise PresetError(f"{self.name}: the bitfield head trains with MSE")
        if self.head not in (BASELINE, BITFIELD):
            raise PresetError(f"{self.name}: unknown head {self.head!r}")
        if self.epochs < 0 or self.patch < 1 or self.batch < 1 or self.steps_per_epoch < 1:
            raise PresetError(f"{self.name}: epochs, patch, batch and steps must be positive")
        if not -1 < self.threshold < 1:
            raise PresetError(f"{self.name}: threshold {self.threshold} outside (-1, 1)")

    def with_overrides(self, **kw) -> "ExperimentPreset":
        kw = {k: v for k, v in kw.items() if v is not None}
        p = replace(self, **kw)
        p.validate()
        return p

    def to_items(self) -> dict[str, str]:
        return {f"preset.{k}": str(v) for k, v in self.__dict__.items()}


PRESETS = {
    "baseline": ExperimentPreset("baseline", BASELINE, CROSS_ENTROPY, primary_only=False),
    "baseline-bitfield": ExperimentPreset("baseline-bitfield", BITFIELD, MSE, primary_only=False),
    "bitfield": ExperimentPreset("bitfield", BITFIELD, MSE, primary_only=True),
}

DISPLAY_NAMES = {"baseline": "Baseline", "baseline-bitfield": "Baseline-Bitfield", "bitfield": "Bitfield"}


def get_preset(name: str) -> ExperimentPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise PresetError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
