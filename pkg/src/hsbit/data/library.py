"""Synthetic per-polymer reflectance signatures.

Each signature is a 0.2 baseline plus five random Gaussian features over a
normalised wavelength axis, clipped to [0, 1]. Real polymer spectra are not
shipped with the package, so these stand in for them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..encoding import K, PRIMARY_CLASSES
from ..errors import GenerationError, UsageError

N_FEATURES = 5
MAX_RESAMPLES = 100


@dataclass
class SpectralLibrary:
    signatures: np.ndarray  # (K, B) float32, row k is primary class k
    background: np.ndarray  # (B,) float32
    sigma_add: float = 0.01
    sigma_mul: float = 0.02
    seed: int = 0
    delta_sep: float = 1.0

    @property
    def bands(self) -> int:
        return self.signatures.shape[1]

    def signature(self, name_or_index) -> np.ndarray:
        if isinstance(name_or_index, str):
            name_or_index = PRIMARY_CLASSES.index(name_or_index)
        return self.signatures[name_or_index]

    def pairwise_distances(self) -> np.ndarray:
        s = self.signatures.astype(np.float64)
        return np.linalg.norm(s[:, None, :] - s[None, :, :], axis=-1)

    def with_noise(self, sigma_add: float, sigma_mul: float) -> "SpectralLibrary":
        return SpectralLibrary(self.signatures, self.background, sigma_add, sigma_mul, self.seed, self.delta_sep)

    def as_array(self) -> np.ndarray:
        """(K + 1, B) stack: background first, then the primaries."""
        return np.vstack([self.background[None], self.signatures]).astype(np.float32)

    def reference(self, category: int) -> np.ndarray:
        """Mean spectrum of a powerset category: equal-weight mix of its constituents."""
        if category == 0:
            return self.background.astype(np.float64)
        members = [k for k in range(K) if category >> k & 1]
        return self.signatures[members].astype(np.float64).mean(axis=0)


def _signature(rng: np.random.Generator, wavelengths: np.ndarray) -> np.ndarray:
    amp = rng.uniform(-0.15, 0.55, N_FEATURES)
    mu = rng.uniform(0.0, 1.0, N_FEATURES)
    sigma = rng.uniform(0.02, 0.15, N_FEATURES)
    bumps = amp[:, None] * np.exp(-((wavelengths[None] - mu[:, None]) ** 2) / (2 * sigma[:, None] ** 2))
    return np.clip(0.2 + bumps.sum(axis=0), 0.0, 1.0)


def generate_library(seed: int = 0, bands: int = 224, delta_sep: float = 1.0,
                     sigma_add: float = 0.01, sigma_mul: float = 0.02) -> SpectralLibrary:
    if bands < 8:
        raise UsageError(f"need at least 8 bands, got {bands}")
    rng = np.random.default_rng(seed)
    lam = np.linspace(0.0, 1.0, bands)
    for _ in range(MAX_RESAMPLES):
        sig = np.stack([_signature(rng, lam) for _ in range(K)]).astype(np.float32)
        d = np.linalg.norm(sig[:, None, :].astype(np.float64) - sig[None, :, :], axis=-1)
        if d[np.triu_indices(K, 1)].min() >= delta_sep:
            break
    else:
        raise GenerationError(
            f"no library with pairwise separation >= {delta_sep} after {MAX_RESAMPLES} resamples (seed {seed})"
        )
    phase = rng.uniform(0, 2 * np.pi)
    background = (0.05 + 0.005 * np.sin(6 * np.pi * lam + phase)).astype(np.float32)
    return SpectralLibrary(sig, background, sigma_add, sigma_mul, seed, delta_sep)
