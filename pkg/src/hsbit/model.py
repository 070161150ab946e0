"""U-net over hyperspectral cubes with a bitfield or a softmax head.

A 1x1 convolution first folds the B input bands into a small number of
feature channels; the rest is a plain U-net (3x3 "same" convolutions,
2x2 max-pooling, 2x2 stride-2 transposed convolutions, skip concatenation)
followed by a 1x1 head convolution. Inputs are shifted and scaled per band
by fixed statistics fitted on the training pixels; this affine map folds
into the reduction convolution, so it changes the optimization path but
not the family of functions. The bitfield head squashes K outputs
with tanh; the baseline head applies a softmax over C powerset categories.
"""

from __future__ import annotations

import io
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import encoding
from .errors import ConfigError, DimensionError, FormatError, NumericalError
from .numerics import ops
from .numerics.tensor import Tensor, no_grad

BITFIELD = "bitfield"
BASELINE = "baseline"
HEADS = (BITFIELD, BASELINE)
INPUT_MEAN = "input.mean"
INPUT_SCALE = "input.scale"
FIXED = (INPUT_MEAN, INPUT_SCALE)


@dataclass
class ModelSpec:
    bands: int = 224
    head: str = BITFIELD
    spectral_reduction_channels: int = 32
    encoder_channels: list[int] = field(default_factory=lambda: [32, 64, 128])
    depth: int = 2
    seed: int = 0

    @property
    def out_channels(self) -> int:
        return encoding.K if self.head == BITFIELD else encoding.N_CATEGORIES

    @property
    def multiple(self) -> int:
        return 2**self.depth

    def validate(self) -> None:
        if self.head not in HEADS:
            raise ConfigError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.bands < 1 or self.spectral_reduction_channels < 1:
            raise ConfigError("bands and spectral_reduction_channels must be positive")
        if self.depth < 0:
            raise ConfigError(f"depth must be >= 0, got {self.depth}")
        if len(self.encoder_channels) != self.depth + 1:
            raise ConfigError(
                f"encoder_channels needs depth + 1 = {self.depth + 1} entries, got {self.encoder_channels}"
            )
        if any(int(c) < 1 for c in self.encoder_channels):
            raise ConfigError(f"encoder_channels must be positive, got {self.encoder_channels}")

    def to_text(self) -> str:
        d = asdict(self)
        d["encoder_channels"] = ",".join(str(c) for c in self.encoder_channels)
        return "".join(f"{k}={v}\n" for k, v in d.items())

    @classmethod
    def from_text(cls, text: str) -> "ModelSpec":
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        try:
            spec = cls(
                bands=int(kv["bands"]),
                head=kv["head"],
                spectral_reduction_channels=int(kv["spectral_reduction_channels"]),
                encoder_channels=[int(c) for c in kv["encoder_channels"].split(",")],
                depth=int(kv["depth"]),
                seed=int(kv["seed"]),
            )
        except (KeyError, ValueError) as exc:
            raise FormatError(f"bad model spec block: {exc}") from exc
        spec.validate()
        return spec


def _glorot(rng, shape, fan_in, fan_out) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


class UNetModel:
    """Parameters plus the forward pass. ``meta`` holds training bookkeeping."""

    def __init__(self, spec: ModelSpec, params: dict[str, Tensor], meta: dict | None = None):
        self.spec = spec
        self.params = params
        self.meta = dict(meta or {})

    def parameters(self) -> list[Tensor]:
        """Trainable tensors only; the per-band input statistics are excluded."""
        return [p for p in self.params.values() if p.requires_grad]

    def set_input_stats(self, mean, scale) -> None:
        mean = np.asarray(mean, dtype=np.float32).reshape(-1)
        scale = np.asarray(scale, dtype=np.float32).reshape(-1)
        if mean.shape != (self.spec.bands,) or scale.shape != (self.spec.bands,):
            raise DimensionError(f"input statistics need {self.spec.bands} bands, got {mean.shape} and {scale.shape}")
        if not np.all(scale > 0):
            raise DimensionError("input scale must be positive in every band")
        self.params[INPUT_MEAN].data[...] = mean
        self.params[INPUT_SCALE].data[...] = scale

    def fit_input_stats(self, cubes, min_scale: float = 1e-3) -> None:
        """Per-band mean and standard deviation over all pixels of (B, H, W) cubes."""
        flat = np.concatenate([np.asarray(c, dtype=np.float64).reshape(self.spec.bands, -1) for c in cubes], axis=1)
        if not np.isfinite(flat).all():
            raise NumericalError("training cubes contain non-finite values")
        self.set_input_stats(flat.mean(axis=1), np.maximum(flat.std(axis=1), min_scale))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def copy(self) -> "UNetModel":
        params = {k: Tensor(v.data.copy(), requires_grad=v.requires_grad, name=k) for k, v in self.params.items()}
        return UNetModel(self.spec, params, self.meta)

    def astype(self, dtype) -> "UNetModel":
        params = {k: Tensor(v.data.astype(dtype), requires_grad=v.requires_grad, name=k) for k, v in self.params.items()}
        return UNetModel(self.spec, params, self.meta)

    # forward pass on NCHW tensors

    def _conv(self, name, x, padding=1):
        return ops.conv2d(x, self.params[name + ".w"], self.params[name + ".b"], stride=1, padding=padding)

    def _block(self, name, x):
        x = ops.relu(self._conv(name + ".conv1", x))
        return ops.relu(self._conv(name + ".conv2", x))

    def logits(self, x: Tensor) -> Tensor:
        """Pre-activation head output, (N, out_channels, H, W)."""
        spec = self.spec
        if x.ndim != 4 or x.shape[1] != spec.bands:
            raise DimensionError(f"model expects (N, {spec.bands}, H, W) input, got {x.shape}")
        h, w = x.shape[2:]
        if h % spec.multiple or w % spec.multiple:
            raise DimensionError(f"spatial extent {(h, w)} not divisible by {spec.multiple}")

        # fixed input map; no gradient flows to the input
        mean = self.params[INPUT_MEAN].data[None, :, None, None]
        scale = self.params[INPUT_SCALE].data[None, :, None, None]
        x = Tensor((x.data - mean) / scale)
        x = ops.relu(self._conv("reduce", x, padding=0))
        skips = []
        for level in range(spec.depth):
            x = self._block(f"enc{level}", x)
            skips.append(x)
            x, _ = ops.maxpool2d(x, 2, 2)
        x = self._block(f"enc{spec.depth}", x)
        for level in reversed(range(spec.depth)):
            x = ops.conv_transpose2d(x, self.params[f"up{level}.w"], self.params[f"up{level}.b"], stride=2)
            x = ops.concat([x, skips[level]], axis=1)
            x = self._block(f"dec{level}", x)
        return self._conv("head", x, padding=0)

    def activate(self, logits: Tensor) -> Tensor:
        if self.spec.head == BITFIELD:
            return ops.tanh(logits)
        return ops.softmax(logits, axis=1)

    def apply(self, x: Tensor) -> Tensor:
        return self.activate(self.logits(x))


def build(spec: ModelSpec) -> UNetModel:
    """Fresh model with Glorot-uniform weights drawn from ``spec.seed``; biases start at zero.

    Input statistics start as the identity (mean 0, scale 1).
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    params: dict[str, Tensor] = {
        INPUT_MEAN: Tensor(np.zeros(spec.bands, np.float32), name=INPUT_MEAN),
        INPUT_SCALE: Tensor(np.ones(spec.bands, np.float32), name=INPUT_SCALE),
    }

    def conv(name, c_in, c_out, k):
        w = _glorot(rng, (c_out, c_in, k, k), c_in * k * k, c_out * k * k)
        params[name + ".w"] = Tensor(w, requires_grad=True, name=name + ".w")
        params[name + ".b"] = Tensor(np.zeros(c_out, np.float32), requires_grad=True, name=name + ".b")

    ch = [int(c) for c in spec.encoder_channels]
    conv("reduce", spec.bands, spec.spectral_reduction_channels, 1)
    c_in = spec.spectral_reduction_channels
    for level in range(spec.depth + 1):
        conv(f"enc{level}.conv1", c_in, ch[level], 3)
        conv(f"enc{level}.conv2", ch[level], ch[level], 3)
        c_in = ch[level]
    for level in reversed(range(spec.depth)):
        w = _glorot(rng, (ch[level + 1], ch[level], 2, 2), ch[level + 1] * 4, ch[level] * 4)
        params[f"up{level}.w"] = Tensor(w, requires_grad=True, name=f"up{level}.w")
        params[f"up{level}.b"] = Tensor(np.zeros(ch[level], np.float32), requires_grad=True, name=f"up{level}.b")
        conv(f"dec{level}.conv1", 2 * ch[level], ch[level], 3)
        conv(f"dec{level}.conv2", ch[level], ch[level], 3)
    conv("head", ch[0], spec.out_channels, 1)
    return UNetModel(spec, params)


def _pad_to_multiple(cube: np.ndarray, multiple: int) -> np.ndarray:
    h, w = cube.shape[:2]
    ph, pw = (-h) % multiple, (-w) % multiple
    if not (ph or pw):
        return cube
    return np.pad(cube, ((0, ph), (0, pw), (0, 0)), mode="edge")


def forward(model: UNetModel, cube: np.ndarray, pad: bool = False) -> np.ndarray:
    """Scores for one (H, W, B) cube as an (H, W, out_channels) float32 array.

    With ``pad=True`` the cube is edge-padded up to a multiple of
    ``2**depth`` and the result cropped back, so any extent is accepted.
    """
    cube = np.asarray(cube)
    if cube.ndim != 3 or cube.shape[2] != model.spec.bands:
        raise DimensionError(f"expected an (H, W, {model.spec.bands}) cube, got shape {cube.shape}")
    h, w = cube.shape[:2]
    if pad:
        cube = _pad_to_multiple(cube, model.spec.multiple)
    x = Tensor(np.ascontiguousarray(np.moveaxis(cube, -1, 0)[None], dtype=np.float32))
    with no_grad():
        y = model.apply(x).data[0]
    return np.moveaxis(y, 0, -1)[:h, :w]


def predict(model: UNetModel, cube: np.ndarray, threshold: float = encoding.DEFAULT_THRESHOLD,
            pad: bool = False) -> np.ndarray:
    """Per-pixel labels.

    Bitfield head: an (H, W, K) bool bitfield mask from thresholding the
    scores. Baseline head: an (H, W) uint8 powerset mask from the argmax
    channel, ties resolved to the lowest index.
    """
    scores = forward(model, cube, pad=pad)
    if model.spec.head == BITFIELD:
        return encoding.decode(scores, threshold)
    return scores.argmax(axis=-1).astype(np.uint8)


def predict_powerset(model: UNetModel, cube: np.ndarray, threshold: float = encoding.DEFAULT_THRESHOLD,
                     pad: bool = False) -> np.ndarray:
    """Either head, reduced to an (H, W) powerset mask."""
    out = predict(model, cube, threshold, pad=pad)
    return encoding.powerset_to_index(out) if model.spec.head == BITFIELD else out


# checkpoint file -----------------------------------------------------------------

MAGIC = b"HSBM"
VERSION = 1


def _meta_text(meta: dict) -> str:
    return "".join(f"meta.{k}={v}\n" for k, v in sorted(meta.items()))


def dumps(model: UNetModel) -> bytes:
    buf = io.BytesIO()
    text = (model.spec.to_text() + _meta_text(model.meta)).encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", VERSION, len(text)))
    buf.write(text)
    buf.write(struct.pack("<I", len(model.params)))
    for name, t in model.params.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", t.ndim))
        buf.write(struct.pack(f"<{t.ndim}I", *t.shape))
        buf.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes, path=None):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated checkpoint while reading {what}", offset=self.pos, path=self.path)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(data: bytes, path=None) -> UNetModel:
    r = _Reader(data, path)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}", offset=0, path=path)
    version, text_len = r.unpack("<HI", "header")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4, path=path)
    text = r.take(text_len, "spec block").decode("utf-8")
    spec = ModelSpec.from_text("\n".join(l for l in text.splitlines() if not l.startswith("meta.")))
    meta = {}
    for line in text.splitlines():
        if line.startswith("meta.") and "=" in line:
            k, v = line[5:].split("=", 1)
            meta[k] = v
    (count,) = r.unpack("<I", "parameter count")
    params = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H", "name length")
        name = r.take(name_len, "parameter name").decode("utf-8")
        (ndim,) = r.unpack("<B", f"rank of {name}")
        shape = r.unpack(f"<{ndim}I", f"shape of {name}")
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(r.take(4 * n, f"data of {name}"), dtype="<f4").astype(np.float32).reshape(shape)
        params[name] = Tensor(arr, requires_grad=name not in FIXED, name=name)
    if r.pos != len(data):
        raise FormatError("trailing bytes after last parameter", offset=r.pos, path=path)
    expected = build_shapes(spec)
    got = {k: v.shape for k, v in params.items()}
    if got != expected:
        raise FormatError("parameter set does not match the stored spec", path=path)
    return UNetModel(spec, params, meta)


def build_shapes(spec: ModelSpec) -> dict[str, tuple[int, ...]]:
    probe = ModelSpec(**{**asdict(spec), "encoder_channels": list(spec.encoder_channels)})
    return {k: v.shape for k, v in build(probe).params.items()}


def save(model: UNetModel, path) -> None:
    Path(path).write_bytes(dumps(model))


def load(path) -> UNetModel:
    path = Path(path)
    return loads(path.read_bytes(), path=str(path))
