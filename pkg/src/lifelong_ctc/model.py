"""Small CTC acoustic model: strided mean-pool downsampler + recurrent encoder.

The encoder is a stack of tanh RNN layers (optionally bidirectional)
over downsampled feature frames, followed by a linear projection to
``vocab_size + 1`` logits per frame.  Blank is class 0.

Two forward paths share the same arithmetic: ``model_forward`` records
the computation for backprop, ``model_logits`` is the plain-numpy twin
used for decoding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterVector, Tensor
from .seeding import substream

FORMAT_TAG = "lifelong-ctc-checkpoint v1"


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 8
    hidden_dim: int = 32
    num_layers: int = 2
    bidirectional: bool = False
    downsample_stride: int = 2
    vocab_size: int = 8
    seed: int = 0

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "num_layers", "vocab_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.downsample_stride < 1:
            raise ValueError(f"downsample_stride must be >= 1, got {self.downsample_stride}")

    @property
    def num_classes(self) -> int:
        return self.vocab_size + 1  # blank reserved at index 0

    @property
    def directions(self) -> tuple[str, ...]:
        return ("f", "b") if self.bidirectional else ("f",)


@dataclass
class Utterance:
    """One training/eval item: feature matrix (T, input_dim) plus label ints in [1, vocab]."""

    features: np.ndarray
    labels: list[int]
    id: str = ""
    source_task: int = -1

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = [int(x) for x in self.labels]
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError(f"features must be (T>=1, dim), got {self.features.shape}")
        if not self.labels:
            raise ValueError("labels must be nonempty")
        if any(x < 1 for x in self.labels):
            raise ValueError("labels must be >= 1 (0 is the blank index)")

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]


def _layer_params(config: ModelConfig):
    """Yield (name, shape, fan_in) for every learnable array, in layout order."""
    h = config.hidden_dim
    dirs = len(config.directions)
    yield "downsample.W", (config.input_dim, h), config.input_dim
    yield "downsample.b", (h,), None
    in_dim = h
    for layer in range(config.num_layers):
        for d in config.directions:
            yield f"rnn{layer}.{d}.Wx", (in_dim, h), in_dim
            yield f"rnn{layer}.{d}.Wh", (h, h), h
            yield f"rnn{layer}.{d}.b", (h,), None
        in_dim = h * dirs
    yield "out.W", (in_dim, config.num_classes), in_dim
    yield "out.b", (config.num_classes,), None


def model_init(config: ModelConfig) -> ParameterVector:
    """Uniform fan-in init: W ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
    rng = substream(config.seed, "init")
    segments = []
    for name, shape, fan_in in _layer_params(config):
        if fan_in is None:
            segments.append((name, np.zeros(shape)))
        else:
            bound = 1.0 / np.sqrt(fan_in)
            segments.append((name, rng.uniform(-bound, bound, size=shape)))
    return ParameterVector.from_segments(segments)


def downsampled_length(T: int, stride: int) -> int:
    return -(-T // stride)  # ceil


def mean_pool(features: np.ndarray, stride: int) -> np.ndarray:
    """Strided temporal mean-pool; a partial final chunk is averaged as-is."""
    if stride == 1:
        return features
    T = features.shape[0]
    starts = np.arange(0, T, stride)
    sums = np.add.reduceat(features, starts, axis=0)
    counts = np.minimum(stride, T - starts)
    return sums / counts[:, None]


def _check_features(config: ModelConfig, features: np.ndarray):
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != config.input_dim:
        raise ad.ShapeMismatch("model_forward", features.shape, (-1, config.input_dim))
    return features


def model_forward(config: ModelConfig, params: dict[str, Tensor], features: np.ndarray) -> Tensor:
    """Per-frame logits (T', vocab+1) recorded on the autodiff graph.

    Input-to-hidden projections run as one full-sequence matmul per layer;
    only the recurrence itself steps frame by frame.
    """
    features = _check_features(config, features)
    pooled = mean_pool(features, config.downsample_stride)
    T = pooled.shape[0]

    seq = ad.add(ad.matmul(Tensor(pooled), params["downsample.W"]), params["downsample.b"])
    for layer in range(config.num_layers):
        per_dir = []
        for d in config.directions:
            xw = ad.add(ad.matmul(seq, params[f"rnn{layer}.{d}.Wx"]), params[f"rnn{layer}.{d}.b"])
            Wh = params[f"rnn{layer}.{d}.Wh"]
            order = range(T) if d == "f" else range(T - 1, -1, -1)
            out: list = [None] * T
            h = None
            for t in order:
                z = xw[t : t + 1]
                if h is not None:
                    z = ad.add(z, ad.matmul(h, Wh))
                h = ad.tanh(z)
                out[t] = h
            per_dir.append(ad.concat(out, axis=0))
        seq = per_dir[0] if len(per_dir) == 1 else ad.concat(per_dir, axis=1)
    return ad.add(ad.matmul(seq, params["out.W"]), params["out.b"])


def model_logits(config: ModelConfig, theta: ParameterVector, features: np.ndarray) -> np.ndarray:
    """Inference twin of model_forward; no graph, same arithmetic."""
    features = _check_features(config, features)
    pooled = mean_pool(features, config.downsample_stride)
    T = pooled.shape[0]

    seg = {name: arr for name, arr in theta.segments()}
    seq = pooled @ seg["downsample.W"] + seg["downsample.b"]
    for layer in range(config.num_layers):
        per_dir = []
        for d in config.directions:
            xw = seq @ seg[f"rnn{layer}.{d}.Wx"] + seg[f"rnn{layer}.{d}.b"]
            Wh = seg[f"rnn{layer}.{d}.Wh"]
            order = range(T) if d == "f" else range(T - 1, -1, -1)
            out: list = [None] * T
            h = None
            for t in order:
                z = xw[t : t + 1]
                if h is not None:
                    z = z + h @ Wh
                h = np.tanh(z)
                out[t] = h
            per_dir.append(np.concatenate(out, axis=0))
        seq = per_dir[0] if len(per_dir) == 1 else np.concatenate(per_dir, axis=1)
    return seq @ seg["out.W"] + seg["out.b"]


def swap_directions(config: ModelConfig, theta: ParameterVector) -> ParameterVector:
    """Exchange forward/backward cell params and the matching out.W row blocks.

    Only meaningful for bidirectional models; used to check the
    time-reversal symmetry of the encoder.
    """
    if not config.bidirectional:
        raise ValueError("swap_directions requires a bidirectional config")
    seg = {name: arr.copy() for name, arr in theta.segments()}
    h = config.hidden_dim
    for layer in range(config.num_layers):
        for kind in ("Wx", "Wh", "b"):
            a, b = f"rnn{layer}.f.{kind}", f"rnn{layer}.b.{kind}"
            seg[a], seg[b] = seg[b], seg[a]
        if layer + 1 < config.num_layers:
            # inter-layer weights consume [fwd; bwd] halves of the input rows
            for d in ("f", "b"):
                W = seg[f"rnn{layer + 1}.{d}.Wx"]
                seg[f"rnn{layer + 1}.{d}.Wx"] = np.concatenate([W[h:], W[:h]], axis=0)
    W = seg["out.W"]
    seg["out.W"] = np.concatenate([W[h:], W[:h]], axis=0)
    return ParameterVector.from_segments([(name, seg[name]) for name in theta.names])


# ---------------------------------------------------------------------------
# checkpoints: text container, byte-exact round trip via float repr


def save_checkpoint(path, config: ModelConfig, theta: ParameterVector) -> None:
    lines = [FORMAT_TAG, json.dumps(asdict(config), sort_keys=True)]
    for name, arr in theta.segments():
        shape = "x".join(str(d) for d in arr.shape)
        lines.append(f"segment {name} {shape}")
        lines.append(" ".join(repr(v) for v in arr.ravel()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[ModelConfig, ParameterVector]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != FORMAT_TAG:
        raise ValueError(f"{path}: not a {FORMAT_TAG} file")
    config = ModelConfig(**json.loads(lines[1]))
    segments = []
    i = 2
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        head = lines[i].split()
        if head[0] != "segment" or len(head) != 3:
            raise ValueError(f"{path}: malformed segment header {lines[i]!r}")
        name = head[1]
        shape = tuple(int(d) for d in head[2].split("x"))
        values = np.array([float(v) for v in lines[i + 1].split()])
        segments.append((name, values.reshape(shape)))
        i += 2
    return config, ParameterVector.from_segments(segments)
