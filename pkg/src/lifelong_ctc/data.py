"""Synthetic multi-domain task generation and the dataset file format.

Each domain draws label sequences from a biased bigram process and
renders them to feature frames: every symbol owns a fixed prototype
vector (shared across all domains), stretched to a random duration,
then shifted by the domain's acoustic offset and corrupted with
Gaussian noise.  Domains differ in symbol usage, length profile,
shift and noise level -- enough distribution shift to induce
forgetting while keeping every task learnable by the same model.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .model import Utterance
from .seeding import substream

FORMAT_TAG = "lifelong-ctc-dataset v1"

_PROTOTYPE_ENTROPY = 271828  # fixed: prototypes are global, not per-domain


@dataclass
class DomainSpec:
    task_id: int
    vocab_size: int
    symbol_distribution: tuple
    transition_bias: float
    feature_noise_sigma: float
    feature_shift: tuple
    mean_label_len: float
    len_spread: float
    num_train: int
    num_eval: int
    seed: int
    min_duration: int = 2
    max_duration: int = 4
    # speaking-style analog: utterances far from the typical length carry a
    # random per-utterance channel offset scaled by their relative length
    # deviation (very short and very long recordings are acoustically
    # atypical); 0 disables the coupling
    length_drift: float = 0.0

    def __post_init__(self):
        self.symbol_distribution = tuple(float(w) for w in self.symbol_distribution)
        self.feature_shift = tuple(float(x) for x in self.feature_shift)
        if len(self.symbol_distribution) != self.vocab_size:
            raise ValueError(
                f"symbol_distribution has {len(self.symbol_distribution)} weights "
                f"for vocab_size {self.vocab_size}"
            )
        if any(w < 0 for w in self.symbol_distribution) or sum(self.symbol_distribution) <= 0:
            raise ValueError("symbol_distribution weights must be nonnegative with positive sum")
        if not (0.0 <= self.transition_bias < 1.0):
            raise ValueError("transition_bias must lie in [0, 1)")
        if self.min_duration < 1 or self.max_duration < self.min_duration:
            raise ValueError("need 1 <= min_duration <= max_duration")

    @property
    def input_dim(self) -> int:
        return len(self.feature_shift)


@dataclass
class TaskDataset:
    task_id: int
    vocab_size: int
    train: list = field(default_factory=list)
    eval: list = field(default_factory=list)

    def fetch_train(self, index: int) -> Utterance:
        """Single access point for training data; tests hook this to audit reads."""
        return self.train[index]

    @property
    def num_train(self) -> int:
        return len(self.train)

    def train_frames(self) -> int:
        return sum(u.num_frames for u in self.train)

    def train_labels(self) -> list[list[int]]:
        return [u.labels for u in self.train]


def symbol_prototypes(vocab_size: int, input_dim: int) -> np.ndarray:
    """Per-symbol feature prototypes (vocab_size, input_dim); domain-independent."""
    rng = np.random.default_rng(np.random.SeedSequence([_PROTOTYPE_ENTROPY, vocab_size, input_dim]))
    return rng.normal(0.0, 1.0, size=(vocab_size, input_dim))


def _draw_length(spec: DomainSpec, rng: np.random.Generator) -> int:
    """Right-skewed (lognormal) utterance length with the spec's mean and spread.

    Speech length distributions have a heavy right tail; len_spread plays
    the role of the standard deviation in label units.
    """
    if spec.len_spread <= 0:
        return max(1, int(round(spec.mean_label_len)))
    sigma = spec.len_spread / spec.mean_label_len
    factor = np.exp(rng.normal(0.0, sigma) - 0.5 * sigma * sigma)
    return max(1, int(round(spec.mean_label_len * factor)))


def _draw_labels(spec: DomainSpec, rng: np.random.Generator) -> list[int]:
    base = np.asarray(spec.symbol_distribution) / sum(spec.symbol_distribution)
    length = _draw_length(spec, rng)
    labels = [int(rng.choice(spec.vocab_size, p=base)) + 1]
    for _ in range(length - 1):
        probs = (1.0 - spec.transition_bias) * base.copy()
        successor = labels[-1] % spec.vocab_size  # 0-based index of prev+1 (wrapping)
        probs[successor] += spec.transition_bias
        labels.append(int(rng.choice(spec.vocab_size, p=probs)) + 1)
    return labels


def _render(spec, labels, prototypes, rng) -> np.ndarray:
    frames = []
    shift = np.asarray(spec.feature_shift)
    if spec.length_drift > 0:
        atypicality = abs(len(labels) / spec.mean_label_len - 1.0)
        shift = shift + rng.normal(0.0, 1.0, size=shift.size) * spec.length_drift * atypicality
    for sym in labels:
        duration = int(rng.integers(spec.min_duration, spec.max_duration + 1))
        base = prototypes[sym - 1] + shift
        for _ in range(duration):
            noise = rng.normal(0.0, spec.feature_noise_sigma, size=shift.size)
            frames.append(base + noise)
    return np.asarray(frames)


def generate_domain(spec: DomainSpec) -> TaskDataset:
    """Deterministically synthesize one domain's train and eval splits."""
    prototypes = symbol_prototypes(spec.vocab_size, spec.input_dim)
    dataset = TaskDataset(task_id=spec.task_id, vocab_size=spec.vocab_size)
    for split, count in (("train", spec.num_train), ("eval", spec.num_eval)):
        rng = substream(spec.seed, "domain", spec.task_id, split)
        bucket = getattr(dataset, split)
        for i in range(count):
            labels = _draw_labels(spec, rng)
            features = _render(spec, labels, prototypes, rng)
            bucket.append(
                Utterance(
                    features=features,
                    labels=labels,
                    id=f"t{spec.task_id}-{split}-{i:05d}",
                    source_task=spec.task_id,
                )
            )
    return dataset


# ---------------------------------------------------------------------------
# dataset file format (text, byte-stable, exact float round trip)


def save_dataset(path, dataset: TaskDataset, split: str = "train") -> None:
    utts = getattr(dataset, split)
    lines = [
        FORMAT_TAG,
        f"task_id {dataset.task_id}",
        f"vocab_size {dataset.vocab_size}",
        f"count {len(utts)}",
    ]
    for u in utts:
        lines.append(f"utt {u.id} {u.source_task}")
        lines.append("labels " + " ".join(str(x) for x in u.labels))
        lines.append(f"frames {u.features.shape[0]} {u.features.shape[1]}")
        for row in u.features:
            lines.append(" ".join(repr(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path) -> TaskDataset:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != FORMAT_TAG:
        raise ValueError(f"{path}: not a {FORMAT_TAG} file")
    task_id = int(lines[1].split()[1])
    vocab_size = int(lines[2].split()[1])
    count = int(lines[3].split()[1])
    dataset = TaskDataset(task_id=task_id, vocab_size=vocab_size)
    i = 4
    for _ in range(count):
        _, utt_id, source_task = lines[i].split()
        labels = [int(x) for x in lines[i + 1].split()[1:]]
        T, dim = (int(x) for x in lines[i + 2].split()[1:])
        rows = [[float(v) for v in lines[i + 3 + t].split()] for t in range(T)]
        features = np.asarray(rows).reshape(T, dim)
        dataset.train.append(
            Utterance(features=features, labels=labels, id=utt_id, source_task=int(source_task))
        )
        i += 3 + T
    return dataset
