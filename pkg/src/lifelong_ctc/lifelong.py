"""Forgetting-mitigation strategies.

Regularization side: Fisher-weighted quadratic anchoring (separate and
online variants), path-integral importance (synaptic intelligence), and
temperature-scaled distillation against the previous stage's model.

Data side: gradient projection against an episodic memory of past-task
utterances, with three selection policies for what the fixed-capacity
memory keeps (random / minimum perplexity / closest-to-median length).

All parameter-space quantities here are flat float64 vectors congruent
with a ParameterVector layout.
"""

from __future__ import annotations

from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, log_softmax_np, softmax_np
from .model import Utterance
from .seeding import substream, substream_seed

POLICIES = ("random", "min_perplexity", "median_length")


@dataclass
class RegularizerConfig:
    lam: float = 1.0  # quadratic-penalty scaling
    kd_temperature: float = 2.0
    kd_weight: float = 1.0
    ewc_online_decay: float = 0.9

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.kd_temperature <= 0:
            raise ValueError("kd_temperature must be > 0")
        if self.kd_weight < 0:
            raise ValueError("kd_weight must be >= 0")
        if not (0.0 < self.ewc_online_decay <= 1.0):
            raise ValueError("ewc_online_decay must lie in (0, 1]")


def _check_congruent(name: str, a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"{name}: layouts differ, {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# Fisher / quadratic anchoring


def fisher_diagonal(grad_fn, utterances, num_samples: int, seed: int = 0) -> np.ndarray:
    """Empirical diagonal Fisher: mean of squared per-utterance loss gradients.

    ``grad_fn(utterance)`` must return the flat loss gradient.  Sampling is
    without replacement; asking for at least ``len(utterances)`` samples
    uses every utterance exactly once.
    """
    utterances = list(utterances)
    if not utterances:
        raise ValueError("fisher_diagonal needs a nonempty dataset")
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    if num_samples >= len(utterances):
        chosen = utterances
    else:
        rng = substream(seed, "fisher")
        idx = rng.choice(len(utterances), size=num_samples, replace=False)
        chosen = [utterances[i] for i in idx]
    acc = None
    for utt in chosen:
        g = grad_fn(utt)
        acc = g * g if acc is None else acc + g * g
    return acc / len(chosen)


def ewc_penalty(
    theta: np.ndarray, theta_star: np.ndarray, omega: np.ndarray, lam: float
) -> tuple[float, np.ndarray]:
    """(lam/2) * sum_i omega_i (theta_i - theta*_i)^2 and its gradient."""
    _check_congruent("ewc_penalty", theta, theta_star)
    _check_congruent("ewc_penalty", theta, omega)
    drift = theta - theta_star
    value = 0.5 * lam * float(np.sum(omega * drift * drift))
    return value, lam * omega * drift


def online_ewc_update(
    omega_prev: np.ndarray, omega_new: np.ndarray, decay: float
) -> np.ndarray:
    if not (0.0 < decay <= 1.0):
        raise ValueError(f"online decay must lie in (0, 1], got {decay}")
    _check_congruent("online_ewc_update", omega_prev, omega_new)
    return decay * omega_prev + omega_new


@dataclass
class EwcState:
    """Anchor bookkeeping for both consolidation modes.

    ``separate`` keeps one (omega, theta*) pair per finished task and sums
    their penalties; ``online`` maintains a single decayed anchor.
    """

    mode: str = "separate"
    decay: float = 0.9
    anchors: list = field(default_factory=list)  # [(omega, theta_star)]

    def __post_init__(self):
        if self.mode not in ("separate", "online"):
            raise ValueError(f"unknown EWC mode {self.mode!r}")

    def consolidate(self, omega_new: np.ndarray, theta_star: np.ndarray) -> None:
        if self.mode == "separate" or not self.anchors:
            if self.mode == "online" and not (0.0 < self.decay <= 1.0):
                raise ValueError(f"online decay must lie in (0, 1], got {self.decay}")
            self.anchors.append((omega_new.copy(), theta_star.copy()))
        else:
            omega_prev, _ = self.anchors[0]
            self.anchors = [(online_ewc_update(omega_prev, omega_new, self.decay), theta_star.copy())]

    def penalty(self, theta: np.ndarray, lam: float) -> tuple[float, np.ndarray] | None:
        """Summed penalty over anchors; None when inactive (no anchors or lam == 0)."""
        if not self.anchors or lam == 0.0:
            return None
        value = 0.0
        grad = np.zeros_like(theta)
        for omega, theta_star in self.anchors:
            v, g = ewc_penalty(theta, theta_star, omega, lam)
            value += v
            grad += g
        return value, grad


# ---------------------------------------------------------------------------
# synaptic intelligence


@dataclass
class SIState:
    omega_running: np.ndarray
    theta_start: np.ndarray
    xi: float = 0.1

    def __post_init__(self):
        if self.xi <= 0:
            raise ValueError("xi must be > 0")


def si_accumulate_step(state: SIState, grad: np.ndarray, delta_theta: np.ndarray) -> SIState:
    """Path-integral update: running omega gains -grad * delta per training step."""
    _check_congruent("si_accumulate_step", state.omega_running, grad)
    _check_congruent("si_accumulate_step", state.omega_running, delta_theta)
    state.omega_running = state.omega_running - grad * delta_theta
    return state


def si_consolidate(omega_prev: np.ndarray, state: SIState, theta_end: np.ndarray) -> np.ndarray:
    """Importance update at a task boundary; negative path integrals clamp to zero."""
    if state.xi <= 0:
        raise ValueError("xi must be > 0")
    _check_congruent("si_consolidate", omega_prev, state.omega_running)
    drift = theta_end - state.theta_start
    return omega_prev + np.maximum(state.omega_running, 0.0) / (drift * drift + state.xi)


# ---------------------------------------------------------------------------
# distillation


def kd_loss(
    logits_old: np.ndarray, logits_new: np.ndarray, temperature: float
) -> tuple[float, np.ndarray]:
    """Mean per-frame KL(old || new) of temperature-scaled distributions.

    Returns the value and its gradient w.r.t. ``logits_new``.
    """
    logits_old = np.asarray(logits_old, dtype=np.float64)
    logits_new = np.asarray(logits_new, dtype=np.float64)
    if logits_old.shape != logits_new.shape:
        raise ad.ShapeMismatch("kd_loss", logits_old.shape, logits_new.shape)
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    T = float(temperature)
    frames = logits_old.shape[0]
    p = softmax_np(logits_old / T)
    log_p = log_softmax_np(logits_old / T)
    log_q = log_softmax_np(logits_new / T)
    value = float(np.sum(p * (log_p - log_q))) / frames
    grad = (np.exp(log_q) - p) / (T * frames)
    return value, grad


def kd_loss_node(logits_new: Tensor, logits_old: np.ndarray, temperature: float) -> Tensor:
    """Distillation term as a graph node (gradient flows into logits_new only)."""
    value, grad = kd_loss(logits_old, logits_new.data, temperature)

    def vjp(g):
        ad._accum(logits_new, float(g) * grad)

    return ad.custom_node(np.float64(value), (logits_new,), vjp)


# ---------------------------------------------------------------------------
# gradient episodic memory


GemProjection = namedtuple("GemProjection", ["gradient", "projected", "zero_memory"])


def gem_project(g: np.ndarray, g_mem: np.ndarray) -> GemProjection:
    """Project g onto the half-space <g~, g_mem> >= 0, minimally in L2.

    When the constraint is already satisfied g passes through unchanged;
    an all-zero memory gradient flags ``zero_memory`` instead of dividing.
    """
    _check_congruent("gem_project", g, g_mem)
    mem_sq = float(g_mem @ g_mem)
    if mem_sq == 0.0:
        return GemProjection(g, False, True)
    dot = float(g @ g_mem)
    if dot >= 0.0:
        return GemProjection(g, False, False)
    return GemProjection(g - (dot / mem_sq) * g_mem, True, False)


def memory_gradient(batch_grad_fn, memory: "EpisodicMemory") -> np.ndarray:
    """Mean loss gradient over everything the memory holds, past tasks pooled."""
    utts = memory.utterances()
    if not utts:
        raise ValueError("episodic memory is empty")
    return batch_grad_fn(utts)


# ---------------------------------------------------------------------------
# memory selection


def _prefix_fill(ordered, budget_frames: int) -> list:
    """Longest prefix whose total frame count fits the budget.

    Stops at the first utterance that does not fit, so a smaller budget
    always yields a prefix of a larger budget's selection.
    """
    kept = []
    used = 0
    for utt in ordered:
        if used + utt.num_frames > budget_frames:
            break
        kept.append(utt)
        used += utt.num_frames
    return kept


def select_for_memory(
    utterances,
    policy: str,
    budget_frames: int,
    lm=None,
    seed: int = 0,
) -> list[Utterance]:
    """Rank utterances by the policy, then prefix-fill the frame budget.

    random          seeded uniform shuffle
    min_perplexity  ascending label-sequence perplexity under ``lm``
    median_length   ascending distance to the dataset's median frame count
    Ties break by utterance id ascending.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown selection policy {policy!r}, expected one of {POLICIES}")
    utterances = list(utterances)
    if budget_frames <= 0 or not utterances:
        return []
    if policy == "random":
        rng = substream(seed, "selection")
        order = [utterances[i] for i in rng.permutation(len(utterances))]
    elif policy == "min_perplexity":
        if lm is None:
            raise ValueError("min_perplexity selection requires a language model")
        order = sorted(utterances, key=lambda u: (lm.perplexity(u.labels), u.id))
    else:  # median_length
        median = float(np.median([u.num_frames for u in utterances]))
        order = sorted(utterances, key=lambda u: (abs(u.num_frames - median), u.id))
    return _prefix_fill(order, budget_frames)


@dataclass
class EpisodicMemory:
    """Fixed-capacity store of past-task utterances, balanced per task.

    Slots keep their utterances in selection order, so shrinking a slot to
    a smaller budget is a prefix cut and matches re-running selection.
    """

    capacity_frames: int
    policy: str = "random"
    seed: int = 0
    slots: dict = field(default_factory=dict)  # task_id -> [Utterance]

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown selection policy {self.policy!r}")

    def total_frames(self) -> int:
        return sum(u.num_frames for slot in self.slots.values() for u in slot)

    def utterances(self) -> list[Utterance]:
        return [u for task_id in sorted(self.slots) for u in self.slots[task_id]]

    def __len__(self):
        return sum(len(slot) for slot in self.slots.values())

    def per_task_budget(self, num_tasks: int) -> int:
        # floor keeps k slots at <= capacity total; ceil could overshoot
        return self.capacity_frames // max(num_tasks, 1)

    def rebalance(self, task_id: int, candidates, lm=None) -> None:
        """Shrink old slots to the new per-task budget and fill the new slot."""
        ntasks = len(self.slots) + (0 if task_id in self.slots else 1)
        budget = self.per_task_budget(ntasks)
        for tid in list(self.slots):
            if tid != task_id:
                self.slots[tid] = _prefix_fill(self.slots[tid], budget)
        self.slots[task_id] = select_for_memory(
            candidates, self.policy, budget, lm=lm,
            seed=substream_seed(self.seed, "memory", task_id),
        )
