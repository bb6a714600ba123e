"""Sequential / multitask training loops, run configuration and reports.

The sequential loop mirrors a fixed-capacity-memory lifelong setup: one
stage per domain, and at each stage boundary the model snapshot is
consolidated into whichever state the chosen method maintains (Fisher
anchors, path-integral importance, distillation anchor, or the episodic
memory).  Stage k's trainer touches only task k's training data plus the
memory; evaluation reads eval splits only.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace, asdict
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from . import ctc
from .autodiff import ParameterVector
from .data import DomainSpec, TaskDataset, generate_domain
from .lifelong import (
    EpisodicMemory,
    EwcState,
    RegularizerConfig,
    SIState,
    ewc_penalty,
    fisher_diagonal,
    gem_project,
    kd_loss_node,
    memory_gradient,
    si_accumulate_step,
    si_consolidate,
)
from .lm import NGramLM, lm_train
from .metrics import word_error_rate
from .model import (
    ModelConfig,
    Utterance,
    downsampled_length,
    model_forward,
    model_init,
    model_logits,
)
from .optim import OptimizerConfig, OptimizerState, optimizer_step
from .seeding import substream, substream_seed

METHODS = ("finetune", "ewc", "online_ewc", "si", "kd", "gem")
SCHEMA_VERSION = 1


@dataclass
class RunConfig:
    domains: list
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(method="adam", lr=3e-3))
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)
    method: str = "finetune"
    selection_policy: str | None = None  # gem only
    memory_budget_frac: float = 0.05  # fraction of the mean task's training frames
    epochs_per_stage: int = 4
    batch_size: int = 8
    eval_every: int = 20
    fisher_samples: int = 32
    si_xi: float = 0.1
    seed: int = 0
    lm_order: int = 2
    lm_add_k: float = 0.1
    decode: str = "greedy"  # greedy | beam
    beam_width: int = 8
    lm_weight: float = 0.3
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if self.selection_policy is not None and self.method != "gem":
            raise ValueError("selection_policy is only valid with method='gem'")
        if self.method == "gem" and self.selection_policy is None:
            self.selection_policy = "random"
        if self.decode not in ("greedy", "beam"):
            raise ValueError(f"decode must be 'greedy' or 'beam', got {self.decode!r}")
        if self.memory_budget_frac < 0:
            raise ValueError("memory_budget_frac must be >= 0")
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {self.schema_version}")

    # -- plain-dict round trip for JSON config files -------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optimizer"]["betas"] = list(self.optimizer.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        if d.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {d.get('schema_version')}")
        d["domains"] = [DomainSpec(**spec) for spec in d["domains"]]
        d["model"] = ModelConfig(**d["model"])
        opt = dict(d["optimizer"])
        opt["betas"] = tuple(opt.get("betas", (0.9, 0.999)))
        d["optimizer"] = OptimizerConfig(**opt)
        d["regularizer"] = RegularizerConfig(**d["regularizer"])
        return cls(**d)


class CurvePoint(NamedTuple):
    step: int
    stage: int
    task: int
    wer: float


@dataclass
class RunReport:
    method: str
    policy: str | None
    budget_frac: float
    budget_frames: int
    seed: int
    task_ids: list
    curve: list
    final_matrix: np.ndarray  # (num_tasks, num_stages); column j = after stage j
    averaged_wer: float
    oscillation: float
    infeasible_skipped: int
    trajectory_digest: str
    relative_reduction_vs_baseline: float | None = None

    def final_wer(self, task_index: int, after_stage: int = -1) -> float:
        return float(self.final_matrix[task_index, after_stage])


def relative_wer_reduction(baseline: RunReport, candidate: RunReport) -> float:
    """(baseline - candidate) / baseline on averaged final WER."""
    if baseline.task_ids != candidate.task_ids:
        raise ValueError("reports cover different domain sequences")
    if baseline.averaged_wer == 0:
        raise ValueError("baseline averaged WER is zero")
    return (baseline.averaged_wer - candidate.averaged_wer) / baseline.averaged_wer


# ---------------------------------------------------------------------------
# default desk-scale benchmark: three escalating domains


def default_domains(seed: int = 0) -> list:
    """Three domains with growing size and noise, distinct symbol usage and
    length profiles (long 'read' utterances first, short 'spontaneous' last).

    The later domains' acoustic shifts run along prototype differences, so
    their feature clouds collide with the first domain's decision regions;
    plain offsets would move them into empty feature space and produce
    almost no interference at this scale.
    """
    from .data import symbol_prototypes

    v = 8
    lo = [3.0, 2.5, 2.0, 1.5, 0.6, 0.4, 0.3, 0.2]
    mid = [1.0] * v
    hi = list(reversed(lo))
    protos = symbol_prototypes(v, 8)
    return [
        DomainSpec(
            task_id=0, vocab_size=v, symbol_distribution=lo, transition_bias=0.25,
            feature_noise_sigma=0.10, feature_shift=(0.0,) * 8,
            mean_label_len=9.0, len_spread=4.0, num_train=200, num_eval=64, seed=seed,
            length_drift=0.75,
        ),
        DomainSpec(
            task_id=1, vocab_size=v, symbol_distribution=mid, transition_bias=0.5,
            feature_noise_sigma=0.20, feature_shift=tuple(protos[1] - protos[0]),
            mean_label_len=6.0, len_spread=3.0, num_train=400, num_eval=64, seed=seed,
            length_drift=0.75,
        ),
        DomainSpec(
            task_id=2, vocab_size=v, symbol_distribution=hi, transition_bias=0.7,
            feature_noise_sigma=0.40, feature_shift=tuple(protos[3] - protos[5]),
            mean_label_len=4.0, len_spread=2.0, num_train=600, num_eval=64, seed=seed,
            length_drift=0.75,
        ),
    ]


def default_config(seed: int = 0, **overrides) -> RunConfig:
    return RunConfig(domains=default_domains(), seed=seed, **overrides)


def build_datasets(config: RunConfig) -> list[TaskDataset]:
    """Materialize every domain.

    Domain seeds are intentionally independent of the run seed: the corpora
    are fixed while init/batch/selection vary, so that different run seeds
    give paired method comparisons on the same data (the way fixed benchmark
    corpora behave).  Vary DomainSpec.seed to change the data itself.
    """
    if len({spec.task_id for spec in config.domains}) != len(config.domains):
        raise ValueError("domain task_ids must be unique")
    out = []
    for spec in config.domains:
        derived = substream_seed(spec.seed, "data", spec.task_id)
        out.append(generate_domain(replace(spec, seed=derived)))
    return out


# ---------------------------------------------------------------------------
# batch loss and gradients


def feasible(model_cfg: ModelConfig, utt: Utterance) -> bool:
    frames = downsampled_length(utt.num_frames, model_cfg.downsample_stride)
    return frames >= ctc.min_frames(utt.labels)


def batch_loss_grad(
    model_cfg: ModelConfig,
    pv: ParameterVector,
    utts,
    kd_anchor: ParameterVector | None = None,
    kd_weight: float = 0.0,
    kd_temperature: float = 2.0,
) -> tuple[float, np.ndarray, int]:
    """Mean loss over feasible utterances and its flat gradient.

    Infeasible utterances are skipped and counted; a batch with no feasible
    utterance raises InfeasibleAlignment.
    """
    tensors = pv.tensors()
    terms = []
    skipped = 0
    for u in utts:
        if not feasible(model_cfg, u):
            skipped += 1
            continue
        logits = model_forward(model_cfg, tensors, u.features)
        term = ctc.ctc_loss_node(logits, u.labels)
        if kd_anchor is not None and kd_weight > 0.0:
            old = model_logits(model_cfg, kd_anchor, u.features)
            term = ad.add(term, ad.scale(kd_loss_node(logits, old, kd_temperature), kd_weight))
        terms.append(term)
    if not terms:
        raise ctc.InfeasibleAlignment(0, 0, [], message="every utterance in the batch is infeasible")
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    loss = ad.scale(total, 1.0 / len(terms))
    ad.backward(loss)
    return float(loss.data), pv.grad_from(tensors), skipped


def utterance_grad_fn(model_cfg: ModelConfig, pv: ParameterVector):
    """Per-utterance CTC-loss gradient, for Fisher estimation."""

    def grad(utt):
        return batch_loss_grad(model_cfg, pv, [utt])[1]

    return grad


def batch_grad_fn(model_cfg: ModelConfig, pv: ParameterVector):
    """Mean CTC-loss gradient over a list of utterances, for the memory constraint."""

    def grad(utts):
        return batch_loss_grad(model_cfg, pv, utts)[1]

    return grad


# ---------------------------------------------------------------------------
# evaluation


def evaluate_wer(
    config: RunConfig,
    model_cfg: ModelConfig,
    pv: ParameterVector,
    utts,
    lm: NGramLM | None = None,
) -> float:
    """Mean per-utterance WER under the configured decoding mode."""
    total = 0.0
    for u in utts:
        logits = model_logits(model_cfg, pv, u.features)
        if config.decode == "beam":
            hyp = ctc.beam_decode(logits, lm=lm, lm_weight=config.lm_weight, beam_width=config.beam_width)
        else:
            hyp = ctc.greedy_decode(logits)
        total += word_error_rate(u.labels, hyp)
    return total / len(utts)


def balanced_task_draws(rng: np.random.Generator, num_tasks: int, count: int) -> np.ndarray:
    """Uniform task indices for multitask batches (each task equally likely)."""
    return rng.integers(0, num_tasks, size=count)


# ---------------------------------------------------------------------------
# the training loops


@dataclass
class _RunState:
    model_cfg: ModelConfig
    theta: np.ndarray
    layout: ParameterVector
    opt_state: OptimizerState
    batch_rng: np.random.Generator
    ewc: EwcState | None = None
    si_running: SIState | None = None
    si_omega: np.ndarray | None = None
    si_anchor: np.ndarray | None = None
    kd_anchor: ParameterVector | None = None
    memory: EpisodicMemory | None = None
    global_step: int = 0
    skipped: int = 0
    digest: "hashlib._Hash" = field(default_factory=lambda: hashlib.sha256())

    def pv(self) -> ParameterVector:
        return self.layout.with_flat(self.theta)


def _penalty(config: RunConfig, state: _RunState) -> tuple[float, np.ndarray] | None:
    lam = config.regularizer.lam
    if config.method in ("ewc", "online_ewc") and state.ewc is not None:
        return state.ewc.penalty(state.theta, lam)
    if config.method == "si" and state.si_anchor is not None and lam > 0.0:
        return ewc_penalty(state.theta, state.si_anchor, state.si_omega, lam)
    return None


def _record_eval(config, state, datasets, stage, curve, seen_only=True, decode_lm=None):
    pv = state.pv()
    limit = stage + 1 if seen_only else len(datasets)
    for idx in range(limit):
        wer = evaluate_wer(config, state.model_cfg, pv, datasets[idx].eval, lm=decode_lm)
        curve.append(CurvePoint(state.global_step, stage, datasets[idx].task_id, wer))


def train_stage(
    config: RunConfig,
    state: _RunState,
    stage: int,
    datasets: list,
    curve: list,
    decode_lm: NGramLM | None = None,
) -> None:
    """One pass of stage-k training; mutates ``state`` in place."""
    task = datasets[stage]
    reg = config.regularizer
    kd_active = config.method == "kd" and state.kd_anchor is not None and reg.kd_weight > 0.0
    n = task.num_train
    steps_per_epoch = -(-n // config.batch_size)

    for _epoch in range(config.epochs_per_stage):
        order = state.batch_rng.permutation(n)
        for b in range(steps_per_epoch):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            utts = [task.fetch_train(int(i)) for i in idx]
            pv = state.pv()
            _, g_ctc, skipped = batch_loss_grad(
                state.model_cfg,
                pv,
                utts,
                kd_anchor=state.kd_anchor if kd_active else None,
                kd_weight=reg.kd_weight if kd_active else 0.0,
                kd_temperature=reg.kd_temperature,
            )
            state.skipped += skipped

            g = g_ctc
            pen = _penalty(config, state)
            if pen is not None:
                g = g + pen[1]
            if config.method == "gem" and state.memory is not None and len(state.memory) > 0:
                g_mem = memory_gradient(batch_grad_fn(state.model_cfg, pv), state.memory)
                g = gem_project(g, g_mem).gradient

            new_theta, state.opt_state = optimizer_step(state.theta, g, config.optimizer, state.opt_state)
            if config.method == "si":
                si_accumulate_step(state.si_running, g_ctc, new_theta - state.theta)
            state.theta = new_theta
            state.digest.update(state.theta.tobytes())
            state.global_step += 1

            last_step = _epoch == config.epochs_per_stage - 1 and b == steps_per_epoch - 1
            if state.global_step % config.eval_every == 0 or last_step:
                _record_eval(config, state, datasets, stage, curve, decode_lm=decode_lm)


def _consolidate(config: RunConfig, state: _RunState, stage: int, task: TaskDataset) -> None:
    theta_star = state.theta.copy()
    pv_star = state.layout.with_flat(theta_star)
    if config.method in ("ewc", "online_ewc"):
        omega = fisher_diagonal(
            utterance_grad_fn(state.model_cfg, pv_star),
            [u for u in task.train if feasible(state.model_cfg, u)],
            config.fisher_samples,
            seed=substream_seed(config.seed, "fisher", stage),
        )
        state.ewc.consolidate(omega, theta_star)
    elif config.method == "si":
        state.si_omega = si_consolidate(state.si_omega, state.si_running, theta_star)
        state.si_anchor = theta_star
        state.si_running = SIState(np.zeros_like(theta_star), theta_star.copy(), xi=config.si_xi)
    elif config.method == "kd":
        state.kd_anchor = pv_star
    elif config.method == "gem":
        lm = None
        if config.selection_policy == "min_perplexity":
            lm = lm_train(
                task.train_labels(),
                order=config.lm_order,
                add_k=config.lm_add_k,
                vocab=range(1, config.model.vocab_size + 1),
            )
        state.memory.rebalance(task.task_id, task.train, lm=lm)


def _init_state(config: RunConfig, datasets: list) -> _RunState:
    model_cfg = replace(config.model, seed=substream_seed(config.seed, "init", config.model.seed))
    for ds in datasets:
        if ds.vocab_size != config.model.vocab_size:
            raise ValueError(
                f"domain {ds.task_id} vocab_size {ds.vocab_size} != model vocab {config.model.vocab_size}"
            )
    init = model_init(model_cfg)
    state = _RunState(
        model_cfg=model_cfg,
        theta=init.flat(),
        layout=init,
        opt_state=OptimizerState(),
        batch_rng=substream(config.seed, "batch"),
    )
    if config.method in ("ewc", "online_ewc"):
        mode = "online" if config.method == "online_ewc" else "separate"
        state.ewc = EwcState(mode=mode, decay=config.regularizer.ewc_online_decay)
    elif config.method == "si":
        state.si_omega = np.zeros_like(state.theta)
        state.si_running = SIState(np.zeros_like(state.theta), state.theta.copy(), xi=config.si_xi)
    elif config.method == "gem":
        mean_frames = float(np.mean([ds.train_frames() for ds in datasets]))
        budget = int(round(config.memory_budget_frac * mean_frames))
        state.memory = EpisodicMemory(
            capacity_frames=budget,
            policy=config.selection_policy or "random",
            seed=substream_seed(config.seed, "selection"),
        )
    return state


def _decode_lm(config: RunConfig, datasets: list) -> NGramLM | None:
    """LM for beam decoding, trained on every task's transcripts (text is cheap)."""
    if config.decode != "beam" or config.lm_weight <= 0.0:
        return None
    corpus = [labels for ds in datasets for labels in ds.train_labels()]
    return lm_train(corpus, order=config.lm_order, add_k=config.lm_add_k,
                    vocab=range(1, config.model.vocab_size + 1))


def _oscillation(curve: list, task_id: int, last_stage: int) -> float:
    """Spread (std) of the task's WER over the closing half of the final stage."""
    steps = [p.step for p in curve if p.stage == last_stage]
    if not steps:
        return float("nan")
    midpoint = (min(steps) + max(steps)) / 2.0
    tail = [p.wer for p in curve if p.stage == last_stage and p.task == task_id and p.step >= midpoint]
    return float(np.std(tail)) if tail else float("nan")


def _finish_report(config, state, datasets, curve, final_cols) -> RunReport:
    final_matrix = np.column_stack(final_cols)
    budget = state.memory.capacity_frames if state.memory is not None else 0
    return RunReport(
        method=config.method,
        policy=config.selection_policy,
        budget_frac=config.memory_budget_frac if config.method == "gem" else 0.0,
        budget_frames=budget,
        seed=config.seed,
        task_ids=[ds.task_id for ds in datasets],
        curve=curve,
        final_matrix=final_matrix,
        averaged_wer=float(final_matrix[:, -1].mean()),
        oscillation=_oscillation(curve, datasets[0].task_id, final_matrix.shape[1] - 1),
        infeasible_skipped=state.skipped,
        trajectory_digest=state.digest.hexdigest(),
    )


def run_sequential(config: RunConfig, datasets: list | None = None) -> RunReport:
    """Train stage by stage over the domain sequence; the paper-style LLL run."""
    if len(config.domains) < 2:
        raise ValueError("sequential training needs at least 2 domains")
    datasets = build_datasets(config) if datasets is None else datasets
    state = _init_state(config, datasets)
    decode_lm = _decode_lm(config, datasets)

    curve: list[CurvePoint] = []
    final_cols = []
    pv = state.pv()
    for stage, task in enumerate(datasets):
        train_stage(config, state, stage, datasets, curve, decode_lm=decode_lm)
        _consolidate(config, state, stage, task)
        pv = state.pv()
        final_cols.append(
            [evaluate_wer(config, state.model_cfg, pv, ds.eval, lm=decode_lm) for ds in datasets]
        )
    return _finish_report(config, state, datasets, curve, final_cols)


def run_multitask(config: RunConfig, datasets: list | None = None) -> RunReport:
    """Joint training over the union of domains; the upper-bound reference."""
    if len(config.domains) < 2:
        raise ValueError("multitask training needs at least 2 domains")
    datasets = build_datasets(config) if datasets is None else datasets
    if config.method != "finetune":
        config = replace(config, method="finetune", selection_policy=None)
    state = _init_state(config, datasets)
    decode_lm = _decode_lm(config, datasets)

    total_steps = sum(
        -(-ds.num_train // config.batch_size) * config.epochs_per_stage for ds in datasets
    )
    curve: list[CurvePoint] = []
    last_stage = len(datasets) - 1
    for step in range(total_steps):
        tasks = balanced_task_draws(state.batch_rng, len(datasets), config.batch_size)
        utts = []
        for t in tasks:
            ds = datasets[int(t)]
            utts.append(ds.fetch_train(int(state.batch_rng.integers(0, ds.num_train))))
        pv = state.pv()
        _, g, skipped = batch_loss_grad(state.model_cfg, pv, utts)
        state.skipped += skipped
        state.theta, state.opt_state = optimizer_step(state.theta, g, config.optimizer, state.opt_state)
        state.digest.update(state.theta.tobytes())
        state.global_step += 1
        if state.global_step % config.eval_every == 0 or step == total_steps - 1:
            _record_eval(config, state, datasets, last_stage, curve, seen_only=False, decode_lm=decode_lm)

    pv = state.pv()
    final_cols = [[evaluate_wer(config, state.model_cfg, pv, ds.eval, lm=decode_lm) for ds in datasets]]
    report = _finish_report(config, state, datasets, curve, final_cols)
    report.method = "multitask"
    return report


def run_memory_sweep(
    config: RunConfig,
    budget_fracs,
    policies=("random", "median_length"),
    datasets: list | None = None,
) -> list[RunReport]:
    """GEM runs over a grid of memory budgets and selection policies."""
    datasets = build_datasets(config) if datasets is None else datasets
    reports = []
    for frac in budget_fracs:
        for policy in policies:
            cfg = replace(
                config, method="gem", selection_policy=policy, memory_budget_frac=float(frac)
            )
            reports.append(run_sequential(cfg, datasets=datasets))
    return reports
