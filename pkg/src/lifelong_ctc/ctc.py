"""CTC loss via log-space forward-backward, plus greedy and prefix beam decoding.

Blank is class 0 throughout.  The lattice runs over the extended label
sequence (blank, l1, blank, l2, ..., blank) of length S = 2U + 1.

Conventions for the dynamic program, all in the log domain:
  alpha[t, s] -- prefix probability, including the emission at frame t
  beta[t, s]  -- suffix probability for frames t+1..T-1, excluding frame t
so that logsumexp_s(alpha[t, s] + beta[t, s]) equals the total
log-likelihood at every t.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, log_softmax_np, logsumexp_np, softmax_np

NEG_INF = -np.inf


class InfeasibleAlignment(ValueError):
    """The label sequence cannot be aligned within the available frames."""

    def __init__(self, needed: int, got: int, labels, message: str | None = None):
        self.needed = needed
        self.got = got
        self.labels = list(labels)
        super().__init__(
            message or f"labels {self.labels} need at least {needed} frames, got {got}"
        )


def min_frames(labels) -> int:
    """U emissions plus one separating blank per adjacent repeat."""
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def _validate_labels(labels, num_classes: int):
    labels = [int(x) for x in labels]
    if any(not (1 <= x < num_classes) for x in labels):
        raise ValueError(f"labels must lie in [1, {num_classes - 1}], got {labels}")
    return labels


def _extended(labels) -> np.ndarray:
    ext = np.zeros(2 * len(labels) + 1, dtype=int)
    ext[1::2] = labels
    return ext


def forward_backward(logits: np.ndarray, labels) -> tuple[float, np.ndarray, np.ndarray]:
    """Log-likelihood and the (alpha, beta) lattices for logits (T, V+1)."""
    logits = np.asarray(logits, dtype=np.float64)
    T, C = logits.shape
    labels = _validate_labels(labels, C)
    need = min_frames(labels)
    if T < need:
        raise InfeasibleAlignment(need, T, labels)

    ext = _extended(labels)
    S = ext.size
    logp = log_softmax_np(logits)
    emit = logp[:, ext]  # (T, S)

    # skip transition s-2 -> s allowed when ext[s] is a label differing from ext[s-2]
    allow_skip = np.zeros(S, dtype=bool)
    if S > 2:
        allow_skip[2:] = (ext[2:] != 0) & (ext[2:] != ext[:-2])

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        stay = prev
        step = np.concatenate([[NEG_INF], prev[:-1]])
        skip = np.where(allow_skip, np.concatenate([[NEG_INF, NEG_INF], prev[:-2]]), NEG_INF)
        alpha[t] = emit[t] + np.logaddexp(np.logaddexp(stay, step), skip)

    total = logsumexp_np(alpha[T - 1, max(S - 2, 0) :])

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        stay = nxt
        step = np.concatenate([nxt[1:], [NEG_INF]])
        skip = np.concatenate([np.where(allow_skip[2:], nxt[2:], NEG_INF), [NEG_INF, NEG_INF]])
        beta[t] = np.logaddexp(np.logaddexp(stay, step), skip)

    return float(total), alpha, beta


def ctc_loss(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Negative log-likelihood and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    total, alpha, beta = forward_backward(logits, labels)
    ext = _extended(_validate_labels(labels, logits.shape[1]))

    # state posteriors gamma[t, s]; rows sum to 1
    gamma = np.exp(alpha + beta - total)
    grad = softmax_np(logits)
    for s, c in enumerate(ext):
        grad[:, c] -= gamma[:, s]
    return -total, grad


def ctc_loss_node(logits: Tensor, labels) -> Tensor:
    """CTC loss as a single graph node with its analytic gradient."""
    loss, grad = ctc_loss(logits.data, labels)

    def vjp(g):
        ad._accum(logits, float(g) * grad)

    return ad.custom_node(np.float64(loss), (logits,), vjp)


def sequence_logprob(logits: np.ndarray, labels) -> float:
    """Exact log P(labels | logits); -inf when the alignment is infeasible."""
    if len(labels) == 0:
        return float(log_softmax_np(np.asarray(logits, dtype=np.float64))[:, 0].sum())
    try:
        total, _, _ = forward_backward(logits, labels)
    except InfeasibleAlignment:
        return NEG_INF
    return total


def collapse(path) -> list[int]:
    """Merge repeats, then drop blanks."""
    out = []
    prev = None
    for c in path:
        if c != prev and c != 0:
            out.append(int(c))
        prev = c
    return out


def greedy_decode(logits: np.ndarray) -> list[int]:
    return collapse(np.asarray(logits).argmax(axis=1))


def beam_decode(
    logits: np.ndarray,
    lm=None,
    lm_weight: float = 0.0,
    beam_width: int = 16,
) -> list[int]:
    """Prefix beam search with optional shallow n-gram fusion.

    Prefixes are ranked by log P_ctc + lm_weight * (partial LM log prob);
    the final hypothesis additionally pays the LM end-of-sequence term.
    Ties break toward the lexicographically smaller prefix.
    """
    if beam_width < 1:
        raise ValueError(f"beam_width must be >= 1, got {beam_width}")
    if lm_weight < 0:
        raise ValueError(f"lm_weight must be >= 0, got {lm_weight}")
    logp = log_softmax_np(np.asarray(logits, dtype=np.float64))
    T, C = logp.shape
    use_lm = lm is not None and lm_weight > 0.0

    # prefix -> [log p(prefix ending in blank), log p(prefix ending in its last symbol)]
    beams: dict[tuple, list] = {(): [0.0, NEG_INF]}
    lm_partial: dict[tuple, float] = {(): 0.0}

    for t in range(T):
        nxt: dict[tuple, list] = {}

        def bump(prefix, which, value):
            slot = nxt.setdefault(prefix, [NEG_INF, NEG_INF])
            slot[which] = np.logaddexp(slot[which], value)

        for prefix, (pb, pnb) in beams.items():
            both = np.logaddexp(pb, pnb)
            bump(prefix, 0, both + logp[t, 0])
            if prefix:
                bump(prefix, 1, pnb + logp[t, prefix[-1]])
            for c in range(1, C):
                extended = prefix + (c,)
                if extended not in lm_partial and use_lm:
                    lm_partial[extended] = lm_partial[prefix] + lm.conditional_logprob(prefix, c)
                # extending with the repeated symbol requires a blank in between
                base = pb if prefix and c == prefix[-1] else both
                bump(extended, 1, base + logp[t, c])

        def rank(item):
            prefix, (pb, pnb) = item
            score = np.logaddexp(pb, pnb)
            if use_lm:
                score += lm_weight * lm_partial[prefix]
            return (-score, prefix)

        beams = dict(sorted(nxt.items(), key=rank)[:beam_width])

    def final_score(item):
        prefix, (pb, pnb) = item
        score = np.logaddexp(pb, pnb)
        if use_lm:
            score += lm_weight * (lm_partial[prefix] + lm.end_logprob(prefix))
        return (-score, prefix)

    best = min(beams.items(), key=final_score)
    return list(best[0])
