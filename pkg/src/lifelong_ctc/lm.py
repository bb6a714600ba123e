"""Count-based n-gram language model over integer label symbols.

Add-k smoothed conditionals over ``vocab + end-of-sequence``:

    P(w | ctx) = (count(ctx, w) + k) / (count(ctx) + k * (|vocab| + 1))

Contexts are the previous ``order - 1`` symbols, left-padded with a
begin marker.  Perplexity normalizes by ``len + 1`` so the end marker
is counted and length-1 sequences are well-defined.
"""

from __future__ import annotations

from collections import Counter

import numpy as np

BOS = -1
END = -2

FORMAT_TAG = "lifelong-ctc-ngram v1"


class NGramLM:
    def __init__(self, order: int, add_k: float, vocab):
        if order < 1:
            raise ValueError(f"order must be >= 1, got {order}")
        if add_k <= 0:
            raise ValueError(f"add_k must be > 0, got {add_k}")
        self.order = int(order)
        self.add_k = float(add_k)
        self.vocab = frozenset(int(v) for v in vocab)
        if BOS in self.vocab or END in self.vocab:
            raise ValueError("vocab must not contain the reserved begin/end markers")
        self.context_counts: Counter = Counter()
        self.symbol_counts: Counter = Counter()

    # -- training ----------------------------------------------------------

    def _context(self, history) -> tuple:
        if self.order == 1:
            return ()
        padded = [BOS] * (self.order - 1) + [int(x) for x in history]
        return tuple(padded[-(self.order - 1) :])

    def observe(self, sequence) -> None:
        seq = [int(x) for x in sequence]
        unknown = set(seq) - self.vocab
        if unknown:
            raise ValueError(f"sequence contains out-of-vocab symbols {sorted(unknown)}")
        padded = [BOS] * (self.order - 1) + seq + [END]
        for i in range(self.order - 1, len(padded)):
            ctx = tuple(padded[i - self.order + 1 : i])
            self.context_counts[ctx] += 1
            self.symbol_counts[(ctx, padded[i])] += 1

    # -- scoring -----------------------------------------------------------

    def conditional_prob(self, history, symbol) -> float:
        symbol = int(symbol)
        if symbol != END and symbol not in self.vocab:
            raise ValueError(f"symbol {symbol} not in vocab")
        ctx = self._context(history)
        denom = self.context_counts[ctx] + self.add_k * (len(self.vocab) + 1)
        return (self.symbol_counts[(ctx, symbol)] + self.add_k) / denom

    def conditional_logprob(self, history, symbol) -> float:
        return float(np.log(self.conditional_prob(history, symbol)))

    def end_logprob(self, history) -> float:
        return float(np.log(self.conditional_prob(history, END)))

    def logprob(self, sequence) -> float:
        """Total log probability including the end marker."""
        seq = [int(x) for x in sequence]
        total = 0.0
        for i, sym in enumerate(seq):
            total += self.conditional_logprob(seq[:i], sym)
        return total + self.end_logprob(seq)

    def perplexity(self, sequence) -> float:
        seq = list(sequence)
        return float(np.exp(-self.logprob(seq) / (len(seq) + 1)))

    # -- persistence: plain-text count table, byte-stable ordering ----------

    def save(self, path) -> None:
        lines = [
            FORMAT_TAG,
            f"order {self.order}",
            f"add_k {self.add_k!r}",
            "vocab " + " ".join(str(v) for v in sorted(self.vocab)),
        ]
        for (ctx, sym), count in sorted(self.symbol_counts.items()):
            parts = ["count", str(len(ctx))] + [str(c) for c in ctx] + [str(sym), str(count)]
            lines.append(" ".join(parts))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "NGramLM":
        with open(path) as fh:
            lines = fh.read().splitlines()
        if not lines or lines[0] != FORMAT_TAG:
            raise ValueError(f"{path}: not a {FORMAT_TAG} file")
        order = int(lines[1].split()[1])
        add_k = float(lines[2].split()[1])
        vocab = [int(v) for v in lines[3].split()[1:]]
        lm = cls(order, add_k, vocab)
        for line in lines[4:]:
            if not line.strip():
                continue
            parts = line.split()
            if parts[0] != "count":
                raise ValueError(f"{path}: malformed line {line!r}")
            n_ctx = int(parts[1])
            ctx = tuple(int(c) for c in parts[2 : 2 + n_ctx])
            sym = int(parts[2 + n_ctx])
            count = int(parts[3 + n_ctx])
            lm.symbol_counts[(ctx, sym)] = count
            lm.context_counts[ctx] += count
        return lm


def lm_train(corpus, order: int = 2, add_k: float = 0.1, vocab=None) -> NGramLM:
    """Count an n-gram model from a list of label sequences.

    ``vocab`` defaults to the symbols present in the corpus; pass the full
    task vocabulary explicitly when the model must score unseen symbols.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("corpus must be nonempty")
    if vocab is None:
        vocab = sorted({int(x) for seq in corpus for x in seq})
    lm = NGramLM(order, add_k, vocab)
    for seq in corpus:
        lm.observe(seq)
    return lm
