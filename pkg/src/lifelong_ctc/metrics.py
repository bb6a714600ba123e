"""Edit-distance based error metrics."""

from __future__ import annotations


def edit_distance(ref, hyp) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs."""
    ref, hyp = list(ref), list(hyp)
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        curr = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            curr[j] = min(
                prev[j] + 1,  # delete
                curr[j - 1] + 1,  # insert
                prev[j - 1] + (r != h),  # substitute / match
            )
        prev = curr
    return prev[-1]


def word_error_rate(ref, hyp) -> float:
    ref = list(ref)
    if not ref:
        raise ValueError("reference must be nonempty")
    return edit_distance(ref, hyp) / len(ref)
