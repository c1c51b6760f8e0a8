"""Independent brute-force oracles for the DP-based similarity measures.

Each oracle enumerates every monotone alignment or edit script explicitly
(exponential, usable only on short traces) so the dynamic programs can be
checked against a computation that shares none of their code.
"""

from __future__ import annotations

import math

from stacklsh.traces import StackTrace


def tokens_of(trace: StackTrace) -> list[str]:
    return [f.function for f in trace.frames]


def monotone_matchings(a: list[str], b: list[str]):
    """Yield every monotone matching of equal tokens as a list of (i, j)."""

    def extend(i0: int, j0: int):
        yield []
        for i in range(i0, len(a)):
            for j in range(j0, len(b)):
                if a[i] == b[j]:
                    for rest in extend(i + 1, j + 1):
                        yield [(i, j)] + rest

    yield from extend(0, 0)


def pdm_oracle(a: list[str], b: list[str], c: float, o: float) -> float:
    best = 0.0
    for matching in monotone_matchings(a, b):
        score = sum(
            math.exp(-c * min(i, j)) * math.exp(-o * abs(i - j)) for i, j in matching
        )
        best = max(best, score)
    denom = sum(math.exp(-c * i) for i in range(min(len(a), len(b))))
    return best / denom


def brodie_oracle(a: list[str], b: list[str], idf_norm: dict[str, float], o: float) -> float:
    best = 0.0
    for matching in monotone_matchings(a, b):
        score = sum(idf_norm[a[i]] * math.exp(-o * abs(i - j)) for i, j in matching)
        best = max(best, score)
    self_a = sum(idf_norm[t] for t in a)
    self_b = sum(idf_norm[t] for t in b)
    if len(a) > len(b):
        denom = self_a
    elif len(b) > len(a):
        denom = self_b
    else:
        denom = max(self_a, self_b)
    if denom <= 0:
        return 1.0 if a == b else 0.0
    return best / denom


def levenshtein_oracle(a: list[str], b: list[str]) -> int:
    """Unit-cost edit distance by plain recursion over edit scripts."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(
        levenshtein_oracle(a[1:], b) + 1,
        levenshtein_oracle(a, b[1:]) + 1,
        levenshtein_oracle(a[1:], b[1:]) + (0 if a[0] == b[0] else 1),
    )


def weighted_lev_oracle(
    a: list[str], b: list[str], wa: list[float], wb: list[float]
) -> float:
    """Weighted edit distance by recursion; substitution costs both weights."""

    def rec(i: int, j: int) -> float:
        if i == len(a):
            return sum(wb[j:])
        if j == len(b):
            return sum(wa[i:])
        sub = 0.0 if a[i] == b[j] else wa[i] + wb[j]
        return min(
            rec(i + 1, j) + wa[i],
            rec(i, j + 1) + wb[j],
            rec(i + 1, j + 1) + sub,
        )

    return rec(0, 0)


def gham_oracle(u, v, m: int, b: int) -> float:
    """Generalized Hamming similarity re-derived with plain loops."""
    total = 0.0
    for k in range(m):
        total += max(abs(u[k * b + l] - v[k * b + l]) for l in range(b))
    return 1.0 - total / (2.0 * m)


def block_hamming_oracle(x_blocks, y_blocks) -> float:
    m = len(x_blocks)
    diff = sum(1 for u, v in zip(x_blocks, y_blocks) if u != v)
    return (m - diff) / m


def loss_oracle(u_rows, pair_i, pair_j, targets, m, b, lam1, lam2, lam3, sq_norm, cross):
    """Literal re-evaluation of the four-term objective with loops."""
    mb = m * b
    n_pairs = len(targets)
    fid = 0.0
    for idx in range(n_pairs):
        g = gham_oracle(u_rows[pair_i[idx]], u_rows[pair_j[idx]], m, b)
        fid += (g - targets[idx]) ** 2
    fid /= n_pairs
    n = len(u_rows)
    sat = 0.0
    if cross:
        for r in range(n):
            for c in range(n):
                gram = sum(u_rows[r][d] * u_rows[c][d] for d in range(mb)) / mb
                sat += (gram - (1.0 if r == c else 0.0)) ** 2
    else:
        for r in range(n):
            norm = sum(u_rows[r][d] ** 2 for d in range(mb)) / mb
            sat += (norm - 1.0) ** 2
    sat *= 0.5 * lam1
    bal = 0.0
    for r in range(n):
        bal += (sum(u_rows[r]) / mb) ** 2
    bal *= lam2 / n_pairs
    return fid + sat + bal + lam3 * sq_norm
