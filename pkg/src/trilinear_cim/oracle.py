"""Brute-force references, written with plain Python loops and ``math``.

Nothing here calls numpy matrix kernels, so these stay independent of the
vectorized paths they are used to check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class OracleCase:
    seed: int
    dims: tuple[int, int, int, int]  # (n, d, d_k, h)
    tolerance: float = 1e-6
    description: str = ""

    def __post_init__(self):
        if any(not 1 <= k <= 32 for k in self.dims):
            raise ValueError("oracle dims must lie in [1, 32]")


def _rows(m):
    return [[float(v) for v in row] for row in m]


def matmul(a, b):
    a, b = _rows(a), _rows(b)
    if len(a[0]) != len(b):
        raise ValueError("non-conformable shapes")
    out = []
    for i in range(len(a)):
        row = []
        for j in range(len(b[0])):
            acc = 0.0
            for k in range(len(b)):
                acc += a[i][k] * b[k][j]
            row.append(acc)
        out.append(row)
    return out


def transpose(m):
    m = _rows(m)
    return [[m[i][j] for i in range(len(m))] for j in range(len(m[0]))]


def triple_product(a, b, c):
    """(A B) C, cross-checked against A (B C)."""
    left = matmul(matmul(a, b), c)
    right = matmul(a, matmul(b, c))
    for lr, rr in zip(left, right):
        for x, y in zip(lr, rr):
            if abs(x - y) > 1e-9 * max(1.0, abs(x), abs(y)):
                raise ArithmeticError("associativity check failed")
    return left


def float_softmax(x):
    x = [float(v) for v in x]
    m = max(x)
    e = [math.exp(v - m) for v in x]
    s = sum(e)
    return [v / s for v in e]


def float_layernorm(x, gamma=None, beta=None, eps=0.0):
    x = [float(v) for v in x]
    d = len(x)
    mu = sum(x) / d
    var = sum((v - mu) ** 2 for v in x) / d
    inv = 1.0 / math.sqrt(var + eps) if var + eps > 0 else 0.0
    gamma = [1.0] * d if gamma is None else [float(g) for g in gamma]
    beta = [0.0] * d if beta is None else [float(b) for b in beta]
    return [(v - mu) * inv * g + b for v, g, b in zip(x, gamma, beta)]


def float_gelu_sigmoid(x):
    """x * sigmoid(1.702 x), elementwise over a scalar or a sequence."""
    if isinstance(x, (int, float)):
        return x / (1.0 + math.exp(-1.702 * x))
    return [float_gelu_sigmoid(float(v)) for v in x]


def naive_attention(x, w_q, w_k, w_v, causal: bool = False):
    """Single-head scaled dot-product attention by explicit loops.

    ``x`` is (n, d); the projections are (d_k, d) as in Q = X W_Q^T.
    """
    x = _rows(x)
    w_q, w_k, w_v = _rows(w_q), _rows(w_k), _rows(w_v)
    n, d, d_k = len(x), len(x[0]), len(w_q)

    def project(w):
        return [[sum(x[t][i] * w[c][i] for i in range(d)) for c in range(d_k)] for t in range(n)]

    q, k, v = project(w_q), project(w_k), project(w_v)
    scale = 1.0 / math.sqrt(d_k)
    out = []
    for t in range(n):
        allowed = range(t + 1) if causal else range(n)
        scores = [sum(q[t][c] * k[s][c] for c in range(d_k)) * scale for s in allowed]
        p = float_softmax(scores)
        out.append([sum(p[idx] * v[s][c] for idx, s in enumerate(allowed)) for c in range(d_k)])
    return out


def naive_multihead(x, heads, w_o, causal: bool = False):
    """Concat of per-head naive attention followed by the output projection.

    ``heads`` is a sequence of (w_q, w_k, w_v) triples.
    """
    per_head = [naive_attention(x, *h, causal=causal) for h in heads]
    concat = [sum((ph[t] for ph in per_head), []) for t in range(len(_rows(x)))]
    return matmul(concat, w_o)
