"""Independent reference implementations used as test oracles.

Everything here is deliberately written with explicit scalar loops and
the math library, sharing no code with the package under test.
"""

import math

import numpy as np


def matmul_loops(a, b):
    m, k = len(a), len(a[0])
    n = len(b[0])
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i][t] * b[t][j]
            out[i][j] = s
    return np.array(out)


def sigmoid_scalar(x):
    return 1.0 / (1.0 + math.exp(-x))


def lstm_step_loops(x, h_prev, c_prev, W, b):
    """One LSTM transition, scalar by scalar; returns (h, c, gates dict)."""
    d = len(b) // 4
    e = len(x)
    z = list(x) + list(h_prev)
    pre = []
    for i in range(4 * d):
        s = b[i]
        for j in range(d + e):
            s += W[i][j] * z[j]
        pre.append(s)
    cbar = [math.tanh(pre[i]) for i in range(d)]
    o = [sigmoid_scalar(pre[d + i]) for i in range(d)]
    i_gate = [sigmoid_scalar(pre[2 * d + i]) for i in range(d)]
    f = [sigmoid_scalar(pre[3 * d + i]) for i in range(d)]
    c = [cbar[i] * i_gate[i] + c_prev[i] * f[i] for i in range(d)]
    h = [o[i] * math.tanh(c[i]) for i in range(d)]
    gates = {"cbar": cbar, "o": o, "i": i_gate, "f": f}
    return np.array(h), np.array(c), gates


def lstm_encode_loops(xs, W, b):
    d = len(b) // 4
    h = np.zeros(d)
    c = np.zeros(d)
    all_h = []
    for x in xs:
        h, c, _ = lstm_step_loops(list(x), list(h), list(c), W, b)
        all_h.append(h)
    return h, np.array(all_h)


def softmax_direct(logits):
    e = [math.exp(v) for v in logits]
    s = sum(e)
    return np.array([v / s for v in e])


def cross_entropy_scalar(probs, onehot):
    total = 0.0
    for p, y in zip(probs, onehot):
        if y != 0.0:
            total -= y * math.log(max(p, 1e-12))
    return total


def frobenius_sq_loops(S, H):
    """sum_ij (S^T H)_ij^2 with explicit triple loops."""
    T, d = len(S), len(S[0])
    dh = len(H[0])
    total = 0.0
    for i in range(d):
        for j in range(dh):
            m = 0.0
            for t in range(T):
                m += S[t][i] * H[t][j]
            total += m * m
    return total
