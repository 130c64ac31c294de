"""Independent reference implementations used as test oracles.

Nothing here imports the code paths it checks: slicing, forward pass and
Adam are written out in plain loops.
"""

import math

import numpy as np


def naive_patches(row, patch_len, stride):
    """Enumerate every start offset whose patch fits inside the row."""
    out = []
    start = 0
    while start + patch_len <= len(row):
        out.append([row[start + j] for j in range(patch_len)])
        start += stride
    return out


def straight_line_forward(named, scales, x, horizon, eps=1e-5):
    """Forward pass for one (N, L) window with explicit loops.

    ``named`` maps parameter names (enc{k}.W, enc{k}.b, head.W, head.b) to arrays.
    """
    n_vars, lookback = x.shape
    out = np.zeros((n_vars, horizon))
    for n in range(n_vars):
        row = [float(v) for v in x[n]]
        mean = sum(row) / lookback
        var = sum((v - mean) ** 2 for v in row) / lookback
        std = math.sqrt(var + eps)
        z = [(v - mean) / std for v in row]
        feats = []
        for k, (plen, stride) in enumerate(scales):
            w = named[f"enc{k}.W"]
            b = named[f"enc{k}.b"]
            for p in naive_patches(z, plen, stride):
                for h in range(w.shape[1]):
                    acc = b[h] + sum(p[j] * w[j, h] for j in range(plen))
                    feats.append(max(acc, 0.0))
        hw, hb = named["head.W"], named["head.b"]
        for t in range(horizon):
            y = hb[t] + sum(feats[f] * hw[f, t] for f in range(len(feats)))
            out[n, t] = y * std + mean
    return out


def reference_adam(theta0, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam, one coordinate at a time."""
    theta = [float(v) for v in theta0]
    m = [0.0] * len(theta)
    v = [0.0] * len(theta)
    for t, g in enumerate(grads, start=1):
        for i in range(len(theta)):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] ** 2
            mh = m[i] / (1 - b1**t)
            vh = v[i] / (1 - b2**t)
            theta[i] -= lr * mh / (math.sqrt(vh) + eps)
    return np.array(theta)


def central_diff(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` at flat vector ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    return np.abs(a - b) / (np.abs(a) + np.abs(b) + 1e-12)
