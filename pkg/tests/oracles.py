"""Slow, obviously-correct reference implementations used only by tests."""

import math

import numpy as np


def conv2d_loops(x, w, b, stride, padding):
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for bi in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if b is None else b[o]
                    for c in range(cin):
                        for di in range(k):
                            for dj in range(k):
                                y = i * stride + di - padding
                                xx = j * stride + dj - padding
                                if 0 <= y < h and 0 <= xx < wd:
                                    acc += x[bi, c, y, xx] * w[o, c, di, dj]
                    out[bi, o, i, j] = acc
    return out


def conv_transpose2d_loops(x, w, b, stride, padding):
    """Scatter form: every input pixel stamps the kernel onto the output."""
    n, cin, h, wd = x.shape
    _, cout, k, _ = w.shape
    ho = (h - 1) * stride - 2 * padding + k
    wo = (wd - 1) * stride - 2 * padding + k
    out = np.zeros((n, cout, ho, wo))
    for bi in range(n):
        for c in range(cin):
            for i in range(h):
                for j in range(wd):
                    for o in range(cout):
                        for di in range(k):
                            for dj in range(k):
                                y = i * stride + di - padding
                                xx = j * stride + dj - padding
                                if 0 <= y < ho and 0 <= xx < wo:
                                    out[bi, o, y, xx] += x[bi, c, i, j] * w[c, o, di, dj]
    if b is not None:
        out += np.asarray(b).reshape(1, -1, 1, 1)
    return out


def afsm_chain(x1, x2, fc_w, fc_b, gate_a, gate_b):
    """Sum -> channel means -> relu(fc) -> two-way softmax -> per-channel mix, one image at a time."""
    n, c, h, w = x1.shape
    out = np.zeros_like(x1)
    for bi in range(n):
        u = x1[bi] + x2[bi]
        s = np.array([u[ch].sum() / (h * w) for ch in range(c)])
        z = np.maximum(fc_w @ s + fc_b, 0.0)
        za, zb = gate_a @ z, gate_b @ z
        a = np.array([math.exp(p) / (math.exp(p) + math.exp(q)) for p, q in zip(za, zb)])
        b = np.array([math.exp(q) / (math.exp(p) + math.exp(q)) for p, q in zip(za, zb)])
        for ch in range(c):
            out[bi, ch] = a[ch] * x1[bi, ch] + b[ch] * x2[bi, ch]
    return out


def psnr_direct(x, y, data_range=1.0):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    total = 0.0
    for a, b in zip(x, y):
        total += (a - b) ** 2
    mse = total / len(x)
    return 10.0 * math.log10(data_range**2 / mse)


def ssim_windows(x, y, data_range=1.0, size=11, sigma=1.5):
    """Explicit 2-D Gaussian window slid over every valid position."""
    ax = np.arange(size) - (size - 1) / 2.0
    g2 = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * sigma**2))
    g2 /= g2.sum()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    x = np.asarray(x, dtype=np.float64).reshape(-1, *np.shape(x)[-2:])
    y = np.asarray(y, dtype=np.float64).reshape(-1, *np.shape(y)[-2:])
    means = []
    for a, b in zip(x, y):
        h, w = a.shape
        vals = []
        for i in range(h - size + 1):
            for j in range(w - size + 1):
                pa = a[i : i + size, j : j + size]
                pb = b[i : i + size, j : j + size]
                mu_a = (g2 * pa).sum()
                mu_b = (g2 * pb).sum()
                va = (g2 * (pa - mu_a) ** 2).sum()
                vb = (g2 * (pb - mu_b) ** 2).sum()
                cov = (g2 * (pa - mu_a) * (pb - mu_b)).sum()
                vals.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2)))
        means.append(np.mean(vals))
    return float(np.mean(means))
