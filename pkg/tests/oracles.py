"""Independent reference implementations used as test oracles.

Everything here is written with plain Python loops or direct formulas and does
not call into the vectorised code paths under test.
"""

import math

import numpy as np

from insensor_snn import analog_frontend as af


def conv2d_loops(x, w, stride=1, padding=0):
    """Cross-correlation of one ``[C, H, W]`` image with ``[O, C, kh, kw]`` weights."""
    c, h, wd = x.shape
    o, c2, kh, kw = w.shape
    assert c == c2
    xp = np.zeros((c, h + 2 * padding, wd + 2 * padding), dtype=np.float64)
    xp[:, padding:padding + h, padding:padding + wd] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((o, ho, wo))
    for oc in range(o):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for ic in range(c):
                    for a in range(kh):
                        for b in range(kw):
                            acc += float(xp[ic, i * stride + a, j * stride + b]) * float(w[oc, ic, a, b])
                out[oc, i, j] = acc
    return out


def maxpool_loops(x, window, stride=None):
    stride = stride or window
    c, h, w = x.shape
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    out = np.zeros((c, ho, wo), dtype=x.dtype)
    for ch in range(c):
        for i in range(ho):
            for j in range(wo):
                best = -math.inf
                for a in range(window):
                    for b in range(window):
                        best = max(best, x[ch, i * stride + a, j * stride + b])
                out[ch, i, j] = best
    return out


def bn_formula(x, gamma, beta, mu, sigma2, eps):
    """``gamma * (x - mu) / sqrt(sigma2 + eps) + beta`` per channel (axis 0 of ``x``)."""
    out = np.empty(x.shape, dtype=np.float64)
    for c in range(x.shape[0]):
        out[c] = gamma[c] * (x[c] - mu[c]) / math.sqrt(sigma2[c] + eps) + beta[c]
    return out


def digital_first_layer(x, theta, gamma, beta, mu, sigma2, eps, v_th, stride, padding, pool):
    """Heaviside(BN(conv(x, theta)) - v_th), then max pooling; one image."""
    u = bn_formula(conv2d_loops(x, theta, stride, padding), gamma, beta, mu, sigma2, eps)
    s = (u >= v_th).astype(np.uint8)
    return maxpool_loops(s, pool) if pool > 1 else s


def central_difference(f, x, eps=1e-6):
    """Numerical gradient of scalar ``f`` at float64 array ``x`` (modified in place, restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        fp = f()
        x[idx] = old - eps
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g


def rel_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def hoyer_loops(a):
    l1 = sum(abs(float(v)) for v in np.ravel(a))
    l2 = sum(float(v) ** 2 for v in np.ravel(a))
    return 0.0 if l2 == 0 else l1 * l1 / l2


def random_instance(rng, c_in=None, c_out=None, size=None):
    """Random first-layer case: weights, BN statistics, threshold, geometry, image."""
    c_in = c_in or int(rng.integers(1, 4))
    c_out = c_out or int(rng.integers(1, 6))
    size = size or int(rng.integers(5, 11))
    k = int(rng.choice([1, 3]))
    theta = rng.normal(0, 0.6, size=(c_out, c_in, k, k))
    bn = af.BNParams(rng.uniform(-2, 2, c_out), rng.normal(0, 1, c_out), rng.normal(0, 0.5, c_out),
                     rng.uniform(0, 2, c_out), eps=1e-5)
    v_th = float(rng.uniform(0.2, 1.5))
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, k))
    image = rng.random((c_in, size, size))
    return theta, bn, v_th, stride, padding, image


def ramp(u, v_th, a):
    """Piecewise-linear function whose derivative is the boxcar surrogate."""
    return np.clip((u - v_th + a) / (2 * a), 0.0, 1.0)
