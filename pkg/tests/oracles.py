"""Slow, independent reference implementations used only by the tests.

Nothing here imports the code paths it checks beyond plain tensor creation.
"""

from __future__ import annotations

import math

import numpy as np
import torch


def naive_conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None,
                 stride: int = 1, padding: int = 0) -> np.ndarray:
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.zeros((n, cin, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    oh = (h + 2 * padding - k) // stride + 1
    ow = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, cout, oh, ow))
    for bi in range(n):
        for o in range(cout):
            for y in range(oh):
                for xx in range(ow):
                    acc = 0.0
                    for i in range(cin):
                        for dy in range(k):
                            for dx in range(k):
                                acc += xp[bi, i, y * stride + dy, xx * stride + dx] * w[o, i, dy, dx]
                    out[bi, o, y, xx] = acc + (b[o] if b is not None else 0.0)
    return out


def naive_pixel_shuffle(x: np.ndarray, r: int) -> np.ndarray:
    n, ch, h, w = x.shape
    c_out = ch // (r * r)
    out = np.zeros((n, c_out, h * r, w * r), dtype=x.dtype)
    for bi in range(n):
        for c in range(c_out):
            for dy in range(r):
                for dx in range(r):
                    for y in range(h):
                        for xx in range(w):
                            out[bi, c, r * y + dy, r * xx + dx] = x[bi, c * r * r + dy * r + dx, y, xx]
    return out


def naive_squash(s: np.ndarray, sq: float) -> np.ndarray:
    norm = math.sqrt(float((s * s).sum()))
    if norm == 0:
        return np.zeros_like(s)
    return (norm * norm / (sq + norm * norm)) * s / norm


def naive_capsule_layer(poses: np.ndarray, kernels, biases, out_types: int, sq: float,
                        padding: int) -> np.ndarray:
    """Explicit routing sum: loop over input type i, output type j and position.

    ``kernels[i][j]`` is ``(d_out, d_in, k, k)``; ``biases[j]`` is ``(d_out,)``.
    """
    n, c_in, d_in, h, w = poses.shape
    d_out = kernels[0][0].shape[0]
    coupling = 1.0 / out_types
    s = None
    for j in range(out_types):
        for i in range(c_in):
            vote = naive_conv2d(poses[:, i], kernels[i][j], biases[j], 1, padding)
            if s is None:
                s = np.zeros((n, out_types, d_out) + vote.shape[2:])
            s[:, j] += coupling * vote
    out = np.zeros_like(s)
    for bi in range(n):
        for j in range(out_types):
            for y in range(s.shape[3]):
                for x in range(s.shape[4]):
                    out[bi, j, :, y, x] = naive_squash(s[bi, j, :, y, x], sq)
    return out


def gaussian_1d(win: int, sigma: float) -> np.ndarray:
    g = np.array([math.exp(-((i - (win - 1) / 2) ** 2) / (2 * sigma * sigma)) for i in range(win)])
    return g / g.sum()


def naive_ssim_maps(x: np.ndarray, y: np.ndarray, win=11, sigma=1.5, c1=6.5025, c2=58.5225):
    """Per-window double-precision SSIM, l and cs for a single 2-D channel."""
    g = gaussian_1d(win, sigma)
    wts = np.outer(g, g)
    h, w = x.shape
    oh, ow = h - win + 1, w - win + 1
    ssim_m, l_m, cs_m = (np.zeros((oh, ow)) for _ in range(3))
    for i in range(oh):
        for j in range(ow):
            px = x[i:i + win, j:j + win]
            py = y[i:i + win, j:j + win]
            mx, my = (wts * px).sum(), (wts * py).sum()
            vx = (wts * (px - mx) ** 2).sum()
            vy = (wts * (py - my) ** 2).sum()
            cov = (wts * (px - mx) * (py - my)).sum()
            lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
            cs = (2 * cov + c2) / (vx + vy + c2)
            ssim_m[i, j], l_m[i, j], cs_m[i, j] = lum * cs, lum, cs
    return ssim_m, l_m, cs_m


def naive_ms_ssim(x: np.ndarray, y: np.ndarray, betas, win=11, sigma=1.5,
                  c1=6.5025, c2=58.5225) -> float:
    """Multi-scale SSIM of one 2-D channel with 2x2 box downsampling between scales."""
    total = 1.0
    m = len(betas)
    for j in range(m):
        s_map, _, cs_map = naive_ssim_maps(x, y, win, sigma, c1, c2)
        if j < m - 1:
            total *= max(cs_map.mean(), 0.0) ** betas[j]
            h2, w2 = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
            x = x[:h2, :w2].reshape(h2 // 2, 2, w2 // 2, 2).mean(axis=(1, 3))
            y = y[:h2, :w2].reshape(h2 // 2, 2, w2 // 2, 2).mean(axis=(1, 3))
        else:
            total *= max(s_map.mean(), 0.0) ** betas[j]
    return total


def keys_cubic(t: float, a: float = -0.5) -> float:
    t = abs(t)
    if t <= 1:
        return (a + 2) * t ** 3 - (a + 3) * t ** 2 + 1
    if t < 2:
        return a * t ** 3 - 5 * a * t ** 2 + 8 * a * t - 4 * a
    return 0.0


def naive_resize_1d(signal: np.ndarray, factor: float) -> np.ndarray:
    """Direct kernel summation with edge clamping, antialiased when shrinking."""
    n = len(signal)
    out_n = int(math.floor(n * factor))
    stretch = min(factor, 1.0)
    out = np.zeros(out_n)
    for i in range(out_n):
        u = (i + 0.5) / factor - 0.5
        acc = norm = 0.0
        for j in range(int(math.floor(u - 2 / stretch)) - 1, int(math.ceil(u + 2 / stretch)) + 2):
            wgt = stretch * keys_cubic(stretch * (u - j))
            acc += wgt * signal[min(max(j, 0), n - 1)]
            norm += wgt
        out[i] = acc / norm
    return out


def naive_resize(img: np.ndarray, factor: float) -> np.ndarray:
    rows = np.stack([naive_resize_1d(r, factor) for r in img])
    return np.stack([naive_resize_1d(c, factor) for c in rows.T]).T


def naive_sobel(img: np.ndarray) -> np.ndarray:
    kx = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
    h, w = img.shape
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            gx = gy = 0.0
            for dy in range(-1, 2):
                for dx in range(-1, 2):
                    v = img[min(max(y + dy, 0), h - 1), min(max(x + dx, 0), w - 1)]
                    gx += kx[dy + 1][dx + 1] * v
                    gy += kx[dx + 1][dy + 1] * v
            out[y, x] = math.sqrt(gx * gx + gy * gy)
    return out


def finite_difference_check(fn, tensors, step: float = 1e-5, max_elems: int | None = None,
                            seed: int = 0, kink_signature=None, stats: dict | None = None) -> float:
    """Largest relative error between autograd and central differences.

    ``fn()`` must return a scalar and read the (double, requires_grad) tensors
    in ``tensors`` by reference. For each tensor the error is
    ``max|analytic - numeric| / max(max|numeric|, 1e-12)`` over the checked
    elements (all of them, or ``max_elems`` sampled ones).

    ``kink_signature()``, when given, returns the on/off pattern of every
    piecewise-linear unit from the latest ``fn()`` call; coordinates whose
    +-step perturbation changes that pattern sit on a kink and are skipped
    (counted in ``stats["skipped"]``).
    """
    tensors = list(tensors)
    out = fn()
    base_sig = kink_signature() if kink_signature else None
    grads = torch.autograd.grad(out, tensors, allow_unused=True)
    checked = skipped = 0
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, g in zip(tensors, grads):
        g = torch.zeros_like(t) if g is None else g
        flat = t.data.view(-1)
        idx = np.arange(flat.numel())
        if max_elems is not None and flat.numel() > max_elems:
            idx = rng.choice(flat.numel(), max_elems, replace=False)
        analytic = g.reshape(-1)[idx].numpy()
        numeric = np.zeros(len(idx))
        keep = np.ones(len(idx), dtype=bool)
        with torch.no_grad():
            for n_i, e in enumerate(idx):
                orig = flat[e].item()
                flat[e] = orig + step
                up = float(fn())
                if base_sig is not None and not torch.equal(kink_signature(), base_sig):
                    keep[n_i] = False
                flat[e] = orig - step
                down = float(fn())
                if base_sig is not None and not torch.equal(kink_signature(), base_sig):
                    keep[n_i] = False
                flat[e] = orig
                numeric[n_i] = (up - down) / (2 * step)
        checked += int(keep.sum())
        skipped += int((~keep).sum())
        if keep.any():
            scale = max(np.abs(numeric).max(), 1e-12)
            worst = max(worst, float(np.abs(analytic[keep] - numeric[keep]).max() / scale))
    if stats is not None:
        stats["checked"] = stats.get("checked", 0) + checked
        stats["skipped"] = stats.get("skipped", 0) + skipped
    return worst


def relu_signature_probe(module):
    """Hook every ReLU-family Activation in ``module``; returns ``signature()``.

    The signature concatenates the ``input > 0`` masks seen in the most recent
    forward pass.
    """
    from srcaps.tensor_nn import Activation

    seen: list[torch.Tensor] = []

    def hook(mod, inp, out):
        seen.append((inp[0] > 0).flatten())

    for mod in module.modules():
        if isinstance(mod, Activation) and mod.kind in ("relu", "leakyrelu", "prelu"):
            mod.register_forward_hook(hook)

    def signature() -> torch.Tensor:
        sig = torch.cat(seen) if seen else torch.zeros(0, dtype=torch.bool)
        seen.clear()
        return sig

    return signature
