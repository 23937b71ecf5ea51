"""Independent reference implementations used as test oracles.

Everything here is written the slow, obvious way (scalar loops, np.fft) so a
bug in the library cannot hide in a shared code path.
"""

import csv

import numpy as np


def conv1d_ref(x, w, b, groups=1, dilation=1):
    """Nested-loop grouped 1-D cross-correlation, same-length padding.

    x (N, L, Cin), w (K, Cin/groups, Cout), b (Cout,).
    """
    n, length, cin = x.shape
    k, cin_g, cout = w.shape
    span = (k - 1) * dilation
    pl = span // 2
    out = np.zeros((n, length, cout))
    cout_g = cout // groups
    for bi in range(n):
        for t in range(length):
            for co in range(cout):
                g = co // cout_g
                acc = b[co]
                for tap in range(k):
                    src = t - pl + tap * dilation
                    if src < 0 or src >= length:
                        continue
                    for ci in range(cin_g):
                        acc += x[bi, src, g * cin_g + ci] * w[tap, ci, co]
                out[bi, t, co] = acc
    return out


def conv2d_ref(x, w, b, stride=(1, 1), dilation=(1, 1)):
    """Nested-loop 2-D cross-correlation, ceil-mode same padding.

    x (B, H, W, Cin), w (kh, kw, Cin, Cout).
    """
    bsz, hh, ww_, cin = x.shape
    kh, kw, _, cout = w.shape
    sh, sw = stride
    dh, dw = dilation
    ho = -(-hh // sh)
    wo = -(-ww_ // sw)
    pad_h = max(0, (ho - 1) * sh + (kh - 1) * dh + 1 - hh)
    pad_w = max(0, (wo - 1) * sw + (kw - 1) * dw + 1 - ww_)
    pt = pad_h // 2
    plft = pad_w // 2
    out = np.zeros((bsz, ho, wo, cout))
    for bi in range(bsz):
        for oy in range(ho):
            for ox in range(wo):
                for co in range(cout):
                    acc = b[co]
                    for i in range(kh):
                        for j in range(kw):
                            sy = oy * sh - pt + i * dh
                            sx = ox * sw - plft + j * dw
                            if sy < 0 or sy >= hh or sx < 0 or sx >= ww_:
                                continue
                            for ci in range(cin):
                                acc += x[bi, sy, sx, ci] * w[i, j, ci, co]
                    out[bi, oy, ox, co] = acc
    return out


def stft_ref(samples, n_fft=400, hop=100, window=None):
    """Reflect-centered framed rfft.  Returns complex (T, n_fft//2 + 1)."""
    if window is None:
        window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft)
    pad = n_fft // 2
    xp = np.pad(samples, pad, mode="reflect")
    t_frames = 1 + len(samples) // hop
    out = np.empty((t_frames, n_fft // 2 + 1), dtype=complex)
    for t in range(t_frames):
        out[t] = np.fft.rfft(xp[t * hop: t * hop + n_fft] * window)
    return out


def istft_ref(spec, out_len, n_fft=400, hop=100, window=None):
    """Overlap-add inverse of stft_ref with window-sum normalization."""
    if window is None:
        window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft)
    t_frames = spec.shape[0]
    pad = n_fft // 2
    total = pad + out_len + pad
    num = np.zeros(total)
    den = np.zeros(total)
    for t in range(t_frames):
        frame = np.fft.irfft(spec[t], n=n_fft)
        num[t * hop: t * hop + n_fft] += frame * window
        den[t * hop: t * hop + n_fft] += window * window
    return num[pad: pad + out_len] / np.maximum(den[pad: pad + out_len], 1e-10)


def adamw_ref(p, g, m, v, t, lr, b1, b2, eps, wd):
    """One decoupled-weight-decay Adam step on plain floats."""
    m = b1 * m + (1.0 - b1) * g
    v = b2 * v + (1.0 - b2) * g * g
    mh = m / (1.0 - b1 ** t)
    vh = v / (1.0 - b2 ** t)
    p = p - lr * wd * p - lr * mh / (np.sqrt(vh) + eps)
    return p, m, v


def snr_db(ref, est):
    noise = ref - est
    return 10.0 * np.log10(np.sum(ref ** 2) / max(np.sum(noise ** 2), 1e-300))


def sine_clip(n, freq, sr=16000, amp=0.3, phase=0.0):
    t = np.arange(n) / sr
    return amp * np.sin(2.0 * np.pi * freq * t + phase)


def rand_signal(rng, n, scale=0.3):
    return scale * rng.standard_normal(n)


def read_report_csv(path):
    """Rows of an evaluation CSV as dicts; comment lines skipped."""
    rows = []
    with open(path) as f:
        body = [ln for ln in f if not ln.startswith("#")]
    for row in csv.DictReader(body):
        rows.append(row)
    return rows


def read_curves_csv(path):
    rows = []
    with open(path) as f:
        body = [ln for ln in f if not ln.startswith("#")]
    for row in csv.DictReader(body):
        rows.append(row)
    return rows
