"""Differentiable STFT front-end: framing, windowed real DFT, overlap-add
inverse, and the waveform-consistency projection.

The real DFT is an explicit cosine/sine matrix product (400x201 at the default
size), so the adjoint is literally the transposed matmul and gradient flow
through synthesis-then-analysis is exact to rounding.  Frames are centered via
reflect padding by n_fft/2; T = 1 + floor(len / hop).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, _make, complex_magnitude
from .errors import ConfigError, DataError, ShapeError

_TWO_SECONDS = 32000  # samples at 16 kHz


def periodic_hann(n: int) -> np.ndarray:
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 400
    win_length: int = 400
    hop: int = 100
    sample_rate: int = 16000
    # magnitude feature exponent for the network input; 1.0 disables it
    compression: float = 1.0
    window: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not (0 < self.hop <= self.win_length <= self.n_fft):
            raise ConfigError(
                f"need 0 < hop <= win_length <= n_fft, got {self.hop}/{self.win_length}/{self.n_fft}")
        if self.n_fft % 2:
            raise ConfigError(f"n_fft must be even, got {self.n_fft}")
        if self.compression <= 0:
            raise ConfigError(f"compression exponent must be positive, got {self.compression}")
        w = self.window
        if w is None:
            w = periodic_hann(self.win_length)
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.win_length,):
            raise ConfigError(f"window length {w.shape} != win_length {self.win_length}")
        if self.win_length < self.n_fft:
            lpad = (self.n_fft - self.win_length) // 2
            w = np.pad(w, (lpad, self.n_fft - self.win_length - lpad))
        object.__setattr__(self, "window", w)
        # overlap-added squared window must be flat on interior samples,
        # otherwise per-sample normalization would color the reconstruction
        dev = cola_deviation(w, self.hop)
        if dev > 1e-10:
            raise ConfigError(f"window fails constant-overlap-add at hop {self.hop} (dev {dev:.2e})")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def pad(self) -> int:
        return self.n_fft // 2

    def frame_count(self, n_samples: int) -> int:
        return 1 + n_samples // self.hop

    def _key(self):
        return (self.n_fft, self.win_length, self.hop, self.window.tobytes())


def cola_deviation(window: np.ndarray, hop: int) -> float:
    """Max deviation of the overlap-added squared window from its mean,
    measured over one interior period."""
    n = window.shape[0]
    reps = 2 * (n // hop) + 4
    acc = np.zeros(n + reps * hop)
    sq = window * window
    for m in range(reps):
        acc[m * hop: m * hop + n] += sq
    interior = acc[n: reps * hop - n + n]
    if interior.size == 0:
        raise ConfigError("window/hop combination leaves no interior samples for the COLA check")
    return float(np.max(np.abs(interior - interior.mean())))


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DataError(f"clip must be mono 1-d, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("clip contains non-finite samples")

    def __len__(self):
        return self.samples.shape[0]


@dataclass
class ComplexSpec:
    """Magnitude/phase view of a one-sided spectrum, (B, T, F) each."""
    mag: Tensor
    phase: Tensor

    def __post_init__(self):
        if self.mag.shape != self.phase.shape:
            raise ShapeError(f"mag {self.mag.shape} vs phase {self.phase.shape}")
        if np.any(self.mag.data < 0):
            raise DataError("magnitudes must be non-negative")


def wrap_phase(p: np.ndarray) -> np.ndarray:
    """Wrap radians into (-pi, pi]."""
    out = np.mod(p + np.pi, 2.0 * np.pi) - np.pi
    return np.where(out == -np.pi, np.pi, out)


# Per-config basis cache: cosine/sine analysis matrices, inverse weights,
# and the overlap-added squared-window normalizer per signal length.
_BASIS: dict = {}
_WSUM: dict = {}


def _basis(cfg: StftConfig):
    key = cfg._key()
    hit = _BASIS.get(key)
    if hit is None:
        n, f = cfg.n_fft, cfg.n_bins
        grid = 2.0 * np.pi * np.outer(np.arange(n), np.arange(f)) / n
        cos = np.cos(grid)
        sin = np.sin(grid)
        rho = np.full(f, 2.0)
        rho[0] = 1.0
        rho[-1] = 1.0
        hit = (cos, sin, cos * rho / n, sin * rho / n)
        _BASIS[key] = hit
    return hit


def _frame_index(t: int, hop: int, n: int):
    return np.arange(t)[:, None] * hop + np.arange(n)[None, :]


def _overlap_add(frames: np.ndarray, hop: int, out_len: int) -> np.ndarray:
    b, t, n = frames.shape
    out = np.zeros((b, out_len), dtype=frames.dtype)
    if n % hop == 0:
        # frames with the same offset mod n/hop tile without overlap
        g = n // hop
        for r in range(min(g, t)):
            sub = frames[:, r::g, :]
            tr = sub.shape[1]
            out[:, r * hop: r * hop + tr * n] += sub.reshape(b, tr * n)
    else:
        for ti in range(t):
            out[:, ti * hop: ti * hop + n] += frames[:, ti]
    return out


def _window_sum(cfg: StftConfig, padded_len: int, t: int) -> np.ndarray:
    key = (cfg._key(), padded_len, t)
    hit = _WSUM.get(key)
    if hit is None:
        sq = (cfg.window * cfg.window)[None, None, :]
        tiled = np.broadcast_to(sq, (1, t, cfg.n_fft))
        hit = np.maximum(_overlap_add(tiled, cfg.hop, padded_len)[0], 1e-10)
        _WSUM[key] = hit
    return hit


def _check_len(n_samples: int, cfg: StftConfig):
    if n_samples < cfg.win_length:
        raise DataError(f"clip of {n_samples} samples is shorter than one window ({cfg.win_length})")


def stft_pair(x: Tensor, cfg: StftConfig):
    """Windowed real DFT of (B, L) -> re, im of shape (B, T, F)."""
    if x.ndim != 2:
        raise ShapeError(f"stft input must be (B, L), got rank {x.ndim}")
    b, length = x.shape
    _check_len(length, cfg)
    pad = cfg.pad
    hop = cfg.hop
    n = cfg.n_fft
    t = cfg.frame_count(length)
    cos, sin, _, _ = _basis(cfg)
    w = cfg.window

    xp = np.pad(x.data, ((0, 0), (pad, pad)), mode="reflect")
    idx = _frame_index(t, hop, n)
    fw = xp[:, idx] * w
    flat = fw.reshape(b * t, n)
    re = (flat @ cos).reshape(b, t, cfg.n_bins)
    im = -(flat @ sin).reshape(b, t, cfg.n_bins)

    def fold_pad(gxp):
        gx = gxp[:, pad:pad + length].copy()
        gx[:, 1:pad + 1] += gxp[:, :pad][:, ::-1]
        gx[:, length - 1 - pad:length - 1] += gxp[:, pad + length:][:, ::-1]
        return gx

    def scatter(gfw):
        return _overlap_add(gfw, hop, length + 2 * pad)

    def bwd_re(g):
        gfw = (g.reshape(b * t, -1) @ cos.T).reshape(b, t, n) * w
        return (fold_pad(scatter(gfw)),)

    def bwd_im(g):
        gfw = -(g.reshape(b * t, -1) @ sin.T).reshape(b, t, n) * w
        return (fold_pad(scatter(gfw)),)

    return _make(re, (x,), bwd_re), _make(im, (x,), bwd_im)


def istft_pair(re: Tensor, im: Tensor, cfg: StftConfig, out_len: int) -> Tensor:
    """Overlap-add synthesis back to (B, out_len), window-sum normalized."""
    if re.shape != im.shape or re.ndim != 3:
        raise ShapeError(f"istft inputs must match as (B, T, F), got {re.shape} and {im.shape}")
    b, t, f = re.shape
    if f != cfg.n_bins:
        raise ShapeError(f"istft got F={f}, config expects {cfg.n_bins}")
    if t != cfg.frame_count(out_len):
        raise ShapeError(f"istft got T={t} frames but out_len {out_len} implies {cfg.frame_count(out_len)}")
    _check_len(out_len, cfg)
    pad = cfg.pad
    hop = cfg.hop
    n = cfg.n_fft
    _, _, cos_inv, sin_inv = _basis(cfg)
    w = cfg.window
    padded = out_len + 2 * pad
    wsum = _window_sum(cfg, padded, t)
    norm = wsum[pad:pad + out_len]

    frames = (re.data.reshape(b * t, f) @ cos_inv.T
              - im.data.reshape(b * t, f) @ sin_inv.T).reshape(b, t, n)
    acc = _overlap_add(frames * w, hop, padded)
    out = acc[:, pad:pad + out_len] / norm

    idx = _frame_index(t, hop, n)

    def bwd(g):
        gacc = np.zeros((b, padded), dtype=g.dtype)
        gacc[:, pad:pad + out_len] = g / norm
        gfw = gacc[:, idx] * w
        flat = gfw.reshape(b * t, n)
        return (flat @ cos_inv).reshape(b, t, f), -(flat @ sin_inv).reshape(b, t, f)

    return _make(out, (re, im), bwd)


def stft(x, cfg: StftConfig) -> ComplexSpec:
    """Full analysis to a magnitude/phase pair; phase carries no gradient."""
    if isinstance(x, AudioClip):
        x = Tensor(x.samples[None, :])
    re, im = stft_pair(x, cfg)
    mag = complex_magnitude(re, im)
    phase = Tensor(wrap_phase(np.arctan2(im.data, re.data)))
    return ComplexSpec(mag=mag, phase=phase)


def istft(spec: ComplexSpec, cfg: StftConfig, out_len: int) -> Tensor:
    from .autodiff import mul_const
    re = mul_const(spec.mag, np.cos(spec.phase.data))
    im = mul_const(spec.mag, np.sin(spec.phase.data))
    return istft_pair(re, im, cfg, out_len)


def consistency_project(est_mag: Tensor, noisy_phase, cfg: StftConfig, out_len: int) -> Tensor:
    """Magnitude after synthesis-then-analysis with the given (fixed) phase.

    The result is the closest realizable magnitude: spectra that came from an
    actual waveform pass through unchanged, anything else gets pulled onto
    that set.  Differentiable w.r.t. est_mag only.
    """
    from .autodiff import mul_const
    if np.any(est_mag.data < 0):
        raise DataError("consistency projection needs non-negative magnitudes")
    ph = noisy_phase.data if isinstance(noisy_phase, Tensor) else np.asarray(noisy_phase)
    if ph.shape != est_mag.shape:
        raise ShapeError(f"phase shape {ph.shape} != magnitude shape {est_mag.shape}")
    re = mul_const(est_mag, np.cos(ph))
    im = mul_const(est_mag, np.sin(ph))
    x = istft_pair(re, im, cfg, out_len)
    re2, im2 = stft_pair(x, cfg)
    return complex_magnitude(re2, im2)


def power_compress(mag: Tensor, exponent: float) -> Tensor:
    """Elementwise mag**p feature compression; gradient clamped at zero input."""
    if exponent == 1.0:
        return mag
    d = np.maximum(mag.data, 0.0)
    out = d ** exponent

    def bwd(g):
        safe = np.maximum(d, 1e-12)
        slope = np.where(d > 1e-12, exponent * safe ** (exponent - 1.0), 0.0)
        return (g * slope,)
    return _make(out, (mag,), bwd)


def segment_clip(clip: AudioClip, rng, target: int = _TWO_SECONDS) -> AudioClip:
    """Crop (uniform random offset) or right-pad a clip to exactly `target`."""
    s = clip.samples
    n = s.shape[0]
    if n == target:
        return clip
    if n > target:
        off = int(rng.integers(0, n - target + 1))
        return AudioClip(s[off:off + target], clip.sample_rate)
    return AudioClip(np.pad(s, (0, target - n)), clip.sample_rate)


def segment_two_seconds(clip: AudioClip, rng) -> AudioClip:
    return segment_clip(clip, rng, _TWO_SECONDS)
