"""WAV persistence: 16-bit PCM mono at 16 kHz, nothing else.

Floats map to ints as round(x * 32768) clipped to the int16 range, and back
as i / 32768, so write-then-read of a file we produced is bit-exact and
quantization error against a float source stays within one LSB.
"""

from __future__ import annotations

import wave

import numpy as np

from .dsp import AudioClip
from .errors import DataError

_SCALE = 32768.0


def wav_read(path) -> AudioClip:
    try:
        with wave.open(str(path), "rb") as w:
            channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            n = w.getnframes()
            raw = w.readframes(n)
    except (wave.Error, EOFError) as e:
        raise DataError(f"{path}: not a readable WAV file ({e})") from None
    if channels != 1:
        raise DataError(f"{path}: expected mono, got {channels} channels; downmix first")
    if width != 2:
        raise DataError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    if rate != 16000:
        raise DataError(f"{path}: expected 16000 Hz, got {rate} Hz; resample first")
    ints = np.frombuffer(raw, dtype="<i2")
    return AudioClip(ints.astype(np.float64) / _SCALE, sample_rate=rate)


def wav_write(path, clip_or_samples, sample_rate: int = 16000):
    if isinstance(clip_or_samples, AudioClip):
        samples = clip_or_samples.samples
        sample_rate = clip_or_samples.sample_rate
    else:
        samples = np.asarray(clip_or_samples, dtype=np.float64)
    if samples.ndim != 1:
        raise DataError(f"can only write mono 1-d signals, got shape {samples.shape}")
    if not np.all(np.isfinite(samples)):
        raise DataError("refusing to write non-finite samples")
    ints = np.clip(np.round(samples * _SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(ints.tobytes())
