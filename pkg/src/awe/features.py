"""Waveform to 13-dimensional static MFCC sequences.

Pipeline: pre-emphasis, 25 ms Hamming windows every 10 ms, 512-point power
spectrum, 24 triangular mel filters, floored log, orthonormal DCT-II keeping
coefficients 0..12. Deterministic (no dithering); only complete frames are
produced, so T = 1 + floor((N - window) / hop).
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from .data_io import DataFormatError, FeatureSequence


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        object.__setattr__(
            self, "samples", np.asarray(self.samples, dtype=np.float64)
        )
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.isfinite(self.samples).all():
            raise ValueError("waveform contains non-finite samples")


@dataclass(frozen=True)
class MfccConfig:
    window_ms: float = 25.0
    hop_ms: float = 10.0
    fft_size: int = 512
    mel_filters: int = 24
    num_ceps: int = 13
    pre_emphasis: float = 0.97
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.num_ceps > self.mel_filters:
            raise ValueError("num_ceps cannot exceed mel_filters")

    def window_samples(self, sample_rate: int) -> int:
        return int(round(self.window_ms * sample_rate / 1000.0))

    def hop_samples(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000.0))


def read_wav(path) -> Waveform:
    """Read 16-bit signed mono PCM, scaled to [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1:
                raise DataFormatError("%s: expected mono audio" % path)
            if w.getsampwidth() != 2:
                raise DataFormatError("%s: expected 16-bit PCM" % path)
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise DataFormatError("%s: %s" % (path, exc)) from None
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    num_filters: int, fft_size: int, sample_rate: int,
    fmin: float = 0.0, fmax: float | None = None,
) -> np.ndarray:
    """Triangular filters on a mel-spaced grid, (num_filters, fft_size//2 + 1).

    Filter edges are kept in continuous frequency (no rounding to bins), so
    every bin strictly inside (fmin, fmax) has positive total weight.
    """
    if fmax is None:
        fmax = sample_rate / 2.0
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), num_filters + 2))
    bin_hz = np.arange(fft_size // 2 + 1) * sample_rate / float(fft_size)
    bank = np.zeros((num_filters, bin_hz.size))
    for j in range(num_filters):
        left, center, right = edges[j], edges[j + 1], edges[j + 2]
        rising = (bin_hz - left) / (center - left)
        falling = (right - bin_hz) / (right - center)
        bank[j] = np.maximum(0.0, np.minimum(rising, falling))
    return bank


def filter_centers(num_filters: int, sample_rate: int,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    if fmax is None:
        fmax = sample_rate / 2.0
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), num_filters + 2))
    return edges[1:-1]


def frame_count(num_samples: int, window: int, hop: int) -> int:
    if num_samples < window:
        raise DataFormatError(
            "waveform of %d samples is shorter than one %d-sample window"
            % (num_samples, window)
        )
    return 1 + (num_samples - window) // hop


def compute_mfcc(wav: Waveform, cfg: MfccConfig | None = None,
                 utterance_id: str = "") -> FeatureSequence:
    """Static MFCCs of a waveform, one row per 10 ms frame."""
    cfg = cfg or MfccConfig()
    window = cfg.window_samples(wav.sample_rate)
    hop = cfg.hop_samples(wav.sample_rate)
    if cfg.fft_size < window:
        raise ValueError(
            "fft_size %d is smaller than the %d-sample window" % (cfg.fft_size, window)
        )
    t = frame_count(wav.samples.size, window, hop)

    emphasized = np.concatenate(
        [wav.samples[:1], wav.samples[1:] - cfg.pre_emphasis * wav.samples[:-1]]
    )
    idx = np.arange(window)[None, :] + hop * np.arange(t)[:, None]
    frames = emphasized[idx] * np.hamming(window)[None, :]

    spectrum = np.fft.rfft(frames, n=cfg.fft_size, axis=1)
    power = np.abs(spectrum) ** 2
    bank = mel_filterbank(cfg.mel_filters, cfg.fft_size, wav.sample_rate)
    energies = np.maximum(power @ bank.T, cfg.log_floor)
    ceps = dct(np.log(energies), type=2, norm="ortho", axis=1)[:, : cfg.num_ceps]
    return FeatureSequence(utterance_id, ceps)


def cmvn(seq: FeatureSequence, mode: str = "none") -> FeatureSequence:
    """Per-utterance mean/variance normalization of each coefficient.

    ``utterance`` brings every column to mean 0, (population) variance 1;
    columns with zero variance are only mean-subtracted. ``none`` is the
    identity.
    """
    if mode == "none":
        return seq
    if mode != "utterance":
        raise ValueError("unknown cmvn mode: %s" % mode)
    frames = seq.frames - seq.frames.mean(axis=0)
    std = frames.std(axis=0)
    safe = np.where(std > 1e-10, std, 1.0)
    return FeatureSequence(seq.utterance_id, frames / safe)
