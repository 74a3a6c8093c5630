"""Synthetic word-token corpus for desk-scale experiments.

Each word type is a smooth random trajectory template in feature space.
A token realizes its template through a random monotone time warp (overall
length factor uniform in [0.7, 1.4], local rate varying around it), a
per-speaker affine channel (per-dimension gain uniform in [0.8, 1.2], bias
drawn from N(0, 0.1)), and additive N(0, 0.05) frame noise. The generator
also emits a ground-truth same-type pair list (standing in for term
discovery output) and an evaluation list labelling every token.

Everything is a pure function of the config and seed, so corpora are
byte-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_io import EvalToken, FeatureSequence, PairEntry, SegmentRef


@dataclass(frozen=True)
class SynthConfig:
    num_types: int = 20
    tokens_per_type: int = 40
    num_speakers: int = 5
    dim: int = 13
    template_min_frames: int = 20
    template_max_frames: int = 36
    template_scale: float = 1.0
    knot_spacing: int = 4  # template smoothness: frames per random knot
    pairs_per_type: int = 40
    length_factor_min: float = 0.7
    length_factor_max: float = 1.4
    warp_jitter: float = 0.8  # local-rate spread of the monotone warp
    gain_min: float = 0.8
    gain_max: float = 1.2
    bias_var: float = 0.1
    noise_var: float = 0.05
    seed: int = 0


def _template(rng, length: int, cfg: SynthConfig) -> np.ndarray:
    """Smooth trajectory: random knots linearly interpolated, unit scale."""
    n_knots = max(3, length // cfg.knot_spacing)
    knots = rng.standard_normal((n_knots, cfg.dim))
    grid = np.linspace(0.0, n_knots - 1.0, length)
    traj = np.empty((length, cfg.dim))
    for d in range(cfg.dim):
        traj[:, d] = np.interp(grid, np.arange(n_knots), knots[:, d])
    traj -= traj.mean(axis=0)
    spread = traj.std()
    if spread > 0:
        traj *= cfg.template_scale / spread
    return traj


def _warp_positions(rng, out_len: int, in_len: int, jitter: float) -> np.ndarray:
    """Monotone sample positions over [0, in_len - 1] with varying local rate."""
    steps = rng.uniform(1.0 - jitter / 2.0, 1.0 + jitter / 2.0, size=out_len - 1)
    pos = np.concatenate([[0.0], np.cumsum(steps)])
    return pos * (in_len - 1) / pos[-1]


def _resample(template: np.ndarray, positions: np.ndarray) -> np.ndarray:
    lo = np.floor(positions).astype(int)
    hi = np.minimum(lo + 1, template.shape[0] - 1)
    frac = (positions - lo)[:, None]
    return template[lo] * (1.0 - frac) + template[hi] * frac


def generate_corpus(cfg: SynthConfig):
    """Returns (entries, pairs, tokens): one archive record per token, the
    same-type pair list, and the labelled evaluation list."""
    rng = np.random.default_rng(cfg.seed)
    templates = [
        _template(rng, int(rng.integers(cfg.template_min_frames, cfg.template_max_frames + 1)), cfg)
        for _ in range(cfg.num_types)
    ]
    gains = rng.uniform(cfg.gain_min, cfg.gain_max, size=(cfg.num_speakers, cfg.dim))
    biases = rng.standard_normal((cfg.num_speakers, cfg.dim)) * np.sqrt(cfg.bias_var)

    entries: list[FeatureSequence] = []
    tokens: list[EvalToken] = []
    refs_by_type: list[list[SegmentRef]] = []
    for v in range(cfg.num_types):
        template = templates[v]
        refs = []
        for i in range(cfg.tokens_per_type):
            speaker = int(rng.integers(cfg.num_speakers))
            factor = rng.uniform(cfg.length_factor_min, cfg.length_factor_max)
            out_len = max(2, int(round(template.shape[0] * factor)))
            positions = _warp_positions(rng, out_len, template.shape[0], cfg.warp_jitter)
            frames = _resample(template, positions)
            frames = frames * gains[speaker] + biases[speaker]
            frames = frames + rng.standard_normal(frames.shape) * np.sqrt(cfg.noise_var)
            uid = "type%02d_tok%03d_spk%d" % (v, i, speaker)
            entries.append(FeatureSequence(uid, frames))
            ref = SegmentRef(uid, 0, out_len)
            refs.append(ref)
            tokens.append(EvalToken(ref, "word%02d" % v, "spk%d" % speaker))
        refs_by_type.append(refs)

    pairs: list[PairEntry] = []
    for v in range(cfg.num_types):
        refs = refs_by_type[v]
        for _ in range(cfg.pairs_per_type):
            i, j = rng.choice(len(refs), size=2, replace=False)
            pairs.append(PairEntry(refs[int(i)], refs[int(j)]))
    return entries, pairs, tokens
