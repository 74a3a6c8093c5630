"""Flat key=value configuration shared by all commands.

A config is a plain dict over the keys in DEFAULTS. Values come from the
defaults, then an optional config file ("key = value" lines, '#' comments),
then repeatable "--set key=value" overrides, in that order. Unknown keys are
hard errors. A short hash of the resolved config is embedded in every output
artifact so results can be traced back to their settings.
"""

from __future__ import annotations

import hashlib

from .baselines import DtwConfig
from .features import MfccConfig
from .models import ModelConfig, VaeConfig
from .synth import SynthConfig
from .training import TrainConfig


class ConfigError(Exception):
    pass


DEFAULTS: dict[str, object] = {
    # MFCC front end
    "mfcc.window_ms": 25.0,
    "mfcc.hop_ms": 10.0,
    "mfcc.fft_size": 512,
    "mfcc.mel_filters": 24,
    "mfcc.num_ceps": 13,
    "mfcc.pre_emphasis": 0.97,
    "mfcc.log_floor": 1e-10,
    "mfcc.cmvn": "none",  # none | utterance
    # Model architecture
    "model.input_dim": 13,
    "model.hidden_size": 400,
    "model.num_layers": 3,
    "model.embed_dim": 130,
    "vae.sigma": 1e-5,
    # Optimization
    "train.batch_size": 32,
    "train.max_epochs": 100,
    "train.learning_rate": 0.001,
    "train.beta1": 0.9,
    "train.beta2": 0.999,
    "train.eps": 1e-8,
    "train.clip_norm": 5.0,
    "train.early_stopping": False,
    "train.patience": 5,
    "train.pretrain_epochs": 15,
    "train.seed": 0,
    # Random training segments (ae/vae without an explicit segment list)
    "sample.count": 10000,
    "sample.min_frames": 20,
    "sample.max_frames": 100,
    # Pair list ingestion
    "pairs.units": "frames",  # frames | seconds (100 frames/s)
    "pairs.min_frames": 0,  # 0 disables the filter
    "pairs.max_frames": 0,
    # Validation set for early stopping / per-epoch AP
    "val.eval_list": "",
    "val.archive": "",
    # DTW scoring
    "dtw.distance": "cosine",
    "dtw.normalize": True,
    # Downsampling baseline
    "downsample.k": 10,
    # Synthetic corpus
    "synth.num_types": 20,
    "synth.tokens_per_type": 40,
    "synth.num_speakers": 5,
    "synth.dim": 13,
    "synth.template_min_frames": 20,
    "synth.template_max_frames": 36,
    "synth.template_scale": 1.0,
    "synth.knot_spacing": 4,
    "synth.pairs_per_type": 40,
    "synth.seed": 0,
}


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        lowered = raw.strip().lower()
        if lowered in ("true", "on", "yes", "1"):
            return True
        if lowered in ("false", "off", "no", "0"):
            return False
        raise ConfigError("key %s expects a boolean, got %r" % (key, raw))
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(
            "key %s expects %s, got %r" % (key, type(default).__name__, raw)
        ) from None
    return raw.strip()


def _apply(cfg: dict, key: str, raw: str, where: str) -> None:
    key = key.strip()
    if key not in DEFAULTS:
        raise ConfigError("unknown config key %r (%s)" % (key, where))
    cfg[key] = _coerce(key, raw)


def load_config(path=None, overrides=()) -> dict:
    """Resolve defaults -> file -> --set overrides into one dict."""
    cfg = dict(DEFAULTS)
    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                stripped = line.split("#", 1)[0].strip()
                if not stripped:
                    continue
                if "=" not in stripped:
                    raise ConfigError(
                        "%s line %d: expected key=value" % (path, lineno)
                    )
                key, _, value = stripped.partition("=")
                _apply(cfg, key, value, "%s line %d" % (path, lineno))
    for item in overrides:
        if "=" not in item:
            raise ConfigError("--set expects key=value, got %r" % item)
        key, _, value = item.partition("=")
        _apply(cfg, key, value, "--set")
    return cfg


def config_hash(cfg: dict) -> str:
    text = "".join("%s=%r\n" % (k, cfg[k]) for k in sorted(cfg))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def write_config(cfg: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for key in sorted(cfg):
            f.write("%s = %s\n" % (key, cfg[key]))


# ---------------------------------------------------------------------------
# Views onto the module-level config dataclasses
# ---------------------------------------------------------------------------

def mfcc_config(cfg: dict) -> MfccConfig:
    return MfccConfig(
        window_ms=cfg["mfcc.window_ms"],
        hop_ms=cfg["mfcc.hop_ms"],
        fft_size=cfg["mfcc.fft_size"],
        mel_filters=cfg["mfcc.mel_filters"],
        num_ceps=cfg["mfcc.num_ceps"],
        pre_emphasis=cfg["mfcc.pre_emphasis"],
        log_floor=cfg["mfcc.log_floor"],
    )


def model_config(cfg: dict, kind: str) -> ModelConfig:
    return ModelConfig(
        kind=kind,
        input_dim=cfg["model.input_dim"],
        hidden_size=cfg["model.hidden_size"],
        num_layers=cfg["model.num_layers"],
        embed_dim=cfg["model.embed_dim"],
    )


def vae_config(cfg: dict) -> VaeConfig:
    return VaeConfig(sigma=cfg["vae.sigma"])


def train_config(cfg: dict, seed: int | None = None) -> TrainConfig:
    return TrainConfig(
        batch_size=cfg["train.batch_size"],
        max_epochs=cfg["train.max_epochs"],
        learning_rate=cfg["train.learning_rate"],
        beta1=cfg["train.beta1"],
        beta2=cfg["train.beta2"],
        eps=cfg["train.eps"],
        clip_norm=cfg["train.clip_norm"],
        early_stopping=cfg["train.early_stopping"],
        patience=cfg["train.patience"],
        pretrain_epochs=cfg["train.pretrain_epochs"],
        seed=cfg["train.seed"] if seed is None else seed,
    )


def dtw_config(cfg: dict) -> DtwConfig:
    return DtwConfig(
        local_distance=cfg["dtw.distance"], normalize=cfg["dtw.normalize"]
    )


def synth_config(cfg: dict, seed: int | None = None) -> SynthConfig:
    return SynthConfig(
        num_types=cfg["synth.num_types"],
        tokens_per_type=cfg["synth.tokens_per_type"],
        num_speakers=cfg["synth.num_speakers"],
        dim=cfg["synth.dim"],
        template_min_frames=cfg["synth.template_min_frames"],
        template_max_frames=cfg["synth.template_max_frames"],
        template_scale=cfg["synth.template_scale"],
        knot_spacing=cfg["synth.knot_spacing"],
        pairs_per_type=cfg["synth.pairs_per_type"],
        seed=cfg["synth.seed"] if seed is None else seed,
    )
