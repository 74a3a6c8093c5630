"""Adam optimization, variable-length batching, and the training schedules.

Training is deterministic end to end: batch order is a pure function of
(seed, epoch), latent noise for the variational model comes from a seeded
generator, and gradients are summed in a fixed order. Two runs with the same
data, config and seed produce bit-identical parameter trajectories.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import models, numerics as nm
from .data_io import extract_segment

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 100
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    early_stopping: bool = False
    patience: int = 5
    pretrain_epochs: int = 15
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.early_stopping and self.patience < 1:
            raise ValueError("patience must be >= 1 when early stopping is on")


@dataclass
class EpochRecord:
    phase: str  # "ae" | "vae" | "cae"
    epoch: int  # 1-based within the phase
    mean_loss: float
    val_ap: float | None = None


@dataclass
class RunReport:
    """Per-epoch history of a run, plus seed aggregates for multi-seed runs."""

    epochs: list[EpochRecord] = field(default_factory=list)
    final_ap: float | None = None
    best_epoch: int | None = None
    seed_aps: list[float] | None = None
    mean_ap: float | None = None
    std_ap: float | None = None

    def loss_curve(self) -> list[float]:
        return [rec.mean_loss for rec in self.epochs]


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: nm.ParamCollection
    v: nm.ParamCollection
    step: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: nm.ParamCollection, cfg: TrainConfig) -> AdamState:
    return AdamState(
        m=params.zeros_like(),
        v=params.zeros_like(),
        learning_rate=cfg.learning_rate,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.eps,
    )


def adam_step(state: AdamState, params: nm.ParamCollection, grads: nm.ParamCollection):
    """One bias-corrected Adam update, in place. Returns (params, state)."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise nm.NumericalDivergenceError(
                "non-finite gradient for parameter %s at step %d" % (name, t)
            )
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        params[name] -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def clip_gradients(grads: nm.ParamCollection, max_norm: float) -> float:
    """Scale gradients in place so the global norm is at most max_norm.

    Identity whenever the norm is already within the threshold. Returns the
    pre-clipping norm.
    """
    total = 0.0
    for _, g in grads.items():
        total += float((g * g).sum())
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for _, g in grads.items():
            g *= factor
    return norm


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    """Padded input block, with a parallel target block for pair items.

    ``mask`` is 1.0 on real frames and 0.0 on padding; masked frames
    contribute neither loss nor gradient.
    """

    inputs: np.ndarray  # (B, T_in_max, D)
    input_mask: np.ndarray  # (B, T_in_max)
    targets: np.ndarray | None = None  # (B, T_out_max, D) for pair batches
    target_mask: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


def pad_block(seqs: list[np.ndarray]):
    """Stack variable-length (T, D) arrays into (B, T_max, D) plus a mask."""
    batch = len(seqs)
    t_max = max(s.shape[0] for s in seqs)
    dim = seqs[0].shape[1]
    block = np.zeros((batch, t_max, dim), dtype=np.float64)
    mask = np.zeros((batch, t_max), dtype=np.float64)
    for i, s in enumerate(seqs):
        block[i, : s.shape[0]] = s
        mask[i, : s.shape[0]] = 1.0
    return block, mask


def make_batches(items: list, batch_size: int, seed: int, epoch: int) -> list[Batch]:
    """Deterministically shuffle items by (seed, epoch) and pad into batches.

    Items are either (T, D) arrays or (input, target) tuples of such arrays.
    """
    if not items:
        raise ValueError("no items to batch")
    order = np.random.default_rng([seed, epoch]).permutation(len(items))
    batches = []
    for lo in range(0, len(items), batch_size):
        chunk = [items[i] for i in order[lo : lo + batch_size]]
        if isinstance(chunk[0], tuple):
            ins, mask_in = pad_block([a for a, _ in chunk])
            outs, mask_out = pad_block([b for _, b in chunk])
            batches.append(Batch(ins, mask_in, outs, mask_out))
        else:
            ins, mask_in = pad_block(chunk)
            batches.append(Batch(ins, mask_in))
    return batches


# ---------------------------------------------------------------------------
# Early stopping
# ---------------------------------------------------------------------------

def early_stop_check(history: list[float], patience: int):
    """("continue" | "stop", best_epoch). Epochs are 1-based.

    Stops once the best value has not improved for ``patience`` consecutive
    epochs; ties count as no improvement.
    """
    if not history:
        raise ValueError("empty validation history")
    best_epoch = 1 + int(np.argmax(history))
    stalled = len(history) - best_epoch
    return ("stop" if stalled >= patience else "continue"), best_epoch


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------

def _segment_arrays(archive, segments) -> list[np.ndarray]:
    return [extract_segment(archive, ref).frames for ref in segments]


def _batch_loss_fn(batch: Batch, cfg: models.ModelConfig, kind: str,
                   vae_cfg: models.VaeConfig | None, noise: np.ndarray | None):
    if kind == "vae":
        def program(pvars, _inputs):
            return models.vae_batch_loss(
                pvars, cfg, vae_cfg, batch.inputs, batch.input_mask, noise
            )
    elif batch.targets is not None:
        def program(pvars, _inputs):
            return models.recon_batch_loss(
                pvars, cfg, batch.inputs, batch.input_mask,
                batch.targets, batch.target_mask,
            )
    else:
        def program(pvars, _inputs):
            return models.recon_batch_loss(
                pvars, cfg, batch.inputs, batch.input_mask,
                batch.inputs, batch.input_mask,
            )
    return program


def _run_epochs(
    items,
    params,
    model_cfg,
    train_cfg,
    kind,
    phase,
    report,
    vae_cfg=None,
    val_fn=None,
    max_epochs=None,
    noise_rng=None,
    allow_early_stop=True,
):
    """Shuffled minibatch Adam on one loss until max_epochs or early stop.

    Returns the parameters to keep: the best-epoch snapshot when early
    stopping is active (and a validation function is available), the final
    parameters otherwise.
    """
    adam = init_adam(params, train_cfg)
    epochs = train_cfg.max_epochs if max_epochs is None else max_epochs
    use_early = allow_early_stop and train_cfg.early_stopping and val_fn is not None
    history: list[float] = []
    best_params = None
    for epoch in range(1, epochs + 1):
        batches = make_batches(items, train_cfg.batch_size, train_cfg.seed, epoch)
        loss_total = 0.0
        for batch in batches:
            noise = None
            if kind == "vae":
                noise = noise_rng.standard_normal((batch.size, model_cfg.embed_dim))
            program = _batch_loss_fn(batch, model_cfg, kind, vae_cfg, noise)
            loss, grads = nm.forward_backward(program, params)
            clip_gradients(grads, train_cfg.clip_norm)
            adam_step(adam, params, grads)
            loss_total += loss * batch.size
        mean_loss = loss_total / len(items)
        val_ap = None
        if val_fn is not None:
            val_ap = float(val_fn(params))
        report.epochs.append(EpochRecord(phase, epoch, mean_loss, val_ap))
        logger.info("%s epoch %d: mean_loss=%.6g val_ap=%s", phase, epoch, mean_loss, val_ap)
        if use_early:
            history.append(val_ap)
            decision, best_epoch = early_stop_check(history, train_cfg.patience)
            if best_epoch == len(history):
                best_params = params.copy()
            if decision == "stop":
                report.best_epoch = best_epoch
                report.final_ap = history[best_epoch - 1]
                return best_params
    if use_early and history:
        best_epoch = 1 + int(np.argmax(history))
        report.best_epoch = best_epoch
        report.final_ap = history[best_epoch - 1]
        return best_params
    if val_fn is not None and report.epochs:
        report.final_ap = report.epochs[-1].val_ap
    return params


def train_ae(
    archive,
    segments,
    params: nm.ParamCollection,
    model_cfg: models.ModelConfig,
    train_cfg: TrainConfig,
    kind: str = "ae",
    vae_cfg: models.VaeConfig | None = None,
    val_fn=None,
):
    """Train the reconstruction or variational model on extracted segments.

    ``val_fn(params) -> AP`` enables per-epoch validation; with
    ``train_cfg.early_stopping`` it also selects the best-epoch parameters.
    Returns (params, RunReport).
    """
    if kind not in ("ae", "vae"):
        raise ValueError("train_ae handles kinds 'ae' and 'vae', got %r" % kind)
    if kind == "vae" and vae_cfg is None:
        vae_cfg = models.VaeConfig()
    items = _segment_arrays(archive, segments)
    report = RunReport()
    noise_rng = np.random.default_rng([train_cfg.seed, 0xA3])
    params = _run_epochs(
        items, params, model_cfg, train_cfg, kind, kind, report,
        vae_cfg=vae_cfg, val_fn=val_fn, noise_rng=noise_rng,
    )
    return params, report


def train_cae(
    archive,
    pairs,
    params: nm.ParamCollection,
    model_cfg: models.ModelConfig,
    train_cfg: TrainConfig,
    val_fn=None,
):
    """Correspondence training: reconstruction pretraining on the union of
    pair segments, then pair-reconstruction with each pair presented in both
    directions. ``pretrain_epochs=0`` skips the initialization phase.
    """
    report = RunReport()
    if train_cfg.pretrain_epochs > 0:
        seg_items = []
        for pair in pairs:
            seg_items.append(extract_segment(archive, pair.a).frames)
            seg_items.append(extract_segment(archive, pair.b).frames)
        # Pretraining is an initialization schedule: fixed length, no
        # checkpoint selection.
        params = _run_epochs(
            seg_items, params, model_cfg, train_cfg, "ae", "pretrain", report,
            val_fn=val_fn, max_epochs=train_cfg.pretrain_epochs,
            allow_early_stop=False,
        )
    pair_items = []
    for pair in pairs:
        a = extract_segment(archive, pair.a).frames
        b = extract_segment(archive, pair.b).frames
        pair_items.append((a, b))
        pair_items.append((b, a))
    params = _run_epochs(
        pair_items, params, model_cfg, train_cfg, "cae", "cae", report,
        val_fn=val_fn,
    )
    return params, report


def multi_seed_run(run_fn, seeds) -> RunReport:
    """Independent runs of ``run_fn(seed) -> final AP``; sample statistics
    over seeds, standard deviation reported only for two or more."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    aps = [float(run_fn(seed)) for seed in seeds]
    report = RunReport(seed_aps=aps, mean_ap=float(np.mean(aps)))
    if len(aps) >= 2:
        report.std_ap = float(np.std(aps, ddof=1))
    return report
