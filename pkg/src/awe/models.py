"""Recurrent encoder-decoder models and their training losses.

Architecture
------------
A stack of unidirectional GRU layers reads a feature sequence; an affine
transform of the final top-layer hidden state gives the fixed-dimensional
embedding z (a second affine head gives a log-variance for the variational
model). The decoder is another GRU stack that receives z as its input at
every step (no teacher forcing, outputs never feed back), followed by an
affine projection to feature space.

Losses
------
reconstruction    sum_t ||x_t - f_t||^2 against the input itself,
correspondence    the same, but the target is the other segment of a pair,
variational       reconstruction scaled by 1/(2 sigma^2) plus the closed-form
                  KL to a standard Gaussian once per frame, with a single
                  reparameterized latent sample per sequence.

Batch losses average the per-sequence loss over the batch, with padded
frames masked out of both loss and gradients.

All forward math is built on the numerics graph, so the single-sequence
operations here and the batched training losses share one implementation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .data_io import (
    DataFormatError,
    format_metadata,
    parse_metadata,
    read_f32_matrix,
    read_str,
    read_u32,
    write_str,
    write_u32,
)

CHECKPOINT_MAGIC = b"AWEM"
CHECKPOINT_VERSION = 1

MODEL_KINDS = ("ae", "vae", "cae")

_GATE_FIELDS = ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h")


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "ae"
    input_dim: int = 13
    hidden_size: int = 400
    num_layers: int = 3
    embed_dim: int = 130

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError("unknown model kind: %s" % self.kind)

    @property
    def variational(self) -> bool:
        return self.kind == "vae"


@dataclass(frozen=True)
class VaeConfig:
    """Decoder output standard deviation; the latent prior is N(0, I)."""

    sigma: float = 1e-5

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


@dataclass
class GruLayerParams:
    """Input weights w_*, recurrent weights u_* and biases b_* of one layer."""

    w_z: np.ndarray
    u_z: np.ndarray
    b_z: np.ndarray
    w_r: np.ndarray
    u_r: np.ndarray
    b_r: np.ndarray
    w_h: np.ndarray
    u_h: np.ndarray
    b_h: np.ndarray


# ---------------------------------------------------------------------------
# Parameter initialization
# ---------------------------------------------------------------------------

def _glorot(rng, fan_in: int, fan_out: int) -> np.ndarray:
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=(fan_in, fan_out))


def _add_gru_layer(params, rng, prefix: str, input_dim: int, hidden: int) -> None:
    for gate in ("z", "r", "h"):
        params.add("%s.w_%s" % (prefix, gate), _glorot(rng, input_dim, hidden))
        params.add("%s.u_%s" % (prefix, gate), _glorot(rng, hidden, hidden))
        params.add("%s.b_%s" % (prefix, gate), np.zeros(hidden))


def init_params(cfg: ModelConfig, seed: int) -> nm.ParamCollection:
    """Uniform(-r, r) weights with r = sqrt(6 / (fan_in + fan_out)), zero biases."""
    rng = np.random.default_rng(seed)
    params = nm.ParamCollection()
    in_dim = cfg.input_dim
    for layer in range(cfg.num_layers):
        _add_gru_layer(params, rng, "enc%d" % layer, in_dim, cfg.hidden_size)
        in_dim = cfg.hidden_size
    params.add("embed.w", _glorot(rng, cfg.hidden_size, cfg.embed_dim))
    params.add("embed.b", np.zeros(cfg.embed_dim))
    if cfg.variational:
        params.add("logvar.w", _glorot(rng, cfg.hidden_size, cfg.embed_dim))
        params.add("logvar.b", np.zeros(cfg.embed_dim))
    in_dim = cfg.embed_dim
    for layer in range(cfg.num_layers):
        _add_gru_layer(params, rng, "dec%d" % layer, in_dim, cfg.hidden_size)
        in_dim = cfg.hidden_size
    params.add("out.w", _glorot(rng, cfg.hidden_size, cfg.input_dim))
    params.add("out.b", np.zeros(cfg.input_dim))
    return params


def layer_params(params, prefix: str) -> GruLayerParams:
    """View one GRU layer's arrays out of a flat collection."""
    return GruLayerParams(*(params["%s.%s" % (prefix, f)] for f in _GATE_FIELDS))


def _layer_vars(pvars: dict, prefix: str) -> GruLayerParams:
    return GruLayerParams(*(pvars["%s.%s" % (prefix, f)] for f in _GATE_FIELDS))


def _constant_layer_vars(layer: GruLayerParams) -> GruLayerParams:
    return GruLayerParams(
        *(nm.constant(getattr(layer, f), name=f) for f in _GATE_FIELDS)
    )


# ---------------------------------------------------------------------------
# Graph builders (shared by single-sequence ops and batched training losses)
# ---------------------------------------------------------------------------

def _gru_step_graph(layer: GruLayerParams, h: nm.Var, x: nm.Var) -> nm.Var:
    """h' = (1 - z) * h + z * tanh(W_h x + U_h (r * h) + b_h)."""
    z_gate = nm.sigmoid(nm.add(nm.affine(x, layer.w_z, layer.b_z), nm.matmul(h, layer.u_z)))
    r_gate = nm.sigmoid(nm.add(nm.affine(x, layer.w_r, layer.b_r), nm.matmul(h, layer.u_r)))
    cand = nm.tanh(
        nm.add(nm.affine(x, layer.w_h, layer.b_h), nm.matmul(nm.mul(r_gate, h), layer.u_h))
    )
    return nm.add(h, nm.mul(z_gate, nm.sub(cand, h)))


def _run_gru_stack(layers, xs, batch: int, hidden: int, mask: np.ndarray | None):
    """Run stacked GRU layers over a step list of (batch, dim) Vars.

    With a mask, a padded step leaves the hidden state of that row untouched,
    so the final state of every row equals its state at its true last frame.
    Returns the top layer's step outputs.
    """
    for layer in layers:
        h = nm.constant(np.zeros((batch, hidden)), name="h0")
        outputs = []
        for t, x in enumerate(xs):
            h_new = _gru_step_graph(layer, h, x)
            if mask is not None:
                keep = np.repeat(mask[:, t : t + 1], hidden, axis=1)
                h = nm.add(h, nm.mul_const(nm.sub(h_new, h), keep))
            else:
                h = h_new
            outputs.append(h)
        xs = outputs
    return xs


def _encoder_layers(pvars, cfg):
    return [_layer_vars(pvars, "enc%d" % i) for i in range(cfg.num_layers)]


def _decoder_layers(pvars, cfg):
    return [_layer_vars(pvars, "dec%d" % i) for i in range(cfg.num_layers)]


def encode_graph(pvars, cfg: ModelConfig, inputs: np.ndarray, mask: np.ndarray | None):
    """Embedding Var(s) for a padded (batch, T, D) input block.

    Returns z for plain models and (mu, log_var) for the variational one.
    """
    batch, t_max, _ = inputs.shape
    xs = [nm.constant(inputs[:, t, :], name="x[%d]" % t) for t in range(t_max)]
    hs = _run_gru_stack(_encoder_layers(pvars, cfg), xs, batch, cfg.hidden_size, mask)
    final = hs[-1]
    mu = nm.affine(final, pvars["embed.w"], pvars["embed.b"])
    if not cfg.variational:
        return mu
    log_var = nm.affine(final, pvars["logvar.w"], pvars["logvar.b"])
    return mu, log_var


def decode_graph(pvars, cfg: ModelConfig, z: nm.Var, t_out: int):
    """Decoder output Vars f_1..f_T, each (batch, D); input is z at every step."""
    batch = z.value.shape[0]
    xs = [z] * t_out
    hs = _run_gru_stack(_decoder_layers(pvars, cfg), xs, batch, cfg.hidden_size, None)
    return [nm.affine(h, pvars["out.w"], pvars["out.b"]) for h in hs]


def _reconstruction_sum(outputs, targets: np.ndarray, mask: np.ndarray | None) -> nm.Var:
    """sum over frames and dims of the (masked) squared error."""
    dim = targets.shape[2]
    total = None
    for t, f_t in enumerate(outputs):
        residual = nm.sub(f_t, nm.constant(targets[:, t, :], name="target[%d]" % t))
        if mask is not None:
            keep = np.repeat(mask[:, t : t + 1], dim, axis=1)
            residual = nm.mul_const(residual, keep)
        term = nm.sum_sq(residual)
        total = term if total is None else nm.add(total, term)
    return total


def recon_batch_loss(
    pvars,
    cfg: ModelConfig,
    inputs: np.ndarray,
    input_mask: np.ndarray | None,
    targets: np.ndarray,
    target_mask: np.ndarray | None,
) -> nm.Var:
    """Mean over the batch of per-sequence summed squared reconstruction error.

    The autoencoder case is targets == inputs; the correspondence case
    decodes for the target's length instead of the input's.
    """
    z = encode_graph(pvars, cfg, inputs, input_mask)
    outputs = decode_graph(pvars, cfg, z, targets.shape[1])
    total = _reconstruction_sum(outputs, targets, target_mask)
    return nm.scale(total, 1.0 / inputs.shape[0])


def vae_batch_loss(
    pvars,
    cfg: ModelConfig,
    vae_cfg: VaeConfig,
    inputs: np.ndarray,
    input_mask: np.ndarray | None,
    noise: np.ndarray,
) -> nm.Var:
    """Mean over the batch of the negated per-sequence lower bound.

    Per sequence: (1 / 2 sigma^2) * sum_t ||x_t - f_t(z')||^2 + T * KL,
    the KL term entering once per frame. ``noise`` is one standard-normal
    row per sequence (the single latent sample).
    """
    batch, t_max, _ = inputs.shape
    mu, log_var = encode_graph(pvars, cfg, inputs, input_mask)
    z = nm.gaussian_sample(mu, log_var, noise)
    outputs = decode_graph(pvars, cfg, z, t_max)
    recon = _reconstruction_sum(outputs, inputs, input_mask)
    recon = nm.scale(recon, 1.0 / (2.0 * vae_cfg.sigma**2))
    # KL_b = 0.5 * sum_i (mu^2 + exp(lv) - lv - 1); weight row b by its T_b.
    kl_elems = nm.add_const(
        nm.sub(nm.add(nm.mul(mu, mu), nm.exp(log_var)), log_var), -1.0
    )
    if input_mask is None:
        t_true = np.full(batch, t_max, dtype=np.float64)
    else:
        t_true = input_mask.sum(axis=1)
    weights = np.repeat(0.5 * t_true[:, None], cfg.embed_dim, axis=1)
    kl_total = nm.weighted_sum(kl_elems, weights)
    return nm.scale(nm.add(recon, kl_total), 1.0 / batch)


# ---------------------------------------------------------------------------
# Single-sequence operations
# ---------------------------------------------------------------------------

def _as_block(frames: np.ndarray) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise nm.ShapeError("expected a (T, D) feature matrix, got %s" % (frames.shape,))
    return frames[None, :, :]


def gru_step(layer: GruLayerParams, h_prev: np.ndarray, x: np.ndarray) -> np.ndarray:
    """One GRU update h_prev -> h for vectors h_prev (H,) and x (I,)."""
    lv = _constant_layer_vars(layer)
    h = nm.constant(np.asarray(h_prev, dtype=np.float64)[None, :], name="h_prev")
    xv = nm.constant(np.asarray(x, dtype=np.float64)[None, :], name="x")
    return _gru_step_graph(lv, h, xv).value[0]


def _pvars_const(params) -> dict:
    return {name: nm.constant(arr, name=name) for name, arr in params.items()}


def encode(params, cfg: ModelConfig, frames: np.ndarray) -> np.ndarray:
    """Deterministic embedding of one (T, D) segment."""
    pvars = _pvars_const(params)
    if cfg.variational:
        mu, _ = encode_graph(pvars, cfg, _as_block(frames), None)
        return mu.value[0]
    return encode_graph(pvars, cfg, _as_block(frames), None).value[0]


def encode_variational(params, cfg: ModelConfig, frames: np.ndarray):
    """(mu, log_var) heads for one segment."""
    if not cfg.variational:
        raise ValueError("encode_variational requires a vae model")
    mu, log_var = encode_graph(_pvars_const(params), cfg, _as_block(frames), None)
    return mu.value[0], log_var.value[0]


def reparameterize(mu: np.ndarray, log_var: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """mu + exp(log_var / 2) * noise for externally supplied N(0, I) noise."""
    mu = np.asarray(mu, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if mu.shape != log_var.shape or mu.shape != noise.shape:
        raise nm.ShapeError(
            "reparameterize: shapes %s, %s, %s differ"
            % (mu.shape, log_var.shape, noise.shape)
        )
    return mu + np.exp(0.5 * log_var) * noise


def decode(params, cfg: ModelConfig, z: np.ndarray, t_out: int) -> np.ndarray:
    """Decode t_out frames from an embedding vector."""
    if t_out < 1:
        raise ValueError("t_out must be >= 1")
    pvars = _pvars_const(params)
    zv = nm.constant(np.asarray(z, dtype=np.float64)[None, :], name="z")
    outputs = decode_graph(pvars, cfg, zv, t_out)
    return np.stack([f.value[0] for f in outputs])


def ae_loss(params, cfg: ModelConfig, frames: np.ndarray) -> float:
    """sum_t ||x_t - f_t(X)||^2 for one segment."""
    return cae_loss(params, cfg, frames, frames)


def cae_loss(params, cfg: ModelConfig, frames_in: np.ndarray, frames_out: np.ndarray) -> float:
    """Encode one segment, decode for the other's length, squared error."""
    pvars = _pvars_const(params)
    loss = recon_batch_loss(
        pvars, cfg, _as_block(frames_in), None, _as_block(frames_out), None
    )
    value = float(loss.value)
    if not np.isfinite(value):
        raise nm.NumericalDivergenceError("non-finite reconstruction loss")
    return value


def kl_diag_gaussian_to_standard(mu: np.ndarray, log_var: np.ndarray) -> float:
    """Closed-form KL(N(mu, diag(exp(log_var))) || N(0, I))."""
    mu = np.asarray(mu, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    if mu.shape != log_var.shape:
        raise nm.ShapeError("kl: shapes %s and %s differ" % (mu.shape, log_var.shape))
    return float(0.5 * np.sum(mu * mu + np.exp(log_var) - log_var - 1.0))


def vae_loss(
    params,
    cfg: ModelConfig,
    vae_cfg: VaeConfig,
    frames: np.ndarray,
    noise: np.ndarray,
) -> float:
    """Negated lower bound for one segment with an explicit latent noise draw."""
    pvars = _pvars_const(params)
    noise = np.asarray(noise, dtype=np.float64)[None, :]
    loss = vae_batch_loss(pvars, cfg, vae_cfg, _as_block(frames), None, noise)
    value = float(loss.value)
    if not np.isfinite(value):
        raise nm.NumericalDivergenceError("non-finite variational loss")
    return value


def embed(params, cfg: ModelConfig, frames: np.ndarray) -> np.ndarray:
    """Test-time embedding: the mean head for the variational model, the
    plain encoder output otherwise. No sampling, no state."""
    return encode(params, cfg, frames)


def embed_batch(params, cfg: ModelConfig, segments, batch_size: int = 256) -> np.ndarray:
    """Embeddings for a list of (T, D) segments, padded and masked per batch.

    Same contract as calling ``embed`` per segment, vectorized for
    evaluation-time throughput.
    """
    pvars = _pvars_const(params)
    rows = []
    for lo in range(0, len(segments), batch_size):
        chunk = [np.asarray(s, dtype=np.float64) for s in segments[lo : lo + batch_size]]
        t_max = max(s.shape[0] for s in chunk)
        block = np.zeros((len(chunk), t_max, cfg.input_dim))
        mask = np.zeros((len(chunk), t_max))
        for i, s in enumerate(chunk):
            block[i, : s.shape[0]] = s
            mask[i, : s.shape[0]] = 1.0
        out = encode_graph(pvars, cfg, block, mask)
        if cfg.variational:
            out = out[0]
        rows.append(out.value)
    return np.concatenate(rows, axis=0)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, params, cfg: ModelConfig, metadata: dict | None = None) -> None:
    """Binary container of named float32 parameter arrays plus a text
    metadata block recording the architecture."""
    meta = dict(metadata or {})
    meta.update(
        kind=cfg.kind,
        input_dim=cfg.input_dim,
        hidden_size=cfg.hidden_size,
        num_layers=cfg.num_layers,
        embed_dim=cfg.embed_dim,
    )
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        write_u32(f, CHECKPOINT_VERSION)
        write_str(f, format_metadata(meta))
        write_u32(f, len(params))
        for name, arr in params.items():
            write_str(f, name)
            if arr.ndim == 1:
                write_u32(f, 1)
                write_u32(f, arr.shape[0])
            else:
                write_u32(f, 2)
                write_u32(f, arr.shape[0])
                write_u32(f, arr.shape[1])
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns (params, ModelConfig, metadata dict)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise DataFormatError("bad checkpoint magic %r in %s" % (magic, path))
        version = read_u32(f, "checkpoint version")
        if version != CHECKPOINT_VERSION:
            raise DataFormatError("unsupported checkpoint version %d" % version)
        meta = parse_metadata(read_str(f, "checkpoint metadata"))
        count = read_u32(f, "parameter count")
        params = nm.ParamCollection()
        for _ in range(count):
            name = read_str(f, "parameter name")
            ndim = read_u32(f, "parameter ndim")
            if ndim == 1:
                n = read_u32(f, "parameter length")
                params.add(name, read_f32_matrix(f, 1, n, name).reshape(n))
            elif ndim == 2:
                rows = read_u32(f, "parameter rows")
                cols = read_u32(f, "parameter cols")
                params.add(name, read_f32_matrix(f, rows, cols, name))
            else:
                raise DataFormatError("parameter %s has unsupported ndim %d" % (name, ndim))
    try:
        cfg = ModelConfig(
            kind=meta["kind"],
            input_dim=int(meta["input_dim"]),
            hidden_size=int(meta["hidden_size"]),
            num_layers=int(meta["num_layers"]),
            embed_dim=int(meta["embed_dim"]),
        )
    except KeyError as exc:
        raise DataFormatError("checkpoint metadata missing %s" % exc) from None
    return params, cfg, meta
