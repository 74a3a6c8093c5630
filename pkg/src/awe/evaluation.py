"""Same-different word discrimination: all-pairs scoring and average precision.

Every unordered pair of evaluation tokens is scored with a distance (cosine
between embeddings, or DTW alignment cost on the raw sequences); sweeping a
threshold over the scores yields a precision-recall curve whose area is the
average precision (AP). The sweep can only move at distinct distance values,
so tied pairs enter as a block: AP is the sum over threshold steps of
(recall increment) x (precision at the step), which reduces to standard
precision-at-positive-ranks AP when all distances are distinct and to the
positive-pair fraction when all distances are equal.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import models
from .baselines import DtwConfig, downsample_embed, dtw_cost
from .data_io import FeatureSequence, extract_segment, write_feature_archive

EVAL_MODES = ("model", "downsample", "dtw")


class EvaluationError(Exception):
    pass


@dataclass(frozen=True)
class ScoredPair:
    index_a: int
    index_b: int
    distance: float
    is_same_type: bool
    is_same_speaker: bool


@dataclass
class PrCurve:
    """Points of the threshold sweep, recall nondecreasing."""

    thresholds: np.ndarray
    recalls: np.ndarray
    precisions: np.ndarray
    ap: float


@dataclass
class EvalResult:
    ap: float
    curve: PrCurve
    num_tokens: int
    num_pairs: int
    num_positive: int
    ap_same_speaker: float | None = None
    ap_diff_speaker: float | None = None
    embed_seconds: float = 0.0
    score_seconds: float = 0.0
    details: dict = field(default_factory=dict)


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """1 - cos(u, v), in [0, 2]; a zero-norm input gives distance 1."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError("embedding shapes differ: %s vs %s" % (u.shape, v.shape))
    denom = np.linalg.norm(u) * np.linalg.norm(v)
    if denom == 0.0:
        return 1.0
    return float(1.0 - np.dot(u, v) / denom)


def _cosine_distance_matrix(embeddings: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(embeddings, axis=1)
    safe = np.where(norms == 0.0, 1.0, norms)
    unit = embeddings / safe[:, None]
    dist = 1.0 - unit @ unit.T
    zero = norms == 0.0
    if zero.any():
        dist[zero, :] = 1.0
        dist[:, zero] = 1.0
    return dist


def score_all_pairs(embeddings, tokens, distance_fn=None) -> list[ScoredPair]:
    """Score all n(n-1)/2 unordered token pairs.

    ``embeddings`` is an (n, M) array scored with cosine distance unless a
    ``distance_fn(i, j)`` is given (the DTW condition passes one that works
    on the raw sequences, with ``embeddings`` unused).
    """
    n = len(tokens)
    if distance_fn is None:
        embeddings = np.asarray(embeddings, dtype=np.float64)
        if embeddings.shape[0] != n:
            raise EvaluationError(
                "%d embeddings for %d tokens" % (embeddings.shape[0], n)
            )
        dist = _cosine_distance_matrix(embeddings)
    pairs = []
    for i in range(n):
        for j in range(i + 1, n):
            d = dist[i, j] if distance_fn is None else distance_fn(i, j)
            pairs.append(
                ScoredPair(
                    i, j, float(d),
                    tokens[i].word_type == tokens[j].word_type,
                    tokens[i].speaker == tokens[j].speaker,
                )
            )
    return pairs


def _ap_from_arrays(distances: np.ndarray, positive: np.ndarray):
    num_pos = int(positive.sum())
    if num_pos == 0:
        raise EvaluationError("no positive pairs: average precision is undefined")
    order = np.argsort(distances, kind="stable")
    d = distances[order]
    pos = positive[order].astype(np.float64)
    cum_tp = np.cumsum(pos)
    group_end = np.nonzero(np.append(d[1:] != d[:-1], True))[0]
    recalls = cum_tp[group_end] / num_pos
    precisions = cum_tp[group_end] / (group_end + 1.0)
    deltas = np.diff(np.concatenate([[0.0], recalls]))
    ap = float(np.sum(deltas * precisions))
    curve = PrCurve(d[group_end], recalls, precisions, ap)
    return ap, curve


def average_precision(pairs: list[ScoredPair]):
    """(ap, PrCurve) over scored pairs; raises when there is no positive."""
    if not pairs:
        raise EvaluationError("no pairs to evaluate")
    distances = np.array([p.distance for p in pairs], dtype=np.float64)
    if not np.isfinite(distances).all():
        raise EvaluationError("non-finite pair distance")
    positive = np.array([p.is_same_type for p in pairs], dtype=bool)
    return _ap_from_arrays(distances, positive)


def _speaker_breakdown(pairs):
    """AP restricted to same-speaker pairs and to cross-speaker pairs.

    Either value is None when that subset has no positive pair.
    """
    out = []
    for want_same in (True, False):
        subset = [p for p in pairs if p.is_same_speaker == want_same]
        try:
            ap, _ = average_precision(subset)
        except EvaluationError:
            ap = None
        out.append(ap)
    return tuple(out)


# ---------------------------------------------------------------------------
# All-pairs DTW with optional worker processes
# ---------------------------------------------------------------------------

_DTW_SEGMENTS: list | None = None
_DTW_CFG: DtwConfig | None = None


def _dtw_pool_init(segments, cfg):
    global _DTW_SEGMENTS, _DTW_CFG
    _DTW_SEGMENTS = segments
    _DTW_CFG = cfg


def _dtw_chunk(index_pairs):
    return [
        dtw_cost(_DTW_SEGMENTS[i], _DTW_SEGMENTS[j], _DTW_CFG)
        for i, j in index_pairs
    ]


def dtw_all_pairs(segments, cfg: DtwConfig, workers: int = 1) -> np.ndarray:
    """Condensed upper-triangle DTW distances for a list of (T, D) arrays."""
    index_pairs = [
        (i, j) for i in range(len(segments)) for j in range(i + 1, len(segments))
    ]
    if workers <= 1 or len(index_pairs) < 64:
        _dtw_pool_init(segments, cfg)
        return np.array(_dtw_chunk(index_pairs))
    chunk_size = (len(index_pairs) + workers * 8 - 1) // (workers * 8)
    chunks = [
        index_pairs[lo : lo + chunk_size]
        for lo in range(0, len(index_pairs), chunk_size)
    ]
    with ProcessPoolExecutor(
        max_workers=workers, initializer=_dtw_pool_init, initargs=(segments, cfg)
    ) as pool:
        results = list(pool.map(_dtw_chunk, chunks))
    return np.array([d for chunk in results for d in chunk])


# ---------------------------------------------------------------------------
# End-to-end evaluation
# ---------------------------------------------------------------------------

def same_different_eval(
    archive,
    tokens,
    mode: str,
    *,
    params=None,
    model_cfg: models.ModelConfig | None = None,
    downsample_k: int = 10,
    dtw_cfg: DtwConfig | None = None,
    workers: int = 1,
) -> EvalResult:
    """Run the full task: extract, embed (or align), score, sweep.

    mode "model" embeds with a trained encoder, "downsample" with frame
    subsampling, "dtw" skips embedding and scores raw segments by alignment
    cost. Speaker labels are carried through and reported as a same/different
    speaker AP breakdown next to the pooled AP.
    """
    if mode not in EVAL_MODES:
        raise ValueError("unknown evaluation mode: %s" % mode)
    if not tokens:
        raise EvaluationError("empty evaluation list")
    segments = [extract_segment(archive, tok.segment).frames for tok in tokens]

    t0 = time.perf_counter()
    embeddings = None
    if mode == "model":
        if params is None or model_cfg is None:
            raise ValueError("model evaluation needs params and model_cfg")
        embeddings = models.embed_batch(params, model_cfg, segments)
    elif mode == "downsample":
        embeddings = np.stack([downsample_embed(s, downsample_k) for s in segments])
    t1 = time.perf_counter()

    if mode == "dtw":
        condensed = dtw_all_pairs(segments, dtw_cfg or DtwConfig(), workers)
        pairs = []
        k = 0
        for i in range(len(tokens)):
            for j in range(i + 1, len(tokens)):
                pairs.append(
                    ScoredPair(
                        i, j, float(condensed[k]),
                        tokens[i].word_type == tokens[j].word_type,
                        tokens[i].speaker == tokens[j].speaker,
                    )
                )
                k += 1
    else:
        pairs = score_all_pairs(embeddings, tokens)
    ap, curve = average_precision(pairs)
    t2 = time.perf_counter()

    same_ap, diff_ap = _speaker_breakdown(pairs)
    return EvalResult(
        ap=ap,
        curve=curve,
        num_tokens=len(tokens),
        num_pairs=len(pairs),
        num_positive=sum(p.is_same_type for p in pairs),
        ap_same_speaker=same_ap,
        ap_diff_speaker=diff_ap,
        embed_seconds=t1 - t0,
        score_seconds=t2 - t1,
    )


def make_validation_fn(archive, tokens, model_cfg: models.ModelConfig):
    """Per-epoch validation hook: AP of the current parameters on a token set."""
    segments = [extract_segment(archive, tok.segment).frames for tok in tokens]
    labels = [tok.word_type for tok in tokens]
    n = len(tokens)
    positive = np.array(
        [labels[i] == labels[j] for i in range(n) for j in range(i + 1, n)],
        dtype=bool,
    )

    def val_fn(params) -> float:
        emb = models.embed_batch(params, model_cfg, segments)
        dist = _cosine_distance_matrix(emb)
        iu = np.triu_indices(n, k=1)
        ap, _ = _ap_from_arrays(dist[iu], positive)
        return ap

    return val_fn


def write_results_file(path, result: EvalResult, model_name: str,
                       config_hash: str, include_curve: bool = True) -> None:
    """Text report: header, AP lines, timing block, optional PR-curve TSV.

    Timing lines live in their own block so outputs can be compared for
    reproducibility with timing excluded.
    """
    def fmt(value):
        return "n/a" if value is None else "%.6f" % value

    with open(path, "w", encoding="utf-8") as f:
        f.write("model: %s\n" % model_name)
        f.write("config_hash: %s\n" % config_hash)
        f.write("tokens: %d\n" % result.num_tokens)
        f.write("pairs: %d\n" % result.num_pairs)
        f.write("positive_pairs: %d\n" % result.num_positive)
        f.write("AP %.6f\n" % result.ap)
        f.write("AP_same_speaker %s\n" % fmt(result.ap_same_speaker))
        f.write("AP_diff_speaker %s\n" % fmt(result.ap_diff_speaker))
        f.write("[timing]\n")
        f.write("embed_seconds %.6f\n" % result.embed_seconds)
        f.write("score_seconds %.6f\n" % result.score_seconds)
        if include_curve:
            f.write("[pr_curve]\n")
            f.write("threshold\tprecision\trecall\n")
            curve = result.curve
            for t, p, r in zip(curve.thresholds, curve.precisions, curve.recalls):
                f.write("%.8g\t%.8g\t%.8g\n" % (t, p, r))


def export_embeddings(path, tokens, embeddings: np.ndarray,
                      metadata: dict | None = None) -> None:
    """Write one 1 x M record per token, ids unique and order-preserving."""
    entries = []
    for i, tok in enumerate(tokens):
        uid = "%06d_%s_%d_%d" % (
            i, tok.segment.utterance_id, tok.segment.start, tok.segment.end
        )
        entries.append(FeatureSequence(uid, embeddings[i][None, :]))
    write_feature_archive(entries, path, metadata)
