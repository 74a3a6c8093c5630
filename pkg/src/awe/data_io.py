"""Feature archives, pair lists, evaluation lists, and segment sampling.

The on-disk feature archive format ("AWEF") is little-endian binary:

    magic "AWEF" | u32 version=1 | u32 record_count
    per record: u32 id_len | UTF-8 id | u32 T | u32 D | T*D float32, row-major

After the last record the file may carry an optional metadata trailer
(magic "META" | u32 len | UTF-8 key=value lines); writers use it to embed
the resolved-config hash, readers that only want features can stop after
``record_count`` records.

Frame values are stored as 32-bit floats; everything is returned as float64
in memory. All loading is strict: bad magic, truncated records and
non-finite values are rejected up front instead of surfacing mid-training.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

ARCHIVE_MAGIC = b"AWEF"
ARCHIVE_VERSION = 1
META_MAGIC = b"META"

FRAMES_PER_SECOND = 100  # 10 ms hop


class DataFormatError(Exception):
    """Malformed archive or list file."""


@dataclass
class FeatureSequence:
    """A T x D matrix of frame-level feature vectors for one utterance."""

    utterance_id: str
    frames: np.ndarray

    def __post_init__(self):
        self.frames = np.atleast_2d(np.asarray(self.frames, dtype=np.float64))

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class SegmentRef:
    """Half-open frame range [start, end) within an utterance."""

    utterance_id: str
    start: int
    end: int


@dataclass(frozen=True)
class PairEntry:
    a: SegmentRef
    b: SegmentRef


@dataclass(frozen=True)
class EvalToken:
    segment: SegmentRef
    word_type: str
    speaker: str


# ---------------------------------------------------------------------------
# Binary helpers (shared with the checkpoint container in models.py)
# ---------------------------------------------------------------------------

def write_u32(f, value: int) -> None:
    f.write(struct.pack("<I", value))


def read_u32(f, what: str) -> int:
    raw = f.read(4)
    if len(raw) != 4:
        raise DataFormatError("truncated file while reading %s" % what)
    return struct.unpack("<I", raw)[0]


def write_str(f, text: str) -> None:
    raw = text.encode("utf-8")
    write_u32(f, len(raw))
    f.write(raw)


def read_str(f, what: str) -> str:
    n = read_u32(f, what + " length")
    raw = f.read(n)
    if len(raw) != n:
        raise DataFormatError("truncated file while reading %s" % what)
    return raw.decode("utf-8")


def read_f32_matrix(f, rows: int, cols: int, what: str) -> np.ndarray:
    count = rows * cols
    raw = f.read(4 * count)
    if len(raw) != 4 * count:
        raise DataFormatError("truncated record while reading %s" % what)
    flat = np.frombuffer(raw, dtype="<f4", count=count)
    return flat.astype(np.float64).reshape(rows, cols)


def format_metadata(metadata: dict) -> str:
    return "".join("%s=%s\n" % (k, metadata[k]) for k in sorted(metadata))


def parse_metadata(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        out[key] = value
    return out


# ---------------------------------------------------------------------------
# Feature archives
# ---------------------------------------------------------------------------

def write_feature_archive(entries, path, metadata: dict | None = None) -> None:
    """Write FeatureSequence entries to an AWEF archive.

    All entries must share the feature dimension and have unique utterance
    ids. Values are cast to float32, so the write->read round trip is exact
    for float32-representable input.
    """
    entries = list(entries)
    seen = set()
    dim = None
    for entry in entries:
        if entry.utterance_id in seen:
            raise DataFormatError("duplicate utterance id: %s" % entry.utterance_id)
        seen.add(entry.utterance_id)
        if dim is None:
            dim = entry.dim
        elif entry.dim != dim:
            raise DataFormatError(
                "inconsistent feature dimension: %s has D=%d, expected %d"
                % (entry.utterance_id, entry.dim, dim)
            )
        if not np.isfinite(entry.frames).all():
            raise DataFormatError(
                "non-finite values in utterance %s" % entry.utterance_id
            )
    with open(path, "wb") as f:
        f.write(ARCHIVE_MAGIC)
        write_u32(f, ARCHIVE_VERSION)
        write_u32(f, len(entries))
        for entry in entries:
            write_str(f, entry.utterance_id)
            t, d = entry.frames.shape
            write_u32(f, t)
            write_u32(f, d)
            f.write(np.ascontiguousarray(entry.frames, dtype="<f4").tobytes())
        if metadata:
            f.write(META_MAGIC)
            write_str(f, format_metadata(metadata))


def read_feature_archive(path) -> dict[str, FeatureSequence]:
    """Read an AWEF archive into an ordered {utterance_id: FeatureSequence} map."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != ARCHIVE_MAGIC:
            raise DataFormatError("bad magic %r in %s" % (magic, path))
        version = read_u32(f, "version")
        if version != ARCHIVE_VERSION:
            raise DataFormatError("unsupported archive version %d" % version)
        count = read_u32(f, "record count")
        archive: dict[str, FeatureSequence] = {}
        dim = None
        for i in range(count):
            utt_id = read_str(f, "record %d id" % i)
            if utt_id in archive:
                raise DataFormatError("duplicate utterance id: %s" % utt_id)
            t = read_u32(f, "record %s frame count" % utt_id)
            d = read_u32(f, "record %s dimension" % utt_id)
            if t < 1 or d < 1:
                raise DataFormatError("empty record %s (T=%d, D=%d)" % (utt_id, t, d))
            if dim is None:
                dim = d
            elif d != dim:
                raise DataFormatError(
                    "inconsistent feature dimension in %s: D=%d, expected %d"
                    % (utt_id, d, dim)
                )
            frames = read_f32_matrix(f, t, d, "record %s frames" % utt_id)
            if not np.isfinite(frames).all():
                raise DataFormatError("non-finite values in utterance %s" % utt_id)
            archive[utt_id] = FeatureSequence(utt_id, frames)
    return archive


def read_archive_metadata(path) -> dict | None:
    """Return the metadata trailer of an archive, or None when absent."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != ARCHIVE_MAGIC:
            raise DataFormatError("bad magic %r in %s" % (magic, path))
        read_u32(f, "version")
        count = read_u32(f, "record count")
        for i in range(count):
            read_str(f, "record %d id" % i)
            t = read_u32(f, "frame count")
            d = read_u32(f, "dimension")
            f.seek(4 * t * d, 1)
        tail = f.read(4)
        if tail != META_MAGIC:
            return None
        return parse_metadata(read_str(f, "metadata"))


def extract_segment(archive: dict[str, FeatureSequence], ref: SegmentRef) -> FeatureSequence:
    """Rows [start, end) of the utterance the reference points into."""
    if ref.utterance_id not in archive:
        raise DataFormatError("unknown utterance: %s" % ref.utterance_id)
    frames = archive[ref.utterance_id].frames
    if not (0 <= ref.start < ref.end <= frames.shape[0]):
        raise DataFormatError(
            "segment [%d, %d) out of bounds for %s (T=%d)"
            % (ref.start, ref.end, ref.utterance_id, frames.shape[0])
        )
    return FeatureSequence(ref.utterance_id, frames[ref.start:ref.end])


def validate_refs(archive: dict[str, FeatureSequence], refs) -> None:
    for ref in refs:
        extract_segment(archive, ref)


# ---------------------------------------------------------------------------
# Pair / eval / segment list files
# ---------------------------------------------------------------------------

def _content_lines(path):
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.split("#", 1)[0].strip()
            if stripped:
                yield lineno, stripped


def _parse_bound(path, lineno, raw_start, raw_end, units):
    try:
        if units == "seconds":
            start = int(round(float(raw_start) * FRAMES_PER_SECOND))
            end = int(round(float(raw_end) * FRAMES_PER_SECOND))
        else:
            start = int(raw_start)
            end = int(raw_end)
    except ValueError:
        raise DataFormatError(
            "%s line %d: non-numeric segment bounds %r %r"
            % (path, lineno, raw_start, raw_end)
        ) from None
    if start < 0 or start >= end:
        raise DataFormatError(
            "%s line %d: invalid segment bounds start=%d end=%d"
            % (path, lineno, start, end)
        )
    return start, end


def load_pair_list(
    path,
    units: str = "frames",
    min_frames: int | None = None,
    max_frames: int | None = None,
) -> list[PairEntry]:
    """Parse "utt_a start_a end_a utt_b start_b end_b" lines into pairs.

    ``units="seconds"`` converts bounds at 100 frames/s for lists produced
    by external term-discovery tools. The optional duration filters drop
    pairs where either side falls outside [min_frames, max_frames]; no
    filtering is applied by default.
    """
    pairs = []
    for lineno, line in _content_lines(path):
        fields = line.split()
        if len(fields) != 6:
            raise DataFormatError(
                "%s line %d: expected 6 fields, got %d" % (path, lineno, len(fields))
            )
        start_a, end_a = _parse_bound(path, lineno, fields[1], fields[2], units)
        start_b, end_b = _parse_bound(path, lineno, fields[4], fields[5], units)
        pair = PairEntry(
            SegmentRef(fields[0], start_a, end_a),
            SegmentRef(fields[3], start_b, end_b),
        )
        lengths = (end_a - start_a, end_b - start_b)
        if min_frames is not None and min(lengths) < min_frames:
            continue
        if max_frames is not None and max(lengths) > max_frames:
            continue
        pairs.append(pair)
    return pairs


def load_eval_list(path) -> list[EvalToken]:
    """Parse "utt start end word_type speaker" lines. Duplicates are allowed."""
    tokens = []
    for lineno, line in _content_lines(path):
        fields = line.split()
        if len(fields) != 5:
            raise DataFormatError(
                "%s line %d: expected 5 fields, got %d" % (path, lineno, len(fields))
            )
        start, end = _parse_bound(path, lineno, fields[1], fields[2], "frames")
        if not fields[3]:
            raise DataFormatError("%s line %d: empty word type" % (path, lineno))
        tokens.append(EvalToken(SegmentRef(fields[0], start, end), fields[3], fields[4]))
    return tokens


def load_segment_list(path) -> list[SegmentRef]:
    """Parse segment lines; eval-list lines (5 fields) are accepted with the
    labels ignored."""
    refs = []
    for lineno, line in _content_lines(path):
        fields = line.split()
        if len(fields) not in (3, 5):
            raise DataFormatError(
                "%s line %d: expected 3 or 5 fields, got %d"
                % (path, lineno, len(fields))
            )
        start, end = _parse_bound(path, lineno, fields[1], fields[2], "frames")
        refs.append(SegmentRef(fields[0], start, end))
    return refs


def write_pair_list(pairs, path, header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as f:
        if header:
            f.write("# %s\n" % header)
        for pair in pairs:
            f.write(
                "%s %d %d %s %d %d\n"
                % (
                    pair.a.utterance_id, pair.a.start, pair.a.end,
                    pair.b.utterance_id, pair.b.start, pair.b.end,
                )
            )


def write_eval_list(tokens, path, header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as f:
        if header:
            f.write("# %s\n" % header)
        for tok in tokens:
            f.write(
                "%s %d %d %s %s\n"
                % (
                    tok.segment.utterance_id, tok.segment.start, tok.segment.end,
                    tok.word_type, tok.speaker,
                )
            )


# ---------------------------------------------------------------------------
# Random training segments
# ---------------------------------------------------------------------------

def sample_random_segments(
    archive: dict[str, FeatureSequence],
    count: int,
    min_frames: int,
    max_frames: int,
    seed: int,
) -> list[SegmentRef]:
    """Draw ``count`` random segment references from an archive.

    Utterances are picked with probability proportional to their frame
    count (so every frame of the corpus is equally likely to be covered),
    the segment length is uniform on [min_frames, min(max_frames, T)], and
    the start position is uniform over the valid range. Pure function of
    (archive, arguments, seed).
    """
    if not (1 <= min_frames <= max_frames):
        raise ValueError(
            "need 1 <= min_frames <= max_frames, got %d, %d" % (min_frames, max_frames)
        )
    eligible = [u for u in archive.values() if u.num_frames >= min_frames]
    if not eligible:
        raise DataFormatError(
            "no utterance has at least min_frames=%d frames" % min_frames
        )
    lengths = np.array([u.num_frames for u in eligible], dtype=np.float64)
    probs = lengths / lengths.sum()
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(eligible), size=count, p=probs)
    refs = []
    for idx in picks:
        utt = eligible[idx]
        top = min(max_frames, utt.num_frames)
        seg_len = int(rng.integers(min_frames, top + 1))
        start = int(rng.integers(0, utt.num_frames - seg_len + 1))
        refs.append(SegmentRef(utt.utterance_id, start, start + seg_len))
    return refs
