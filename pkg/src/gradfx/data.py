"""Dataset ingestion: mono WAV files, JSON manifests, segmentation.

WAV support is deliberately narrow: RIFF, mono, PCM 16/24-bit or IEEE
float32. Everything is normalized to [-1, 1] on load. Controls live in
the manifest already normalized to [0, 1]; what they mean physically is
the model's business.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np


# -- WAV ---------------------------------------------------------------------

_FMT_PCM = 1
_FMT_FLOAT = 3
_FMT_EXTENSIBLE = 0xFFFE


def _walk_chunks(buf: bytes):
    if len(buf) < 12 or buf[:4] != b"RIFF" or buf[8:12] != b"WAVE":
        raise ValueError("not a RIFF/WAVE file")
    pos = 12
    while pos + 8 <= len(buf):
        cid, size = struct.unpack_from("<4sI", buf, pos)
        body = buf[pos + 8:pos + 8 + size]
        yield cid, body
        pos += 8 + size + (size & 1)  # chunks are word-aligned


def _parse_fmt(body: bytes):
    if len(body) < 16:
        raise ValueError("fmt chunk too short")
    fmt, channels, fs, _rate, _align, bits = struct.unpack_from("<HHIIHH", body, 0)
    if fmt == _FMT_EXTENSIBLE and len(body) >= 26:
        fmt = struct.unpack_from("<H", body, 24)[0]
    return fmt, channels, fs, bits


def _decode(data: bytes, fmt: int, bits: int) -> np.ndarray:
    if fmt == _FMT_FLOAT and bits == 32:
        return np.frombuffer(data, dtype="<f4").copy()
    if fmt == _FMT_PCM and bits == 16:
        raw = np.frombuffer(data, dtype="<i2")
        return (raw.astype(np.float32) / 32768.0)
    if fmt == _FMT_PCM and bits == 24:
        b = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3)
        val = (b[:, 0].astype(np.int32)
               | (b[:, 1].astype(np.int32) << 8)
               | (b[:, 2].astype(np.int32) << 16))
        val = np.where(val & 0x800000, val - 0x1000000, val)
        return (val.astype(np.float32) / 8388608.0)
    raise ValueError(f"unsupported WAV encoding: format {fmt}, {bits}-bit")


def load_wav(path) -> tuple[np.ndarray, int]:
    """Mono WAV -> (float32 samples in [-1, 1], sample rate)."""
    with open(path, "rb") as f:
        buf = f.read()
    fmt = None
    data = None
    for cid, body in _walk_chunks(buf):
        if cid == b"fmt ":
            fmt = _parse_fmt(body)
        elif cid == b"data":
            data = body
    if fmt is None or data is None:
        raise ValueError(f"{path}: missing fmt or data chunk")
    kind, channels, fs, bits = fmt
    if channels != 1:
        raise ValueError(f"{path}: {channels} channels, only mono is supported")
    return _decode(data, kind, bits), fs


def wav_info(path) -> tuple[int, int]:
    """(sample_rate, num_samples) without decoding the payload."""
    with open(path, "rb") as f:
        buf = f.read()
    fmt = None
    data_len = None
    for cid, body in _walk_chunks(buf):
        if cid == b"fmt ":
            fmt = _parse_fmt(body)
        elif cid == b"data":
            data_len = len(body)
    if fmt is None or data_len is None:
        raise ValueError(f"{path}: missing fmt or data chunk")
    kind, channels, fs, bits = fmt
    if channels != 1:
        raise ValueError(f"{path}: {channels} channels, only mono is supported")
    return fs, data_len // (bits // 8)


def save_wav(path, samples, fs: int, bitdepth="float32") -> None:
    """Write mono WAV. bitdepth: 16, 24, or "float32" (bit-exact reload)."""
    samples = np.asarray(samples)
    if samples.ndim != 1:
        raise ValueError("save_wav writes mono 1-D signals")
    if bitdepth == "float32":
        payload = samples.astype("<f4").tobytes()
        fmt, bits = _FMT_FLOAT, 32
    elif bitdepth == 16:
        q = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
        payload = q.tobytes()
        fmt, bits = _FMT_PCM, 16
    elif bitdepth == 24:
        q = np.clip(np.round(samples * 8388608.0), -8388608, 8388607).astype(np.int32)
        b = np.empty((len(q), 3), dtype=np.uint8)
        b[:, 0] = q & 0xFF
        b[:, 1] = (q >> 8) & 0xFF
        b[:, 2] = (q >> 16) & 0xFF
        payload = b.tobytes()
        fmt, bits = _FMT_PCM, 24
    else:
        raise ValueError(f"unsupported bitdepth {bitdepth!r}")
    block = bits // 8
    header = struct.pack("<4sI4s", b"RIFF", 36 + len(payload), b"WAVE")
    fmt_chunk = struct.pack("<4sIHHIIHH", b"fmt ", 16, fmt, 1, fs,
                            fs * block, block, bits)
    data_hdr = struct.pack("<4sI", b"data", len(payload))
    with open(path, "wb") as f:
        f.write(header + fmt_chunk + data_hdr + payload)
        if len(payload) & 1:
            f.write(b"\x00")


# -- manifests ---------------------------------------------------------------

class ManifestEntry:
    def __init__(self, input_path: str, target_path: str, controls):
        self.input_path = input_path
        self.target_path = target_path
        self.controls = np.asarray(controls, dtype=np.float32)


class RunManifest:
    """Paired audio files plus normalized control settings."""

    def __init__(self, entries, sample_rate: int):
        if not entries:
            raise ValueError("manifest has no entries")
        self.entries = list(entries)
        self.sample_rate = int(sample_rate)
        arity = {len(e.controls) for e in self.entries}
        if len(arity) != 1:
            raise ValueError(f"entries disagree on controls arity: {sorted(arity)}")
        self.num_controls = arity.pop()

    def __len__(self):
        return len(self.entries)


def load_manifest(path) -> RunManifest:
    """Parse and validate a manifest; relative paths resolve next to it."""
    with open(path) as f:
        doc = json.load(f)
    if "sample_rate" not in doc or "entries" not in doc:
        raise ValueError("manifest needs sample_rate and entries")
    root = os.path.dirname(os.path.abspath(path))
    entries = []
    for i, e in enumerate(doc["entries"]):
        controls = e.get("controls", [])
        if any(not (0.0 <= float(v) <= 1.0) for v in controls):
            raise ValueError(f"entry {i}: controls must lie in [0, 1]")
        pair = []
        for key in ("input", "target"):
            if key not in e:
                raise ValueError(f"entry {i}: missing {key!r}")
            p = e[key]
            if not os.path.isabs(p):
                p = os.path.join(root, p)
            if not os.path.exists(p):
                raise FileNotFoundError(f"entry {i}: {p} does not exist")
            fs, _ = wav_info(p)
            if fs != int(doc["sample_rate"]):
                raise ValueError(f"entry {i}: {p} is {fs} Hz, manifest says "
                                 f"{doc['sample_rate']}")
            pair.append(p)
        entries.append(ManifestEntry(pair[0], pair[1], controls))
    return RunManifest(entries, doc["sample_rate"])


# -- segmentation ------------------------------------------------------------

class Segment:
    """One training example: aligned (x, y) windows plus the control vector."""

    def __init__(self, x, y, controls, entry_index: int, offset: int):
        if len(x) != len(y):
            raise ValueError("segment input/target lengths differ")
        self.x = x
        self.y = y
        self.controls = controls
        self.entry_index = entry_index
        self.offset = offset


def split_entries(n: int, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Entry indices per split; disjoint, deterministic under the seed."""
    if abs(sum(fractions) - 1.0) > 1e-9 or len(fractions) != 3:
        raise ValueError("need (train, val, test) fractions summing to 1")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return (order[:n_train].tolist(),
            order[n_train:n_train + n_val].tolist(),
            order[n_train + n_val:].tolist())


def segment(manifest: RunManifest, seg_len: int = 48000,
            hop: int | None = None, fractions=(0.8, 0.1, 0.1),
            seed: int = 0) -> dict:
    """Cut every entry into aligned windows; split train/val/test by entry.

    Splitting is at the file level on purpose: windows of one recording
    are strongly correlated, so sharing a file across splits would leak.
    """
    hop = seg_len if hop is None else hop
    if hop < 1 or seg_len < 1:
        raise ValueError("seg_len and hop must be positive")
    tr, va, te = split_entries(len(manifest), fractions, seed)
    out = {"train": [], "val": [], "test": []}
    for name, indices in (("train", tr), ("val", va), ("test", te)):
        for idx in sorted(indices):
            e = manifest.entries[idx]
            x, _ = load_wav(e.input_path)
            y, _ = load_wav(e.target_path)
            if len(x) != len(y):
                raise ValueError(f"entry {idx}: input and target lengths differ "
                                 f"({len(x)} vs {len(y)})")
            if len(x) < seg_len:
                raise ValueError(f"entry {idx}: file shorter than seg_len "
                                 f"({len(x)} < {seg_len})")
            for off in range(0, len(x) - seg_len + 1, hop):
                out[name].append(Segment(x[off:off + seg_len],
                                         y[off:off + seg_len],
                                         e.controls, idx, off))
    return out
