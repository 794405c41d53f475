"""File formats: binary run datasets, spectrum CSV and JSON reports.

All writers go through a temporary file in the target directory followed by
``os.replace``, so readers never see a partially written file. File bodies
contain no timestamps; :func:`write_sidecar` puts those next to the file.
The byte layouts are documented in ``docs/formats.md``.
"""

from __future__ import annotations

import csv
import io as _io
import json
import os
import struct
import tempfile
import zlib
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DatasetFormatError
from .spectrum import Spectrum
from .synth import RunConfig, RunDataset

__all__ = [
    "DATASET_MAGIC",
    "DATASET_VERSION",
    "write_dataset",
    "read_dataset",
    "dataset_bytes",
    "write_spectrum_csv",
    "read_spectrum_csv",
    "write_spectrum_json",
    "read_spectrum_json",
    "write_json",
    "write_sidecar",
    "atomic_write",
]

DATASET_MAGIC = b"OSNDSET\x00"
DATASET_VERSION = 1
CSV_MAGIC = "# osnoise spectrum v1"
_U32 = struct.Struct("<I")


def atomic_write(path, data):
    """Write ``data`` (bytes or str) to ``path`` via temp file + rename."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def _dumps(obj):
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)


# ---------------------------------------------------------------- datasets


def _spectrum_record(name, s):
    return {
        "key": name,
        "name": s.name,
        "units": s.units,
        "dtype": "c16" if s.is_complex else "f8",
        "n_averages": s.n_averages,
    }


def dataset_bytes(ds):
    """Serialise a :class:`RunDataset` to the version-1 binary layout."""
    n_seg, n_bins = ds.n_segments, ds.freq.size
    truth = list(ds.truth.items())
    header = {
        "channels": list(ds.channels),
        "n_segments": n_seg,
        "n_bins": n_bins,
        "units": ds.units,
        "sample_rate_hz": ds.sample_rate,
        "segment_length": ds.segment_length,
        "window": ds.window,
        "seed": ds.seed,
        "config": None if ds.config is None else ds.config.to_dict(),
        "truth": [_spectrum_record(k, s) for k, s in truth],
        "meta": ds.meta,
    }
    hbytes = _dumps(header).encode("utf-8")
    parts = [DATASET_MAGIC, _U32.pack(DATASET_VERSION), _U32.pack(len(hbytes)), hbytes]
    parts.append(np.ascontiguousarray(ds.freq, dtype="<f8").tobytes())
    for ch in ds.channels:
        parts.append(np.ascontiguousarray(ds.segments[ch], dtype="<c16").tobytes())
    for _, s in truth:
        parts.append(np.ascontiguousarray(s.values, dtype="<c16" if s.is_complex else "<f8").tobytes())
    body = b"".join(parts)
    return body + _U32.pack(zlib.crc32(body) & 0xFFFFFFFF)


def write_dataset(path, ds):
    atomic_write(path, dataset_bytes(ds))


def _take(buf, pos, n, what):
    if pos + n > len(buf):
        raise DatasetFormatError(f"file truncated while reading {what}")
    return buf[pos:pos + n], pos + n


def read_dataset(path):
    """Read a dataset file, verifying magic, version, layout and CRC."""
    buf = Path(path).read_bytes()
    if len(buf) < len(DATASET_MAGIC) + 12:
        raise DatasetFormatError("file too short to be a dataset")
    if buf[: len(DATASET_MAGIC)] != DATASET_MAGIC:
        raise DatasetFormatError("bad magic bytes; not an osnoise dataset")
    body, (crc,) = buf[:-4], _U32.unpack(buf[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise DatasetFormatError("CRC mismatch; file is corrupt")
    pos = len(DATASET_MAGIC)
    (version,) = _U32.unpack_from(body, pos)
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}")
    (hlen,) = _U32.unpack_from(body, pos + 4)
    raw, pos = _take(body, pos + 8, hlen, "header")
    try:
        h = json.loads(raw.decode("utf-8"))
        n_seg, n_bins = int(h["n_segments"]), int(h["n_bins"])
        channels = list(h["channels"])
    except (ValueError, KeyError, TypeError) as exc:
        raise DatasetFormatError(f"unreadable header: {exc}") from None
    raw, pos = _take(body, pos, 8 * n_bins, "frequency grid")
    freq = np.frombuffer(raw, dtype="<f8").astype(float)
    segments = {}
    for ch in channels:
        raw, pos = _take(body, pos, 16 * n_seg * n_bins, f"channel {ch}")
        segments[ch] = np.frombuffer(raw, dtype="<c16").astype(complex).reshape(n_seg, n_bins)
    truth = {}
    for rec in h.get("truth", []):
        size = 16 if rec["dtype"] == "c16" else 8
        raw, pos = _take(body, pos, size * n_bins, f"truth {rec['key']}")
        vals = np.frombuffer(raw, dtype="<" + rec["dtype"]).copy()
        truth[rec["key"]] = Spectrum(
            freq, vals, units=rec["units"], n_averages=rec["n_averages"], name=rec["name"]
        )
    if pos != len(body):
        raise DatasetFormatError(f"{len(body) - pos} unexpected trailing bytes")
    try:
        config = None if h.get("config") is None else RunConfig.from_dict(h["config"])
        return RunDataset(
            freq=freq,
            segments=segments,
            units=h["units"],
            sample_rate=h.get("sample_rate_hz"),
            segment_length=h.get("segment_length"),
            window=h.get("window", "rectangular"),
            seed=h.get("seed"),
            config=config,
            truth=truth,
            meta=h.get("meta", {}),
        )
    except (ValueError, KeyError, TypeError) as exc:
        raise DatasetFormatError(f"inconsistent dataset contents: {exc}") from None


# ---------------------------------------------------------------- spectra


def _public_meta(meta):
    # keys starting with "_" hold in-memory bookkeeping and are not exported
    return {k: v for k, v in meta.items() if not str(k).startswith("_")}


def _complex(re, im):
    # re + 1j*im would turn an infinite imaginary part into a NaN real part
    out = np.empty(len(re), dtype=complex)
    out.real = re
    out.imag = im
    return out


def _fmt(x):
    return repr(float(x))


def spectrum_csv_text(spec):
    out = _io.StringIO()
    out.write(f"{CSV_MAGIC}\n")
    out.write(f"# name: {spec.name}\n")
    out.write(f"# units: {spec.units}\n")
    out.write(f"# n_averages: {spec.n_averages}\n")
    out.write(f"# complex: {'true' if spec.is_complex else 'false'}\n")
    out.write(f"# meta: {_dumps(_public_meta(spec.meta))}\n")
    cols = ["freq_hz", "value"]
    if spec.is_complex:
        cols.append("imag_value")
    cols += ["uncertainty", "mask_flags"]
    w = csv.writer(out, lineterminator="\n")
    w.writerow(cols)
    vals = spec.values
    unc = spec.uncertainty
    for i, f in enumerate(spec.freq):
        row = [_fmt(f), _fmt(vals[i].real)]
        if spec.is_complex:
            row.append(_fmt(vals[i].imag))
        row.append("" if unc is None else _fmt(unc[i]))
        row.append(str(int(spec.flags[i])))
        w.writerow(row)
    return out.getvalue()


def write_spectrum_csv(path, spec):
    atomic_write(path, spectrum_csv_text(spec))


def read_spectrum_csv(path):
    """Inverse of :func:`write_spectrum_csv`; the result is bit-identical."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != CSV_MAGIC:
        raise DatasetFormatError("missing spectrum CSV header line")
    head = {}
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        key, _, val = lines[i][1:].partition(":")
        head[key.strip()] = val.strip()
        i += 1
    try:
        rows = list(csv.reader(lines[i:]))
        cols = rows[0]
        data = rows[1:]
        idx = {c: j for j, c in enumerate(cols)}
        freq = np.array([float(r[idx["freq_hz"]]) for r in data])
        vals = np.array([float(r[idx["value"]]) for r in data])
        if head.get("complex") == "true":
            vals = _complex(vals, [float(r[idx["imag_value"]]) for r in data])
        unc_col = [r[idx["uncertainty"]] for r in data]
        unc = None if all(u == "" for u in unc_col) else np.array([float(u) for u in unc_col])
        flags = np.array([int(r[idx["mask_flags"]]) for r in data], dtype=np.uint8)
        return Spectrum(
            freq,
            vals,
            units=head["units"],
            n_averages=int(head.get("n_averages", 1)),
            uncertainty=unc,
            flags=flags,
            name=head.get("name", ""),
            meta=json.loads(head.get("meta", "{}")),
        )
    except (IndexError, KeyError, ValueError) as exc:
        raise DatasetFormatError(f"malformed spectrum CSV {path}: {exc}") from None


def spectrum_to_dict(spec):
    d = {
        "name": spec.name,
        "units": spec.units,
        "n_averages": spec.n_averages,
        "freq_hz": [float(f) for f in spec.freq],
        "value": [float(v) for v in np.real(spec.values)],
        "mask_flags": [int(x) for x in spec.flags],
        "meta": _public_meta(spec.meta),
    }
    if spec.is_complex:
        d["imag_value"] = [float(v) for v in np.imag(spec.values)]
    if spec.uncertainty is not None:
        d["uncertainty"] = [float(u) for u in spec.uncertainty]
    return d


def _floats(seq):
    return np.array([np.nan if v is None else v for v in seq], dtype=float)


def spectrum_from_dict(d):
    vals = _floats(d["value"])
    if "imag_value" in d:
        vals = _complex(vals, _floats(d["imag_value"]))
    unc = d.get("uncertainty")
    return Spectrum(
        np.array(d["freq_hz"], dtype=float),
        vals,
        units=d["units"],
        n_averages=d.get("n_averages", 1),
        uncertainty=None if unc is None else _floats(unc),
        flags=np.array(d["mask_flags"], dtype=np.uint8),
        name=d.get("name", ""),
        meta=d.get("meta", {}),
    )


def write_spectrum_json(path, spec):
    """JSON export. Non-finite numbers are written as null and read back as NaN."""
    atomic_write(path, _dumps(spectrum_to_dict(spec)) + "\n")


def read_spectrum_json(path):
    try:
        return spectrum_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except (KeyError, ValueError, TypeError) as exc:
        raise DatasetFormatError(f"malformed spectrum JSON {path}: {exc}") from None


# ---------------------------------------------------------------- reports


def write_json(path, obj):
    """Deterministic, pretty JSON; NaN/inf become null."""
    text = json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False)
    atomic_write(path, text + "\n")


def write_sidecar(path, **info):
    """Write ``<path>.meta.json`` with a creation timestamp and package version."""
    meta = {
        "file": Path(path).name,
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "osnoise_version": __version__,
    }
    meta.update(info)
    write_json(Path(str(path) + ".meta.json"), meta)
