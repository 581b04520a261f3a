"""On-disk formats.

``TLF1`` binary envelope (little-endian)::

    offset  size  content
    0       4     magic b"TLF1"
    4       4     u32 num_samples
    8       8     f64 sample_rate
    16      16*N  interleaved (f64 re, f64 im) pairs

Real arrays (phase masks, tabulated filter phases) are stored in the same
layout with zero imaginary parts.  CSV export uses columns ``time_s,re,im``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .envelope import ComplexEnvelope, SignalGrid
from .propagation import CascadeDesign, PhaseMask, SpectralFilter, StagePlan

MAGIC = b"TLF1"
SCHEMA = "TLF-schema-1"
_HEADER = struct.Struct("<4sId")


class FormatError(ValueError):
    """A file does not match its declared format."""


def envelope_to_bytes(env: ComplexEnvelope) -> bytes:
    n = env.grid.num_samples
    body = np.empty(2 * n, dtype="<f8")
    body[0::2] = env.samples.real
    body[1::2] = env.samples.imag
    return _HEADER.pack(MAGIC, n, env.grid.sample_rate) + body.tobytes()


def envelope_from_bytes(data: bytes) -> ComplexEnvelope:
    if len(data) < _HEADER.size:
        raise FormatError("truncated TLF1 header")
    magic, n, fs = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    expected = _HEADER.size + 16 * n
    if len(data) != expected:
        raise FormatError(f"TLF1 payload is {len(data)} bytes, expected {expected}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    return ComplexEnvelope(SignalGrid(n, fs), body[0::2] + 1j * body[1::2])


def write_envelope(path, env: ComplexEnvelope) -> None:
    Path(path).write_bytes(envelope_to_bytes(env))


def read_envelope(path) -> ComplexEnvelope:
    return envelope_from_bytes(Path(path).read_bytes())


def write_real_array(path, grid: SignalGrid, values: np.ndarray) -> None:
    write_envelope(path, ComplexEnvelope(grid, np.asarray(values, dtype=float)))


def read_real_array(path) -> tuple[SignalGrid, np.ndarray]:
    env = read_envelope(path)
    if np.any(env.samples.imag != 0):
        raise FormatError(f"{path}: real array has nonzero imaginary parts")
    return env.grid, env.samples.real.copy()


def write_envelope_csv(path, env: ComplexEnvelope) -> None:
    t = env.grid.time_axis()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "re", "im"])
        for ti, s in zip(t, env.samples):
            w.writerow([repr(float(ti)), repr(float(s.real)), repr(float(s.imag))])


def read_envelope_csv(path, sample_rate: float | None = None) -> ComplexEnvelope:
    rows = list(csv.DictReader(open(path, newline="")))
    if not rows or set(rows[0]) != {"time_s", "re", "im"}:
        raise FormatError(f"{path}: expected columns time_s,re,im")
    t = np.array([float(r["time_s"]) for r in rows])
    x = np.array([float(r["re"]) + 1j * float(r["im"]) for r in rows])
    if sample_rate is None:
        if len(t) < 2:
            raise FormatError("cannot infer sample rate from fewer than 2 rows")
        sample_rate = 1.0 / (t[1] - t[0])
    return ComplexEnvelope(SignalGrid(len(x), sample_rate), x)


def write_complex_points_csv(path, points, header=("index", "re", "im")) -> None:
    """Symbol ground truth / constellation export."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, p in enumerate(np.asarray(points, dtype=complex)):
            row = [repr(float(p.real)), repr(float(p.imag))]
            w.writerow([i, *row] if header[0] == "index" else row)


def write_table_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def dump_json(obj) -> str:
    """Canonical JSON text: sorted keys, exact float repr, trailing newline."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dump_json(obj))


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def complex_matrix_to_json(m) -> list:
    m = np.asarray(m, dtype=complex)
    return [[[float(v.real), float(v.imag)] for v in row] for row in m]


def complex_matrix_from_json(rows) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in rows])


def save_design(directory, design: CascadeDesign, name: str = "design.json") -> Path:
    """Write ``design.json`` plus one TLF1 mask file per stage into ``directory``."""
    directory = Path(directory)
    (directory / "masks").mkdir(parents=True, exist_ok=True)
    stages = []
    for k, st in enumerate(design.stages, start=1):
        mask_file = f"masks/stage_{k:02d}.tlf"
        write_real_array(directory / mask_file, design.grid, st.mask.phase)
        filt = st.filter.to_dict()
        if st.filter.kind == "tabulated":
            table_file = f"masks/filter_{k:02d}.tlf"
            write_real_array(directory / table_file, design.grid, st.filter.phase_table)
            filt["phase_table_file"] = table_file
        stages.append({"mask_file": mask_file, "filter": filt})
    doc = {
        "schema": SCHEMA,
        "grid": design.grid.to_dict(),
        "channel_offsets_hz": list(design.channel_offsets_hz),
        "trailing_filter": design.trailing_filter,
        "stages": stages,
    }
    path = directory / name
    write_json(path, doc)
    return path


def load_design(path) -> CascadeDesign:
    path = Path(path)
    doc = read_json(path)
    if doc.get("schema") != SCHEMA:
        raise FormatError(f"{path}: unsupported schema {doc.get('schema')!r}")
    try:
        grid = SignalGrid.from_dict(doc["grid"])
        stages = []
        for st in doc["stages"]:
            mgrid, phase = read_real_array(path.parent / st["mask_file"])
            if mgrid.num_samples != grid.num_samples or mgrid.sample_rate != grid.sample_rate:
                raise FormatError(f"{st['mask_file']}: grid does not match design grid")
            f = dict(st["filter"])
            table_file = f.pop("phase_table_file", None)
            if table_file is not None:
                f["phase_table"] = read_real_array(path.parent / table_file)[1]
            stages.append(StagePlan(PhaseMask(grid, phase), SpectralFilter(**f)))
        return CascadeDesign(grid, tuple(stages), tuple(doc["channel_offsets_hz"]),
                             bool(doc.get("trailing_filter", True)))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed design document ({exc})") from exc
