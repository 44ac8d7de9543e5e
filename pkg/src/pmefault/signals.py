"""Time records, spectra and frequency response functions.

Spectra are one-sided (``numpy.fft.rfft``) and unscaled; scaling cancels in the
response/force ratio. No window is applied.
"""

from __future__ import annotations

import csv
import gzip
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError

FORCE = "force"
ACCELERATION = "acceleration"
INERTANCE = "inertance"
RECEPTANCE = "receptance"

#: Bins whose force magnitude falls below this fraction of the peak are invalid.
FORCE_EPS = 1e-9

_GRID_RTOL = 1e-9


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeRecord:
    samples: np.ndarray
    sample_rate: float
    kind: str = FORCE

    def __post_init__(self):
        samples = _frozen(self.samples, float)
        if samples.ndim != 1 or samples.size == 0:
            raise DataError("time record must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(samples)):
            raise DataError("time record contains non-finite samples")
        if not self.sample_rate > 0:
            raise DataError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.kind not in (FORCE, ACCELERATION):
            raise DataError(f"unknown record kind {self.kind!r}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    def __len__(self):
        return self.samples.size

    @property
    def time(self):
        return np.arange(self.samples.size) / self.sample_rate


@dataclass(frozen=True)
class FRF:
    """Complex frequency response for excitation ``k`` and sensor ``l``.

    ``valid`` flags bins usable for integration; bins where the force spectrum
    vanished are ``False``.
    """

    excitation: int
    sensor: int
    grid: np.ndarray
    values: np.ndarray
    kind: str = INERTANCE
    valid: np.ndarray | None = field(default=None)

    def __post_init__(self):
        grid = _frozen(self.grid, float)
        values = _frozen(self.values, complex)
        if grid.ndim != 1 or grid.size < 2:
            raise DataError("FRF grid needs at least two points")
        if values.shape != grid.shape:
            raise DataError(f"FRF values length {values.size} != grid length {grid.size}")
        check_uniform_grid(grid)
        valid = np.ones(grid.size, bool) if self.valid is None else self.valid
        valid = _frozen(valid, bool)
        if valid.shape != grid.shape:
            raise DataError("FRF valid mask length does not match grid")
        if not np.all(np.isfinite(values[valid])):
            raise DataError("FRF contains non-finite values at valid bins")
        if self.kind not in (INERTANCE, RECEPTANCE):
            raise DataError(f"unknown FRF kind {self.kind!r}")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "excitation", int(self.excitation))
        object.__setattr__(self, "sensor", int(self.sensor))

    @property
    def spacing(self):
        return float(self.grid[1] - self.grid[0])

    @property
    def pair(self):
        return (self.excitation, self.sensor)

    def with_values(self, values, valid=None):
        return FRF(self.excitation, self.sensor, self.grid, values, self.kind,
                   self.valid if valid is None else valid)


def check_uniform_grid(grid):
    grid = np.asarray(grid, float)
    if not np.all(np.isfinite(grid)):
        raise DataError("frequency grid contains non-finite values")
    steps = np.diff(grid)
    if np.any(steps <= 0):
        raise DataError("frequency grid must be strictly increasing")
    if np.max(np.abs(steps - steps[0])) > _GRID_RTOL * max(abs(steps[0]), np.max(np.abs(grid))):
        raise DataError("frequency grid is not uniformly spaced")


def uniform_grid(lo_hz, hi_hz, spacing_hz):
    """Grid ``lo_hz + j*spacing_hz`` covering ``[lo_hz, hi_hz]``."""
    n = int(np.floor((hi_hz - lo_hz) / spacing_hz + 1e-9)) + 1
    return lo_hz + spacing_hz * np.arange(n)


def spectrum(record: TimeRecord):
    """One-sided DFT of ``record``.

    Returns ``(grid, values)`` with grid spacing ``sample_rate / len(record)``.
    """
    values = np.fft.rfft(record.samples)
    grid = np.arange(values.size) * (record.sample_rate / len(record))
    return grid, values


def compute_frf(force: TimeRecord, response: TimeRecord, excitation=0, sensor=0) -> FRF:
    """Inertance FRF as the ratio of response and force spectra."""
    return average_frf([(force, response)], excitation, sensor)


def average_frf(hits: Sequence[tuple], excitation=0, sensor=0) -> FRF:
    """FRF averaged over several (force, response) hits at one location.

    Uses the cross/auto spectrum ratio ``sum(R conj(F)) / sum(|F|^2)``, which
    reduces to ``R / F`` for a single hit.
    """
    if not hits:
        raise DataError("no hits to average")
    cross = auto = grid = None
    for force, response in hits:
        if force.kind != FORCE:
            raise DataError(f"force record has kind {force.kind!r}")
        if response.kind != ACCELERATION:
            raise DataError(f"response record has kind {response.kind!r}")
        if len(force) != len(response):
            raise DataError(f"record length mismatch: {len(force)} vs {len(response)}")
        if force.sample_rate != response.sample_rate:
            raise DataError(
                f"sample rate mismatch: {force.sample_rate} vs {response.sample_rate}")
        g, F = spectrum(force)
        _, R = spectrum(response)
        if grid is None:
            grid, cross, auto = g, np.zeros_like(F), np.zeros(F.size)
        elif g.shape != grid.shape or not np.allclose(g, grid, rtol=0, atol=0):
            raise DataError("hits do not share a frequency grid")
        cross = cross + R * np.conj(F)
        auto = auto + np.abs(F) ** 2
    peak = auto.max()
    if peak == 0:
        raise DataError("force spectrum is identically zero")
    valid = np.sqrt(auto) >= FORCE_EPS * np.sqrt(peak)
    values = np.zeros_like(cross)
    values[valid] = cross[valid] / auto[valid]
    return FRF(excitation, sensor, grid, values, INERTANCE, valid)


# --- file formats ---------------------------------------------------------

def _open_text(path, mode="r"):
    path = Path(path)
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), newline="")
    return open(path, mode, newline="")


def _write_text(path, text):
    path = Path(path)
    data = text.encode()
    if path.suffix == ".gz":
        # mtime=0 and no file name in the header keep the bytes reproducible
        data = gzip.compress(data, compresslevel=6, mtime=0)
    path.write_bytes(data)


def write_frf_csv(frf: FRF, path):
    """Write ``freq_hz,re,im,valid`` rows (gzip-compressed when ``path`` ends in .gz)."""
    rows = (f"{f!r},{re!r},{im!r},{int(ok)}\n" for f, re, im, ok in zip(
        frf.grid.tolist(), frf.values.real.tolist(), frf.values.imag.tolist(), frf.valid.tolist()))
    _write_text(path, "freq_hz,re,im,valid\n" + "".join(rows))


def read_frf_csv(path, excitation=0, sensor=0, kind=INERTANCE) -> FRF:
    with _open_text(path, "r") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["freq_hz", "re", "im", "valid"]:
            raise DataError(f"{path}: expected header freq_hz,re,im,valid, got {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                f, re, im, ok = row
                rows.append((float(f), float(re), float(im), int(ok)))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: malformed row {row}") from exc
    if len(rows) < 2:
        raise DataError(f"{path}: need at least two FRF rows")
    arr = np.array(rows)
    return FRF(excitation, sensor, arr[:, 0], arr[:, 1] + 1j * arr[:, 2], kind, arr[:, 3] != 0)


def write_time_record_csv(record: TimeRecord, path):
    with open(path, "w", newline="") as fh:
        fh.write("time_s,value\n")
        fh.write("".join(f"{t!r},{v!r}\n" for t, v in zip(record.time.tolist(), record.samples.tolist())))


def read_time_record_csv(path, sample_rate, kind) -> TimeRecord:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["time_s", "value"]:
            raise DataError(f"{path}: expected header time_s,value, got {header}")
        values = []
        for lineno, row in enumerate(reader, start=2):
            try:
                values.append(float(row[1]))
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: malformed row {row}") from exc
    return TimeRecord(np.array(values), sample_rate, kind)


def load_time_manifest(path) -> list[FRF]:
    """Build FRFs from a sidecar manifest of time-record CSV files.

    The manifest is JSON with a ``records`` list; each entry carries ``file``
    (relative to the manifest), ``kind``, ``sample_rate``, ``location`` and
    ``hit`` (records sharing location and hit form one force/response pair).
    A ``sensor`` entry at the top level gives the response location (default 0).
    Multiple hits at one location are averaged.
    """
    path = Path(path)
    doc = json.loads(path.read_text())
    sensor = int(doc.get("sensor", 0))
    hits: dict[int, dict[int, dict[str, TimeRecord]]] = {}
    for i, entry in enumerate(doc.get("records", [])):
        try:
            rec = read_time_record_csv(path.parent / entry["file"], float(entry["sample_rate"]),
                                       entry["kind"])
            loc, hit = int(entry["location"]), int(entry.get("hit", 0))
        except KeyError as exc:
            raise DataError(f"{path}: record {i} missing field {exc}") from exc
        hits.setdefault(loc, {}).setdefault(hit, {})[rec.kind] = rec
    frfs = []
    for loc in sorted(hits):
        pairs = []
        for hit in sorted(hits[loc]):
            recs = hits[loc][hit]
            if FORCE not in recs or ACCELERATION not in recs:
                raise DataError(f"{path}: location {loc} hit {hit} lacks a force/response pair")
            pairs.append((recs[FORCE], recs[ACCELERATION]))
        frfs.append(average_frf(pairs, loc, sensor))
    return frfs

