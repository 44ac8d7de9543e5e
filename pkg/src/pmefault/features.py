"""Pseudomodal-energy feature vectors, band checks and PCA reduction.

Feature layout is band-major, then excitation/sensor pair (sorted by
``(excitation, sensor)``), then real before imaginary part. Column ``j`` of a
feature matrix is named ``b{q}_p{p}_{re|im}``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError
from .modal import Band, band_indices, ime_quadrature
from .signals import FRF

#: Reference band list for the 19-location cylinder rig, Hz.
REFERENCE_BANDS = (
    (393, 418), (418, 443), (536, 570), (1110, 1180), (1183, 1254),
    (1355, 1440), (1450, 1538), (2146, 2280), (2300, 2440), (2250, 2401),
    (2500, 2656), (3140, 3340), (3350, 3565), (3800, 4039), (4200, 4458),
)


def reference_bands():
    return [Band(lo, hi) for lo, hi in REFERENCE_BANDS]


def feature_names(n_bands, n_pairs):
    return [f"b{q}_p{p}_{part}"
            for q in range(n_bands) for p in range(n_pairs) for part in ("re", "im")]


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    n_bands: int
    pairs: tuple

    @property
    def names(self):
        return feature_names(self.n_bands, len(self.pairs))


def extract_features(frfs: Sequence[FRF], bands: Sequence[Band], pairs=None) -> FeatureVector:
    """Pseudomodal energies of every (band, pair) as a real feature vector.

    ``pairs`` fixes the expected ``(excitation, sensor)`` set; by default it is
    taken from ``frfs``. Arrival order of ``frfs`` does not matter.
    """
    if not bands:
        raise DataError("empty band list")
    by_pair = {}
    for frf in frfs:
        if frf.pair in by_pair:
            raise DataError(f"duplicate FRF for pair {frf.pair}")
        by_pair[frf.pair] = frf
    pairs = tuple(sorted(by_pair)) if pairs is None else tuple(tuple(p) for p in pairs)
    missing = [p for p in pairs if p not in by_pair]
    if missing:
        raise DataError(f"missing FRF for pairs {missing}")
    if not pairs:
        raise DataError("no FRFs supplied")
    grid = by_pair[pairs[0]].grid
    for p in pairs[1:]:
        g = by_pair[p].grid
        if g.shape != grid.shape or not np.array_equal(g, grid):
            raise DataError(f"FRF for pair {p} is on a different grid")
    out = np.empty((len(bands), len(pairs), 2))
    for q, band in enumerate(bands):
        for p, pair in enumerate(pairs):
            e = ime_quadrature(by_pair[pair], band)
            out[q, p] = e.real, e.imag
    return FeatureVector(out.ravel(), len(bands), pairs)


@dataclass
class BandReport:
    band: Band
    bracketed_hz: list
    width_pct: list
    antiresonances_hz: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.warnings


def validate_bands(bands, natural_freqs_hz, grid=None, frf: FRF | None = None,
                   antiresonance_fraction=0.1) -> list[BandReport]:
    """Check bands against the usual band-selection guidelines.

    Each band should bracket a resonance, span a few percent of it, and avoid
    anti-resonances. Problems are reported as warnings; nothing raises except
    an empty band list.
    """
    if not bands:
        raise DataError("empty band list")
    freqs = np.asarray(natural_freqs_hz, float)
    reports = []
    for band in bands:
        inside = freqs[(freqs >= band.lo_hz) & (freqs <= band.hi_hz)]
        rep = BandReport(band, inside.tolist(), (100.0 * band.width_hz / inside).tolist())
        if inside.size == 0:
            rep.warnings.append("no resonance bracketed")
        if grid is not None:
            try:
                idx = band_indices(grid, band)
                if idx.size < 2:
                    rep.warnings.append("fewer than 2 grid points in band")
            except DataError:
                rep.warnings.append("band outside frequency grid")
        if frf is not None:
            try:
                idx = band_indices(frf.grid, band)
            except DataError:
                idx = np.array([], int)
            mag = np.abs(frf.values[idx])
            if mag.size >= 3:
                floor = antiresonance_fraction * np.median(mag)
                interior = np.arange(1, mag.size - 1)
                is_min = (mag[interior] < mag[interior - 1]) & (mag[interior] < mag[interior + 1])
                hits = interior[is_min & (mag[interior] < floor)]
                rep.antiresonances_hz = frf.grid[idx[hits]].tolist()
                if hits.size:
                    rep.warnings.append("band contains an anti-resonance")
        reports.append(rep)
    return reports


@dataclass(frozen=True)
class PCAModel:
    """Standardizing PCA: ``z = components @ ((v - mean) / scale)``."""

    mean: np.ndarray
    scale: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    @property
    def n_components(self):
        return self.components.shape[0]

    @property
    def n_features(self):
        return self.mean.size

    def transform(self, v):
        v = np.asarray(v, float)
        if v.shape[-1] != self.n_features:
            raise DataError(f"feature dimension mismatch: expected {self.n_features}, got {v.shape[-1]}")
        return ((v - self.mean) / self.scale) @ self.components.T

    def inverse_transform(self, z):
        z = np.asarray(z, float)
        if z.shape[-1] != self.n_components:
            raise DataError(f"expected {self.n_components} components, got {z.shape[-1]}")
        return self.mean + self.scale * (z @ self.components)

    def to_dict(self):
        return {
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(*(np.asarray(d[k], float) for k in
                         ("mean", "scale", "components", "explained_variance")))
        except KeyError as exc:
            raise DataError(f"PCA model missing field {exc}") from exc


def pca_fit(X, m) -> PCAModel:
    """Fit an ``m``-component PCA on column-standardized ``X`` (rows are instances).

    Zero-variance columns keep scale 1. Component signs are fixed so the
    largest-magnitude loading of each component is positive.
    """
    X = np.asarray(X, float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError("PCA needs a 2-D matrix with at least 2 rows")
    if not np.all(np.isfinite(X)):
        raise DataError("PCA input contains non-finite entries")
    n, D = X.shape
    if not 1 <= m <= min(n, D):
        raise DataError(f"pca components m={m} out of range [1, {min(n, D)}]")
    mean = X.mean(axis=0)
    scale = X.std(axis=0, ddof=1)
    scale[scale <= 1e-12 * np.maximum(np.abs(mean), 1.0)] = 1.0
    Z = (X - mean) / scale
    _, s, vt = np.linalg.svd(Z, full_matrices=False)
    comps = vt[:m].copy()
    pivot = np.argmax(np.abs(comps), axis=1)
    comps *= np.sign(comps[np.arange(m), pivot])[:, None]
    var = s[:m] ** 2 / (n - 1)
    return PCAModel(mean, scale, comps, var)


def pca_transform(model: PCAModel, v):
    return model.transform(v)


# --- feature tables -------------------------------------------------------

@dataclass(frozen=True)
class FeatureTable:
    """Feature matrix (rows are instances), column names and 3-bit label strings."""

    X: np.ndarray
    names: tuple
    labels: tuple

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, float))
        if X.shape[1] != len(self.names):
            raise DataError(f"{X.shape[1]} feature columns but {len(self.names)} names")
        if X.shape[0] != len(self.labels):
            raise DataError(f"{X.shape[0]} rows but {len(self.labels)} labels")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "labels", tuple(str(l) for l in self.labels))

    @property
    def n_instances(self):
        return self.X.shape[0]

    @property
    def Y(self):
        """Labels as an ``n x 3`` 0/1 integer matrix."""
        return np.array([[int(c) for c in l] for l in self.labels], int).reshape(-1, 3)


def write_features_csv(path, table: FeatureTable):
    # repr round-trips doubles exactly, which keeps reruns byte-identical
    with open(path, "w", newline="") as fh:
        fh.write(",".join([*table.names, "label"]) + "\n")
        for row, label in zip(table.X, table.labels):
            fh.write(",".join([*(repr(float(v)) for v in row), label]) + "\n")


def read_features_csv(path) -> FeatureTable:
    """Read a feature CSV; malformed content raises :class:`DataError` naming the line."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[-1] != "label":
                raise DataError(f"{path}: line 1: header must end with a 'label' column")
            names = header[:-1]
            if not names:
                raise DataError(f"{path}: line 1: no feature columns")
            rows, labels = [], []
            for lineno, rec in enumerate(reader, start=2):
                if not rec:
                    continue
                if len(rec) != len(header):
                    raise DataError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(rec)}")
                label = rec[-1].strip()
                if len(label) != 3 or set(label) - {"0", "1"}:
                    raise DataError(f"{path}: line {lineno}: label must be three 0/1 digits, got {label!r}")
                try:
                    values = [float(v) for v in rec[:-1]]
                except ValueError as exc:
                    raise DataError(f"{path}: line {lineno}: {exc}") from exc
                if not all(np.isfinite(values)):
                    raise DataError(f"{path}: line {lineno}: non-finite feature value")
                rows.append(values)
                labels.append(label)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if not rows:
        raise DataError(f"{path}: no data rows")
    return FeatureTable(np.array(rows), names, labels)
