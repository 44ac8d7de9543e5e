"""Synthetic cylinder populations with planted substructure faults.

A population shares one baseline modal model. Each cylinder receives a fault
label; a fault in substructure ``s`` lowers the natural frequencies of the
modes owned by ``s`` by a per-cylinder severity and attenuates the mode
shapes at the locations of ``s``. Mode ownership is a random partition drawn
once per population, biased towards the substructure holding most of a
mode's energy. Each repeat measurement jitters the natural frequencies
(boundary conditions) and adds complex Gaussian noise to every FRF.

Random streams are derived from ``(seed, purpose, cylinder, repeat)`` so the
output does not depend on generation order.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .evaluation import FAULT_CLASSES, FaultLabel
from .features import REFERENCE_BANDS
from .modal import Band, ModalModel, modal_frf
from .signals import FRF, read_frf_csv, uniform_grid, write_frf_csv

#: Measurement locations per substructure (contiguous arcs).
SUBSTRUCTURE_SPLIT = (7, 6, 6)


@dataclass(frozen=True)
class PopulationConfig:
    n_cylinders: int = 20
    repeats_per_cylinder: int = 3
    n_modes: int = 17
    n_locations: int = 19
    fault_severity_pct: tuple = (1.0, 5.0)
    shape_perturbation: float = 0.03
    bc_jitter_pct: float = 0.5
    noise_snr_db: float = 40.0
    grid_spacing_hz: float = 1.22
    grid_lo_hz: float = 350.0
    grid_hi_hz: float = 4500.0
    damping_range: tuple = (0.002, 0.02)
    class_weights: tuple = (1, 1, 1, 1, 1, 1, 1, 1)
    sensor: int = 0
    seed: int = 0

    def __post_init__(self):
        def positive_int(name):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"population.{name}", f"must be a positive integer, got {v!r}")

        for name in ("n_cylinders", "repeats_per_cylinder", "n_modes", "n_locations"):
            positive_int(name)
        if self.n_locations < len(SUBSTRUCTURE_SPLIT):
            raise ConfigError("population.n_locations", "need at least one location per substructure")
        sev = tuple(float(v) for v in self.fault_severity_pct)
        if len(sev) != 2 or not 0 < sev[0] <= sev[1] < 50:
            raise ConfigError("population.fault_severity_pct", f"need 0 < lo <= hi < 50, got {self.fault_severity_pct!r}")
        object.__setattr__(self, "fault_severity_pct", sev)
        if not 0 < self.bc_jitter_pct < 50:
            raise ConfigError("population.bc_jitter_pct", f"must lie in (0, 50), got {self.bc_jitter_pct!r}")
        if not 0 <= self.shape_perturbation < 1:
            raise ConfigError("population.shape_perturbation", f"must lie in [0, 1), got {self.shape_perturbation!r}")
        if not isinstance(self.noise_snr_db, (int, float)) or np.isnan(self.noise_snr_db):
            raise ConfigError("population.noise_snr_db", f"must be a number or inf, got {self.noise_snr_db!r}")
        if not self.grid_spacing_hz > 0:
            raise ConfigError("population.grid_spacing_hz", "must be positive")
        if not 0 < self.grid_lo_hz < self.grid_hi_hz:
            raise ConfigError("population.grid_lo_hz", "need 0 < grid_lo_hz < grid_hi_hz")
        damp = tuple(float(v) for v in self.damping_range)
        if len(damp) != 2 or not 0 < damp[0] <= damp[1] < 1:
            raise ConfigError("population.damping_range", f"need 0 < lo <= hi < 1, got {self.damping_range!r}")
        object.__setattr__(self, "damping_range", damp)
        w = tuple(float(v) for v in self.class_weights)
        if len(w) != len(FAULT_CLASSES) or any(v < 0 or not np.isfinite(v) for v in w) or sum(w) == 0:
            raise ConfigError("population.class_weights",
                              f"need {len(FAULT_CLASSES)} non-negative weights with a positive sum")
        object.__setattr__(self, "class_weights", w)
        if not 0 <= self.sensor < self.n_locations:
            raise ConfigError("population.sensor", f"must lie in [0, {self.n_locations})")
        if not isinstance(self.seed, (int, np.integer)):
            raise ConfigError("population.seed", "must be an integer")

    @property
    def grid(self):
        return uniform_grid(self.grid_lo_hz, self.grid_hi_hz, self.grid_spacing_hz)

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        if np.isinf(self.noise_snr_db):
            d["noise_snr_db"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"population.{sorted(unknown)[0]}", "unknown field")
        if isinstance(d.get("noise_snr_db"), str):
            try:
                d["noise_snr_db"] = float(d["noise_snr_db"])
            except ValueError as exc:
                raise ConfigError("population.noise_snr_db", str(exc)) from exc
        for k in ("fault_severity_pct", "damping_range", "class_weights"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True)
class LabeledInstance:
    frfs: tuple
    label: FaultLabel
    cylinder: int
    repeat: int
    model: ModalModel | None = field(default=None, compare=False)


def substructure_of_locations(n_locations):
    """Substructure index of each location, splitting the ring 7/6/6 proportionally."""
    split = np.array(SUBSTRUCTURE_SPLIT, float)
    bounds = np.round(np.cumsum(split) / split.sum() * n_locations).astype(int)
    return np.searchsorted(bounds, np.arange(n_locations), side="right")


def _rng(seed, *keys):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def _slots_per_band(n_modes, widths):
    """Distribute modes over bands; surplus modes go to the widest bands."""
    B = len(widths)
    if n_modes <= B:
        chosen = np.unique(np.round(np.linspace(0, B - 1, n_modes)).astype(int))
        slots = np.zeros(B, int)
        slots[chosen] = 1
        return slots
    slots = np.full(B, n_modes // B)
    for i in np.argsort(-np.asarray(widths), kind="stable")[: n_modes % B]:
        slots[i] += 1
    return slots


def generate_baseline(config: PopulationConfig, seed=None) -> ModalModel:
    """Undamaged model with natural frequencies placed inside the reference bands."""
    rng = _rng(config.seed if seed is None else seed, 0)
    bands = sorted(REFERENCE_BANDS)
    widths = [hi - lo for lo, hi in bands]
    slots = _slots_per_band(config.n_modes, widths)
    freqs = []
    for (lo, hi), s in zip(bands, slots):
        w = hi - lo
        for j in range(s):
            freqs.append(lo + w * ((j + 0.5) / s + rng.uniform(-0.1, 0.1) / s))
    freqs = np.sort(freqs)
    damping = rng.uniform(*config.damping_range, size=config.n_modes)
    L = config.n_locations
    theta = 2 * np.pi * np.arange(L) / L
    shapes = np.empty((config.n_modes, L))
    for i in range(config.n_modes):
        wave = 1 + i % 4
        shapes[i] = (np.cos(wave * theta + rng.uniform(0, 2 * np.pi))
                     + 0.4 * rng.normal() * np.cos((wave + 1) * theta + rng.uniform(0, 2 * np.pi))
                     + 0.2 * rng.normal())
    shapes /= np.linalg.norm(shapes, axis=1, keepdims=True)
    return ModalModel(freqs, damping, shapes)


def _restore_order(freqs, ceiling=None):
    """Make ``freqs`` strictly increasing without exceeding ``ceiling`` where given."""
    f = np.array(freqs, float)
    for i in range(1, f.size):
        if f[i] <= f[i - 1]:
            if ceiling is not None:
                f[i] = 0.5 * (f[i - 1] + ceiling[i])
            else:
                f[i] = f[i - 1] * (1 + 1e-6)
    return f


def mode_owners(model: ModalModel, seed):
    """Substructure whose damage shifts each mode, as an integer per mode.

    A property of the structure rather than of one specimen, so it is drawn
    once per population seed. Mode ``i`` goes to substructure ``s`` with
    probability proportional to the squared share of its modal energy at the
    locations of ``s``. Every substructure owns at least one mode.
    """
    owner = substructure_of_locations(model.n_locations)
    n_sub = len(SUBSTRUCTURE_SPLIT)
    energy = np.stack([np.sum(model.mode_shapes[:, owner == s] ** 2, axis=1)
                       for s in range(n_sub)], axis=1)
    share = energy / energy.sum(axis=1, keepdims=True)
    p = share ** 2
    p /= p.sum(axis=1, keepdims=True)
    u = _rng(seed, 4).random(model.n_modes)
    assign = np.sum(u[:, None] > np.cumsum(p, axis=1), axis=1).clip(0, n_sub - 1)
    for s in range(n_sub):
        if np.any(assign == s):
            continue
        counts = np.bincount(assign, minlength=n_sub)
        donors = np.flatnonzero(counts[assign] > 1)
        assign[donors[np.argmax(share[donors, s])]] = s
    return assign


def sensitive_modes(model: ModalModel, substructure, seed):
    """Boolean mask of the modes owned by ``substructure`` (see :func:`mode_owners`)."""
    return mode_owners(model, seed) == substructure


def apply_faults(model: ModalModel, label: FaultLabel, config: PopulationConfig, rng) -> ModalModel:
    """Damage the substructures flagged in ``label``.

    Draws for all three substructures are always consumed, so a label that
    flags more substructures perturbs a superset of what a smaller label
    perturbs under the same ``rng`` state.
    """
    label = label if isinstance(label, FaultLabel) else FaultLabel(tuple(label))
    owner = substructure_of_locations(model.n_locations)
    lo, hi = config.fault_severity_pct
    draws = []
    for s in range(len(SUBSTRUCTURE_SPLIT)):
        severity = rng.uniform(lo, hi) / 100.0
        atten = rng.uniform(0.5, 1.0, size=int(np.sum(owner == s)))
        draws.append((severity, sensitive_modes(model, s, config.seed), atten))
    if not any(label.bits):
        return model
    freqs = model.natural_freqs_hz.copy()
    shapes = model.mode_shapes.copy()
    for s, (severity, subset, atten) in enumerate(draws):
        if not label.bits[s]:
            continue
        freqs[subset] *= 1.0 - severity
        shapes[:, owner == s] *= 1.0 - config.shape_perturbation * atten
    freqs = _restore_order(freqs, ceiling=model.natural_freqs_hz)
    return ModalModel(freqs, model.damping_ratios, shapes)


def jitter_boundary(model: ModalModel, config: PopulationConfig, rng) -> ModalModel:
    j = config.bc_jitter_pct / 100.0
    freqs = model.natural_freqs_hz * (1.0 + rng.uniform(-j, j, size=model.n_modes))
    return ModalModel(_restore_order(freqs), model.damping_ratios, model.mode_shapes)


def add_noise(frf: FRF, snr_db, rng) -> FRF:
    """Complex zero-mean Gaussian noise of power ``max|H|^2 / 10**(snr/10)`` in every bin.

    The reference is the peak power of the FRF, as with an instrument whose
    range is set by the strongest resonance.
    """
    if np.isinf(snr_db) and snr_db > 0:
        return frf
    power = np.max(np.abs(frf.values) ** 2) / 10.0 ** (snr_db / 10.0)
    noise = np.sqrt(power / 2.0) * (rng.standard_normal(frf.grid.size)
                                    + 1j * rng.standard_normal(frf.grid.size))
    return frf.with_values(frf.values + noise)


def assign_labels(config: PopulationConfig):
    """Fault label of every cylinder by largest-remainder allocation of ``class_weights``."""
    w = np.asarray(config.class_weights, float)
    active = np.count_nonzero(w)
    if config.n_cylinders < active:
        raise ConfigError("population.class_weights",
                          f"{active} weighted classes need at least as many cylinders, got {config.n_cylinders}")
    quota = w / w.sum() * config.n_cylinders
    counts = np.floor(quota).astype(int)
    # every weighted class appears at least once
    counts[(w > 0) & (counts == 0)] = 1
    while counts.sum() > config.n_cylinders:
        counts[np.argmax(counts - quota)] -= 1
    order = np.argsort(-(quota - counts), kind="stable")
    i = 0
    while counts.sum() < config.n_cylinders:
        if w[order[i % len(order)]] > 0:
            counts[order[i % len(order)]] += 1
        i += 1
    classes = np.repeat(np.arange(len(FAULT_CLASSES)), counts)
    classes = _rng(config.seed, 1).permutation(classes)
    return [FAULT_CLASSES[c] for c in classes]


def measurement_pairs(config: PopulationConfig):
    """Excitation at every location, response at the reference sensor."""
    return [(k, config.sensor) for k in range(config.n_locations)]


def nominal_bands(model: ModalModel, width_pct=6.0, grid=None):
    """One band of ``width_pct`` percent centred on every natural frequency."""
    h = width_pct / 200.0
    bands = []
    for f in model.natural_freqs_hz:
        lo, hi = f * (1 - h), f * (1 + h)
        if grid is not None:
            lo, hi = max(lo, grid[0]), min(hi, grid[-1])
        bands.append(Band(lo, hi))
    return bands


def synthesize_instance(model: ModalModel, config: PopulationConfig, label, cylinder, repeat):
    rng = _rng(config.seed, 3, cylinder, repeat)
    jittered = jitter_boundary(model, config, rng)
    grid = config.grid
    frfs = tuple(add_noise(modal_frf(jittered, k, l, grid), config.noise_snr_db, rng)
                 for k, l in measurement_pairs(config))
    return LabeledInstance(frfs, label, cylinder, repeat, jittered)


def generate_population(config: PopulationConfig, baseline: ModalModel | None = None):
    """All ``n_cylinders * repeats_per_cylinder`` instances, cylinder-major."""
    baseline = generate_baseline(config) if baseline is None else baseline
    labels = assign_labels(config)
    out = []
    for c, label in enumerate(labels):
        faulted = apply_faults(baseline, label, config, _rng(config.seed, 2, c))
        for r in range(config.repeats_per_cylinder):
            out.append(synthesize_instance(faulted, config, label, c, r))
    return out


# --- dataset directory ----------------------------------------------------

MANIFEST = "manifest.json"


def _frf_name(i, pair):
    return f"frfs/i{i:04d}_k{pair[0]:02d}_l{pair[1]:02d}.csv.gz"


def write_dataset(out_dir, config: PopulationConfig, instances, baseline: ModalModel):
    """Write FRF files and ``manifest.json`` (config echo, bands, instance table)."""
    out = Path(out_dir)
    (out / "frfs").mkdir(parents=True, exist_ok=True)
    table = []
    for i, inst in enumerate(instances):
        files = []
        for frf in inst.frfs:
            name = _frf_name(i, frf.pair)
            write_frf_csv(frf, out / name)
            files.append({"excitation": frf.excitation, "sensor": frf.sensor, "file": name})
        table.append({"id": i, "cylinder": inst.cylinder, "repeat": inst.repeat,
                      "label": str(inst.label), "frfs": files})
    grid = config.grid
    manifest = {
        "format": "pmefault-dataset",
        "version": 1,
        "seed": config.seed,
        "config": config.to_dict(),
        "grid": {"lo_hz": float(grid[0]), "spacing_hz": config.grid_spacing_hz, "n": int(grid.size)},
        "bands": [b.to_dict() for b in nominal_bands(baseline, grid=grid)],
        "baseline": baseline.to_dict(),
        "instances": table,
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return out / MANIFEST


def read_manifest(dataset_dir):
    path = Path(dataset_dir) / MANIFEST
    if not path.is_file():
        raise DataError(f"{path}: dataset manifest not found")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: {exc}") from exc


def read_dataset(dataset_dir):
    """Yield ``(instance_entry, frfs)`` for every instance in a dataset directory."""
    root = Path(dataset_dir)
    manifest = read_manifest(root)
    for entry in manifest["instances"]:
        frfs = [read_frf_csv(root / f["file"], f["excitation"], f["sensor"]) for f in entry["frfs"]]
        yield entry, frfs
