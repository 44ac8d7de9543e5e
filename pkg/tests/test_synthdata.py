import json

import numpy as np
import pytest

from pmefault.errors import ConfigError
from pmefault.evaluation import FAULT_CLASSES, FaultLabel
from pmefault.features import REFERENCE_BANDS, extract_features
from pmefault.modal import modal_frf
from pmefault.synthdata import (PopulationConfig, _rng, add_noise, apply_faults, assign_labels,
                                generate_baseline, generate_population, mode_owners, nominal_bands,
                                read_dataset, read_manifest, substructure_of_locations,
                                write_dataset)

CFG = PopulationConfig()


@pytest.fixture(scope="module")
def baseline():
    return generate_baseline(CFG)


def test_baseline_is_deterministic(baseline):
    again = generate_baseline(CFG)
    np.testing.assert_array_equal(again.natural_freqs_hz, baseline.natural_freqs_hz)
    np.testing.assert_array_equal(again.mode_shapes, baseline.mode_shapes)
    other = generate_baseline(PopulationConfig(seed=1))
    assert not np.array_equal(other.natural_freqs_hz, baseline.natural_freqs_hz)


def test_baseline_modes_sit_in_reference_bands(baseline):
    assert baseline.n_modes == 17
    for f in baseline.natural_freqs_hz:
        assert any(lo <= f <= hi for lo, hi in REFERENCE_BANDS)


def test_mode_shapes_have_unit_norm(baseline):
    np.testing.assert_allclose(np.linalg.norm(baseline.mode_shapes, axis=1), 1.0, atol=1e-12)


def test_substructure_split():
    owner = substructure_of_locations(19)
    assert np.bincount(owner).tolist() == [7, 6, 6]


def test_every_substructure_owns_a_mode(baseline):
    for seed in range(10):
        owners = mode_owners(baseline, seed)
        assert set(owners.tolist()) == {0, 1, 2}


def test_no_fault_leaves_model_unchanged(baseline):
    out = apply_faults(baseline, FaultLabel((0, 0, 0)), CFG, _rng(0, 2, 0))
    assert out is baseline


@pytest.mark.parametrize("bits", [(1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 1)])
def test_fault_lowers_frequencies(baseline, bits):
    out = apply_faults(baseline, FaultLabel(bits), CFG, _rng(0, 2, 5))
    assert np.any(out.natural_freqs_hz < baseline.natural_freqs_hz)
    assert np.all(out.natural_freqs_hz <= baseline.natural_freqs_hz)
    assert np.all(np.diff(out.natural_freqs_hz) > 0)


def test_fault_monotone_superset(baseline):
    single = apply_faults(baseline, FaultLabel((1, 0, 0)), CFG, _rng(0, 2, 3))
    triple = apply_faults(baseline, FaultLabel((1, 1, 1)), CFG, _rng(0, 2, 3))
    f_moved = single.natural_freqs_hz != baseline.natural_freqs_hz
    s_moved = np.any(single.mode_shapes != baseline.mode_shapes, axis=0)
    assert np.all(triple.natural_freqs_hz[f_moved] != baseline.natural_freqs_hz[f_moved])
    assert np.all(np.any(triple.mode_shapes != baseline.mode_shapes, axis=0)[s_moved])


def test_label_balance():
    labels = assign_labels(PopulationConfig(n_cylinders=24))
    counts = {str(c): 0 for c in FAULT_CLASSES}
    for l in labels:
        counts[str(l)] += 1
    assert set(counts.values()) == {3}


def test_default_population_covers_all_classes():
    labels = assign_labels(CFG)
    assert len(labels) == 20 and {str(l) for l in labels} == {str(c) for c in FAULT_CLASSES}


def test_class_weights_are_respected():
    w = (1, 0, 0, 0, 0, 0, 0, 1)
    labels = assign_labels(PopulationConfig(n_cylinders=6, class_weights=w))
    assert {str(l) for l in labels} == {"000", "111"}


def test_noise_is_zero_mean(baseline):
    clean = modal_frf(baseline, 3, 0, CFG.grid)
    rng = np.random.default_rng(0)
    noisy = [add_noise(clean, 20.0, rng).values for _ in range(16)]
    r1 = np.linalg.norm(noisy[0] - clean.values)
    r16 = np.linalg.norm(np.mean(noisy, axis=0) - clean.values)
    assert r1 / r16 >= 2.5


def test_noise_level_matches_snr(baseline):
    clean = modal_frf(baseline, 3, 0, CFG.grid)
    noisy = add_noise(clean, 10.0, np.random.default_rng(1))
    ratio = np.max(np.abs(clean.values) ** 2) / np.mean(np.abs(noisy.values - clean.values) ** 2)
    assert 10 * np.log10(ratio) == pytest.approx(10.0, abs=0.3)


def test_small_population_counts():
    cfg = PopulationConfig(n_cylinders=8, repeats_per_cylinder=1)
    pop = generate_population(cfg)
    assert len(pop) == 8
    assert sorted(str(p.label) for p in pop) == sorted(str(c) for c in FAULT_CLASSES)
    assert len(pop[0].frfs) == 19


def test_noise_free_population_matches_modal_frf():
    cfg = PopulationConfig(n_cylinders=8, repeats_per_cylinder=1, noise_snr_db=float("inf"))
    for inst in generate_population(cfg)[:3]:
        for frf in inst.frfs:
            ref = modal_frf(inst.model, frf.excitation, frf.sensor, cfg.grid)
            np.testing.assert_array_equal(frf.values, ref.values)


def test_population_determinism():
    cfg = PopulationConfig(n_cylinders=8, repeats_per_cylinder=1)
    a, b = generate_population(cfg), generate_population(cfg)
    np.testing.assert_array_equal(a[2].frfs[4].values, b[2].frfs[4].values)
    c = generate_population(PopulationConfig(n_cylinders=8, repeats_per_cylinder=1, seed=9))
    assert not np.array_equal(a[2].frfs[4].values, c[2].frfs[4].values)


def test_fault_effect_exceeds_within_class_spread():
    pop = generate_population(CFG)
    base = generate_baseline(CFG)
    bands = nominal_bands(base, grid=CFG.grid)
    feats = {"000": [], "111": []}
    for inst in pop:
        key = str(inst.label)
        if key in feats:
            feats[key].append(extract_features(inst.frfs, bands).values)
    a, b = np.array(feats["000"]), np.array(feats["111"])
    between = np.linalg.norm(a.mean(axis=0) - b.mean(axis=0))
    within = np.sqrt(np.mean([np.sum(x.var(axis=0, ddof=1)) for x in (a, b)]))
    assert between > within


def test_config_validation():
    with pytest.raises(ConfigError, match="population.n_cylinders"):
        PopulationConfig(n_cylinders=0)
    with pytest.raises(ConfigError, match="population.fault_severity_pct"):
        PopulationConfig(fault_severity_pct=(5, 60))
    with pytest.raises(ConfigError, match="population.bc_jitter_pct"):
        PopulationConfig(bc_jitter_pct=0)
    with pytest.raises(ConfigError, match="population.bogus"):
        PopulationConfig.from_dict({"bogus": 1})


def test_config_round_trip():
    cfg = PopulationConfig(noise_snr_db=float("inf"), fault_severity_pct=(2, 4))
    assert PopulationConfig.from_dict(cfg.to_dict()) == cfg


def test_dataset_round_trip(tmp_path):
    cfg = PopulationConfig(n_cylinders=8, repeats_per_cylinder=1)
    base = generate_baseline(cfg)
    pop = generate_population(cfg, base)
    write_dataset(tmp_path / "a", cfg, pop, base)
    write_dataset(tmp_path / "b", cfg, pop, base)
    assert (tmp_path / "a/manifest.json").read_bytes() == (tmp_path / "b/manifest.json").read_bytes()
    manifest = read_manifest(tmp_path / "a")
    assert manifest["seed"] == 0 and len(manifest["instances"]) == 8
    json.dumps(manifest)
    for (entry, frfs), inst in zip(read_dataset(tmp_path / "a"), pop):
        assert entry["label"] == str(inst.label)
        np.testing.assert_array_equal(frfs[5].values, inst.frfs[5].values)
