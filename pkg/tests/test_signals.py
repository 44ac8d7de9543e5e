import gzip
import json

import numpy as np
import pytest

from pmefault.errors import DataError
from pmefault.modal import ModalModel, modal_frf
from pmefault.signals import (ACCELERATION, FORCE, FRF, TimeRecord, average_frf, compute_frf,
                              load_time_manifest, read_frf_csv, read_time_record_csv, spectrum,
                              uniform_grid, write_frf_csv, write_time_record_csv)


def test_zero_signal_has_zero_spectrum():
    _, v = spectrum(TimeRecord(np.zeros(64), 100.0))
    assert np.all(v == 0)


def test_impulse_has_flat_spectrum():
    x = np.zeros(64)
    x[0] = 1.0
    _, v = spectrum(TimeRecord(x, 100.0))
    np.testing.assert_allclose(np.abs(v), 1.0, rtol=0, atol=1e-14)


def test_cosine_matches_direct_dft():
    n, fs, k0 = 128, 256.0, 9
    t = np.arange(n) / fs
    x = np.cos(2 * np.pi * k0 * fs / n * t)
    grid, v = spectrum(TimeRecord(x, fs))
    jj, kk = np.meshgrid(np.arange(n), np.arange(n // 2 + 1))
    direct = (x[None, :] * np.exp(-2j * np.pi * kk * jj / n)).sum(axis=1)
    np.testing.assert_allclose(v, direct, atol=1e-9)
    assert np.argmax(np.abs(v)) == k0
    assert grid[k0] == pytest.approx(k0 * fs / n)


def test_grid_spacing_is_sample_rate_over_length():
    grid, _ = spectrum(TimeRecord(np.ones(1000), 5000.0))
    np.testing.assert_array_equal(np.diff(grid), np.full(grid.size - 1, 5.0))


def _pair(rng, n=256, fs=1000.0):
    f = TimeRecord(rng.normal(size=n), fs, FORCE)
    r = TimeRecord(rng.normal(size=n), fs, ACCELERATION)
    return f, r


def test_self_ratio_is_one(rng):
    f, _ = _pair(rng)
    frf = compute_frf(f, TimeRecord(f.samples, f.sample_rate, ACCELERATION))
    np.testing.assert_allclose(frf.values[frf.valid], 1.0, rtol=1e-12)


def test_doubled_response_gives_two(rng):
    f, _ = _pair(rng)
    frf = compute_frf(f, TimeRecord(2 * f.samples, f.sample_rate, ACCELERATION))
    np.testing.assert_allclose(frf.values[frf.valid], 2.0, rtol=1e-12)


def test_linearity_in_response(rng):
    f, r1 = _pair(rng)
    _, r2 = _pair(rng)
    a, b = 1.7, -0.3
    mix = TimeRecord(a * r1.samples + b * r2.samples, f.sample_rate, ACCELERATION)
    h = compute_frf(f, mix).values
    expect = a * compute_frf(f, r1).values + b * compute_frf(f, r2).values
    np.testing.assert_allclose(h, expect, rtol=1e-9, atol=1e-12 * np.abs(expect).max())


def test_single_mode_decay_matches_modal_frf():
    fn, zeta = 400.0, 0.01
    wn = 2 * np.pi * fn
    sigma, wd = zeta * wn, wn * np.sqrt(1 - zeta ** 2)
    fs, n = 32768.0, 32768
    dt = 1 / fs
    t = np.arange(n) * dt
    smooth = -np.exp(-sigma * t) * (2 * sigma * np.cos(wd * t) + (wn ** 2 - 2 * sigma ** 2) / wd * np.sin(wd * t))
    resp = dt * smooth
    resp[0] = 0.5 * dt * smooth[0] + 1.0  # trapezoid end weight plus the direct feed-through
    force = np.zeros(n)
    force[0] = 1.0
    frf = compute_frf(TimeRecord(force, fs, FORCE), TimeRecord(resp, fs, ACCELERATION))
    band = (frf.grid >= 380) & (frf.grid <= 420)
    ref = modal_frf(ModalModel([fn], [zeta], [[1.0]]), 0, 0, frf.grid[band]).values
    assert frf.grid[band][np.argmax(np.abs(frf.values[band]))] == pytest.approx(400.0, abs=1.0)
    rel = np.abs(frf.values[band] - ref) / np.abs(ref)
    assert rel.max() < 1e-3


def test_inverse_transform_round_trip(rng):
    n, fs = 4097, 8192.0  # odd length: no Nyquist bin
    grid = np.arange(n // 2 + 1) * fs / n
    model = ModalModel([400.0, 1200.0], [0.02, 0.01], [[1.0], [0.7]])
    H = modal_frf(model, 0, 0, grid).values
    force = rng.normal(size=n)
    response = np.fft.irfft(H * np.fft.rfft(force), n)
    frf = compute_frf(TimeRecord(force, fs, FORCE), TimeRecord(response, fs, ACCELERATION))
    ok = frf.valid & (np.abs(H) > 0)
    assert ok.sum() > 0.99 * n // 2
    np.testing.assert_allclose(frf.values[ok], H[ok], rtol=1e-6)


def test_zero_force_bins_are_flagged():
    n, fs = 64, 64.0
    force = np.cos(2 * np.pi * 4 * np.arange(n) / n)
    frf = compute_frf(TimeRecord(force, fs, FORCE), TimeRecord(force, fs, ACCELERATION))
    assert frf.valid.sum() == 1 and frf.valid[4]


def test_zero_force_raises():
    z = TimeRecord(np.zeros(16), 10.0, FORCE)
    with pytest.raises(DataError):
        compute_frf(z, TimeRecord(np.ones(16), 10.0, ACCELERATION))


def test_mismatched_records_raise(rng):
    f, _ = _pair(rng, n=128)
    with pytest.raises(DataError, match="length"):
        compute_frf(f, TimeRecord(np.ones(64), f.sample_rate, ACCELERATION))
    with pytest.raises(DataError, match="sample rate"):
        compute_frf(f, TimeRecord(np.ones(128), 2 * f.sample_rate, ACCELERATION))


def test_averaging_hits_reduces_to_ratio_for_consistent_hits(rng):
    fs, n = 1000.0, 200
    hits = []
    for _ in range(3):
        f = rng.normal(size=n)
        hits.append((TimeRecord(f, fs, FORCE), TimeRecord(3 * f, fs, ACCELERATION)))
    frf = average_frf(hits)
    np.testing.assert_allclose(frf.values[frf.valid], 3.0, rtol=1e-12)


def test_time_record_validation():
    with pytest.raises(DataError):
        TimeRecord([], 10.0)
    with pytest.raises(DataError):
        TimeRecord([1.0, np.nan], 10.0)
    with pytest.raises(DataError):
        TimeRecord([1.0], 0.0)


def test_frf_rejects_nonuniform_grid():
    with pytest.raises(DataError):
        FRF(0, 0, [1.0, 2.0, 4.0], [0, 0, 0])


def test_uniform_grid_covers_interval():
    g = uniform_grid(350.0, 4500.0, 1.22)
    assert g[0] == 350.0 and g[-1] <= 4500.0 < g[-1] + 1.22


@pytest.mark.parametrize("name", ["h.csv", "h.csv.gz"])
def test_frf_csv_round_trip(tmp_path, name):
    grid = uniform_grid(10.0, 20.0, 0.5)
    values = np.exp(1j * grid) / 3.0
    valid = np.ones(grid.size, bool)
    valid[3] = False
    frf = FRF(2, 5, grid, values, valid=valid)
    write_frf_csv(frf, tmp_path / name)
    back = read_frf_csv(tmp_path / name, 2, 5)
    np.testing.assert_array_equal(back.grid, grid)
    np.testing.assert_array_equal(back.values, frf.values)
    np.testing.assert_array_equal(back.valid, valid)


def test_gzip_output_is_reproducible(tmp_path):
    frf = FRF(0, 0, uniform_grid(1.0, 5.0, 1.0), np.arange(5) + 1j)
    write_frf_csv(frf, tmp_path / "a.csv.gz")
    write_frf_csv(frf, tmp_path / "b.csv.gz")
    assert (tmp_path / "a.csv.gz").read_bytes() == (tmp_path / "b.csv.gz").read_bytes()
    assert gzip.decompress((tmp_path / "a.csv.gz").read_bytes()).startswith(b"freq_hz,re,im,valid\n")


def test_frf_csv_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("f,re,im\n1,2,3\n")
    with pytest.raises(DataError, match="header"):
        read_frf_csv(p)


def test_frf_csv_malformed_row_names_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("freq_hz,re,im,valid\n1,0,0,1\n2,x,0,1\n")
    with pytest.raises(DataError, match=":3:"):
        read_frf_csv(p)


def test_time_manifest_builds_frfs(tmp_path, rng):
    fs, n = 1000.0, 128
    records = []
    for loc in (0, 1):
        for hit in (0, 1):
            f = TimeRecord(rng.normal(size=n), fs, FORCE)
            r = TimeRecord((loc + 1) * f.samples, fs, ACCELERATION)
            for rec, kind in ((f, "force"), (r, "acceleration")):
                name = f"l{loc}h{hit}_{kind}.csv"
                write_time_record_csv(rec, tmp_path / name)
                records.append({"file": name, "kind": rec.kind, "sample_rate": fs,
                                "location": loc, "hit": hit})
    (tmp_path / "m.json").write_text(json.dumps({"sensor": 3, "records": records}))
    frfs = load_time_manifest(tmp_path / "m.json")
    assert [f.pair for f in frfs] == [(0, 3), (1, 3)]
    np.testing.assert_allclose(frfs[1].values[frfs[1].valid], 2.0, rtol=1e-9)
    back = read_time_record_csv(tmp_path / records[0]["file"], fs, FORCE)
    assert len(back) == n
