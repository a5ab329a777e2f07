"""Experiment runners: sector sampling, map and CDF protocols, SE sweeps."""

import math

import numpy as np
import pytest
from scipy.stats import spearmanr

from bisac.config import ScenarioConfig
from bisac.experiments import (
    _steering_peb_chunk,
    child_seed,
    design_once,
    run_convergence,
    run_peb_cdf,
    run_peb_heatmap,
    run_se_vs_gamma,
    run_se_vs_nrf,
    run_se_vs_snr,
    sector_samples,
    self_check,
)


CFG = ScenarioConfig()


# ---------------------------------------------------------------------------
# sampling and seeding
# ---------------------------------------------------------------------------

def test_child_seed_deterministic_and_distinct():
    assert child_seed(0, 3) == child_seed(0, 3)
    seeds = {child_seed(0, i) for i in range(50)}
    assert len(seeds) == 50
    assert child_seed(0, 1) != child_seed(1, 0)


def test_sector_samples_geometry():
    """Points cover the 120 degree wedge that opens toward the transmitter."""
    pts = sector_samples(41, 200.0)
    assert pts == sector_samples(41, 200.0)
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    r = np.hypot(xs, ys)
    assert r.max() <= 200.0 + 1e-9
    assert np.all(ys >= 0.5 * r - 1e-9)
    # row-major: y never decreases along the list
    assert np.all(np.diff(ys) >= -1e-12)
    # odd resolution keeps the x = 0 column, where the singular ridge lives
    assert np.any((xs == 0.0) & (ys > 0.0))
    # wedge fills about 60% of its bounding box
    assert 0.5 < len(pts) / 41 ** 2 < 0.7


# ---------------------------------------------------------------------------
# positioning maps
# ---------------------------------------------------------------------------

def test_heatmap_schema_and_ridge_location():
    table = run_peb_heatmap(CFG, -10.0, n_t=100, grid_res=9)
    assert table.columns == ("x", "y", "peb")
    assert table.units == ("m", "m", "m")
    assert table.metadata["beamformer"] == "steering"
    assert table.metadata["n_tx"] == 100
    assert len(table.rows) == len(sector_samples(9, CFG.baseline_m))
    peb = np.array(table.column("peb"))
    assert np.all(peb > 0.0)
    # the receiver's own pixel is unlocalizable and carries the inf sentinel
    assert np.isinf(peb[0])
    finite = np.isfinite(peb)
    assert finite.sum() > 0.9 * len(peb)
    # worst finite bound sits on the x = 0 column and well above the median
    xs = np.array(table.column("x"))
    worst = np.argmax(np.where(finite, peb, -np.inf))
    assert xs[worst] == 0.0
    assert peb[worst] > 3.0 * np.median(peb[finite])


def test_heatmap_monotone_along_rays():
    """PEB grows with range along rays away from the singular region."""
    for z in (-10.0, 30.0):
        for alpha_deg in (25.0, 35.0, 45.0, 55.0):
            a = math.radians(alpha_deg)
            rs = np.linspace(10.0, 199.0, 25)
            pts = [(float(r * math.sin(a)), float(r * math.cos(a)))
                   for r in rs]
            pebs = _steering_peb_chunk((CFG, z, 100, pts))
            rho = spearmanr(rs, pebs).statistic
            assert rho > 0.9, f"z={z} alpha={alpha_deg}: rho={rho:.3f}"


def test_cdf_schema_dominance_and_array_ratio():
    table = run_peb_cdf(CFG, grid_res=9)
    assert table.columns == ("z", "n_tx", "peb", "cdf")
    n_samples = len(sector_samples(9, CFG.baseline_m))
    assert int(table.metadata["sector_samples"]) == n_samples
    for z in (-10.0, 0.0, 30.0):
        for n_t in (36, 100):
            curve = table.select(z=z, n_tx=n_t)
            peb = np.array(curve.column("peb"))
            cdf = np.array(curve.column("cdf"))
            # sorted curve over every sector sample, including the inf tail
            assert len(peb) == n_samples
            assert all(a <= b for a, b in zip(peb, peb[1:]))
            assert cdf[0] == pytest.approx(1.0 / n_samples)
            assert cdf[-1] == pytest.approx(1.0)
        # gain scales with the transmit aperture, so the bound drops by
        # exactly sqrt(36/100) pointwise and the larger array dominates
        a36 = np.array(table.select(z=z, n_tx=36).column("peb"))
        a100 = np.array(table.select(z=z, n_tx=100).column("peb"))
        m = np.isfinite(a36) & np.isfinite(a100)
        assert np.allclose(a100[m] / a36[m], 0.6, rtol=1e-9)
        assert np.sum(np.isinf(a36)) == np.sum(np.isinf(a100))


# ---------------------------------------------------------------------------
# convergence traces
# ---------------------------------------------------------------------------

def test_convergence_table_properties():
    table = run_convergence(CFG)
    assert table.columns == ("gamma", "method", "round", "objective",
                             "round_feasible", "best_feasible")
    finals = {}
    for gamma in (0.1, 0.4):
        for method in ("rtr-sca", "rsd-sca"):
            series = table.select(gamma=gamma, method=method)
            rounds = series.column("round")
            assert rounds == list(range(1, len(rounds) + 1))
            flags = series.column("round_feasible")
            assert set(flags) <= {0, 1}
            env = series.column("best_feasible")
            # envelope: nonincreasing, inf exactly until the first
            # feasible round, finite afterwards
            assert all(b <= a for a, b in zip(env, env[1:]))
            first = flags.index(1)
            assert all(math.isinf(v) for v in env[:first])
            assert all(math.isfinite(v) for v in env[first:])
            finals[(gamma, method)] = env[-1]
    # the trust-region stage lands strictly deeper than steepest descent
    for gamma in (0.1, 0.4):
        assert finals[(gamma, "rtr-sca")] < finals[(gamma, "rsd-sca")]
    # under the tight bound, steepest descent stalls far above
    assert finals[(0.1, "rsd-sca")] > 1.5 * finals[(0.1, "rtr-sca")]


def test_convergence_deterministic():
    a = run_convergence(CFG, gammas=(0.4,))
    b = run_convergence(CFG, gammas=(0.4,))
    assert a.to_csv() == b.to_csv()


# ---------------------------------------------------------------------------
# spectral-efficiency sweeps
# ---------------------------------------------------------------------------

def test_se_vs_snr_smoke():
    table = run_se_vs_snr(CFG, snr_db_values=(-10.0, 0.0, 10.0), num_seeds=2)
    assert table.columns == ("snr_db", "method", "se", "ci95", "num_seeds")
    methods = ("omp", "rtr-sca", "pc-omp", "steering")
    assert len(table.rows) == 3 * len(methods)
    assert set(table.column("num_seeds")) == {2}
    assert min(table.column("ci95")) >= 0.0
    for m in methods:
        curve = table.select(method=m).column("se")
        assert len(curve) == 3
        assert np.all(np.diff(curve) > 0.0), f"{m} not increasing in SNR"


def test_se_vs_gamma_smoke():
    table = run_se_vs_gamma(CFG, gammas=(0.4,), toi_sets=((1,), (1, 4)),
                            num_seeds=1)
    assert table.columns == ("gamma", "num_targets", "method", "se", "ci95",
                             "num_seeds")
    assert len(table.rows) == 4
    assert set(table.column("num_targets")) == {1, 2}
    assert min(table.column("se")) > 0.0
    assert set(table.column("ci95")) == {0.0}


def test_se_vs_nrf_smoke():
    table = run_se_vs_nrf(CFG, n_rf_values=(3, 4), num_seeds=1)
    assert table.columns == ("n_rf", "method", "se", "ci95", "num_seeds")
    digital = table.select(method="digital").column("se")
    # the unconstrained reference does not depend on the chain count
    assert digital[0] == pytest.approx(digital[1], rel=1e-12)
    for n_rf in (3, 4):
        ref = table.select(method="digital", n_rf=n_rf).column("se")[0]
        for m in ("rtr-sca", "pc-omp"):
            se = table.select(method=m, n_rf=n_rf).column("se")[0]
            assert se <= ref + 1e-9


# ---------------------------------------------------------------------------
# one-shot design and the check battery
# ---------------------------------------------------------------------------

def test_design_once_trust_region():
    out = design_once(CFG, method="rtr-sca")
    assert out["feasible"] is True
    assert len(out["pebs"]) == 1
    assert out["pebs"][0] <= 1.05 * CFG.gamma_m
    assert out["se"] > 0.0
    row = out["summary"].rows[0]
    assert row[0] == "rtr-sca"
    assert row[4] < 1e-10  # exact per-subcarrier power normalization
    assert row[5] == 1


def test_design_once_pursuit_and_validation():
    out = design_once(CFG, method="pc-omp")
    assert out["feasible"] is True
    assert out["pebs"][0] <= 1.05 * CFG.gamma_m
    with pytest.raises(ValueError, match="method"):
        design_once(CFG, method="zero-forcing")


def test_self_check_all_pass():
    table = self_check(CFG)
    assert table.columns == ("check", "status", "detail")
    assert len(table.rows) == 5
    assert all(status == "pass" for _, status, _ in table.rows)


def test_worker_pool_does_not_change_output(monkeypatch):
    serial = run_peb_heatmap(CFG, 30.0, n_t=16, grid_res=7)
    monkeypatch.setenv("BISAC_WORKERS", "2")
    pooled = run_peb_heatmap(CFG, 30.0, n_t=16, grid_res=7)
    assert serial.to_csv() == pooled.to_csv()
