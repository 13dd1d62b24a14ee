"""Exit criteria of the build, one test per criterion.

A PASS/FAIL line per criterion is printed in the pytest terminal summary.
"""
import itertools
import math
import time

import numpy as np
import pytest

import ioncrystal.crystal as crystal
from ioncrystal.cli import main
from ioncrystal.crystal import TrapConfig, gradient, solve_equilibrium
from ioncrystal.modes import cusp_metric, spectrum
from ioncrystal.oracle import exact_observables
from ioncrystal.phonons import observables
from ioncrystal.sweep import (
    SweepSchedule, adiabatic_check, effective_mass_ratio, microseconds_to_time, run_sweep,
)
from scipy.optimize import bisect

FIG4 = TrapConfig(6, 2, 43 / 40, 0.1, 0.0, 2)


def test_1_equilibrium(criterion):
    crystal._solve_cached.cache_clear()
    t0 = time.perf_counter()
    u2 = solve_equilibrium(2).u
    u3 = solve_equilibrium(3).u
    residuals = [np.max(np.abs(gradient(solve_equilibrium(n).u))) for n in range(2, 31)]
    elapsed = time.perf_counter() - t0
    e2 = np.max(np.abs(u2 - np.array([-1, 1]) * 0.25 ** (1 / 3)))
    e3 = np.max(np.abs(u3 - np.array([-1, 0, 1]) * 1.25 ** (1 / 3)))
    criterion(f"N=2 err {e2:.1e}, N=3 err {e3:.1e}, max residual N<=30 {max(residuals):.1e}, {elapsed:.2f}s")
    assert e2 <= 1e-10 and e3 <= 1e-10
    assert max(residuals) <= 1e-12
    assert elapsed < 1.0


def test_2_fig2_spectrum(criterion):
    t0 = time.perf_counter()
    fam = TrapConfig(6, 2, 1.0, 0.1)
    curves = np.array([spectrum(fam.with_(mass_ratio=m)).freqs for m in np.linspace(0.3, 1.6, 200)])
    lim = TrapConfig(6, 2, 2.0, 0.01)
    w = spectrum(lim).freqs
    wx = math.sqrt(1 - 0.01**2 / 2)
    ll_err = abs(w[-1] - 1 / 2.0)
    rest_err = np.max(np.abs(w[:-1] - wx))
    cusps = [cusp_metric(fam, a) for a in (0.3, 0.1, 0.05)]
    elapsed = time.perf_counter() - t0
    criterion(f"LL err {ll_err:.1e}, others err {rest_err:.1e}, cusp(0.3,0.1,0.05)="
              f"{cusps[0]:.4f},{cusps[1]:.4f},{cusps[2]:.4f}, {elapsed:.2f}s")
    assert curves.shape == (200, 6) and np.all(np.isfinite(curves))
    assert ll_err <= 5e-3 and rest_err <= 5e-3
    assert cusps[0] < cusps[1] < cusps[2]
    assert elapsed < 5.0


def test_3_fig3_phases(criterion):
    t0 = time.perf_counter()
    cond = observables(TrapConfig(15, 8, 43 / 40, 0.01, 0.0, 2))
    cund = observables(TrapConfig(15, 8, 40 / 43, 0.01, 0.0, 2))
    elapsed = time.perf_counter() - t0
    others = np.arange(15) != 7
    criterion(
        f"condensed n8={cond.mean[7]:.4f} max other mean {cond.mean[others].max():.1e} "
        f"max var {cond.variance.max():.1e}; conducting n8={cund.mean[7]:.1e} "
        f"sum others {cund.mean[others].sum():.4f} dn8={cund.variance[7]:.1e}; {elapsed:.2f}s"
    )
    assert 1.9 <= cond.mean[7] <= 2.1
    assert np.all(cond.mean[others] <= 0.05)
    assert np.all(cond.variance <= 0.05)
    assert cund.mean[7] <= 0.05
    assert 1.9 <= cund.mean[others].sum() <= 2.1
    assert cund.variance[7] <= 0.05
    assert elapsed < 5.0


def test_4_transition_point(criterion):
    t0 = time.perf_counter()
    sch = SweepSchedule.to_max(0.8, microseconds_to_time(60.0), steps=2001)
    res = run_sweep(FIG4, sch)
    closed = math.sqrt(1 - (40 / 43) ** 2)
    small = run_sweep(FIG4.with_(alpha=1e-3), sch).transition_omega_s
    direct = bisect(lambda b: effective_mass_ratio(43 / 40, b) - 1.0, 0.0, 0.8, xtol=1e-14)
    elapsed = time.perf_counter() - t0
    criterion(f"transition {res.transition_omega_s:.6f} (alpha=0.1), {small:.8f} (alpha=1e-3), "
              f"closed form {closed:.8f}; {elapsed:.2f}s")
    assert 0.35 <= res.transition_omega_s <= 0.39
    assert abs(small - closed) <= 1e-6
    assert abs(direct - closed) <= 1e-6
    assert elapsed < 10.0


def test_5_oracle_equivalence(criterion):
    t0 = time.perf_counter()
    worst = 0.0
    count = 0
    for n_ions, mu, alpha, beta, n in itertools.product([2, 3], [0.5, 1.0, 2.0], [0.01, 0.1],
                                                          [0.0, 0.5], [0, 1, 2]):
        for site in range(1, n_ions + 1):
            cfg = TrapConfig(n_ions, site, mu, alpha, beta, n)
            sp = spectrum(cfg)
            a, b = observables(cfg, sp), exact_observables(cfg, sp)
            worst = max(worst, np.max(np.abs(a.mean - b.mean)), np.max(np.abs(a.variance - b.variance)),
                        np.max(np.abs(a.correlation - b.correlation)))
            count += 1
    elapsed = time.perf_counter() - t0
    criterion(f"{count} configs, max deviation {worst:.1e}; {elapsed:.1f}s")
    assert worst <= 1e-6
    assert elapsed < 120.0


def test_6_sum_rule(criterion):
    rng = np.random.default_rng(20240611)
    lowest, eq_err = np.inf, 0.0
    for _ in range(100):
        n_ions = int(rng.integers(2, 16))
        site = int(rng.integers(1, n_ions + 1))
        mu = float(np.exp(rng.uniform(np.log(0.3), np.log(3.0))))
        n = int(rng.integers(0, 5))
        cfg = TrapConfig(n_ions, site, mu, float(rng.uniform(0.005, 0.15)), float(rng.uniform(0, 1)), n)
        lowest = min(lowest, observables(cfg).mean.sum() - n)
        eq = observables(cfg.with_(alpha=0.005, dipole_beta=0.0)).mean.sum()
        eq_err = max(eq_err, abs(eq - n))
    criterion(f"min(sum - n) = {lowest:.2e}, max |sum - n| at alpha=0.005: {eq_err:.1e}")
    assert lowest >= -1e-10
    assert eq_err <= 1e-2


def test_7_sweep_structure(criterion):
    slow = SweepSchedule.to_max(0.8, 100 * microseconds_to_time(60.0), steps=2001)
    res = run_sweep(FIG4, slow)
    anti = np.max(np.abs(res.s + np.swapaxes(res.s, 1, 2)))
    sym = np.max(np.abs(res.r - np.swapaxes(res.r, 1, 2)))
    double = SweepSchedule.to_max(0.8, slow.duration, steps=4001)
    shift = abs(run_sweep(FIG4, double).transition_omega_s - res.transition_omega_s)
    fast = slow.compressed(100)
    rep_slow = adiabatic_check(res, slow)
    rep_fast = adiabatic_check(run_sweep(FIG4, fast), fast)
    criterion(f"|S+S^T| {anti:.1e}, |R-R^T| {sym:.1e}, grid shift {shift:.1e}, "
              f"ratio {rep_slow.worst_ratio:.3f} -> {rep_fast.worst_ratio:.2f} under T/100")
    assert anti <= 1e-8 and sym <= 1e-8
    assert shift < 1e-6
    assert rep_slow.passed and not rep_fast.passed


@pytest.mark.parametrize("argv", [
    ["equilibrium", "--n", "9"],
    ["spectrum", "--n", "6", "--impurity", "2", "--alpha", "0.1", "--scan", "mass_ratio", "0.3", "1.6", "50"],
    ["observables", "--n", "15", "--impurity", "8", "--mass-ratio", "1.075", "--ll-phonons", "2"],
    ["sweep", "--n", "6", "--impurity", "2", "--mass-ratio", "1.075", "--alpha", "0.1",
     "--omega-s-max", "0.8", "--steps", "501"],
    ["phase-diagram", "--n", "6", "--scan", "mass_ratio", "0.5", "2", "6", "--scan", "dipole_beta",
     "0", "0.8", "3", "--jobs", "3"],
    ["oracle-check", "--n", "3", "--mass-ratio", "0.5", "--ll-phonons", "1"],
], ids=lambda a: a[0])
def test_8_determinism(criterion, tmp_path, argv):
    outputs = []
    for fmt in ("csv", "json"):
        for run in range(2):
            path = tmp_path / f"{fmt}{run}"
            assert main(argv + ["--format", fmt, "-o", str(path)]) == 0
            outputs.append(path.read_bytes())
    same = outputs[0] == outputs[1] and outputs[2] == outputs[3]
    criterion(f"{argv[0]}: csv and json reruns byte-identical = {same}")
    assert same
