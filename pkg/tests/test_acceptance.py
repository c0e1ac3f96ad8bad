"""The eleven acceptance criteria, each at its stated tolerance.

Every test prints one PASS/FAIL line (collected again in the terminal
summary) before asserting.
"""

import math
import time

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from stealthsim.adversary import AttackConfig, Attacker
from stealthsim.analysis import (
    InformationBounds,
    check_lti_endtoend,
    divergence_time,
    envelope_holds,
    epsilon_from_kl,
    fit_decay_rate,
    gaussian_kl_same_cov,
    instability_test,
    likelihood_ratio_error,
    max_admissible_bzeta,
    scalar_lti_desk,
)
from stealthsim.control import PENDULUM_NORM_B, PENDULUM_PRESET, VEHICLE_NORM_B, VEHICLE_PRESET, Controller
from stealthsim.dynamics import run_seed, simulate_batch
from stealthsim.detection import ResidualMonitor
from stealthsim.harness.campaign import run_montecarlo
from stealthsim.harness.config import DetectorSpec, preset_config
from stealthsim.plants import case_study, example1_grad_V, example1_map, example1_V, lti_model, vehicle_model
from stealthsim.sensing import PerceptionMap

B_X, B_V = 0.2, 0.05


def test_c01_pendulum_max_admissible_bzeta(verdict):
    t0 = time.perf_counter()
    bz = max_admissible_bzeta(PENDULUM_PRESET, B_X, B_V, 0.5, PENDULUM_NORM_B)
    dt = time.perf_counter() - t0
    ok = bz is not None and 0.045 <= bz <= 0.057 and dt < 1.0
    verdict(1, "pendulum max admissible b_zeta in [0.045, 0.057]", ok, f"b_zeta={bz}, {dt:.2f}s")
    assert ok


def test_c02_vehicle_lti_endtoend(verdict):
    t0 = time.perf_counter()
    cs = case_study("vehicle")
    s0n = float(np.linalg.norm(cs.s0))
    A = cs.model.jacobian(np.zeros(4))
    T = divergence_time(lambda s: A @ s, cs.s0, 1.0 + B_X + s0n)
    rep = check_lti_endtoend(VEHICLE_PRESET, B_X, B_V, s0n, 1.0, T, VEHICLE_NORM_B, InformationBounds.from_model(cs.model), L3=0.0532)
    dt = time.perf_counter() - t0
    L3B = rep.quantities["L3B"]
    ok = abs(L3B - 0.0106) <= 0.0005 and rep.verdict and L3B < VEHICLE_PRESET.c3 and dt < 1.0
    verdict(2, "vehicle L3|B| = 0.0106 +- 0.0005 and verdict pass", ok, f"L3|B|={L3B:.4f}, verdict={rep.verdict}, {dt:.2f}s")
    assert ok


def test_c03_vehicle_alarm_curves(verdict):
    t0 = time.perf_counter()
    cfg = preset_config("vehicle", seed=0).replace(n_runs=200, detectors=DetectorSpec(target_fa=0.05, calibration_runs=200))
    res = run_montecarlo(cfg, keep_batch=False)
    dt = time.perf_counter() - t0
    gaps = {k: float(np.max(np.abs(st.per_step_td - st.per_step_fa))) for k, st in res.alarm_stats.items()}
    ok = set(gaps) == {"chi2", "cusum"} and all(g <= 0.03 for g in gaps.values()) and dt < 120
    detail = ", ".join(f"{k} max gap {g:.3f}" for k, g in sorted(gaps.items())) + f", {dt:.1f}s"
    verdict(3, "vehicle per-step alarm averages within 0.03 (chi2, CUSUM)", ok, detail)
    assert ok


def test_c04_attack_effectiveness(verdict):
    pend = run_montecarlo(preset_config("pendulum", seed=0).replace(n_runs=100, detectors=None), keep_batch=False)
    p_frac = np.mean([0 <= r["exit_step"] <= 500 for r in pend.runs])
    veh = run_montecarlo(preset_config("vehicle", seed=0).replace(n_runs=100, detectors=None), keep_batch=True)
    y = veh.batch.x_a[:, :, 1]
    sign = np.sign(veh.config.attack.s0[1])
    hit = np.any(sign * y >= 1.0, axis=1)
    v_frac = float(np.mean(hit))
    ok = p_frac >= 0.95 and v_frac >= 0.95
    verdict(
        4, "attacks reach |theta| >= 0.5 in 500 steps and |y| >= 1 m in 3000 steps (>= 95%)", ok,
        f"pendulum {p_frac:.2f}, vehicle {v_frac:.2f} (max signed y {np.max(sign * y):.3f} m)",
    )
    assert ok


def test_c05_kl_quadrature(verdict):
    rng = np.random.default_rng(2024)
    errs = []
    for _ in range(20):
        mq, mp = rng.uniform(-3, 3, 2)
        sd = rng.uniform(0.3, 3.0)
        q, p = norm(mq, sd), norm(mp, sd)
        ref, _ = quad(lambda x: q.pdf(x) * (q.logpdf(x) - p.logpdf(x)), mq - 12 * sd, mq + 12 * sd, epsabs=1e-13, limit=400)
        errs.append(abs(gaussian_kl_same_cov([mq], [mp], [[sd * sd]]) - ref))
    ok = max(errs) <= 1e-6
    verdict(5, "Gaussian KL matches 1-D quadrature to 1e-6 (20 triples)", ok, f"max err {max(errs):.1e}")
    assert ok


def test_c06_bound_chain_desk(verdict):
    a, b, k, sw, sv, s0, T, burn = 1.05, 1.0, -0.6, 1e-2, 1e-2, 0.05, 30, 60
    desk = scalar_lti_desk(a, b, k, sw, sv, s0, T, burn=burn)
    model = lti_model([[a]], [[b]], [[1.0]], [[sw]], [[sv]])
    pm = PerceptionMap.tanh([[1.0]], 0.0, 1.0)
    ctrl = Controller.linear([[0.0]], [[k]])
    N = 10_000
    seeds = [run_seed(6, i) for i in range(2 * N)]
    att = Attacker(AttackConfig("lti", [s0], start_step=burn))
    bt = simulate_batch(model, ctrl, pm, burn + T, seeds, attacker=att)
    win = slice(burn, burn + T + 1)
    Y_free = bt.y_s[:N, win, 0]
    Y_att = bt.y_s_a[N:, win, 0]
    p_e, se = likelihood_ratio_error(desk, Y_free, Y_att)
    floor = 1 - epsilon_from_kl(desk.kl_exact)
    part1 = p_e >= floor - 3 * se
    info = InformationBounds.from_covariances([[sw]], [[sv]], [[1.0]])
    r = bt.e[:, win, 0] - bt.x[:, win, 0]
    per_run = info.lam_joint * np.sum(r**2, axis=1)
    part2 = bool(np.all(per_run >= desk.kl_exact))
    ok = part1 and part2
    verdict(
        6, "LR p_e >= 1 - sqrt(1 - e^-KL) (3 SE, N=1e4); summed bound >= exact KL on every run", ok,
        f"p_e={p_e:.4f}, floor={floor:.4f}, se={se:.4f}; min bound {per_run.min():.3f} vs KL {desk.kl_exact:.3f}",
    )
    assert ok


def test_c07_lti_strategy_equivalence(verdict):
    rng = np.random.default_rng(7)
    mismatches = 0
    for i in range(50):
        n = int(rng.integers(1, 5))
        A = rng.standard_normal((n, n))
        A *= rng.uniform(0.5, 1.05) / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-9)
        model = lti_model(A, np.eye(n)[:, :1], np.eye(n)[:1], 1e-4 * np.eye(n), 1e-4 * np.eye(1))
        pm = PerceptionMap.tanh(np.eye(n)[:1], 0.01, 1.0)
        s0 = rng.uniform(-0.01, 0.01, n)
        bz = float(rng.uniform(0, 0.5))
        seeds = [run_seed(i, 0)]
        s1 = simulate_batch(model, Controller.zero(1), pm, 100, seeds, attacker=Attacker(AttackConfig("estimate_based", s0, b_zeta=bz))).s
        s2 = simulate_batch(model, Controller.zero(1), pm, 100, seeds, attacker=Attacker(AttackConfig("open_loop", s0))).s
        mismatches += not np.array_equal(s1, s2)
    ok = mismatches == 0
    verdict(7, "Strategy I == Strategy II bitwise for f(x)=Ax (50 draws, 100 steps)", ok, f"{mismatches} mismatches")
    assert ok


@pytest.mark.parametrize("name", ["pendulum", "vehicle"])
def test_c08_zero_attack_identity(name, verdict):
    cs = case_study(name)
    fields = ("x", "y_s", "y_p", "u", "resid", "stat")
    bad = []
    for strategy in ("estimate_based", "open_loop", "lti"):
        cfg = AttackConfig(strategy, np.zeros(cs.model.state_dim), b_zeta=0.05 if strategy == "estimate_based" else None)
        bt = simulate_batch(
            cs.model, cs.controller, cs.pmap, 300, [run_seed(8, i) for i in range(5)],
            attacker=Attacker(cfg), monitor=ResidualMonitor(),
        )
        bad += [f"{strategy}:{f}" for f in fields if not np.array_equal(getattr(bt, f), getattr(bt, f + "_a" if f != "x" else "x_a"))]
    ok = not bad
    verdict(8, f"s0 = 0 gives bitwise-identical trajectories ({name})", ok, ", ".join(bad) or "all channels equal")
    assert ok


def test_c09_residual_envelope(verdict):
    cs = case_study("pendulum")
    s0n = float(np.linalg.norm(cs.s0))
    gain = math.sqrt(PENDULUM_PRESET.c2 / PENDULUM_PRESET.c1)
    t1 = divergence_time(cs.model.f, cs.s0, cs.alpha)
    seeds = [run_seed(9, i) for i in range(100)]
    bt = simulate_batch(cs.model, cs.controller, cs.pmap, 500, seeds, attacker=Attacker(AttackConfig("estimate_based", cs.s0, b_zeta=0.0)))
    r = np.linalg.norm(bt.e - bt.x, axis=2)
    held = []
    for i in range(len(seeds)):
        beta = fit_decay_rate(r[i], s0n, gain, t_max=t1)
        held.append(beta > 0 and envelope_holds(r[i], s0n, beta, gain, slack=1.1, t_max=t1))
    frac = float(np.mean(held))
    ok = abs(s0n - 1.4e-3) < 5e-5 and frac >= 0.95
    verdict(9, "|r_t| <= 1.1 sqrt(c2/c1) e^(-beta t) |s0| for t <= t1 in >= 95% of runs", ok, f"{frac:.2f} of runs, t1={t1}")
    assert ok


def test_c10_divergence_time(verdict):
    t_double = divergence_time(lambda s: 2 * s, [0.001], 1.0)
    A = vehicle_model().jacobian(np.zeros(4))
    s0 = 0.001 * np.array([0.0, 1.0, 1.0, 0.0])
    t_veh = divergence_time(lambda s: A @ s, s0, 1.0)
    closed = math.ceil((math.sqrt(1.0 / 0.001**2 - 1.0) - 1.0) / 0.25)
    ok = t_double == 10 and abs(t_veh - closed) <= 1
    verdict(10, "divergence time: doubling map 10, vehicle Jordan block within 1 step", ok, f"{t_double}, {t_veh} vs {closed}")
    assert ok


def test_c11_example1_membership(verdict):
    notes, ok = [], True
    for rho in (0.1, 1.0, 10.0):
        r2 = 2 * rho / 0.375 + 1.0
        rep = instability_test(
            example1_map, example1_V, example1_grad_V, lambda n: 0.75 * n**2, lambda n: 2 * n,
            rho, r1=100.0, r2=r2, n_samples=50, seed=int(rho * 10),
        )
        good = rep.analytic_pass and len(rep.exit_steps) == 50 and rep.exit_fraction == 1.0
        ok &= good
        notes.append(f"rho={rho}: analytic={rep.analytic_pass}, exits={rep.exit_fraction:.2f}")
    verdict(11, "Example 1 certified in U_rho and all 50 starts leave B_100", ok, "; ".join(notes))
    assert ok
