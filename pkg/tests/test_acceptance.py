"""End-to-end acceptance checks.

Each test prints one PASS/FAIL line (echoed in the terminal summary) and
covers one numbered claim about the simulator:

 1. interaction-free tester rates at T = 1/2, object present and absent
 2. interaction-free efficiency grows with T toward the T -> 1 limit
 3. detector-distance invariance of two-detector race outcomes
 4. fringe visibility: classical intensity ratio vs quantum fitted contrast
 5. partial absorption: fringe amplitude sqrt(a) (foil) vs a (chopper)
 6. delayed choice: perfect fringes / even split / per-trial coin equality
 7. entangled pair: conditioned fringes, flat unconditioned wing, both orders
 8. screen pixel statistics follow the weight profile (chi-square + oracle)
 9. packet spreading closed forms, massive vs photon
10. engine invariants: one contraction, norm/unitarity bounds, exact nulls

The full module runs a few million trials and takes on the order of ten
minutes on one core.
"""

import math

import numpy as np
import pytest

from reduxim.experiments import (
    build_circuit,
    default_phi_grid,
    run_born_screen,
    run_delayed_choice,
    run_elitzur_vaidman,
    run_entangled_delayed_choice,
    run_fig1,
    run_partial_absorption,
    run_spreading,
    run_visibility,
)
from reduxim.optics import run_trial
from reduxim.reduction import ALPHA_S, phase_match
from reduxim.stats import TrialStream

from support import discretized_race, ev_probabilities, four_sigma

SEED = 42
N = 200_000
T_GRID = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95)
A_GRID = (0.1, 0.25, 0.5, 0.75)
N_ENT = 60_000

TWO_PI = 2.0 * math.pi


def check(log, num, ok, detail):
    line = f"[criterion {num:2d}] {'PASS' if ok else 'FAIL'}: {detail}"
    log(line)
    print(line)
    assert ok, line


# ------------------------------------------------------------ shared heavy runs


@pytest.fixture(scope="module")
def ev_present():
    return {T: run_elitzur_vaidman(True, T, N, SEED) for T in T_GRID}


@pytest.fixture(scope="module")
def ev_absent():
    return run_elitzur_vaidman(False, 0.5, N, SEED)


@pytest.fixture(scope="module")
def delayed():
    return {policy: run_delayed_choice(policy, N, SEED, keep_outcomes=True)
            for policy in ("in", "out", "coinflip")}


def test_criterion_01_interaction_free_rates(ev_present, ev_absent, criterion_log):
    stats = ev_present[0.5]
    expected = ev_probabilities(0.5, True)
    devs = {k: abs(stats.frequency(k) - p) for k, p in expected.items()}
    eta_dev = abs(stats.eta - 0.5)
    ok = (max(devs.values()) <= 0.01 and eta_dev <= 0.03
          and ev_absent.counts["D1"] == N and ev_absent.counts["D2"] == 0)
    check(criterion_log, 1, ok,
          f"T=1/2 present freq devs {max(devs.values()):.4f} (<=0.01), "
          f"eta={stats.eta:.4f} (0.5+-0.03), absent D1={ev_absent.counts['D1']}/{N} "
          f"D2={ev_absent.counts['D2']}")


def test_criterion_02_efficiency_grows_with_T(ev_present, criterion_log):
    etas = [ev_present[T].eta for T in T_GRID]
    max_dev = max(abs(e - T) for e, T in zip(etas, T_GRID))
    increasing = all(b > a for a, b in zip(etas, etas[1:]))
    ok = increasing and etas[-1] > 0.8 and max_dev <= 0.03
    check(criterion_log, 2, ok,
          f"eta(T) = {', '.join(f'{e:.3f}' for e in etas)} for T = {T_GRID}; "
          f"monotone={increasing}, eta(0.95)={etas[-1]:.3f} (>0.8), "
          f"max |eta-T| = {max_dev:.4f} (<=0.03)")


def test_criterion_03_distance_invariance(criterion_log):
    near = run_fig1("b", N, SEED, distance_scale=1.0, keep_outcomes=True)
    far = run_fig1("b", N, SEED, distance_scale=1000.0, keep_outcomes=True)
    same_trials = near[1] == far[1]
    same_counts = near[0].counts == far[0].counts
    p_d1 = near[0].frequency("D1")
    fair = abs(p_d1 - 0.5) <= four_sigma(0.5, N)
    ok = same_trials and same_counts and fair
    check(criterion_log, 3, ok,
          f"scale 1 vs 1000: per-trial outcomes identical={same_trials}, "
          f"counts identical={same_counts}, P(D1)={p_d1:.4f} (0.5+-4sigma)")


def test_criterion_04_visibility_conventions(criterion_log):
    classical = run_visibility("classical", 0, SEED)
    quantum = run_visibility("quantum", N, SEED)
    c_ok = abs(classical.visibility - 0.01) <= 1e-6
    q_ok = abs(quantum.visibility - 1.0) <= 0.02
    a_ok = abs(quantum.absorbed_fraction - 0.99) <= 0.005
    ok = c_ok and q_ok and a_ok
    check(criterion_log, 4, ok,
          f"classical V={classical.visibility:.6f} (0.01 exactly), quantum "
          f"V={quantum.visibility:.4f} (1+-0.02), absorbed="
          f"{quantum.absorbed_fraction:.4f} (0.99+-0.005)")


def test_criterion_05_partial_absorption_amplitudes(criterion_log):
    grid = default_phi_grid()
    details = []
    worst = 0.0
    for absorber, target in (("foil", math.sqrt), ("chopper", float)):
        scans = run_partial_absorption(A_GRID, grid, N, SEED, absorber=absorber)
        for a in A_GRID:
            dev = abs(scans[a].normalized_amplitude - target(a))
            worst = max(worst, dev)
            details.append(f"{absorber} a={a}: A_n={scans[a].normalized_amplitude:.3f}")
    ok = worst <= 0.02
    check(criterion_log, 5, ok,
          f"max |A_n - law| = {worst:.4f} (<=0.02) over " + "; ".join(details))


def test_criterion_06_delayed_choice(delayed, criterion_log):
    stat_in = delayed["in"].by_choice["in"]
    stat_out = delayed["out"].by_choice["out"]
    coin = delayed["coinflip"]
    in_dark = stat_in.counts.get("D2", 0)
    in_bright = stat_in.frequency("D1")
    out_dev = max(abs(stat_out.frequency(k) - 0.5) for k in ("D1", "D2"))
    by_index = {"in": delayed["in"].outcomes, "out": delayed["out"].outcomes}
    mismatches = sum(
        key != by_index[tag][i][1]
        for i, (tag, key) in enumerate(coin.outcomes))
    n_in = coin.by_choice["in"].n_trials
    coin_balance = abs(n_in / N - 0.5)
    ok = (in_dark == 0 and in_bright == 1.0 and out_dev <= 0.01
          and mismatches == 0 and coin_balance <= four_sigma(0.5, N))
    check(criterion_log, 6, ok,
          f"in: D2 clicks={in_dark} (must be 0), P(D1)={in_bright} (must be 1); "
          f"out: max dev from 0.5 = {out_dev:.4f} (<=0.01); coinflip: "
          f"{mismatches} of {N} trials differ from the same-coin static run "
          f"(must be 0)")


def test_criterion_07_entangled_delayed_choice(criterion_log):
    grid = default_phi_grid()
    res = {order: run_entangled_delayed_choice(grid, order, N_ENT, SEED)
           for order in ("alice-first", "bob-first")}
    vis = {o: r.cv_scan.visibility for o, r in res.items()}
    flat_dev = max(abs(v - 0.5) for r in res.values() for v in r.bob_given_ch)
    marg_tol = 4.0 * 0.5 / math.sqrt(N_ENT)
    marg_dev = max(abs(v - 0.5)
                   for r in res.values() for v in r.alice_cv_marginal)
    # order invariance: the joint tables agree cell by cell within 4 sigma
    joint_dev = 0.0
    for ja, jb in zip(res["alice-first"].joint_counts,
                      res["bob-first"].joint_counts):
        for key in set(ja) | set(jb):
            fa, fb = ja.get(key, 0) / N_ENT, jb.get(key, 0) / N_ENT
            pooled = 0.5 * (fa + fb)
            sig = math.sqrt(max(pooled * (1 - pooled), 1e-12) * 2.0 / N_ENT)
            joint_dev = max(joint_dev, abs(fa - fb) / (4.0 * sig))
    i_pi = min(range(len(grid)), key=lambda i: abs(grid[i] - math.pi))
    exact_nulls = all(r.bob_given_cv[0] == 1.0 and r.bob_given_cv[i_pi] == 0.0
                      for r in res.values())
    ok = (min(vis.values()) >= 0.97 and flat_dev <= 0.01
          and marg_dev <= marg_tol and joint_dev <= 1.0 and exact_nulls)
    check(criterion_log, 7, ok,
          f"V(C_V) = {vis['alice-first']:.4f}/{vis['bob-first']:.4f} (>=0.97); "
          f"max |P(BD1|C_H) - 1/2| = {flat_dev:.4f} (<=0.01); max marginal dev "
          f"= {marg_dev:.4f} (<=4sigma={marg_tol:.4f}); worst joint-table "
          f"disagreement = {joint_dev:.2f}*4sigma (<=1); exact nulls at "
          f"phi=0, pi: {exact_nulls}")


def test_criterion_08_screen_statistics(criterion_log):
    cases = [((0.3, 0.7), N), ((0.1, 0.2, 0.3, 0.4), 2 * N)]
    details = []
    ok = True
    for profile, n in cases:
        res = run_born_screen(profile, n, SEED)
        oracle = discretized_race(list(profile))
        oracle_dev = max(abs(o - w) for o, w in zip(oracle, profile))
        mc_dev = max(abs(f - o) / four_sigma(o, n)
                     for f, o in zip(res.frequencies, oracle))
        ok = ok and res.p_value > 0.01 and oracle_dev <= 5e-4 and mc_dev <= 1.0
        details.append(f"{profile}: chi2 p={res.p_value:.3f} (>0.01), "
                       f"race-oracle gap {oracle_dev:.1e}, "
                       f"max |freq-oracle| = {mc_dev:.2f}*4sigma")
    check(criterion_log, 8, ok, "; ".join(details))


def test_criterion_09_spreading_closed_forms(criterion_log):
    massive = run_spreading(1e-8, 0.05, 0.01, "massive")
    photon = run_spreading(1e-8, 0.05, 0.01, "photon")
    m_ok = (massive["spread_increase"] == 5.0e-4
            and massive["sigma_y"] == 1e-8 + 5.0e-4)
    p_ok = photon["spread_increase"] == 0.0 and photon["sigma_y"] == 1e-8
    ok = m_ok and p_ok
    check(criterion_log, 9, ok,
          f"massive: increase={massive['spread_increase']!r} (= 5e-4 exactly), "
          f"sigma_y={massive['sigma_y']!r}; photon: sigma_y="
          f"{photon['sigma_y']!r} (unchanged)")


def audit_run(params, n, label, entangled=False):
    """Run n audited trials; returns worst-case audit metrics."""
    if entangled:
        from reduxim.experiments import build_entangled_circuit
        graph, make, _ = build_entangled_circuit(params)
    else:
        graph, make, _ = build_circuit(params)
    stream = TrialStream(SEED, f"audit/{label}")
    worst = {"norm": 0.0, "unitarity": 0.0}
    contractions = []
    kinds = set()
    for i in range(n):
        stream.seek(i)
        res = run_trial(graph, make(stream), stream, audit=True)
        worst["norm"] = max(worst["norm"], res.audit["max_norm_error"])
        worst["unitarity"] = max(worst["unitarity"],
                                 res.audit["max_unitarity_error"])
        contractions.append(tuple(res.audit["contractions"]))
        for idx in range(len(res.audit["contractions"])):
            kinds.add(res.outcome(idx)[0])
    return worst, contractions, kinds


def test_criterion_10_engine_invariants(criterion_log):
    # phase matching against an independent circular-distance computation
    rng = np.random.default_rng(SEED)
    mismatch = 0
    for _ in range(10_000):
        a1, a2 = rng.random() * TWO_PI, rng.random() * TWO_PI
        d = min(abs(a1 - a2), TWO_PI - abs(a1 - a2))
        mismatch += phase_match(a1, a2) != (d <= ALPHA_S / 2)

    cases = [
        ("ev", {"circuit": "ev", "T": 0.5, "object_present": True}, 2000,
         False, {"click", "absorbed"}, {(1,)}),
        ("visibility", {"circuit": "visibility", "phi": 1.0}, 1000,
         False, {"click", "absorbed"}, {(1,)}),
        ("delayed", {"circuit": "delayed", "policy": "in"}, 500,
         False, {"click"}, {(1,)}),
        ("partial", {"circuit": "partial", "a": 0.5, "phi": 0.7}, 2000,
         False, {"click", "absorbed", "none"}, {(0,), (1,)}),
        ("entangled", {"circuit": "entangled", "phi": 1.0,
                       "order": "alice-first"}, 500,
         True, {"click"}, {(1, 1)}),
    ]
    worst_norm = worst_unit = 0.0
    kind_ok = contraction_ok = True
    for label, params, n, entangled, allowed_kinds, allowed_contr in cases:
        worst, contractions, kinds = audit_run(params, n, label, entangled)
        worst_norm = max(worst_norm, worst["norm"])
        worst_unit = max(worst_unit, worst["unitarity"])
        kind_ok = kind_ok and kinds <= allowed_kinds
        contraction_ok = contraction_ok and set(contractions) <= allowed_contr

    ok = (mismatch == 0 and worst_norm <= 1e-12 and worst_unit <= 1e-12
          and kind_ok and contraction_ok)
    check(criterion_log, 10, ok,
          f"phase-match brute force: {mismatch}/10000 mismatches; worst norm "
          f"error {worst_norm:.2e}, worst splitter unitarity error "
          f"{worst_unit:.2e} (<=1e-12); outcome kinds legal={kind_ok}; "
          f"contraction counts legal={contraction_ok}")
