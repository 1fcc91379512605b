"""Acceptance criteria 1-9, one test each, each printing a PASS/FAIL line."""

import time

import numpy as np
from conftest import record_acceptance, slack_beamformers, tiny_config

from wbcran.ccp import Mode, SolveStatus, baseline_instance, recover_clustering, solve_instance
from wbcran.harness import CampaignSpec, cell_seed, run_trial
from wbcran.model import check_p0_feasibility, group_min_sinr
from wbcran.scenario import build_instance, desk_config
from wbcran.verify import (
    OracleError, brute_force_small, iterative_tightening, scale_to_tightness, transmit_power,
)

MODES = ("proposed", "no-sc", "no-cache")


def _report(n: int, ok: bool, detail: str):
    record_acceptance(f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}")
    assert ok, detail


def _by_mode(summary, mode):
    return [r for r in summary["records"] if r.mode == mode]


def test_criterion_1_descent(desk_campaign):
    worst, runs = -np.inf, 0
    for r in desk_campaign["records"]:
        if not r.history:
            continue
        h = np.asarray(r.history)
        rel = np.diff(h) / np.abs(h[:-1])
        worst = max(worst, rel.max() if rel.size else -np.inf)
        runs += 1
    elapsed = desk_campaign["elapsed"]
    proposed = len([r for r in _by_mode(desk_campaign, "proposed") if r.history])
    ok = worst <= 1e-6 and proposed == 50 and elapsed < 300
    _report(1, ok, f"{runs} runs ({proposed} proposed), largest relative increase {worst:.2e} "
                   f"(tol 1e-6), campaign time {elapsed:.1f}s (< 300s)")


def test_criterion_2_convergence_speed(desk_campaign):
    recs = _by_mode(desk_campaign, "proposed")
    conv = [r for r in recs if r.status == SolveStatus.CONVERGED.value]
    within10 = sum(r.iterations <= 10 for r in conv) / len(recs)
    within30 = sum(r.iterations <= 30 for r in conv) / len(recs)
    others = {m: sum(r.status == "converged" and r.iterations <= 10 for r in _by_mode(desk_campaign, m))
              / len(_by_mode(desk_campaign, m)) for m in MODES[1:]}
    ok = within10 >= 0.90 and within30 == 1.0
    _report(2, ok, f"proposed: {within10:.0%} within 10 iterations (>= 90%), {within30:.0%} within 30 "
                   f"(= 100%); baselines within 10: {others}")


def test_criterion_3_tightness(desk_campaign):
    gaps = np.concatenate([r.min_sinr_gap for r in desk_campaign["records"]
                           if r.status == SolveStatus.CONVERGED.value])
    ratio_lo, ratio_hi = 1 + gaps.min(), 1 + gaps.max()
    # lower edge: gamma up to floating-point rounding of the fixed point
    ok = ratio_lo >= 1 - 1e-9 and ratio_hi <= 1.01
    _report(3, ok, f"{gaps.size} group minima, SINR/gamma in [{ratio_lo:.12f}, {ratio_hi:.12f}] "
                   f"(required [1, 1.01])")


def test_criterion_4_tightening_oracle():
    rng = np.random.default_rng(4)
    n, seed, bad = 0, 0, []
    max_rounds = 0
    while n < 100:
        inst = build_instance(desk_config(), 4000 + seed)
        seed += 1
        W = slack_beamformers(inst, rng)
        if W is None:
            continue
        n += 1
        try:
            a, W_hat = scale_to_tightness(W, inst)
            ratio = group_min_sinr(W_hat, inst.channels, inst.groups) / inst.gamma
            p0, p1 = transmit_power(W, inst), transmit_power(W_hat, inst)
            if not (a < 1 and abs(ratio.min() - 1) <= 1e-9 and p1 < p0):
                bad.append((seed, "scale", a, ratio.min(), p1 - p0))
            res = iterative_tightening(W, inst, tol=1e-6)
            gap = group_min_sinr(res.beamformers, inst.channels, inst.groups) / inst.gamma - 1
            max_rounds = max(max_rounds, res.rounds)
            if not (np.all(np.diff(res.powers) < 0) and gap.min() >= -1e-9 and gap.max() <= 1e-6):
                bad.append((seed, "iterate", res.rounds, gap.min(), gap.max()))
        except OracleError as exc:
            bad.append((seed, str(exc)))
    _report(4, not bad, f"{n} strictly slack sets, {len(bad)} failures {bad[:3]}, "
                        f"most tightening rounds {max_rounds}")


def test_criterion_5_differential_oracle():
    """First 20 tiny seeds whose oracle finds a feasible clustering."""
    cfg = tiny_config()
    used, above_lb, near_ub, ratios, scanned = 0, 0, 0, [], 0
    consistent = True
    seed = 0
    while used < 20 and seed < 200:
        inst = build_instance(cfg, seed)
        seed += 1
        scanned += 1
        oracle = brute_force_small(inst)
        sol = solve_instance(inst, Mode.PROPOSED)
        feasible = sol.status is not SolveStatus.INFEASIBLE
        if feasible and sol.power.total < oracle.lower_bound - 1e-6:
            consistent = False
        if not oracle.feasible:
            continue
        used += 1
        if feasible and sol.power.total >= oracle.lower_bound - 1e-6:
            above_lb += 1
        if feasible:
            ratios.append(sol.power.total / oracle.upper_bound)
            near_ub += sol.power.total <= 1.10 * oracle.upper_bound
    ok = used == 20 and above_lb == 20 and near_ub >= 16 and consistent
    _report(5, ok, f"{used} feasible tiny instances ({scanned} scanned): {above_lb}/20 above the lower "
                   f"bound, {near_ub}/20 within 1.10x of the best enumerated upper bound (>= 16), "
                   f"worst ratio {max(ratios):.4f}")


def test_criterion_6_baseline_ordering(desk_campaign):
    recs = desk_campaign["records"]
    solved = {(r.trial_index, r.mode): r for r in recs if r.solved}
    paired = [t for t in range(50) if all((t, m) in solved for m in MODES)]
    mean = {m: float(np.mean([solved[(t, m)].total_power for t in paired])) for m in MODES}
    ok = (len(paired) >= 50 and mean["proposed"] <= mean["no-sc"] <= mean["no-cache"]
          and mean["no-cache"] - mean["proposed"] > 0)
    _report(6, ok, f"{len(paired)} paired trials, mean total power proposed {mean['proposed']:.3f} W "
                   f"<= no-sc {mean['no-sc']:.3f} W <= no-cache {mean['no-cache']:.3f} W")


def test_criterion_7_backhaul_relief(desk_campaign):
    prop = [r for r in _by_mode(desk_campaign, "proposed") if r.solved]
    base = [r for r in _by_mode(desk_campaign, "no-cache") if r.solved]
    bh_p, bh_b = np.mean([r.backhauled_groups for r in prop]), np.mean([r.backhauled_groups for r in base])
    tx_p, tx_b = np.mean([r.mbs_tx_power for r in prop]), np.mean([r.mbs_tx_power for r in base])
    ok = bh_p < bh_b and tx_p < tx_b
    _report(7, ok, f"backhauled groups {bh_p:.2f} vs {bh_b:.2f}; MBS transmit power "
                   f"{tx_p:.4f} W vs {tx_b:.4f} W (proposed vs no-cache)")


def test_criterion_8_feasibility_audit(desk_campaign):
    recs = desk_campaign["records"]
    errors = sum(r.status == "error" for r in recs)
    converged = [r for r in recs if r.status == SolveStatus.CONVERGED.value]
    failing = [r for r in converged if not r.feasible or r.worst_violation > 1e-6]
    downgraded = [r for r in recs if "audit failed" in r.message]
    # independent re-audit with a freshly recovered clustering on a subsample
    spec = CampaignSpec(config=desk_config(), trials=50, seed_base=2024)
    reaudit_bad = 0
    for t in range(0, 50, 5):
        inst = build_instance(spec.config, _scenario_seed(spec, t))
        for m in MODES:
            sol = solve_instance(inst, m, seed=_solver_seed(spec, t, m))
            if sol.status is not SolveStatus.CONVERGED:
                continue
            audited = baseline_instance(inst, Mode(m), spec.options())
            C = recover_clustering(sol.beamformers, 1e-6, inst.cfg.M)
            reaudit_bad += not check_p0_feasibility(sol.beamformers, C, audited, 1e-6).feasible
    ok = errors == 0 and not failing and not downgraded and reaudit_bad == 0
    _report(8, ok, f"{len(converged)}/{len(recs)} converged, {len(failing)} failing the audit, "
                   f"{len(downgraded)} downgraded by it, {errors} exceptions, "
                   f"{reaudit_bad} failures in 30 independent re-audits")


def _scenario_seed(spec, t):
    return cell_seed(spec.seed_base, t, "popc")


def _solver_seed(spec, t, mode):
    return cell_seed(spec.seed_base, t, "popc", mode) % (2 ** 31)


def test_criterion_9_determinism():
    t0 = time.perf_counter()
    mismatched, checked = [], 0
    for strategy in ("popc", "ranc", "mosc"):
        spec = CampaignSpec(config=desk_config(), trials=3, seed_base=99, strategies=[strategy],
                            modes=list(MODES))
        for t in range(3):
            for m in MODES:
                a, b = run_trial(spec, t, m, strategy), run_trial(spec, t, m, strategy)
                checked += 1
                if a.to_json() != b.to_json():
                    mismatched.append((strategy, t, m))
    _report(9, not mismatched, f"{checked} (config, seed, mode) cells repeated, {len(mismatched)} "
                               f"JSON mismatches, {time.perf_counter() - t0:.1f}s")
