import numpy as np
import pytest
from conftest import manual_instance, slack_beamformers, tiny_config

from wbcran.ccp import Mode, SolveStatus, solve_instance
from wbcran.model import BeamformerSet, Clustering, check_p0_feasibility, group_min_sinr
from wbcran.scenario import SystemConfig, build_instance, desk_config
from wbcran.verify import (
    OracleError, brute_force_small, comparison_rows, fixed_clustering_bounds, iterative_tightening,
    optimal_bandwidth, scale_to_tightness, sdr_lower_bound, transmit_power,
)


def _beams(w):
    w = np.atleast_2d(np.asarray(w, complex))
    return BeamformerSet(w, np.zeros((len(w), 1), complex), np.zeros(len(w)))


def _unit_gamma_cfg(**kw):
    base = dict(M=1, K=1, N_m=1, N_s=1, F=1, Z=0, r_l=1.0)  # gamma = 1
    base.update(kw)
    return SystemConfig(**base)


def test_scale_single_user_closed_form():
    inst = manual_instance([[1.0]], [1], cfg=_unit_gamma_cfg())
    W = _beams([[2.0]])
    a, W_hat = scale_to_tightness(W, inst)
    assert a == pytest.approx(0.25)
    assert group_min_sinr(W_hat, inst.channels, inst.groups)[0] == pytest.approx(1.0, abs=1e-12)
    assert transmit_power(W_hat, inst) == pytest.approx(a * transmit_power(W, inst))


def test_scale_rejects_tight_input():
    inst = manual_instance([[1.0]], [1], cfg=_unit_gamma_cfg())
    with pytest.raises(OracleError):
        scale_to_tightness(_beams([[1.0]]), inst)


def test_tightening_noop_when_tight():
    inst = manual_instance([[1.0]], [1], cfg=_unit_gamma_cfg())
    W = _beams([[1.0]])
    res = iterative_tightening(W, inst)
    assert res.rounds == 0 and np.array_equal(res.beamformers.w, W.w)


def test_tightening_orthogonal_one_round():
    cfg = _unit_gamma_cfg(K=2, N_s=2, F=2)
    inst = manual_instance([[1.0, 0.0], [0.0, 1.0]], [1, 2], cfg=cfg)
    W = _beams([[1.0, 0.0], [0.0, 3.0]])  # group 1 tight, group 2 at SINR 9
    res = iterative_tightening(W, inst)
    assert res.rounds == 1
    assert np.allclose(group_min_sinr(res.beamformers, inst.channels, inst.groups), 1.0)
    assert res.powers[1] < res.powers[0]


def test_tightening_rejects_infeasible_input():
    inst = manual_instance([[1.0]], [1], cfg=_unit_gamma_cfg())
    with pytest.raises(OracleError):
        iterative_tightening(_beams([[0.5]]), inst)


@pytest.mark.parametrize("seed", range(6))
def test_tightening_monotone_on_desk_instances(seed):
    rng = np.random.default_rng(seed)
    for s in range(seed * 100, seed * 100 + 100):
        inst = build_instance(desk_config(), s)
        if inst.L >= 3:
            W = slack_beamformers(inst, rng)
            if W is not None:
                break
    else:
        pytest.skip("no L >= 3 instance with reachable targets")
    res = iterative_tightening(W, inst)
    assert np.all(np.diff(res.powers) < 0)
    gap = group_min_sinr(res.beamformers, inst.channels, inst.groups) / inst.gamma - 1
    assert gap.min() >= -1e-9 and gap.max() <= 1e-6


def test_optimal_bandwidth_beats_dense_grid():
    r = 1.5
    grid = np.linspace(0.01, 0.99, 491)
    for costs in ([1.0, 1.0], [1.0, 3.0], [0.2, 1.0, 5.0]):
        costs = np.asarray(costs)
        b = optimal_bandwidth(costs, r)
        f = lambda x: np.sum(costs * (2.0 ** (r / x) - 1), axis=-1)
        if costs.size == 2:
            cand = np.column_stack([grid, 1 - grid])
        else:
            b1, b2 = np.meshgrid(grid, grid)
            cand = np.column_stack([b1.ravel(), b2.ravel(), 1 - b1.ravel() - b2.ravel()])
            cand = cand[cand[:, 2] > 0.005]
        assert b.sum() == pytest.approx(1.0, abs=1e-9)
        assert f(b) <= f(cand).min() * (1 + 1e-12)
    assert np.allclose(optimal_bandwidth([2.0, 2.0], r), 0.5)
    assert optimal_bandwidth([5.0], r).tolist() == [1.0]


def _unicast_cached(seed):
    cfg = SystemConfig(M=2, K=2, N_m=2, N_s=2, F=2, Z=2, e=100.0)
    return build_instance(cfg, seed, requests=[1, 2])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_sdr_tight_for_unicast(seed):
    inst = _unicast_cached(seed)
    rec = fixed_clustering_bounds(inst, np.ones((2, 2), int))
    assert np.isfinite(rec.upper)
    assert rec.backhaul_lower == 0.0
    assert rec.upper == pytest.approx(rec.lower, rel=1e-5)
    rep = check_p0_feasibility(rec.beamformers, Clustering(np.ones((2, 2), int)), inst, 1e-6)
    assert rep.feasible


def test_sdr_zero_rate_limit():
    inst = build_instance(tiny_config(r_l=1e-7), 5)
    C = np.ones((2, inst.L), int)
    lb = sdr_lower_bound(inst, C)
    const = float((C * (1 - inst.cached)).sum() * inst.cfg.P_sp + inst.cfg.P_c.sum())
    assert lb == pytest.approx(const, abs=1e-3)


@pytest.mark.parametrize("seed", range(8))
def test_bounds_ordered(seed):
    inst = build_instance(tiny_config(), seed)
    for bits in ([1, 1, 1, 1], [1, 0, 1, 1], [0, 1, 1, 0]):
        C = np.array(bits[:2 * inst.L]).reshape(2, inst.L)
        rec = fixed_clustering_bounds(inst, C, n_random=50)
        if np.isfinite(rec.upper):
            assert rec.lower <= rec.upper * (1 + 1e-7)
            rep = check_p0_feasibility(rec.beamformers, Clustering(C), inst, 1e-6)
            assert rep.feasible


def test_enumeration_base_case():
    cfg = SystemConfig(M=1, K=2, N_m=2, N_s=1, F=1, Z=0, e=60.0)
    inst = build_instance(cfg, 0)
    res = brute_force_small(inst)
    assert len(res.records) == 2
    assert not np.isfinite(res.records[0].upper)
    assert res.feasible == np.isfinite(res.records[1].upper)
    assert res.lower_bound <= res.upper_bound


def test_enumeration_limit():
    with pytest.raises(OracleError):
        brute_force_small(build_instance(desk_config(), 0))


def test_fully_cached_oracle_is_pure_multicast():
    cfg = tiny_config(Z=2)
    inst = build_instance(cfg, 1)
    res = brute_force_small(inst)
    assert all(r.backhaul_lower in (0.0, np.inf) for r in res.records)
    assert all(r.beamformers is None or not r.beamformers.v.any() for r in res.records)


@pytest.mark.parametrize("seed", range(5))
def test_single_group_cached_ccp_matches_sdr(seed):
    cfg = SystemConfig(M=2, K=3, N_m=2, N_s=1, F=1, Z=1, e=100.0)
    inst = build_instance(cfg, seed)
    assert inst.L == 1 and inst.cached.all()
    sol = solve_instance(inst, Mode.PROPOSED)
    assert sol.status is SolveStatus.CONVERGED
    lb = sdr_lower_bound(inst, sol.clustering.C)
    assert lb <= sol.power.total + 1e-6
    assert sol.power.total <= 1.05 * lb


def test_oracle_json_and_rows():
    inst = build_instance(tiny_config(), 2)
    res = brute_force_small(inst, per_cluster_solver=lambda i, C: fixed_clustering_bounds(i, C, 20))
    row = comparison_rows(2, res.upper_bound, res)
    assert row[0] == 2
    if res.feasible:
        assert float(row[-1]) == pytest.approx(1.0)
    assert '"records"' in res.to_json()


def test_tightening_unfiltered_selection_still_feasible():
    # select=0 reproduces the plain slack-set rule; each round must stay feasible and descend
    rng = np.random.default_rng(11)
    inst = next(i for i in (build_instance(desk_config(), s) for s in range(50)) if i.L >= 3)
    W = slack_beamformers(inst, rng)
    res = iterative_tightening(W, inst, max_rounds=2000, select=0.0)
    assert np.all(np.diff(res.powers) < 0)
    assert res.residual_gap <= 1e-6
