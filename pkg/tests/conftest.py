import time

import numpy as np
import pytest

from wbcran.harness import CampaignSpec, run_campaign
from wbcran.scenario import SystemConfig, build_instance, desk_config

ACCEPTANCE_LINES: list[str] = []


def tiny_config(**overrides) -> SystemConfig:
    """Two SBSs, single-antenna receivers, two-antenna MBS, at most two groups."""
    base = dict(M=2, K=3, N_m=2, N_s=1, F=2, Z=1, e=100.0)
    base.update(overrides)
    return SystemConfig(**base)


@pytest.fixture(scope="session")
def desk_instance():
    return build_instance(desk_config(), seed=1000)


@pytest.fixture(scope="session")
def desk_campaign():
    """The 50-trial desk campaign shared by the acceptance criteria."""
    spec = CampaignSpec(config=desk_config(), trials=50, seed_base=2024,
                        strategies=["popc"], modes=["proposed", "no-sc", "no-cache"], workers=1)
    t0 = time.perf_counter()
    summary = run_campaign(spec)
    summary["elapsed"] = time.perf_counter() - t0
    return summary


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def record_acceptance(line: str):
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def manual_instance(h, requests, *, H=None, S=None, cfg=None, noise_user=1.0, noise_sbs=1.0):
    """Instance with hand-picked channels; ``h`` is (K, M*N_s)."""
    from wbcran.scenario import (CachePlacement, ChannelSet, Instance, RequestProfile, Topology,
                                 build_groups)
    h = np.atleast_2d(np.asarray(h, complex))
    K = h.shape[0]
    requests = np.asarray(requests, int)
    cfg = cfg or SystemConfig(M=1, K=K, N_m=1, N_s=h.shape[1], F=int(requests.max()), Z=0)
    if H is None:
        H = np.ones((cfg.M, cfg.N_m, cfg.N_s), complex)
    if S is None:
        S = np.zeros((cfg.M, cfg.F), int)
    ch = ChannelSet(np.asarray(H, complex), h, np.full(cfg.M, float(noise_sbs)),
                    np.full(K, float(noise_user)))
    topo = Topology(np.zeros(2), np.zeros((cfg.M, 2)), np.zeros((K, 2)))
    req = RequestProfile(requests)
    return Instance(cfg, topo, ch, req, build_groups(req), CachePlacement(np.asarray(S, int), "popc"))


def slack_beamformers(instance, rng, margin=(0.05, 1.0)):
    """Random access beamformers with every group strictly above its SINR target.

    Directions are random combinations of the members' channels; powers are
    the least fixed point for per-group targets gamma * (1 + u_l), u_l drawn
    from ``margin``. Returns None when those targets are unreachable.
    """
    from wbcran.model import BeamformerSet
    cfg, ch, groups = instance.cfg, instance.channels, instance.groups
    L, K = groups.L, cfg.K
    h_hat = ch.h / np.sqrt(ch.noise_user_lin)[:, None]
    w = np.zeros((L, cfg.M * cfg.N_s), complex)
    for l, users in enumerate(groups.members):
        coef = rng.standard_normal(len(users)) + 1j * rng.standard_normal(len(users))
        w[l] = coef @ h_hat[users]
        w[l] += 0.1 * np.linalg.norm(w[l]) * (rng.standard_normal(w.shape[1])
                                               + 1j * rng.standard_normal(w.shape[1])) / np.sqrt(w.shape[1])
        w[l] /= np.linalg.norm(w[l])
    target = instance.gamma * (1 + rng.uniform(*margin, size=L))
    G = np.abs(np.conj(h_hat) @ w.T) ** 2
    gl = groups.group_of_user
    sig = G[np.arange(K), gl]
    p = np.zeros(L)
    for _ in range(20000):
        interf = G @ p - sig * p[gl]
        need = target[gl] * (interf + 1.0) / sig
        p_new = np.array([need[u].max() for u in groups.members])
        if p_new.max() > 1e15:
            return None
        if np.max(np.abs(p_new - p)) <= 1e-13 * p_new.max():
            p = p_new
            break
        p = p_new
    else:
        return None
    return BeamformerSet(w * np.sqrt(p)[:, None], np.zeros((L, cfg.N_m), complex), np.zeros(L))
