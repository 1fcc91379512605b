"""Seeded scenario generation: topology, channels, requests, groups, caches.

Every generator is a pure function of its inputs and an integer seed, so a
trial can be rebuilt bit-for-bit from ``(SystemConfig, seed, strategy)``.
Indices are zero-based internally; file identifiers keep the 1..F
convention so that request profiles read the same as in experiment logs.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

# stream tags so topology/channel/request/cache draws never share a stream
_TOPOLOGY, _CHANNELS, _REQUESTS, _CACHE = 1, 2, 3, 4


class CacheStrategy(str, Enum):
    POPC = "popc"
    RANC = "ranc"
    MOSC = "mosc"


def _rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), tag])


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    """Network, power and propagation parameters of one scenario.

    Defaults reproduce the stadium-scale setting (14 SBSs, 50-antenna MBS).
    Use :func:`desk_config` for the small network used in tests and the
    default campaign.
    """

    M: int = 14
    K: int = 8
    N_m: int = 50
    N_s: int = 2
    F: int = 100
    Z: int = 5
    e: float = 250.0
    beta_bl: float = 3.0
    beta_al: float = 3.2
    shadow_std_bl: float = 3.0
    shadow_std_al: float = 4.0
    # treat the two shadowing figures as dB variances instead of dB std
    shadow_as_variance: bool = False
    noise_sbs: float = -90.0  # dBW
    noise_user: float = -65.0  # dBW
    P_m: float = 10.0
    P_0: float = 50.0
    P_sp: float = 1.0
    P_c_sbs: float = 1.0
    P_c_mbs: float = 10.0
    eta_sbs: float = 4.0
    eta_mbs: float = 4.0
    r_l: float = 1.5
    alpha: float = 1.0
    sigma_smooth: float = 1e-3
    d_min: float = 1.0

    def __post_init__(self):
        for name in ("M", "K", "N_m", "N_s", "F"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0 <= self.Z <= self.F:
            raise ValueError(f"cache size Z={self.Z} outside [0, F={self.F}]")
        if self.e <= 0:
            raise ValueError("cell radius must be positive")
        if min(self.P_m, self.P_0) <= 0:
            raise ValueError("transmit power caps must be positive")
        if min(self.P_sp, self.P_c_sbs, self.P_c_mbs) < 0:
            raise ValueError("signal-processing and circuit powers must be >= 0")
        if min(self.eta_sbs, self.eta_mbs) <= 0:
            raise ValueError("inverse amplifier efficiencies must be positive")
        if self.alpha < 0:
            raise ValueError("Zipf skewness must be >= 0")
        if self.sigma_smooth <= 0:
            raise ValueError("smoothing constant must be positive")
        if self.r_l <= 0:
            raise ValueError("rate target must be positive")
        if self.d_min <= 0:
            raise ValueError("d_min must be positive")

    @property
    def gamma(self) -> float:
        """SINR threshold equivalent to the common rate target r_l."""
        return 2.0 ** self.r_l - 1.0

    @property
    def eta(self) -> np.ndarray:
        """Inverse amplifier efficiencies, index 0 is the MBS."""
        return np.r_[self.eta_mbs, np.full(self.M, self.eta_sbs)]

    @property
    def P_c(self) -> np.ndarray:
        """Circuit powers, index 0 is the MBS."""
        return np.r_[self.P_c_mbs, np.full(self.M, self.P_c_sbs)]

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def desk_config(**overrides) -> SystemConfig:
    """Small network that solves in well under a second per trial."""
    base = dict(M=6, K=4, N_m=8, N_s=2, F=20, Z=3)
    base.update(overrides)
    return SystemConfig(**base)


def full_config(**overrides) -> SystemConfig:
    """Stadium-scale network (the SystemConfig defaults)."""
    return SystemConfig(**overrides)


@dataclass(frozen=True)
class Topology:
    mbs_position: np.ndarray
    sbs_positions: np.ndarray  # (M, 2)
    user_positions: np.ndarray  # (K, 2)


@dataclass(frozen=True)
class ChannelSet:
    H: np.ndarray  # (M, N_m, N_s) MBS -> SBS m
    h: np.ndarray  # (K, M*N_s) all SBSs -> user k
    noise_sbs_lin: np.ndarray  # (M,) z_m^2 in W
    noise_user_lin: np.ndarray  # (K,) sigma_k^2 in W

    def h_block(self, k: int, m: int) -> np.ndarray:
        n_s = self.H.shape[2]
        return self.h[k, m * n_s:(m + 1) * n_s]


@dataclass(frozen=True)
class RequestProfile:
    requested_file: np.ndarray  # (K,) file ids in 1..F


@dataclass(frozen=True)
class GroupStructure:
    group_file: np.ndarray  # (L,) file id per group
    members: tuple  # tuple of int arrays, user indices per group
    group_of_user: np.ndarray  # (K,)

    @property
    def L(self) -> int:
        return len(self.group_file)


@dataclass(frozen=True)
class CachePlacement:
    S: np.ndarray  # (M, F) in {0, 1}
    strategy: CacheStrategy


def random_points_in_disk(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    r = radius * np.sqrt(rng.uniform(size=n))
    phi = 2 * np.pi * rng.uniform(size=n)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi)])


def generate_topology(cfg: SystemConfig, seed: int) -> Topology:
    rng = _rng(seed, _TOPOLOGY)
    sbs = random_points_in_disk(rng, cfg.M, cfg.e)
    users = random_points_in_disk(rng, cfg.K, cfg.e)
    return Topology(np.zeros(2), sbs, users)


def shadowing_std_db(value: float, as_variance: bool) -> float:
    return float(np.sqrt(value)) if as_variance else float(value)


def lognormal_mean(std_db: float) -> float:
    """E[chi] for chi = 10^(X/10), X ~ N(0, std_db^2)."""
    s = std_db * np.log(10) / 10
    return float(np.exp(s ** 2 / 2))


def link_channel(d, beta, chi, g):
    """sqrt(d^-beta * chi) * g, broadcast over the small-scale fading g."""
    return np.sqrt(np.asarray(d, float) ** (-beta) * np.asarray(chi, float)) * g


def complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """Draws from CN(0, 1)."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def generate_channels(topo: Topology, cfg: SystemConfig, seed: int) -> ChannelSet:
    rng = _rng(seed, _CHANNELS)
    M, K, N_m, N_s = cfg.M, cfg.K, cfg.N_m, cfg.N_s
    std_bl = shadowing_std_db(cfg.shadow_std_bl, cfg.shadow_as_variance)
    std_al = shadowing_std_db(cfg.shadow_std_al, cfg.shadow_as_variance)

    d_bl = np.maximum(np.linalg.norm(topo.sbs_positions - topo.mbs_position, axis=1), cfg.d_min)
    chi_bl = db_to_linear(rng.normal(0.0, std_bl, size=M))
    g_bl = complex_gaussian(rng, (M, N_m, N_s))
    H = link_channel(d_bl[:, None, None], cfg.beta_bl, chi_bl[:, None, None], g_bl)

    diff = topo.user_positions[:, None, :] - topo.sbs_positions[None, :, :]
    d_al = np.maximum(np.linalg.norm(diff, axis=2), cfg.d_min)  # (K, M)
    chi_al = db_to_linear(rng.normal(0.0, std_al, size=(K, M)))
    g_al = complex_gaussian(rng, (K, M, N_s))
    h = link_channel(d_al[:, :, None], cfg.beta_al, chi_al[:, :, None], g_al).reshape(K, M * N_s)

    return ChannelSet(
        H=H,
        h=h,
        noise_sbs_lin=np.full(M, float(db_to_linear(cfg.noise_sbs))),
        noise_user_lin=np.full(K, float(db_to_linear(cfg.noise_user))),
    )


def zipf_pmf(F: int, alpha: float) -> np.ndarray:
    p = np.arange(1, F + 1, dtype=float) ** (-alpha)
    return p / p.sum()


def sample_requests(cfg: SystemConfig, seed: int) -> RequestProfile:
    rng = _rng(seed, _REQUESTS)
    files = rng.choice(cfg.F, size=cfg.K, p=zipf_pmf(cfg.F, cfg.alpha)) + 1
    return RequestProfile(files.astype(int))


def build_groups(req: RequestProfile) -> GroupStructure:
    files = np.asarray(req.requested_file, dtype=int)
    order: list[int] = []
    for f in files:
        if f not in order:
            order.append(int(f))
    group_of_user = np.array([order.index(int(f)) for f in files], dtype=int)
    members = tuple(np.flatnonzero(group_of_user == l) for l in range(len(order)))
    return GroupStructure(np.array(order, dtype=int), members, group_of_user)


def place_cache(strategy, cfg: SystemConfig, popularity_order: Sequence[int] | None = None,
                seed: int = 0) -> CachePlacement:
    """Cache placement S for one of the heuristic strategies.

    ``popularity_order`` lists file ids from most to least popular; by
    default the Zipf ranking 1, 2, ..., F. MosC wraps modulo F when M*Z > F.
    """
    strategy = CacheStrategy(strategy)
    M, F, Z = cfg.M, cfg.F, cfg.Z
    S = np.zeros((M, F), dtype=int)
    if Z == 0:
        return CachePlacement(S, strategy)
    if popularity_order is None:
        popularity_order = np.arange(1, F + 1)
    order = np.asarray(popularity_order, dtype=int)
    if strategy is CacheStrategy.POPC:
        S[:, order[:Z] - 1] = 1
    elif strategy is CacheStrategy.RANC:
        rng = _rng(seed, _CACHE)
        for m in range(M):
            S[m, rng.choice(F, size=Z, replace=False)] = 1
    else:
        for m in range(M):
            S[m, (np.arange(Z) + m * Z) % F] = 1
    return CachePlacement(S, strategy)


@dataclass(frozen=True)
class Instance:
    """One fully realized scenario."""

    cfg: SystemConfig
    topology: Topology
    channels: ChannelSet
    requests: RequestProfile
    groups: GroupStructure
    cache: CachePlacement
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def L(self) -> int:
        return self.groups.L

    @property
    def cached(self) -> np.ndarray:
        """(M, L) matrix s_{m, f_l}."""
        return self.cache.S[:, self.groups.group_file - 1]

    @property
    def gamma(self) -> np.ndarray:
        return np.full(self.L, self.cfg.gamma)

    @property
    def rate(self) -> np.ndarray:
        return np.full(self.L, self.cfg.r_l)

    def with_cache(self, cache: CachePlacement) -> "Instance":
        return dataclasses.replace(self, cache=cache)

    def with_config(self, cfg: SystemConfig) -> "Instance":
        return dataclasses.replace(self, cfg=cfg)


def build_instance(cfg: SystemConfig, seed: int, strategy="popc",
                   requests: Sequence[int] | None = None) -> Instance:
    topo = generate_topology(cfg, seed)
    ch = generate_channels(topo, cfg, seed)
    if requests is None:
        req = sample_requests(cfg, seed)
    else:
        req = RequestProfile(np.asarray(requests, dtype=int))
        if len(req.requested_file) != cfg.K:
            raise ValueError(f"request profile has {len(req.requested_file)} entries, K={cfg.K}")
        if req.requested_file.min() < 1 or req.requested_file.max() > cfg.F:
            raise ValueError("requested file index outside 1..F")
    groups = build_groups(req)
    cache = place_cache(strategy, cfg, seed=seed)
    return Instance(cfg, topo, ch, req, groups, cache, seed=seed)


# -- JSON round trip ---------------------------------------------------------

def _cplx_to_list(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "re_im": np.stack([a.real, a.imag], -1).ravel().tolist()}


def _cplx_from_list(d: dict) -> np.ndarray:
    flat = np.asarray(d["re_im"], dtype=float).reshape(*d["shape"], 2)
    return flat[..., 0] + 1j * flat[..., 1]


def instance_to_dict(inst: Instance) -> dict:
    return {
        "config": inst.cfg.to_dict(),
        "seed": inst.seed,
        "topology": {
            "mbs": inst.topology.mbs_position.tolist(),
            "sbs": inst.topology.sbs_positions.tolist(),
            "users": inst.topology.user_positions.tolist(),
        },
        "channels": {
            "H": _cplx_to_list(inst.channels.H),
            "h": _cplx_to_list(inst.channels.h),
            "noise_sbs": inst.channels.noise_sbs_lin.tolist(),
            "noise_user": inst.channels.noise_user_lin.tolist(),
        },
        "requests": inst.requests.requested_file.tolist(),
        "cache": {"strategy": inst.cache.strategy.value, "S": inst.cache.S.tolist()},
    }


def instance_from_dict(d: dict) -> Instance:
    cfg = SystemConfig.from_dict(d["config"])
    t = d["topology"]
    topo = Topology(np.asarray(t["mbs"], float), np.asarray(t["sbs"], float).reshape(-1, 2),
                    np.asarray(t["users"], float).reshape(-1, 2))
    c = d["channels"]
    ch = ChannelSet(_cplx_from_list(c["H"]), _cplx_from_list(c["h"]),
                    np.asarray(c["noise_sbs"], float), np.asarray(c["noise_user"], float))
    req = RequestProfile(np.asarray(d["requests"], dtype=int))
    cache = CachePlacement(np.asarray(d["cache"]["S"], dtype=int),
                           CacheStrategy(d["cache"]["strategy"]))
    return Instance(cfg, topo, ch, req, build_groups(req), cache, seed=d.get("seed", 0))


def instance_to_json(inst: Instance) -> str:
    return json.dumps(instance_to_dict(inst))


def instance_from_json(text: str) -> Instance:
    return instance_from_dict(json.loads(text))
