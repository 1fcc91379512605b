"""Physical-layer evaluators: SINRs, access/backhaul rates, power, P0 audit."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .scenario import CachePlacement, ChannelSet, GroupStructure, Instance, SystemConfig


@dataclass
class BeamformerSet:
    """Continuous decision variables.

    ``w[l]`` is the aggregate access beamformer of group ``l`` (length
    M*N_s, block m belongs to SBS m); ``v[l]`` the MBS multicast beamformer;
    ``b[l]`` the backhaul bandwidth fraction.
    """

    w: np.ndarray  # (L, M*N_s) complex
    v: np.ndarray  # (L, N_m) complex
    b: np.ndarray  # (L,)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=complex)
        self.v = np.asarray(self.v, dtype=complex)
        self.b = np.asarray(self.b, dtype=float)
        if not (self.w.ndim == 2 and self.v.ndim == 2 and self.b.ndim == 1):
            raise ValueError("w, v must be 2-D and b 1-D")
        if not (len(self.w) == len(self.v) == len(self.b)):
            raise ValueError("w, v and b disagree on the number of groups")

    @property
    def L(self) -> int:
        return len(self.b)

    @classmethod
    def zeros(cls, L: int, M: int, N_s: int, N_m: int) -> "BeamformerSet":
        return cls(np.zeros((L, M * N_s), complex), np.zeros((L, N_m), complex), np.zeros(L))

    def blocks(self, M: int) -> np.ndarray:
        """(M, L, N_s) view of the per-SBS blocks w_{m,l}."""
        L = self.L
        return self.w.reshape(L, M, -1).transpose(1, 0, 2)

    def block_power(self, M: int) -> np.ndarray:
        """(M, L) matrix of ||w_{m,l}||^2."""
        return np.sum(np.abs(self.blocks(M)) ** 2, axis=2)

    def copy(self) -> "BeamformerSet":
        return BeamformerSet(self.w.copy(), self.v.copy(), self.b.copy())

    def check_bandwidth(self, tol: float = 1e-9):
        if np.any(self.b < -tol) or np.any(self.b > 1 + tol) or self.b.sum() > 1 + tol:
            raise ValueError(f"bandwidth fractions {self.b} leave the simplex")

    def to_dict(self) -> dict:
        return {
            "w_re": self.w.real.tolist(), "w_im": self.w.imag.tolist(),
            "v_re": self.v.real.tolist(), "v_im": self.v.imag.tolist(),
            "b": self.b.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BeamformerSet":
        return cls(np.asarray(d["w_re"]) + 1j * np.asarray(d["w_im"]),
                   np.asarray(d["v_re"]) + 1j * np.asarray(d["v_im"]),
                   np.asarray(d["b"]))


@dataclass
class Clustering:
    C: np.ndarray  # (M, L) in {0, 1}

    def __post_init__(self):
        self.C = np.asarray(self.C, dtype=int)
        if not np.isin(self.C, (0, 1)).all():
            raise ValueError("clustering entries must be 0 or 1")

    @classmethod
    def full(cls, M: int, L: int) -> "Clustering":
        return cls(np.ones((M, L), dtype=int))


@dataclass
class PowerBreakdown:
    sbs_tx: float
    mbs_tx: float
    signal_processing: float
    circuit: float

    @property
    def total(self) -> float:
        return self.sbs_tx + self.mbs_tx + self.signal_processing + self.circuit

    def to_dict(self) -> dict:
        return {**asdict(self), "total": self.total}


@dataclass
class FeasibilityReport:
    """Worst violation per P0 constraint family.

    SINR and power-cap violations are relative to their thresholds, the
    backhaul violation is in bit/s/Hz and the bandwidth violation absolute.
    """

    sinr: float
    backhaul: float
    sbs_power: float
    mbs_power: float
    bandwidth: float
    tol: float

    @property
    def worst(self) -> float:
        return max(self.sinr, self.backhaul, self.sbs_power, self.mbs_power, self.bandwidth)

    @property
    def feasible(self) -> bool:
        return self.worst <= self.tol

    def to_dict(self) -> dict:
        return {**asdict(self), "feasible": self.feasible}


def received_powers(W: BeamformerSet, ch: ChannelSet) -> np.ndarray:
    """(K, L) matrix of |h_k^H w_l|^2."""
    return np.abs(np.conj(ch.h) @ W.w.T) ** 2


def all_sinrs(W: BeamformerSet, ch: ChannelSet, groups: GroupStructure) -> np.ndarray:
    G = received_powers(W, ch)
    K = G.shape[0]
    sig = G[np.arange(K), groups.group_of_user]
    interf = G.sum(axis=1) - sig
    return sig / (interf + ch.noise_user_lin)


def access_sinr(k: int, W: BeamformerSet, ch: ChannelSet, groups: GroupStructure) -> float:
    hk = ch.h[k]
    rx = np.abs(np.conj(hk) @ W.w.T) ** 2
    l = groups.group_of_user[k]
    return float(rx[l] / (rx.sum() - rx[l] + ch.noise_user_lin[k]))


def group_min_sinr(W: BeamformerSet, ch: ChannelSet, groups: GroupStructure) -> np.ndarray:
    s = all_sinrs(W, ch, groups)
    return np.array([s[u].min() for u in groups.members])


def al_group_rate(l: int, W: BeamformerSet, ch: ChannelSet, groups: GroupStructure) -> float:
    s = all_sinrs(W, ch, groups)
    return float(np.log2(1.0 + s[groups.members[l]].min()))


def bl_snr(m: int, v_l: np.ndarray, ch: ChannelSet) -> float:
    # receive MRC across the SBS antennas: ||H_m^H v_l||^2 / z_m^2
    return float(np.sum(np.abs(ch.H[m].conj().T @ v_l) ** 2) / ch.noise_sbs_lin[m])


def bl_rate(m: int, l: int, v_l: np.ndarray, b_l: float, ch: ChannelSet) -> float:
    if not -1e-12 <= b_l <= 1 + 1e-12:
        raise ValueError(f"bandwidth fraction {b_l} outside [0, 1]")
    return float(b_l * np.log2(1.0 + bl_snr(m, v_l, ch)))


def bl_rates(W: BeamformerSet, ch: ChannelSet) -> np.ndarray:
    """(M, L) matrix of R^B_{m,l}."""
    HV = np.einsum("mas,la->mls", ch.H.conj(), W.v)
    snr = np.sum(np.abs(HV) ** 2, axis=2) / ch.noise_sbs_lin[:, None]
    return W.b[None, :] * np.log2(1.0 + snr)


def total_power(W: BeamformerSet, C: Clustering, cache: CachePlacement,
                groups: GroupStructure, cfg: SystemConfig) -> PowerBreakdown:
    blk = W.block_power(cfg.M)
    eta = cfg.eta
    s = cache.S[:, groups.group_file - 1]
    return PowerBreakdown(
        sbs_tx=float(np.sum(eta[1:, None] * blk)),
        mbs_tx=float(eta[0] * np.sum(np.abs(W.v) ** 2)),
        signal_processing=float(np.sum(C.C * (1 - s)) * cfg.P_sp),
        circuit=float(np.sum(cfg.P_c)),
    )


def uncached_serving_sets(C: Clustering, cache: CachePlacement, groups: GroupStructure):
    """Serving clusters, their un-cached subsets, and the groups needing backhaul."""
    s = cache.S[:, groups.group_file - 1]
    serving = [set(np.flatnonzero(C.C[:, l]).tolist()) for l in range(groups.L)]
    uncached = [{m for m in serving[l] if s[m, l] == 0} for l in range(groups.L)]
    backhauled = [l for l in range(groups.L) if uncached[l]]
    return serving, uncached, backhauled


def check_p0_feasibility(W: BeamformerSet, C: Clustering, instance: Instance,
                         tol: float = 1e-6) -> FeasibilityReport:
    cfg, ch, groups = instance.cfg, instance.channels, instance.groups
    M, L = cfg.M, groups.L
    if W.w.shape != (L, M * cfg.N_s) or W.v.shape != (L, cfg.N_m) or C.C.shape != (M, L):
        raise ValueError("beamformer or clustering shape does not match the instance")

    gamma_user = instance.gamma[groups.group_of_user]
    sinr_viol = np.max((gamma_user - all_sinrs(W, ch, groups)) / gamma_user)

    need = C.C * (1 - instance.cached) * instance.rate[None, :]
    bh_viol = np.max(need - bl_rates(W, ch)) if need.any() else -np.inf

    sbs_viol = np.max((W.block_power(M).sum(axis=1) - cfg.P_m) / cfg.P_m)
    mbs_viol = (np.sum(np.abs(W.v) ** 2) - cfg.P_0) / cfg.P_0
    bw_viol = max(np.max(-W.b), np.max(W.b - 1), W.b.sum() - 1)
    return FeasibilityReport(float(max(sinr_viol, 0.0)), float(max(bh_viol, 0.0)),
                             float(max(sbs_viol, 0.0)), float(max(mbs_viol, 0.0)),
                             float(max(bw_viol, 0.0)), tol)
