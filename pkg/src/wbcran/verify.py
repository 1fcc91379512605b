"""Independent oracles for the CCP solver.

* The scaling constructions used to show that an optimal point has every
  group's worst SINR exactly at its threshold.
* A semidefinite relaxation (SDR) of the fixed-clustering problem, giving a
  certified lower bound and, through Gaussian randomization, a feasible
  upper bound.
* Exhaustive enumeration of clusterings on tiny instances.

Nothing here touches the conic layer used by the CCP; the SDPs go through
cvxpy so the two routes share no solver code.
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .model import BeamformerSet, Clustering, group_min_sinr, received_powers
from .scenario import Instance

LN2 = np.log(2.0)


class OracleError(ValueError):
    pass


def transmit_power(W: BeamformerSet, instance: Instance) -> float:
    cfg = instance.cfg
    return float(cfg.eta_sbs * np.sum(np.abs(W.w) ** 2) + cfg.eta_mbs * np.sum(np.abs(W.v) ** 2))


def _sinr_terms(W: BeamformerSet, instance: Instance):
    """Per-user desired power S_k, per-(user, group) received power and noise."""
    ch, groups = instance.channels, instance.groups
    R = received_powers(W, ch)  # (K, L)
    K = R.shape[0]
    S = R[np.arange(K), groups.group_of_user]
    return S, R, ch.noise_user_lin


def scale_to_tightness(W: BeamformerSet, instance: Instance):
    """Common rescale of every access beamformer onto the SINR boundary.

    Requires every group to be strictly above its threshold. Returns
    ``(a, W_hat)`` with ``W_hat = sqrt(a) W`` and ``a < 1``.
    """
    groups = instance.groups
    gamma_u = instance.gamma[groups.group_of_user]
    S, R, noise = _sinr_terms(W, instance)
    interf = R.sum(axis=1) - S
    margin = S / gamma_u - interf
    if np.any(margin <= noise):
        raise OracleError("some group is not strictly above its SINR threshold; "
                          "use iterative_tightening")
    a = float(np.max(noise / margin))
    W_hat = W.copy()
    W_hat.w = W.w * np.sqrt(a)
    return a, W_hat


@dataclass
class TighteningResult:
    beamformers: BeamformerSet
    rounds: int
    powers: list  # transmit power before round 1 and after every round
    residual_gap: float


def iterative_tightening(W: BeamformerSet, instance: Instance, max_rounds: int = 100,
                         tol: float = 1e-6, select: float = 0.1) -> TighteningResult:
    """Repeatedly rescale the slack groups until every group is tight.

    Each round scales the beamformers of the slack groups by one common
    factor, chosen so that none of their members drops below its threshold
    while the remaining groups keep their full interference. Those groups
    only see less interference, so feasibility is kept throughout.

    A round scales only groups whose relative slack exceeds ``select``
    times the largest one. With ``select=0`` every group above ``tol`` is
    scaled; groups hovering just above ``tol`` then cap the common factor
    near one and progress stalls.
    """
    groups = instance.groups
    gamma = instance.gamma
    gamma_u = gamma[groups.group_of_user]
    gap = group_min_sinr(W, instance.channels, groups) / gamma - 1
    if np.any(gap < -tol):
        raise OracleError("input violates an SINR constraint")
    W = W.copy()
    powers = [transmit_power(W, instance)]
    rounds = 0
    while rounds < max_rounds:
        if gap.max() <= tol:
            return TighteningResult(W, rounds, powers, float(max(gap.max(), 0.0)))
        # groups barely above threshold would pin the common factor near 1
        slack = gap > max(tol, select * gap.max())
        S, R, noise = _sinr_terms(W, instance)
        in_slack = slack[groups.group_of_user]
        i_slack = R[:, slack].sum(axis=1) - np.where(in_slack, S, 0.0)
        i_tight = R[:, ~slack].sum(axis=1) - np.where(in_slack, 0.0, S)
        users = np.flatnonzero(in_slack)
        a = float(np.max((noise[users] + i_tight[users]) / (S[users] / gamma_u[users] - i_slack[users])))
        if not 0 < a < 1:
            raise OracleError(f"scaling constant {a} outside (0, 1)")
        W.w[slack] *= np.sqrt(a)
        rounds += 1
        powers.append(transmit_power(W, instance))
        gap = group_min_sinr(W, instance.channels, groups) / gamma - 1
    if gap.max() > tol:
        raise OracleError(f"not tight after {rounds} rounds (largest gap {gap.max():.3g})")
    return TighteningResult(W, rounds, powers, float(max(gap.max(), 0.0)))


# -- bandwidth split ------------------------------------------------------------

def _snr_needed(b, r):
    return np.expm1(LN2 * r / b)


def optimal_bandwidth(costs, r: float, iters: int = 200) -> np.ndarray:
    """argmin_b sum_l costs_l (2^(r/b_l) - 1) over the simplex sum b <= 1.

    The objective is separable, convex and decreasing in each b_l, so the
    optimum fills the simplex with equal marginal costs; both the marginal
    level and each b_l are found by bisection in the log domain.
    """
    costs = np.asarray(costs, dtype=float)
    if costs.size == 0:
        return costs
    if costs.size == 1:
        return np.ones(1)
    logc = np.log(costs * r * LN2)

    def b_of(mu):
        # solve log c - 2 log b + r ln2 / b = mu, decreasing in b
        lo, hi = np.full(costs.size, 1e-9), np.ones(costs.size)
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            f = logc - 2 * np.log(mid) + r * LN2 / mid - mu
            lo = np.where(f > 0, mid, lo)
            hi = np.where(f > 0, hi, mid)
        return 0.5 * (lo + hi)

    lo, hi = -50.0, 1e6
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if b_of(mid).sum() > 1:
            lo = mid
        else:
            hi = mid
    b = b_of(hi)
    return b / max(b.sum(), 1.0)


# -- SDR of the fixed-clustering problem ----------------------------------------

@dataclass
class ClusterRecord:
    C: np.ndarray
    lower: float
    upper: float
    access_lower: float = np.inf
    backhaul_lower: float = np.inf
    constant: float = 0.0
    beamformers: BeamformerSet | None = None

    def to_dict(self) -> dict:
        return {"C": self.C.tolist(), "lower": self.lower, "upper": self.upper,
                "access_lower": self.access_lower, "backhaul_lower": self.backhaul_lower,
                "constant": self.constant}


def _solve_sdp(prob: cp.Problem):
    with warnings.catch_warnings():
        # cvxpy's complex canonicalization of 1x1 hermitian variables
        warnings.filterwarnings("ignore", message="Initializing a Constant with a nested list")
        # inaccurate solves are reported through the status, not a warning
        warnings.filterwarnings("ignore", message="Solution may be inaccurate")
        try:
            prob.solve(solver=cp.CLARABEL)
        except cp.SolverError:
            prob.solve(solver=cp.SCS, eps=1e-9, max_iters=100000)
    return prob.status


def _served_antennas(C: np.ndarray, l: int, N_s: int) -> np.ndarray:
    return np.concatenate([np.arange(m * N_s, (m + 1) * N_s) for m in np.flatnonzero(C[:, l])])


def _access_sdr(instance: Instance, C: np.ndarray):
    """Returns (lower bound on access transmit power, list of X_l, antenna sets)."""
    cfg, ch, groups = instance.cfg, instance.channels, instance.groups
    L, N_s = groups.L, cfg.N_s
    h_hat = ch.h / np.sqrt(ch.noise_user_lin)[:, None]
    ant = [_served_antennas(C, l, N_s) for l in range(L)]
    X = [cp.Variable((len(a), len(a)), hermitian=True) for a in ant]
    cons = [x >> 0 for x in X]

    def rx(k, j):
        hk = h_hat[k, ant[j]]
        return cp.real(cp.trace(np.outer(hk, hk.conj()) @ X[j]))

    for k in range(cfg.K):
        l = groups.group_of_user[k]
        interf = sum((rx(k, j) for j in range(L) if j != l), 0.0)
        cons.append(rx(k, l) >= instance.gamma[l] * (interf + 1.0))
    for m in range(cfg.M):
        terms = []
        for l in range(L):
            pos = np.flatnonzero((ant[l] >= m * N_s) & (ant[l] < (m + 1) * N_s))
            terms += [cp.real(X[l][i, i]) for i in pos]
        if terms:
            cons.append(sum(terms) <= cfg.P_m)
    obj = cp.Minimize(cfg.eta_sbs * sum(cp.real(cp.trace(x)) for x in X))
    prob = cp.Problem(obj, cons)
    status = _solve_sdp(prob)
    if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        return np.inf, None, ant
    return float(prob.value), [x.value for x in X], ant


def _backhaul_unit_sdr(instance: Instance, sbs: list[int]):
    """min tr V s.t. ||H_m^H v||^2 / z_m^2 >= 1 for m in ``sbs``, relaxed."""
    ch = instance.channels
    N_m = instance.cfg.N_m
    V = cp.Variable((N_m, N_m), hermitian=True)
    cons = [V >> 0]
    for m in sbs:
        Hm = ch.H[m] / np.sqrt(ch.noise_sbs_lin[m])
        cons.append(cp.real(cp.trace(Hm @ Hm.conj().T @ V)) >= 1.0)
    prob = cp.Problem(cp.Minimize(cp.real(cp.trace(V))), cons)
    status = _solve_sdp(prob)
    if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        return np.inf, None
    return float(prob.value), V.value


def _random_directions(X: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Principal eigenvector followed by ``n`` Gaussian-randomized draws."""
    X = 0.5 * (X + X.conj().T)
    lam, U = np.linalg.eigh(X)
    lam = np.clip(lam, 0, None)
    root = U * np.sqrt(lam)
    d = X.shape[0]
    e = (rng.standard_normal((n, d)) + 1j * rng.standard_normal((n, d))) / np.sqrt(2)
    return np.vstack([U[:, -1][None, :], e @ root.T])


def _min_powers(G: np.ndarray, gl: np.ndarray, members, gamma, max_iter=5000):
    """Least p with p_l G_kl >= gamma (sum_{j != l} p_j G_kj + 1); None if infeasible."""
    K, L = G.shape
    sig = G[np.arange(K), gl]
    if np.any(sig <= 0):
        return None
    p = np.zeros(L)
    for _ in range(max_iter):
        interf = G @ p - sig * p[gl]
        need = gamma[gl] * (interf + 1.0) / sig
        p_new = np.array([need[u].max() for u in members])
        if np.max(np.abs(p_new - p)) <= 1e-12 * max(1.0, p_new.max()):
            return p_new
        if p_new.max() > 1e12:
            return None
        p = p_new
    return None


def fixed_clustering_bounds(instance: Instance, C, n_random: int = 200,
                            seed: int = 0) -> ClusterRecord:
    """SDR lower bound and randomized upper bound for one fixed clustering.

    Both bounds are on the total power (transmit, signal processing and
    circuit terms). With a fixed clustering the access and backhaul parts
    decouple; for fixed bandwidth each backhaul group costs
    ``(2^(r/b_l) - 1) g_l`` with ``g_l`` a unit-target SDR value, so the
    bandwidth split is solved exactly by :func:`optimal_bandwidth`.
    """
    cfg, ch, groups = instance.cfg, instance.channels, instance.groups
    C = np.asarray(C.C if isinstance(C, Clustering) else C, dtype=int)
    L, M, N_s, N_m = groups.L, cfg.M, cfg.N_s, cfg.N_m
    need = C * (1 - instance.cached)
    const = float(need.sum() * cfg.P_sp + cfg.P_c.sum())
    if np.any(C.sum(axis=0) == 0):
        return ClusterRecord(C, np.inf, np.inf, constant=const)

    acc_lb, X, ant = _access_sdr(instance, C)
    if not np.isfinite(acc_lb):
        return ClusterRecord(C, np.inf, np.inf, constant=const)

    bh = [l for l in range(L) if need[:, l].any()]
    g, Vs = {}, {}
    for l in bh:
        g[l], Vs[l] = _backhaul_unit_sdr(instance, list(np.flatnonzero(need[:, l])))
    r = cfg.r_l
    if bh:
        costs = np.array([g[l] for l in bh])
        b = optimal_bandwidth(costs, r)
        bh_power = float(np.sum(costs * _snr_needed(b, r)))
        if bh_power > cfg.P_0 * (1 + 1e-9):
            return ClusterRecord(C, np.inf, np.inf, acc_lb, np.inf, const)
        bh_lb = cfg.eta_mbs * bh_power
    else:
        bh_lb = 0.0
    lower = const + acc_lb + bh_lb

    # randomized upper bound
    rng = np.random.default_rng(seed)
    h_hat = ch.h / np.sqrt(ch.noise_user_lin)[:, None]
    dirs = [_random_directions(X[l], n_random, rng) for l in range(L)]
    best_acc, best_w = np.inf, None
    for i in range(n_random + 1):
        w = np.zeros((L, M * N_s), complex)
        for l in range(L):
            w[l, ant[l]] = dirs[l][i]
        G = np.abs(np.conj(h_hat) @ w.T) ** 2
        p = _min_powers(G, groups.group_of_user, groups.members, instance.gamma)
        if p is None:
            continue
        ws = w * np.sqrt(p)[:, None]
        per_sbs = np.sum(np.abs(ws.reshape(L, M, N_s)) ** 2, axis=(0, 2))
        if np.any(per_sbs > cfg.P_m):
            continue
        cost = cfg.eta_sbs * float(np.sum(np.abs(ws) ** 2))
        if cost < best_acc:
            best_acc, best_w = cost, ws
    if best_w is None:
        return ClusterRecord(C, lower, np.inf, acc_lb, bh_lb, const)

    W = BeamformerSet(best_w, np.zeros((L, N_m), complex), np.zeros(L))
    bh_ub = 0.0
    if bh:
        gains, units = [], []
        for l in bh:
            cand = _random_directions(Vs[l], n_random, rng)
            cand = cand / np.linalg.norm(cand, axis=1, keepdims=True)
            snr = np.stack([
                np.sum(np.abs(cand @ (ch.H[m] / np.sqrt(ch.noise_sbs_lin[m])).conj()) ** 2, axis=1)
                for m in np.flatnonzero(need[:, l])
            ]).min(axis=0)
            best = int(np.argmax(snr))
            gains.append(snr[best])
            units.append(cand[best])
        costs = 1.0 / np.array(gains)
        b = optimal_bandwidth(costs, r)
        pw = costs * _snr_needed(b, r)
        if pw.sum() > cfg.P_0:
            return ClusterRecord(C, lower, np.inf, acc_lb, bh_lb, const)
        for j, l in enumerate(bh):
            W.v[l] = units[j] * np.sqrt(pw[j])
            W.b[l] = b[j]
        bh_ub = cfg.eta_mbs * float(pw.sum())
    upper = const + best_acc + bh_ub
    return ClusterRecord(C, lower, upper, acc_lb, bh_lb, const, W)


def sdr_lower_bound(instance: Instance, C) -> float:
    """Certified lower bound on the total power for a fixed clustering (+inf if infeasible)."""
    return fixed_clustering_bounds(instance, C, n_random=0).lower


@dataclass
class OracleResult:
    best_clustering: np.ndarray | None
    upper_bound: float
    lower_bound: float
    records: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return np.isfinite(self.upper_bound)

    def to_dict(self) -> dict:
        return {
            "best_clustering": None if self.best_clustering is None else self.best_clustering.tolist(),
            "upper_bound": self.upper_bound,
            "lower_bound": self.lower_bound,
            "records": [r.to_dict() for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def brute_force_small(instance: Instance, per_cluster_solver=fixed_clustering_bounds,
                      max_entries: int = 12) -> OracleResult:
    """Enumerate every binary clustering and bound each one.

    Clusterings that leave a group without a serving SBS are skipped. The
    global lower bound is the minimum of the per-clustering lower bounds.
    """
    M, L = instance.cfg.M, instance.L
    if M * L > max_entries:
        raise OracleError(f"M*L = {M * L} exceeds the enumeration limit {max_entries}")
    records = []
    for bits in itertools.product((0, 1), repeat=M * L):
        C = np.array(bits, dtype=int).reshape(M, L)
        if np.any(C.sum(axis=0) == 0):
            records.append(ClusterRecord(C, np.inf, np.inf))
            continue
        records.append(per_cluster_solver(instance, C))
    best = min(records, key=lambda r: r.upper)
    lower = min(r.lower for r in records)
    return OracleResult(best.C if np.isfinite(best.upper) else None, best.upper, lower, records)


def comparison_rows(seed: int, ccp_power: float, oracle: OracleResult) -> list:
    """One CSV row of the CCP-versus-oracle report."""
    ratio = ccp_power / oracle.upper_bound if oracle.feasible else float("nan")
    return [seed, repr(ccp_power), repr(oracle.lower_bound), repr(oracle.upper_bound), repr(ratio)]
