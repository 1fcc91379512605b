"""Smoothed-l0 convex-concave procedure for joint clustering and beamforming.

The clustering indicator ``c_{m,l} = ||w_{m,l}||_0`` is replaced by the
concave surrogate ``ln(1 + x/s) / ln(1 + 1/s)`` of the block power ``x``.
Each outer iteration linearizes every concave piece at the current iterate
(the surrogate itself, the desired-signal power in the SINR constraints and
the backhaul SNR) and solves the resulting convex conic program.

Internally all complex vectors are split as ``[real parts, imag parts]``
and channels are normalized by their noise standard deviation, so the
conic programs see SINR/SNR values of order one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import conic
from .conic import Cone, ConicProgram, Row, const_row, var_row
from .model import (
    BeamformerSet,
    Clustering,
    FeasibilityReport,
    PowerBreakdown,
    all_sinrs,
    bl_rates,
    check_p0_feasibility,
    group_min_sinr,
    total_power,
)
from .scenario import CachePlacement, GroupStructure, Instance, SystemConfig, complex_gaussian

log = logging.getLogger(__name__)

LN2 = np.log(2.0)


class Mode(str, Enum):
    PROPOSED = "proposed"
    NO_SC = "no-sc"
    NO_CACHE_NO_SC = "no-cache"


class SolveStatus(str, Enum):
    CONVERGED = "converged"
    ITER_LIMIT = "iter-limit"
    INFEASIBLE = "infeasible"


class InfeasibleError(RuntimeError):
    pass


@dataclass
class CcpOptions:
    sigma_smooth: float | None = None  # None: take it from the SystemConfig
    max_iters: int = 50
    rel_obj_tol: float = 1e-3
    constraint_tol: float = 1e-6
    clustering_threshold: float = 1e-6
    b_min: float = 1e-4
    penalty: float = 1e3
    penalty_growth: float = 10.0
    penalty_max: float = 1e5
    mode: Mode = Mode.PROPOSED
    polish: bool = True
    polish_iters: int = 50
    polish_tol: float = 1e-6
    tighten: bool = True
    init_iters: int = 40
    init_retries: int = 3
    no_cache_p0: float = 200.0
    anneal_steps: int = 0
    solver_tol: float = 1e-9

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if self.max_iters < 1 or self.polish_iters < 0 or self.init_iters < 1:
            raise ValueError("iteration limits must be positive")
        for name in ("rel_obj_tol", "constraint_tol", "clustering_threshold", "b_min",
                     "penalty", "polish_tol", "solver_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.sigma_smooth is not None and self.sigma_smooth <= 0:
            raise ValueError("sigma_smooth must be positive")
        if self.penalty_growth < 1 or self.penalty_max < self.penalty:
            raise ValueError("penalty schedule must be non-decreasing")


def smoothed_l0(x, sigma: float):
    """Concave surrogate of the 0/1 indicator of ``x > 0``."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or sigma <= 0:
        raise ValueError("smoothed_l0 needs x >= 0 and sigma > 0")
    out = np.log1p(x / sigma) / np.log1p(1.0 / sigma)
    return float(out) if out.ndim == 0 else out


@dataclass
class CcpCoefficients:
    theta: np.ndarray
    q: np.ndarray
    nu: np.ndarray
    zeta: np.ndarray
    pi: np.ndarray


def linearize(W_n: BeamformerSet, cache: CachePlacement, groups: GroupStructure,
              cfg: SystemConfig, sigma: float | None = None) -> CcpCoefficients:
    sigma = cfg.sigma_smooth if sigma is None else sigma
    x = W_n.block_power(cfg.M)
    s = cache.S[:, groups.group_file - 1]
    denom = np.log1p(1.0 / sigma)
    theta = 1.0 / (x + sigma)
    q = np.log1p(x / sigma) - theta * x
    nu = (1 - s) * cfg.P_sp / denom
    zeta = (1 - s) * cfg.r_l / denom
    pi = cfg.eta[1:, None] + nu * theta
    return CcpCoefficients(theta, np.maximum(q, 0.0), nu, zeta, pi)


def surrogate_objective(W: BeamformerSet, instance: Instance, sigma: float,
                        sparsity: bool = True) -> float:
    """Transmit power plus (optionally) the smoothed signal-processing term."""
    cfg = instance.cfg
    x = W.block_power(cfg.M)
    val = float(np.sum(cfg.eta[1:, None] * x) + cfg.eta[0] * np.sum(np.abs(W.v) ** 2))
    if sparsity:
        nu = (1 - instance.cached) * cfg.P_sp / np.log1p(1.0 / sigma)
        val += float(np.sum(nu * np.log1p(x / sigma)))
    return val


# -- subproblem assembly -------------------------------------------------------

def _re_row(a: np.ndarray, ri: np.ndarray, ii: np.ndarray) -> Row:
    """Re(a^H w) for w = x[ri] + 1j x[ii]."""
    return Row(np.r_[ri, ii], np.r_[a.real, a.imag])


def _im_row(a: np.ndarray, ri: np.ndarray, ii: np.ndarray) -> Row:
    return Row(np.r_[ri, ii], np.r_[-a.imag, a.real])


def _minorant_row(a: np.ndarray, w0: np.ndarray, ri: np.ndarray, ii: np.ndarray) -> Row:
    """Affine minorant of |a^H w|^2 tangent at w0."""
    z = np.vdot(a, w0)
    return Row(np.r_[ri, ii],
               2 * (z.real * np.r_[a.real, a.imag] + z.imag * np.r_[-a.imag, a.real]),
               -abs(z) ** 2)


def _norm_rows(ri: np.ndarray, ii: np.ndarray, scale: float = 1.0) -> list[Row]:
    return [var_row(i, scale) for i in np.r_[ri, ii]]


@dataclass
class Layout:
    """Where each complex/real quantity lives inside a ConicProgram."""

    w: list  # per group (re_idx, im_idx)
    v: dict  # group -> (re_idx, im_idx)
    b: dict  # group -> index
    backhaul_blocks: list  # (m, l) with an emitted backhaul constraint
    sinr_slack: np.ndarray | None
    bh_slack: np.ndarray | None
    M: int
    N_s: int
    N_m: int

    def beamformers(self, x: np.ndarray) -> BeamformerSet:
        L = len(self.w)
        W = BeamformerSet.zeros(L, self.M, self.N_s, self.N_m)
        for l, (ri, ii) in enumerate(self.w):
            W.w[l] = x[ri] + 1j * x[ii]
        for l, (ri, ii) in self.v.items():
            W.v[l] = x[ri] + 1j * x[ii]
        for l, i in self.b.items():
            W.b[l] = x[i]
        return W

    def max_slack(self, x: np.ndarray) -> float:
        vals = [x[s] for s in (self.sinr_slack, self.bh_slack) if s is not None and s.size]
        return float(max((v.max() for v in vals), default=0.0))


def backhaul_terms(coeffs: CcpCoefficients, clustering: Clustering | None,
                   instance: Instance):
    """Coefficients (a, c0) of the backhaul block a ||w||^2 / b + c0 / b <= log2(1 + psi)."""
    if clustering is None:
        return coeffs.zeta * coeffs.theta, coeffs.zeta * coeffs.q
    need = clustering.C * (1 - instance.cached) * instance.rate[None, :]
    return np.zeros_like(need, dtype=float), need.astype(float)


def assemble_subproblem(coeffs: CcpCoefficients, iterate: BeamformerSet, instance: Instance,
                        opts: CcpOptions, clustering: Clustering | None = None,
                        penalty: float | None = None, sparsity: bool = True):
    """Convex subproblem at ``iterate``.

    With ``clustering=None`` the backhaul constraint uses the linearized
    smoothed indicator; with a fixed clustering it is the exact
    ``c (1 - s) r_l <= b_l log2(1 + SNR)`` and unserved blocks are pinned to
    zero. ``penalty`` enables nonnegative slacks on the SINR and backhaul
    constraints. Returns ``(program, layout)``.
    """
    cfg, ch, groups = instance.cfg, instance.channels, instance.groups
    M, L, N_s, N_m, K = cfg.M, groups.L, cfg.N_s, cfg.N_m, cfg.K
    n_w = M * N_s
    for name, arr in (("theta", coeffs.theta), ("q", coeffs.q), ("pi", coeffs.pi)):
        if arr.shape != (M, L):
            raise ValueError(f"coefficient {name} has shape {arr.shape}, expected {(M, L)}")
    if iterate.w.shape != (L, n_w) or iterate.v.shape != (L, N_m):
        raise ValueError("iterate does not match the instance dimensions")
    if np.any(coeffs.q < -1e-12):
        raise ValueError("negative linearization offset q")

    a_coef, c0_coef = backhaul_terms(coeffs, clustering, instance)
    emit = (a_coef > 0) | (c0_coef > 0)
    bh_groups = [l for l in range(L) if emit[:, l].any()]
    blocks = [(m, l) for l in bh_groups for m in range(M) if emit[m, l]]

    prog = ConicProgram()
    w_idx = []
    for l in range(L):
        idx = prog.add_variable(f"w{l}", 2 * n_w)
        w_idx.append((idx[:n_w], idx[n_w:]))
    v_idx, b_idx = {}, {}
    for l in bh_groups:
        idx = prog.add_variable(f"v{l}", 2 * N_m)
        v_idx[l] = (idx[:N_m], idx[N_m:])
    if bh_groups:
        b_all = prog.add_variable("b", len(bh_groups))
        b_idx = {l: int(i) for l, i in zip(bh_groups, b_all)}

    def w_block(m, l):
        ri, ii = w_idx[l]
        sl = slice(m * N_s, (m + 1) * N_s)
        return ri[sl], ii[sl]

    sinr_slack = bh_slack = None
    if penalty is not None:
        sinr_slack = prog.add_variable("slack_sinr", K)
        prog.add_objective(sinr_slack, penalty)
        prog.add(Cone.NONNEG, [var_row(i) for i in sinr_slack], "slack")
        if blocks:
            bh_slack = prog.add_variable("slack_bh", len(blocks))
            prog.add_objective(bh_slack, penalty)
            prog.add(Cone.NONNEG, [var_row(i) for i in bh_slack], "slack")

    # objective epigraphs t >= ||w_{m,l}||^2 and s_l >= ||v_l||^2
    pi = coeffs.pi if sparsity and clustering is None else np.broadcast_to(cfg.eta[1:, None], (M, L))
    t = prog.add_variable("t", M * L)
    for m in range(M):
        for l in range(L):
            ri, ii = w_block(m, l)
            if clustering is not None and clustering.C[m, l] == 0:
                prog.add(Cone.ZERO, _norm_rows(ri, ii), "cluster", (m, l))
                prog.add(Cone.ZERO, [var_row(t[m * L + l])], "cluster", (m, l))
                continue
            prog.add(Cone.RSOC, [var_row(t[m * L + l]), const_row(0.5)] + _norm_rows(ri, ii),
                     "obj", (m, l))
            prog.add_objective(t[m * L + l], pi[m, l])
    if bh_groups:
        s_v = prog.add_variable("s", len(bh_groups))
        for j, l in enumerate(bh_groups):
            prog.add(Cone.RSOC, [var_row(s_v[j]), const_row(0.5)] + _norm_rows(*v_idx[l]),
                     "obj", (l,))
        prog.add_objective(s_v, cfg.eta[0])

    # SINR constraints, desired-signal power replaced by its tangent minorant
    h_hat = ch.h / np.sqrt(ch.noise_user_lin)[:, None]
    gamma = instance.gamma
    for k in range(K):
        l = groups.group_of_user[k]
        g = gamma[l]
        lhs = _minorant_row(h_hat[k], iterate.w[l], *w_idx[l]) - const_row(g)
        if sinr_slack is not None:
            lhs = lhs + var_row(sinr_slack[k])
        rows = [lhs, const_row(0.5)]
        sg = np.sqrt(g)
        for j in range(L):
            if j != l:
                rows += [_re_row(h_hat[k], *w_idx[j]) * sg, _im_row(h_hat[k], *w_idx[j]) * sg]
        prog.add(Cone.RSOC, rows, "8", (k,))

    # per-SBS and MBS power caps
    for m in range(M):
        rows = [const_row(np.sqrt(cfg.P_m))]
        for l in range(L):
            rows += _norm_rows(*w_block(m, l))
        prog.add(Cone.SOC, rows, "4d", (m,))
    if bh_groups:
        rows = [const_row(np.sqrt(cfg.P_0))]
        for l in bh_groups:
            rows += _norm_rows(*v_idx[l])
        prog.add(Cone.SOC, rows, "4e")
        b_rows = [var_row(b_idx[l]) for l in bh_groups]
        simplex = const_row(1.0)
        for r in b_rows:
            simplex = simplex - r
        prog.add(Cone.NONNEG, [simplex], "4f")
        prog.add(Cone.NONNEG, [r - const_row(opts.b_min) for r in b_rows], "4f-floor")

    # backhaul blocks
    if blocks:
        psi = prog.add_variable("psi", len(blocks))
        rate = prog.add_variable("rate", len(blocks))
        H_hat = ch.H / np.sqrt(ch.noise_sbs_lin)[:, None, None]
        for j, (m, l) in enumerate(blocks):
            vri, vii = v_idx[l]
            snr = const_row(0.0)
            for col in range(N_s):
                snr = snr + _minorant_row(H_hat[m][:, col], iterate.v[l], vri, vii)
            prog.add(Cone.NONNEG, [snr - var_row(psi[j]), var_row(psi[j])], "7b", (m, l))
            prog.add(Cone.EXP, [var_row(rate[j]), const_row(1.0), var_row(psi[j]) + const_row(1.0)],
                     "7a-aux", (m, l))
            cap = var_row(rate[j], 1.0 / LN2)
            if bh_slack is not None:
                cap = cap + var_row(bh_slack[j])
            bvar = var_row(b_idx[l])
            if a_coef[m, l] > 0:
                u = prog.add_variable(f"u{m}_{l}", 1)[0]
                prog.add(Cone.RSOC, [var_row(u), bvar] + _norm_rows(*w_block(m, l), scale=np.sqrt(2)),
                         "7a-aux", (m, l))
                cap = cap - var_row(u, a_coef[m, l])
            if c0_coef[m, l] > 0:
                p = prog.add_variable(f"p{m}_{l}", 1)[0]
                prog.add(Cone.RSOC, [var_row(p), bvar, const_row(np.sqrt(2))], "7a-aux", (m, l))
                cap = cap - var_row(p, c0_coef[m, l])
            prog.add(Cone.NONNEG, [cap], "7a", (m, l))

    layout = Layout(w_idx, v_idx, b_idx, blocks, sinr_slack, bh_slack, M, N_s, N_m)
    return prog, layout


# -- clustering recovery and tightening ----------------------------------------

def recover_clustering(W: BeamformerSet, eps_c: float, M: int) -> Clustering:
    """Binary clustering from the relative block powers of ``W``."""
    if eps_c <= 0:
        raise ValueError("clustering threshold must be positive")
    x = W.block_power(M)
    top = x.max() if x.size else 0.0
    if top <= 0:
        raise ValueError("all beamformer blocks are zero; no serving SBS")
    return Clustering((x > eps_c * top).astype(int))


def apply_clustering(W: BeamformerSet, C: Clustering) -> BeamformerSet:
    """Copy of ``W`` with every unclustered block hard-zeroed."""
    out = W.copy()
    M, L = C.C.shape
    blocks = out.w.reshape(L, M, -1)
    blocks[C.C.T == 0] = 0
    return out


def tighten_sinr(W: BeamformerSet, instance: Instance, max_iter: int = 10000,
                 tol: float = 1e-13) -> BeamformerSet:
    """Rescale group powers to the least fixed point of the SINR targets.

    From a SINR-feasible point the standard interference-function iteration
    decreases every group power monotonically and ends with each group's
    worst member exactly at its threshold.
    """
    ch, groups = instance.channels, instance.groups
    G = np.abs(np.conj(ch.h) @ W.w.T) ** 2 / ch.noise_user_lin[:, None]
    L = groups.L
    gamma = instance.gamma
    gl = groups.group_of_user
    K = len(gl)
    sig = G[np.arange(K), gl]
    if np.any(sig <= 0):
        return W
    p = np.ones(L)
    for _ in range(max_iter):
        interf = G @ p - sig * p[gl]
        need = gamma[gl] * (interf + 1.0) / sig
        p_new = np.array([need[u].max() for u in groups.members])
        done = np.max(np.abs(p_new - p)) <= tol * max(1.0, p.max())
        p = p_new
        if done:
            break
    out = W.copy()
    out.w = out.w * np.sqrt(p)[:, None]
    return out


# -- outer loop ---------------------------------------------------------------

@dataclass
class TraceRecord:
    phase: str
    iteration: int
    objective: float
    max_slack: float
    min_sinr_gap: list

    def csv_row(self) -> list:
        return [self.phase, self.iteration, repr(self.objective), repr(self.max_slack),
                ";".join(repr(g) for g in self.min_sinr_gap)]


@dataclass
class Solution:
    beamformers: BeamformerSet
    clustering: Clustering
    power: PowerBreakdown
    sinr: np.ndarray
    al_rate: np.ndarray
    bl_rate: np.ndarray
    history: list
    status: SolveStatus
    iterations: int
    feasibility: FeasibilityReport
    mode: Mode = Mode.PROPOSED
    trace: list = field(default_factory=list)
    message: str = ""
    backhaul_need: np.ndarray | None = None  # (M, L) c_{m,l} (1 - s_{m,f_l})

    @property
    def backhauled_groups(self) -> int:
        """Number of groups fetched over the wireless backhaul."""
        return int(np.sum(self.backhaul_need.any(axis=0)))

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "mode": self.mode.value,
            "iterations": self.iterations,
            "power": self.power.to_dict(),
            "clustering": self.clustering.C.tolist(),
            "sinr": self.sinr.tolist(),
            "al_rate": self.al_rate.tolist(),
            "bl_rate": self.bl_rate.tolist(),
            "history": list(self.history),
            "feasibility": self.feasibility.to_dict(),
            "backhauled_groups": self.backhauled_groups,
            "beamformers": self.beamformers.to_dict(),
            "message": self.message,
        }


def _min_sinr_gap(W: BeamformerSet, instance: Instance) -> list:
    return (group_min_sinr(W, instance.channels, instance.groups) / instance.gamma - 1.0).tolist()


def _finish(W: BeamformerSet, C: Clustering, instance: Instance, status: SolveStatus,
            iterations: int, history: list, trace: list, opts: CcpOptions, message="") -> Solution:
    ch, groups = instance.channels, instance.groups
    sinr = all_sinrs(W, ch, groups)
    al = np.array([np.log2(1 + sinr[u].min()) for u in groups.members])
    report = check_p0_feasibility(W, C, instance, opts.constraint_tol)
    if status is not SolveStatus.INFEASIBLE and not report.feasible:
        status = SolveStatus.INFEASIBLE
        message = (message + "; " if message else "") + f"P0 audit failed (worst {report.worst:.3g})"
    return Solution(W, C, total_power(W, C, instance.cache, groups, instance.cfg), sinr, al,
                    bl_rates(W, ch), history, status, iterations, report, opts.mode, trace, message,
                    C.C * (1 - instance.cached))


def _ccp_loop(instance: Instance, start: BeamformerSet, opts: CcpOptions, backend,
              *, phase: str, clustering: Clustering | None, sparsity: bool,
              max_iters: int, rel_tol: float, slacked: bool, sigma: float,
              trace: list, stop_when_feasible: bool = False):
    """Run CCP iterations from ``start``.

    Returns ``(iterate, history, iterations, converged, max_slack)``.
    ``history[0]`` is the objective at ``start``.
    """
    W = start.copy()
    history = [surrogate_objective(W, instance, sigma, sparsity)]
    penalty = opts.penalty if slacked else None
    slack = np.inf if slacked else 0.0
    n = 0
    converged = False
    while n < max_iters:
        coeffs = linearize(W, instance.cache, instance.groups, instance.cfg, sigma)
        prog, layout = assemble_subproblem(coeffs, W, instance, opts, clustering, penalty, sparsity)
        res = backend.solve(prog, opts.solver_tol)
        if not res.ok and penalty is None:
            # numerical trouble at a feasible iterate: fall back to exact penalty
            log.debug("%s iteration %d: %s without slacks, retrying slacked", phase, n, res.status)
            penalty = opts.penalty_max
            continue
        if not res.ok:
            raise InfeasibleError(f"{phase}: subproblem {res.status.value} ({res.info})")
        n += 1
        W = layout.beamformers(res.x)
        slack = layout.max_slack(res.x)
        obj = surrogate_objective(W, instance, sigma, sparsity)
        trace.append(TraceRecord(phase, n, obj, slack, _min_sinr_gap(W, instance)))
        prev = history[-1]
        history.append(obj)
        if slack < opts.constraint_tol:
            if stop_when_feasible:
                converged = True
                break
            if abs(prev - obj) <= rel_tol * max(abs(prev), 1e-12):
                converged = True
                break
        elif penalty is not None and n % 5 == 0:
            penalty = min(penalty * opts.penalty_growth, opts.penalty_max)
    return W, history, n, converged, slack


def matched_filter_start(instance: Instance, seed: int, b_min: float = 1e-4) -> BeamformerSet:
    """Random-phase matched-filter point scaled toward the SINR/backhaul targets."""
    cfg, ch, groups = instance.cfg, instance.channels, instance.groups
    rng = np.random.default_rng([int(seed), 99])
    L = groups.L
    W = BeamformerSet.zeros(L, cfg.M, cfg.N_s, cfg.N_m)
    h_hat = ch.h / np.sqrt(ch.noise_user_lin)[:, None]
    for l, users in enumerate(groups.members):
        phases = np.exp(2j * np.pi * rng.uniform(size=len(users)))
        w = (h_hat[users] / np.linalg.norm(h_hat[users], axis=1, keepdims=True) * phases[:, None]).sum(0)
        gain = np.abs(np.conj(h_hat[users]) @ w) ** 2
        W.w[l] = w * np.sqrt(2 * instance.gamma[l] / max(gain.min(), 1e-300))
    # respect per-SBS caps
    bp = W.block_power(cfg.M).sum(axis=1)
    scale = np.minimum(1.0, cfg.P_m / np.maximum(bp, 1e-300))
    W.w = (W.w.reshape(L, cfg.M, -1) * np.sqrt(scale)[None, :, None]).reshape(L, -1)

    need = 1 - instance.cached
    bh = [l for l in range(L) if need[:, l].any()]
    if bh:
        H_hat = ch.H / np.sqrt(ch.noise_sbs_lin)[:, None, None]
        b = 1.0 / len(bh)
        target = 2.0 ** (instance.cfg.r_l / b) - 1.0
        for l in bh:
            ms = np.flatnonzero(need[:, l])
            v = np.zeros(cfg.N_m, complex)
            for m in ms:
                col = H_hat[m] @ complex_gaussian(rng, cfg.N_s)
                v += col / np.linalg.norm(col)
            snr = np.array([np.sum(np.abs(H_hat[m].conj().T @ v) ** 2) for m in ms])
            W.v[l] = v * np.sqrt(2 * target / max(snr.min(), 1e-300))
            W.b[l] = b
        tot = np.sum(np.abs(W.v) ** 2)
        if tot > cfg.P_0:
            W.v *= np.sqrt(cfg.P_0 / tot)
    return W


def initialize(instance: Instance, seed: int, backend=None, opts: CcpOptions | None = None,
               clustering: Clustering | None = None, trace: list | None = None) -> BeamformerSet:
    """Feasible starting point for the CCP.

    Runs a penalized CCP (no sparsity weights) from a random-phase matched
    filter until all slacks vanish. The result satisfies the convexified
    constraints linearized at itself. Raises :class:`InfeasibleError` after
    ``opts.init_retries`` failed attempts.
    """
    opts = opts or CcpOptions()
    backend = backend or conic.default_backend()
    sigma = opts.sigma_smooth or instance.cfg.sigma_smooth
    trace = [] if trace is None else trace
    last = ""
    for attempt in range(opts.init_retries):
        start = matched_filter_start(instance, seed + 7919 * attempt, opts.b_min)
        try:
            W, _, _, ok, slack = _ccp_loop(
                instance, start, opts, backend, phase="init", clustering=clustering,
                sparsity=False, max_iters=opts.init_iters, rel_tol=opts.rel_obj_tol,
                slacked=True, sigma=sigma, trace=trace, stop_when_feasible=True)
        except InfeasibleError as exc:
            last = str(exc)
            continue
        if ok:
            return W
        last = f"slack {slack:.3g} after {opts.init_iters} iterations"
    raise InfeasibleError(f"initialization failed after {opts.init_retries} attempts: {last}")


def _polish(instance, W, C, opts, backend, sigma, trace):
    W = apply_clustering(W, C)
    W, hist, n, conv, slack = _ccp_loop(
        instance, W, opts, backend, phase="polish", clustering=C, sparsity=False,
        max_iters=opts.polish_iters, rel_tol=opts.polish_tol, slacked=True, sigma=sigma,
        trace=trace)
    return W, hist, n, conv, slack


def ccp_solve(instance: Instance, init: BeamformerSet, opts: CcpOptions | None = None,
              backend=None) -> Solution:
    """Smoothed-l0 CCP from a feasible ``init``.

    The main phase minimizes the smoothed objective until the relative
    change drops below ``opts.rel_obj_tol``. The clustering is then read
    off the block powers, and (with ``opts.polish``) the beamformers are
    re-optimized with that clustering fixed and the exact backhaul
    constraint, followed by the SINR tightening rescale.
    """
    opts = opts or CcpOptions()
    backend = backend or conic.default_backend()
    sigma = opts.sigma_smooth or instance.cfg.sigma_smooth
    trace: list = []
    history: list = []
    iterations = 0
    W = init
    converged = False
    try:
        for stage in range(opts.anneal_steps + 1):
            W, hist, n, converged, slack = _ccp_loop(
                instance, W, opts, backend, phase="main", clustering=None, sparsity=True,
                max_iters=opts.max_iters - iterations, rel_tol=opts.rel_obj_tol, slacked=False,
                sigma=sigma, trace=trace)
            history += hist if not history else hist[1:]
            iterations += n
            if not converged or iterations >= opts.max_iters:
                break
            sigma /= 10
        C = recover_clustering(W, opts.clustering_threshold, instance.cfg.M)
        if opts.polish:
            W, _, _, pconv, pslack = _polish(instance, W, C, opts, backend, sigma, trace)
            W = apply_clustering(W, C)  # the solver leaves ~1e-40 residue in pinned blocks
            if pslack >= opts.constraint_tol:
                return _finish(W, C, instance, SolveStatus.INFEASIBLE, iterations, history, trace,
                               opts, f"polish left slack {pslack:.3g}")
        else:
            W = apply_clustering(W, C)
    except (InfeasibleError, ValueError) as exc:
        C = Clustering(np.zeros((instance.cfg.M, instance.L), int))
        return _finish(W, C, instance, SolveStatus.INFEASIBLE, iterations, history, trace, opts,
                       str(exc))
    if opts.tighten:
        W = tighten_sinr(W, instance)
    status = SolveStatus.CONVERGED if converged else SolveStatus.ITER_LIMIT
    return _finish(W, C, instance, status, iterations, history, trace, opts)


def baseline_instance(instance: Instance, mode: Mode, opts: CcpOptions) -> Instance:
    mode = Mode(mode)
    if mode is Mode.NO_CACHE_NO_SC:
        S = np.zeros_like(instance.cache.S)
        inst = instance.with_cache(CachePlacement(S, instance.cache.strategy))
        return inst.with_config(instance.cfg.replace(Z=0, P_0=opts.no_cache_p0))
    return instance


def run_baseline(instance: Instance, mode: Mode, opts: CcpOptions | None = None, backend=None,
                 seed: int = 0) -> Solution:
    """Full-clustering baselines: ``no-sc`` keeps the cache, ``no-cache`` drops it too."""
    mode = Mode(mode)
    if mode is Mode.PROPOSED:
        raise ValueError("run_baseline handles the no-sc / no-cache modes only")
    opts = replace(opts or CcpOptions(), mode=mode)
    backend = backend or conic.default_backend()
    inst = baseline_instance(instance, mode, opts)
    sigma = opts.sigma_smooth or inst.cfg.sigma_smooth
    C = Clustering.full(inst.cfg.M, inst.L)
    trace: list = []
    try:
        W0 = initialize(inst, seed, backend, opts, clustering=C, trace=trace)
        W, history, n, converged, slack = _ccp_loop(
            inst, W0, opts, backend, phase="main", clustering=C, sparsity=False,
            max_iters=opts.max_iters, rel_tol=opts.rel_obj_tol, slacked=False, sigma=sigma,
            trace=trace)
    except InfeasibleError as exc:
        W = BeamformerSet.zeros(inst.L, inst.cfg.M, inst.cfg.N_s, inst.cfg.N_m)
        return _finish(W, C, inst, SolveStatus.INFEASIBLE, 0, [], trace, opts, str(exc))
    if opts.tighten:
        W = tighten_sinr(W, inst)
    status = SolveStatus.CONVERGED if converged else SolveStatus.ITER_LIMIT
    return _finish(W, C, inst, status, n, history, trace, opts)


def solve_instance(instance: Instance, mode: Mode = Mode.PROPOSED, opts: CcpOptions | None = None,
                   backend=None, seed: int = 0) -> Solution:
    """Initialize and solve ``instance`` in the requested mode."""
    mode = Mode(mode)
    opts = replace(opts or CcpOptions(), mode=mode)
    backend = backend or conic.default_backend()
    if mode is not Mode.PROPOSED:
        return run_baseline(instance, mode, opts, backend, seed)
    trace: list = []
    try:
        W0 = initialize(instance, seed, backend, opts, trace=trace)
    except InfeasibleError as exc:
        W = BeamformerSet.zeros(instance.L, instance.cfg.M, instance.cfg.N_s, instance.cfg.N_m)
        C = Clustering(np.zeros((instance.cfg.M, instance.L), int))
        return _finish(W, C, instance, SolveStatus.INFEASIBLE, 0, [], trace, opts, str(exc))
    sol = ccp_solve(instance, W0, opts, backend)
    sol.trace = trace + sol.trace
    return sol
