"""Monte-Carlo campaigns over seeded scenarios.

Every (trial, strategy) cell draws its scenario from a hash of
``(seed_base, trial, strategy)``, so all modes of one trial see the same
channels and requests, and adding a mode or a strategy never moves the
randomness of any other cell. Records are sorted before aggregation, so
results do not depend on the worker schedule.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .ccp import CcpOptions, Mode, SolveStatus, baseline_instance, solve_instance
from .scenario import CacheStrategy, SystemConfig, build_instance, desk_config, full_config

log = logging.getLogger(__name__)

PRESETS = {"desk": desk_config, "full": full_config}
STADIUM_REQUESTS = [1, 3, 4, 64, 26, 100, 55, 3]


def cell_seed(seed_base: int, trial_index: int, *parts: str) -> int:
    key = ":".join([str(seed_base), str(trial_index), *map(str, parts)])
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big") >> 1


def load_config(d: dict | None) -> SystemConfig:
    """SystemConfig from a mapping with an optional ``preset`` key."""
    d = dict(d or {})
    preset = d.pop("preset", "full")
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    return PRESETS[preset](**d)


@dataclass
class CampaignSpec:
    config: SystemConfig = field(default_factory=desk_config)
    trials: int = 50
    seed_base: int = 0
    strategies: list = field(default_factory=lambda: ["popc"])
    modes: list = field(default_factory=lambda: ["proposed", "no-sc", "no-cache"])
    requests: list | None = None  # fixed profile; None resamples Zipf requests per trial
    workers: int = 1
    ccp: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("a campaign needs at least one trial")
        if not self.modes:
            raise ValueError("a campaign needs at least one mode")
        if not self.strategies:
            raise ValueError("a campaign needs at least one cache strategy")
        self.modes = [Mode(m).value for m in self.modes]
        self.strategies = [CacheStrategy(s).value for s in self.strategies]
        if self.requests is not None:
            self.requests = [int(f) for f in self.requests]
        self.options()  # validate early

    def options(self) -> CcpOptions:
        return CcpOptions(**self.ccp)

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignSpec":
        d = dict(d)
        cfg = load_config(d.pop("config", {"preset": "desk"}))
        return cls(config=cfg, **d)

    @classmethod
    def from_yaml(cls, path) -> "CampaignSpec":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["config"] = self.config.to_dict()
        return d


@dataclass
class TrialRecord:
    trial_index: int
    seed: int
    solver_seed: int
    mode: str
    strategy: str
    status: str
    total_power: float
    breakdown: dict
    iterations: int
    backhauled_groups: int
    mbs_tx_power: float
    groups: int
    mbs_power_cap: float
    feasible: bool
    worst_violation: float
    history: list
    min_sinr_gap: list
    message: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @property
    def solved(self) -> bool:
        return self.status in (SolveStatus.CONVERGED.value, SolveStatus.ITER_LIMIT.value)


def run_trial(spec: CampaignSpec, trial_index: int, mode: str | None = None,
              strategy: str | None = None) -> TrialRecord:
    """Generate, solve and audit one cell. Failures are recorded, not raised."""
    mode = Mode(mode or spec.modes[0]).value
    strategy = CacheStrategy(strategy or spec.strategies[0]).value
    seed = cell_seed(spec.seed_base, trial_index, strategy)
    solver_seed = cell_seed(spec.seed_base, trial_index, strategy, mode)
    try:
        inst = build_instance(spec.config, seed, strategy, spec.requests)
        opts = spec.options()
        cap = baseline_instance(inst, Mode(mode), opts).cfg.P_0
        sol = solve_instance(inst, mode, opts, seed=solver_seed % (2 ** 31))
        gaps = (np.array([s.min() for s in (sol.sinr[u] for u in inst.groups.members)])
                / inst.gamma - 1.0)
        return TrialRecord(
            trial_index, seed, solver_seed, mode, strategy, sol.status.value,
            sol.power.total, sol.power.to_dict(), sol.iterations, sol.backhauled_groups,
            sol.power.mbs_tx, inst.L, cap, sol.feasibility.feasible, sol.feasibility.worst,
            [float(h) for h in sol.history], gaps.tolist(), sol.message)
    except Exception as exc:  # recorded so that no trial is silently dropped
        log.exception("trial %d (%s, %s) failed", trial_index, mode, strategy)
        # None rather than NaN keeps the JSON standard
        return TrialRecord(trial_index, seed, solver_seed, mode, strategy, "error", None,
                           {}, 0, 0, None, 0, None, False, None, [], [],
                           f"{type(exc).__name__}: {exc}")


def _run_cell(args):
    spec, trial, mode, strategy = args
    return run_trial(spec, trial, mode, strategy)


def run_records(spec: CampaignSpec) -> list[TrialRecord]:
    cells = [(spec, t, m, s) for s in spec.strategies for m in spec.modes for t in range(spec.trials)]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            records = list(pool.map(_run_cell, cells, chunksize=4))
    else:
        records = [_run_cell(c) for c in cells]
    return sorted(records, key=lambda r: (r.strategy, r.mode, r.trial_index))


def summarize(records: list[TrialRecord]) -> dict:
    cells: dict = {}
    for r in records:
        key = f"{r.strategy}/{r.mode}"
        c = cells.setdefault(key, {"trials": 0, "status": {}, "_ok": []})
        c["trials"] += 1
        c["status"][r.status] = c["status"].get(r.status, 0) + 1
        if r.solved:
            c["_ok"].append(r)
    out = {}
    for key, c in sorted(cells.items()):
        ok = c.pop("_ok")
        if ok:
            c["mean_total_power"] = float(np.mean([r.total_power for r in ok]))
            c["mean_backhauled_groups"] = float(np.mean([r.backhauled_groups for r in ok]))
            c["mean_mbs_tx_power"] = float(np.mean([r.mbs_tx_power for r in ok]))
            c["mean_iterations"] = float(np.mean([r.iterations for r in ok]))
            c["all_feasible"] = bool(all(r.feasible for r in ok))
        out[key] = c
    errors = sum(1 for r in records if r.status == "error")
    return {"cells": out, "trials": len(records), "errors": errors}


def write_artifacts(records: list[TrialRecord], out_dir, spec: CampaignSpec | None = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trials.jsonl", "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")

    with open(out / "convergence.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "strategy", "mode", "iteration", "objective"])
        for r in records:
            for i, obj in enumerate(r.history):
                w.writerow([r.trial_index, r.strategy, r.mode, i, repr(obj)])

    with open(out / "cdf.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "mode", "rank", "total_power", "cdf"])
        keys = sorted({(r.strategy, r.mode) for r in records})
        for s, m in keys:
            powers = sorted(r.total_power for r in records if (r.strategy, r.mode) == (s, m) and r.solved)
            n = len(powers)
            for k, p in enumerate(powers, start=1):
                w.writerow([s, m, k, repr(p), repr(k / n)])

    with open(out / "breakdown.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        terms = ["sbs_tx", "mbs_tx", "signal_processing", "circuit", "total"]
        w.writerow(["strategy", "mode", "n"] + [f"mean_{t}" for t in terms] + ["mean_backhauled_groups"])
        for s, m in sorted({(r.strategy, r.mode) for r in records}):
            ok = [r for r in records if (r.strategy, r.mode) == (s, m) and r.solved]
            if not ok:
                continue
            w.writerow([s, m, len(ok)] + [repr(float(np.mean([r.breakdown[t] for r in ok]))) for t in terms]
                       + [repr(float(np.mean([r.backhauled_groups for r in ok])))])

    summary = summarize(records)
    if spec is not None:
        summary["spec"] = spec.to_dict()
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def run_campaign(spec: CampaignSpec, out_dir=None) -> dict:
    """Run every (trial, mode, strategy) cell and write the CSV/JSON artifacts."""
    records = run_records(spec)
    if out_dir is None:
        summary = summarize(records)
    else:
        summary = write_artifacts(records, out_dir, spec)
    summary["records"] = records
    return summary


def default_workers() -> int:
    return max(1, min(8, (os.cpu_count() or 2) - 1))
