"""Backend-neutral conic programs and the solver adapters behind them.

A :class:`ConicProgram` is ``minimize c^T x + c0`` subject to a list of
constraints ``A_i x + b_i in K_i`` where every ``K_i`` is one of

* ``zero``    -- all rows equal 0
* ``nonneg``  -- all rows >= 0
* ``soc``     -- (t, y) with ||y|| <= t
* ``rsoc``    -- (u, v, y) with 2 u v >= ||y||^2, u, v >= 0
* ``exp``     -- (x, y, z) with y exp(x / y) <= z, y > 0 (closure)

Rows are kept as sparse affine forms so that programs serialize to plain
JSON and can be replayed against any backend.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Protocol

import numpy as np
import scipy.sparse as sp

SQRT2 = np.sqrt(2.0)


class Cone(str, Enum):
    ZERO = "zero"
    NONNEG = "nonneg"
    SOC = "soc"
    RSOC = "rsoc"
    EXP = "exp"


class Status(str, Enum):
    OPTIMAL = "optimal"
    INACCURATE = "inaccurate"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ERROR = "error"


@dataclass
class Row:
    """Affine form ``val . x[idx] + const``."""

    idx: np.ndarray
    val: np.ndarray
    const: float = 0.0

    def __post_init__(self):
        self.idx = np.asarray(self.idx, dtype=np.int64).ravel()
        self.val = np.asarray(self.val, dtype=float).ravel()
        if self.idx.shape != self.val.shape:
            raise ValueError("row index/value length mismatch")
        self.const = float(self.const)

    def __add__(self, other: "Row") -> "Row":
        return Row(np.r_[self.idx, other.idx], np.r_[self.val, other.val], self.const + other.const)

    def __mul__(self, a: float) -> "Row":
        return Row(self.idx, self.val * a, self.const * a)

    __rmul__ = __mul__

    def __neg__(self) -> "Row":
        return self * -1.0

    def __sub__(self, other: "Row") -> "Row":
        return self + (-other)

    def evaluate(self, x: np.ndarray) -> float:
        return float(self.val @ x[self.idx] + self.const) if self.idx.size else self.const


def const_row(c: float) -> Row:
    return Row(np.empty(0, np.int64), np.empty(0), c)


def var_row(i: int, coef: float = 1.0) -> Row:
    return Row([i], [coef])


def var_rows(idx: Iterable[int], coef: float = 1.0) -> list[Row]:
    return [Row([i], [coef]) for i in idx]


def linear_row(idx, val, const: float = 0.0) -> Row:
    return Row(idx, val, const)


@dataclass
class ConicConstraint:
    cone: Cone
    rows: list[Row]
    tag: str = ""
    index: tuple = ()

    def __post_init__(self):
        self.cone = Cone(self.cone)
        self.index = tuple(int(i) for i in self.index)
        d = len(self.rows)
        if self.cone is Cone.EXP and d != 3:
            raise ValueError("exponential cone constraints have exactly 3 rows")
        if self.cone is Cone.SOC and d < 1:
            raise ValueError("second-order cone needs at least 1 row")
        if self.cone is Cone.RSOC and d < 2:
            raise ValueError("rotated second-order cone needs at least 2 rows")

    def values(self, x: np.ndarray) -> np.ndarray:
        return np.array([r.evaluate(x) for r in self.rows])


@dataclass
class ConicProgram:
    n: int = 0
    c: dict = field(default_factory=dict)  # sparse objective, index -> coef
    c0: float = 0.0
    constraints: list[ConicConstraint] = field(default_factory=list)
    blocks: dict = field(default_factory=dict)  # name -> (start, size)

    def add_variable(self, name: str, size: int) -> np.ndarray:
        """Allocate a block of ``size`` real variables and return its indices."""
        if name in self.blocks:
            raise ValueError(f"variable block {name!r} already exists")
        start = self.n
        self.blocks[name] = (start, int(size))
        self.n += int(size)
        return np.arange(start, start + size)

    def block(self, name: str) -> np.ndarray:
        start, size = self.blocks[name]
        return np.arange(start, start + size)

    def add_objective(self, idx, coef):
        for i, a in zip(np.atleast_1d(idx), np.broadcast_to(coef, np.shape(np.atleast_1d(idx)))):
            self.c[int(i)] = self.c.get(int(i), 0.0) + float(a)

    def add(self, cone, rows: list[Row], tag: str = "", index: tuple = ()) -> ConicConstraint:
        con = ConicConstraint(cone, list(rows), tag, index)
        for r in con.rows:
            if r.idx.size and (r.idx.min() < 0 or r.idx.max() >= self.n):
                raise IndexError(f"constraint {tag}{index} references a variable out of range")
        self.constraints.append(con)
        return con

    def objective_vector(self) -> np.ndarray:
        q = np.zeros(self.n)
        for i, a in self.c.items():
            q[i] += a
        return q

    def objective(self, x: np.ndarray) -> float:
        return float(self.objective_vector() @ x + self.c0)

    def count(self, tag: str) -> int:
        return sum(1 for con in self.constraints if con.tag == tag)

    def tagged(self, tag: str) -> list[ConicConstraint]:
        return [con for con in self.constraints if con.tag == tag]

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "c": [[i, a] for i, a in sorted(self.c.items())],
            "c0": self.c0,
            "blocks": {k: list(v) for k, v in self.blocks.items()},
            "constraints": [
                {
                    "cone": con.cone.value, "tag": con.tag, "index": list(con.index),
                    "rows": [[r.idx.tolist(), r.val.tolist(), r.const] for r in con.rows],
                }
                for con in self.constraints
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConicProgram":
        prog = cls(n=int(d["n"]), c={int(i): float(a) for i, a in d["c"]}, c0=float(d["c0"]),
                   blocks={k: tuple(v) for k, v in d["blocks"].items()})
        for con in d["constraints"]:
            rows = [Row(i, v, c) for i, v, c in con["rows"]]
            prog.constraints.append(ConicConstraint(con["cone"], rows, con["tag"], tuple(con["index"])))
        return prog

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ConicProgram":
        return cls.from_dict(json.loads(text))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


@dataclass
class ProgramSolution:
    status: Status
    x: np.ndarray | None
    objective: float
    solve_time: float = 0.0
    max_residual: float = float("nan")
    info: str = ""

    @property
    def ok(self) -> bool:
        return self.status in (Status.OPTIMAL, Status.INACCURATE)

    def value(self, prog: ConicProgram, name: str) -> np.ndarray:
        return self.x[prog.block(name)]


def _soc_residual(t: float, y: np.ndarray) -> float:
    return float(np.linalg.norm(y) - t)


def _exp_residual(x: float, y: float, z: float) -> float:
    if y > 0:
        return float(y * np.exp(min(x / y, 700.0)) - z)
    # closure at y = 0 is {x <= 0, z >= 0}
    return float(max(-y, x, -z))


def constraint_residual(con: ConicConstraint, x: np.ndarray) -> float:
    """Cone-membership residual; <= 0 means the constraint holds."""
    r = con.values(x)
    if con.cone is Cone.ZERO:
        return float(np.max(np.abs(r))) if r.size else 0.0
    if con.cone is Cone.NONNEG:
        return float(np.max(-r)) if r.size else 0.0
    if con.cone is Cone.SOC:
        return _soc_residual(r[0], r[1:])
    if con.cone is Cone.RSOC:
        u, v = r[0], r[1]
        return _soc_residual((u + v) / SQRT2, np.r_[(u - v) / SQRT2, r[2:]])
    return _exp_residual(*r)


def residuals(prog: ConicProgram, point: np.ndarray) -> np.ndarray:
    """One residual per constraint, in program order (<= 0 when satisfied)."""
    point = np.asarray(point, dtype=float)
    return np.array([constraint_residual(con, point) for con in prog.constraints])


class Backend(Protocol):
    def solve(self, prog: ConicProgram, tol: float = 1e-8) -> ProgramSolution: ...


class ClarabelBackend:
    """Adapter to the Clarabel interior-point cone solver."""

    name = "clarabel"

    def __init__(self, max_iter: int = 200, residual_check: float = 1e-6):
        self.max_iter = max_iter
        self.residual_check = residual_check

    def _compile(self, prog: ConicProgram):
        import clarabel

        rows, cols, vals, rhs, cones = [], [], [], [], []
        nrow = 0

        def emit(row: Row):
            nonlocal nrow
            # clarabel form: A x + s = b, s in K, with s = row(x)
            rows.extend([nrow] * row.idx.size)
            cols.extend(row.idx.tolist())
            vals.extend((-row.val).tolist())
            rhs.append(row.const)
            nrow += 1

        for con in prog.constraints:
            d = len(con.rows)
            if con.cone is Cone.RSOC:
                u, v = con.rows[0], con.rows[1]
                emit((u + v) * (1 / SQRT2))
                emit((u - v) * (1 / SQRT2))
                for r in con.rows[2:]:
                    emit(r)
                cones.append(clarabel.SecondOrderConeT(d))
                continue
            for r in con.rows:
                emit(r)
            if con.cone is Cone.ZERO:
                cones.append(clarabel.ZeroConeT(d))
            elif con.cone is Cone.NONNEG:
                cones.append(clarabel.NonnegativeConeT(d))
            elif con.cone is Cone.SOC:
                cones.append(clarabel.SecondOrderConeT(d) if d > 1 else clarabel.NonnegativeConeT(1))
            else:
                cones.append(clarabel.ExponentialConeT())
        A = sp.csc_matrix((vals, (rows, cols)), shape=(nrow, prog.n))
        A.sum_duplicates()
        return A, np.asarray(rhs, float), cones

    def solve(self, prog: ConicProgram, tol: float = 1e-8) -> ProgramSolution:
        import clarabel

        t0 = time.perf_counter()
        if not prog.constraints:
            q = prog.objective_vector()
            if np.any(q != 0):
                return ProgramSolution(Status.UNBOUNDED, None, -np.inf, 0.0, info="no constraints")
            return ProgramSolution(Status.OPTIMAL, np.zeros(prog.n), prog.c0, 0.0, 0.0)
        A, b, cones = self._compile(prog)
        P = sp.csc_matrix((prog.n, prog.n))
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.max_iter = self.max_iter
        settings.tol_gap_abs = tol
        settings.tol_gap_rel = tol
        settings.tol_feas = tol
        settings.max_threads = 1
        try:
            solver = clarabel.DefaultSolver(P, prog.objective_vector(), A, b, cones, settings)
            sol = solver.solve()
        except BaseException as exc:  # rust panics surface as PanicException
            if isinstance(exc, (KeyboardInterrupt, SystemExit)):
                raise
            return ProgramSolution(Status.ERROR, None, np.nan, time.perf_counter() - t0,
                                   info=f"{type(exc).__name__}: {exc}")
        elapsed = time.perf_counter() - t0
        status = str(sol.status)
        x = np.asarray(sol.x, dtype=float)
        if status == "Solved":
            st = Status.OPTIMAL
        elif status.startswith("Almost") and "Infeasible" not in status:
            st = Status.INACCURATE
        elif "PrimalInfeasible" in status:
            return ProgramSolution(Status.INFEASIBLE, None, np.inf, elapsed, info=status)
        elif "DualInfeasible" in status:
            return ProgramSolution(Status.UNBOUNDED, None, -np.inf, elapsed, info=status)
        else:
            st = Status.INACCURATE if np.all(np.isfinite(x)) and status in (
                "MaxIterations", "MaxTime", "InsufficientProgress") else Status.ERROR
        if not np.all(np.isfinite(x)):
            return ProgramSolution(Status.ERROR, None, np.nan, elapsed, info=status)
        res = residuals(prog, x)
        worst = float(res.max()) if res.size else 0.0
        if st is Status.OPTIMAL and worst > self.residual_check:
            st = Status.INACCURATE
        return ProgramSolution(st, x, prog.objective(x), elapsed, worst, info=status)


class RecordingBackend:
    """Wraps a backend and keeps every (program fingerprint, solution) pair."""

    def __init__(self, inner: Backend):
        self.inner = inner
        self.records: list[tuple[str, ProgramSolution]] = []

    def solve(self, prog: ConicProgram, tol: float = 1e-8) -> ProgramSolution:
        sol = self.inner.solve(prog, tol)
        self.records.append((prog.fingerprint(), sol))
        return sol


class ReplayBackend:
    """Replays recorded solutions in call order.

    With ``strict=True`` each replayed program must match the fingerprint
    recorded for that call, so an outer loop that drifts is caught.
    """

    def __init__(self, records: list[tuple[str, ProgramSolution]], strict: bool = True):
        self.records = list(records)
        self.strict = strict
        self.calls = 0

    def solve(self, prog: ConicProgram, tol: float = 1e-8) -> ProgramSolution:
        if self.calls >= len(self.records):
            raise RuntimeError("replay exhausted: more solves than recorded")
        fp, sol = self.records[self.calls]
        self.calls += 1
        if self.strict and fp != prog.fingerprint():
            raise RuntimeError(f"replayed program #{self.calls} differs from the recording")
        return sol


def default_backend() -> Backend:
    return ClarabelBackend()


def solve(prog: ConicProgram, tol: float = 1e-8, backend: Backend | None = None) -> ProgramSolution:
    return (backend or default_backend()).solve(prog, tol)
