"""Small conic-program interface backed by an interior-point solver.

Programs are written as

    minimise c @ x  subject to  A x + s = b,  s in K

with K a product of zero, non-negative, second-order and exponential
cones (``y * exp(x / y) <= z`` for the triple ``(x, y, z)``). Programs that
are solved many times with the same sparsity pattern are described by a
:class:`Template` whose numeric entries are products of a base constant and
a named parameter slot.
"""

from __future__ import annotations

from dataclasses import dataclass

import clarabel
import numpy as np
import scipy.sparse as sp


class ConicError(RuntimeError):
    pass


@dataclass
class ConicProgram:
    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cones: list[tuple[str, int]]


@dataclass
class ConicResult:
    status: str  # "optimal" | "inaccurate" | "infeasible" | "failed"
    x: np.ndarray | None
    value: float
    iterations: int
    primal_residual: float
    gap: float

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "inaccurate")


_CONE_CACHE: dict[tuple, list] = {}


def _clarabel_cones(cones):
    key = tuple(cones)
    if key not in _CONE_CACHE:
        _CONE_CACHE[key] = _make_cones(cones)
    return _CONE_CACHE[key]


def _make_cones(cones):
    out = []
    for kind, n in cones:
        if kind == "zero":
            out.append(clarabel.ZeroConeT(n))
        elif kind == "nonneg":
            out.append(clarabel.NonnegativeConeT(n))
        elif kind == "soc":
            out.append(clarabel.SecondOrderConeT(n))
        elif kind == "exp":
            out.extend(clarabel.ExponentialConeT() for _ in range(n))
        else:
            raise ValueError(f"unknown cone {kind!r}")
    return out


def cone_violation(s: np.ndarray, cones) -> float:
    """Largest distance-like violation of ``s`` from the cone product."""
    worst = 0.0
    i = 0
    for kind, n in cones:
        if kind == "zero":
            if n:
                worst = max(worst, float(np.max(np.abs(s[i:i + n]))))
            i += n
        elif kind == "nonneg":
            if n:
                worst = max(worst, float(max(0.0, -np.min(s[i:i + n]))))
            i += n
        elif kind == "soc":
            t, v = s[i], s[i + 1:i + n]
            worst = max(worst, float(max(0.0, np.linalg.norm(v) - t)))
            i += n
        else:
            for _ in range(n):
                x, y, z = s[i:i + 3]
                if y > 1e-300:
                    viol = max(0.0, y * np.exp(min(x / y, 700.0)) - z) / max(1.0, abs(z))
                else:
                    viol = max(0.0, x, -y, -z)
                worst = max(worst, float(viol), float(max(0.0, -y)))
                i += 3
    return worst


_P_CACHE: dict[int, sp.csc_matrix] = {}


def _zero_P(n: int) -> sp.csc_matrix:
    if n not in _P_CACHE:
        _P_CACHE[n] = sp.csc_matrix((n, n))
    return _P_CACHE[n]


def solve_conic(prog: ConicProgram, tol: float = 1e-8, max_iter: int = 200) -> ConicResult:
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.presolve_enable = False
    n = prog.c.size
    P = _zero_P(n)
    solver = clarabel.DefaultSolver(P, prog.c, prog.A, prog.b, _clarabel_cones(prog.cones), settings)
    sol = solver.solve()
    status = str(sol.status)
    if "PrimalInfeasible" in status:
        return ConicResult("infeasible", None, np.inf, sol.iterations, np.inf, np.inf)
    x = np.array(sol.x)
    if not np.all(np.isfinite(x)):
        return ConicResult("failed", None, np.inf, sol.iterations, np.inf, np.inf)
    gap = abs(sol.obj_val - sol.obj_val_dual) if np.isfinite(sol.obj_val_dual) else np.inf
    if status == "Solved":
        return ConicResult("optimal", x, float(prog.c @ x), sol.iterations, float(sol.r_prim), gap)
    resid = cone_violation(prog.b - prog.A @ x, prog.cones)
    if status.startswith("Almost") or status in ("MaxIterations", "InsufficientProgress"):
        st = "inaccurate" if resid < 1e-6 else "failed"
    else:
        st = "failed"
    return ConicResult(st, x, float(prog.c @ x), sol.iterations, resid, gap)


class Template:
    """Sparsity pattern with entries ``base * slot`` filled in per solve."""

    def __init__(self):
        self.n = 0
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.base: list[float] = []
        self.slot: list[int] = []
        self.b_rows: list[int] = []
        self.b_base: list[float] = []
        self.b_slot: list[int] = []
        self.c_cols: list[int] = []
        self.c_base: list[float] = []
        self.cones: list[tuple[str, int]] = []
        self.nrows = 0
        self.slots: dict[str, int] = {"one": 0}

    def var(self, count: int = 1) -> np.ndarray:
        idx = np.arange(self.n, self.n + count)
        self.n += count
        return idx

    def s(self, name: str) -> int:
        return self.slots.setdefault(name, len(self.slots))

    def row(self, entries, rhs: float = 0.0, rhs_slot: str = "one") -> int:
        """Append one row; ``entries`` are (col, base, slot-name) triples."""
        r = self.nrows
        self.nrows += 1
        for col, base, slot in entries:
            if base == 0:
                continue
            self.rows.append(r)
            self.cols.append(int(col))
            self.base.append(float(base))
            self.slot.append(self.s(slot))
        if rhs != 0:
            self.b_rows.append(r)
            self.b_base.append(float(rhs))
            self.b_slot.append(self.s(rhs_slot))
        return r

    def cone(self, kind: str, n: int):
        if self.cones and self.cones[-1][0] == kind and kind in ("zero", "nonneg", "exp"):
            self.cones[-1] = (kind, self.cones[-1][1] + n)
        else:
            self.cones.append((kind, n))

    def objective(self, col: int, base: float):
        self.c_cols.append(int(col))
        self.c_base.append(float(base))

    def compile(self) -> "CompiledTemplate":
        return CompiledTemplate(self)


class CompiledTemplate:
    def __init__(self, t: Template):
        rows = np.array(t.rows, dtype=np.int64)
        cols = np.array(t.cols, dtype=np.int64)
        key = cols * (t.nrows + 1) + rows
        if np.unique(key).size != key.size:
            raise ValueError("duplicate entries in conic template")
        order = np.lexsort((rows, cols))
        self.order = order
        self.indices = rows[order].astype(np.int32)
        counts = np.bincount(cols, minlength=t.n)
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)
        self.base = np.array(t.base)[order]
        self.slot = np.array(t.slot, dtype=np.int64)[order]
        self.b_rows = np.array(t.b_rows, dtype=np.int64)
        self.b_base = np.array(t.b_base)
        self.b_slot = np.array(t.b_slot, dtype=np.int64)
        self.c = np.zeros(t.n)
        np.add.at(self.c, np.array(t.c_cols, dtype=np.int64), np.array(t.c_base))
        self.cones = list(t.cones)
        self.shape = (t.nrows, t.n)
        self.slots = dict(t.slots)
        self._A = sp.csc_matrix((self.base.copy(), self.indices, self.indptr), shape=self.shape)
        self._A.has_sorted_indices = True
        counted = sum(3 * n if k == "exp" else n for k, n in self.cones)
        if counted != t.nrows:
            raise ValueError(f"cone sizes ({counted}) do not match rows ({t.nrows})")

    def program(self, values: dict[str, float], share: bool = True) -> ConicProgram:
        """Fill the slots. With ``share`` the constraint matrix object is reused
        between calls (its data overwritten), so an earlier program is stale."""
        F = np.empty(len(self.slots))
        for name, i in self.slots.items():
            F[i] = 1.0 if name == "one" else values[name]
        data = self.base * F[self.slot]
        if share:
            A = self._A
            A.data[:] = data
        else:
            A = sp.csc_matrix((data, self.indices, self.indptr), shape=self.shape)
        b = np.zeros(self.shape[0])
        np.add.at(b, self.b_rows, self.b_base * F[self.b_slot])
        return ConicProgram(self.c.copy(), A, b, self.cones)
