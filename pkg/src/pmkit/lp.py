"""Minimal linear-program interface used by the geometry code."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog


class LPError(RuntimeError):
    """The LP backend failed for numerical reasons (not infeasibility)."""


@dataclass
class LPResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None
    value: float | None


def solve_lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, maximize: bool = False) -> LPResult:
    """Optimize ``c @ x`` over {A_ub x <= b_ub, A_eq x = b_eq}, x free.

    Dense HiGHS backend. Raises :class:`LPError` when the backend neither
    certifies optimality nor infeasibility/unboundedness.
    """
    c = np.asarray(c, dtype=float)
    sign = -1.0 if maximize else 1.0
    res = linprog(
        sign * c,
        A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
        bounds=[(None, None)] * c.size,
        method="highs",
    )
    if res.status == 0:
        return LPResult("optimal", np.asarray(res.x), float(sign * res.fun))
    if res.status == 2:
        return LPResult("infeasible", None, None)
    if res.status == 3:
        return LPResult("unbounded", None, None)
    raise LPError(f"LP backend failure (status {res.status}): {res.message}")
