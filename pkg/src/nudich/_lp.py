"""Lexicographic linear programming on top of scipy's HiGHS backend."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog

# Relaxation applied when an optimal stage value is frozen as a constraint
# for the next stage; keeps later stages feasible under solver rounding.
STAGE_SLACK = 1e-9


def lexicographic_lp(A_ub, b_ub, bounds, objectives, stage_slack=STAGE_SLACK):
    """Minimise ``objectives[0] @ x``, then ``objectives[1] @ x`` on the
    optimal face of the first, and so on.

    Returns the final solution vector, or ``None`` when the constraint set
    is empty. A later stage that the solver cannot resolve (a tie-break
    squeezed to a sliver by the frozen constraints) keeps the previous
    stage's solution.
    """
    A = np.asarray(A_ub, dtype=float)
    b = np.asarray(b_ub, dtype=float)
    x = None
    for c in objectives:
        c = np.asarray(c, dtype=float)
        res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
        if res.status != 0 and x is not None:
            return x
        if res.status == 2:
            return None
        if res.status != 0:
            raise RuntimeError(f"linear program failed: {res.message}")
        x = res.x
        opt = float(c @ x)
        A = np.vstack([A, c])
        b = np.append(b, opt + stage_slack * max(1.0, abs(opt)))
    return x
