"""Damped Gauss-Newton least squares with numeric Jacobians.

Small and dependency-light on purpose: every model in this package has a
handful of parameters and tens of data points, and the numeric central
difference Jacobian (relative step 1e-6, floored at 1e-6 absolute) is
directly checkable against finite differences in tests.
"""

from __future__ import annotations

import numpy as np

_REL_STEP = 1e-6


def numeric_jacobian(fun, x, rel_step: float = _REL_STEP) -> np.ndarray:
    """Central-difference Jacobian of a residual function at x."""
    x = np.asarray(x, dtype=float)
    r0 = np.asarray(fun(x), dtype=float)
    jac = np.empty((r0.size, x.size))
    for j in range(x.size):
        h = rel_step * max(abs(x[j]), 1.0)
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        jac[:, j] = (np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2.0 * h)
    return jac


def lm_least_squares(fun, x0, *, max_iter: int = 500, step_tol: float = 1e-9,
                     rel_step: float = _REL_STEP):
    """Minimize 0.5*||fun(x)||^2 by Levenberg-Marquardt damping.

    Returns ``(x, info)`` where info carries ``converged``, ``iterations``,
    ``cost`` and ``message``. Convergence is declared when the relative
    parameter step falls below ``step_tol``. The cost never increases
    between accepted iterations.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = np.asarray(fun(x), dtype=float)
    cost = 0.5 * float(r @ r)
    lam = 1e-3
    info = {"converged": False, "iterations": 0, "cost": cost,
            "message": "max iterations reached", "initial_cost": cost}
    for it in range(1, max_iter + 1):
        info["iterations"] = it
        jac = numeric_jacobian(fun, x, rel_step)
        grad = jac.T @ r
        hess = jac.T @ jac
        diag = np.clip(np.diag(hess), 1e-14, None)
        step = None
        for _ in range(40):
            try:
                step = np.linalg.solve(hess + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = x + step
            r_new = np.asarray(fun(x_new), dtype=float)
            cost_new = 0.5 * float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                break
            lam *= 10.0
            step = None
        if step is None:
            # Fully damped and still uphill: we are at a stationary point.
            info["converged"] = True
            info["message"] = "no downhill step (stationary point)"
            break
        rel = float(np.max(np.abs(step) / np.maximum(np.abs(x_new), 1.0)))
        x, r, cost = x_new, r_new, cost_new
        lam = max(lam / 3.0, 1e-14)
        info["cost"] = cost
        if rel < step_tol:
            info["converged"] = True
            info["message"] = "parameter step below tolerance"
            break
    return x, info
