"""Box-constrained Levenberg-Marquardt for small residual systems."""

import dataclasses

import numpy as np

__all__ = ["LsqResult", "least_squares_2"]


@dataclasses.dataclass(frozen=True)
class LsqResult:
    x: np.ndarray
    residuals: np.ndarray
    residual_norm: float
    status: str  # "converged", "boundary" or "max-iterations"
    active: np.ndarray  # bound-active flag per parameter
    n_iter: int
    n_eval: int

    @property
    def converged(self):
        return self.status != "max-iterations"

    @property
    def boundary(self):
        return bool(np.any(self.active))


def _fd_jacobian(fun, x, r, lower, upper, step):
    n = x.size
    jac = np.empty((r.size, n))
    for j in range(n):
        h = step * max(1.0, abs(x[j]))
        if x[j] + h <= upper[j]:
            xp = x.copy()
            xp[j] += h
            if x[j] - h >= lower[j]:
                xm = x.copy()
                xm[j] -= h
                jac[:, j] = (fun(xp) - fun(xm)) / (2 * h)
            else:
                jac[:, j] = (fun(xp) - r) / h
        else:
            xm = x.copy()
            xm[j] -= h
            jac[:, j] = (r - fun(xm)) / h
    return jac


def least_squares_2(residuals, init, lower, upper, *, jac=None, xtol=1e-10, gtol=1e-10,
                    ftol=1e-14, max_iter=200, fd_step=1e-6):
    """Minimize ``|residuals(x)|^2`` over the box ``lower <= x <= upper``.

    Damped Gauss-Newton (Levenberg-Marquardt, Marquardt diagonal scaling)
    with projection of every trial step onto the box.  Parameters sitting on
    a bound with the gradient pointing outward are frozen for the step.
    Stops when the projected gradient or the relative step falls below
    ``gtol``/``xtol``, or the residual norm drops below ``ftol``.

    The result is returned even on failure; inspect ``status``.  A
    ``"boundary"`` status means the minimizer lies on the box surface, which
    usually signals that the targets are unreachable inside the box.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    x = np.clip(np.asarray(init, dtype=float), lower, upper)
    if np.any(lower > upper):
        raise ValueError("empty box")
    n_eval = 0

    def fun(z):
        nonlocal n_eval
        n_eval += 1
        out = np.asarray(residuals(z), dtype=float)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError(f"non-finite residuals at {z}")
        return out

    r = fun(x)
    cost = float(r @ r)
    damping = None
    status = "max-iterations"
    it = 0
    for it in range(1, max_iter + 1):
        if np.sqrt(cost) <= ftol:
            status = "converged"
            break
        J = jac(x) if jac is not None else _fd_jacobian(fun, x, r, lower, upper, fd_step)
        g = J.T @ r
        pg = x - np.clip(x - g, lower, upper)
        if np.max(np.abs(pg)) <= gtol:
            status = "converged"
            break
        at_lo = (x <= lower) & (g > 0)
        at_hi = (x >= upper) & (g < 0)
        free = ~(at_lo | at_hi)
        A = J.T @ J
        diag = np.maximum(np.diag(A), 1e-300)
        if damping is None:
            damping = 1e-3
        accepted = False
        while True:
            step = np.zeros_like(x)
            if np.any(free):
                Af = A[np.ix_(free, free)] + damping * np.diag(diag[free])
                try:
                    step[free] = np.linalg.solve(Af, -g[free])
                except np.linalg.LinAlgError:
                    step[free] = -g[free] / (diag[free] * (1 + damping))
            x_new = np.clip(x + step, lower, upper)
            dx = x_new - x
            if np.all(np.abs(dx) <= xtol * (np.abs(x) + xtol)):
                break
            r_new = fun(x_new)
            cost_new = float(r_new @ r_new)
            if cost_new < cost:
                accepted = True
                x, r, cost = x_new, r_new, cost_new
                damping = max(damping / 3.0, 1e-12)
                break
            damping *= 4.0
            if damping > 1e16:
                break
        if not accepted:
            status = "converged"
            break
        if np.all(np.abs(dx) <= xtol * (np.abs(x) + xtol)):
            status = "converged"
            break
    active = (x <= lower) | (x >= upper)
    if status == "converged" and np.any(active):
        status = "boundary"
    return LsqResult(x, r, float(np.sqrt(cost)), status, active, it, n_eval)
