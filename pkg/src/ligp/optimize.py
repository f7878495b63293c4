"""Box-constrained quasi-Newton minimization over a batch of independent problems.

Each row of ``x`` is its own problem.  Rows share only the vectorized objective
call; every row keeps its own inverse-Hessian approximation, line search and
stopping test, so a row's trajectory does not depend on which other rows are
in the batch.
"""

import numpy as np


def _project(x, lo, hi):
    return np.minimum(np.maximum(x, lo), hi)


def minimize_box(fun, x0, lo, hi, maxiter=100, ftol=1e-9, gtol=1e-5, max_step=2.0,
                 max_backtrack=30, c1=1e-4):
    """Projected BFGS with Armijo backtracking along the projection arc.

    ``fun(x, rows)`` returns ``(f, grad)`` for the given subset of rows, with
    ``f`` set to ``inf`` where the objective cannot be evaluated.  Variables
    held at a bound with the gradient pointing outward are frozen for the step
    and excluded from the quasi-Newton direction.

    Returns a dict with ``x``, ``f``, ``grad``, ``iterations`` and
    ``converged`` arrays.
    """
    x = _project(np.array(x0, dtype=float), lo, hi)
    B, q = x.shape
    lo = np.broadcast_to(lo, x.shape)
    hi = np.broadcast_to(hi, x.shape)
    rows = np.arange(B)
    f, g = fun(x, rows)
    f = np.array(f, dtype=float)
    g = np.array(g, dtype=float)
    H = np.broadcast_to(np.eye(q), (B, q, q)).copy()
    iters = np.zeros(B, dtype=int)
    converged = np.zeros(B, dtype=bool)
    active = np.isfinite(f)

    for _ in range(maxiter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        xa, ga, Ha = x[idx], g[idx], H[idx]
        at_lo = (xa <= lo[idx]) & (ga > 0)
        at_hi = (xa >= hi[idx]) & (ga < 0)
        free = ~(at_lo | at_hi)
        pg = np.where(free, ga, 0.0)
        done = np.max(np.abs(pg), axis=1) <= gtol
        converged[idx[done]] = True
        active[idx[done]] = False
        keep = ~done
        idx, xa, ga, Ha, free = idx[keep], xa[keep], ga[keep], Ha[keep], free[keep]
        if idx.size == 0:
            break
        mask = free[:, :, None] & free[:, None, :]
        d = -np.einsum("bij,bj->bi", np.where(mask, Ha, 0.0), np.where(free, ga, 0.0))
        slope = np.sum(d * ga, axis=1)
        reset = slope >= 0
        if reset.any():
            Ha[reset] = np.eye(q)
            H[idx[reset]] = np.eye(q)
            d[reset] = -np.where(free[reset], ga[reset], 0.0)
        dmax = np.max(np.abs(d), axis=1)
        t = np.where(dmax > max_step, max_step / np.maximum(dmax, 1e-300), 1.0)

        # backtracking line search, vectorized over rows still searching
        fa = f[idx]
        x_new = np.empty_like(xa)
        f_new = np.full(idx.size, np.inf)
        g_new = np.zeros_like(ga)
        searching = np.ones(idx.size, dtype=bool)
        for _ls in range(max_backtrack):
            s_idx = np.flatnonzero(searching)
            if s_idx.size == 0:
                break
            trial = _project(xa[s_idx] + t[s_idx, None] * d[s_idx], lo[idx[s_idx]], hi[idx[s_idx]])
            ft, gt = fun(trial, idx[s_idx])
            ft = np.asarray(ft, dtype=float)
            ok = np.isfinite(ft) & (ft <= fa[s_idx] + c1 * np.sum(ga[s_idx] * (trial - xa[s_idx]), axis=1))
            acc = s_idx[ok]
            x_new[acc] = trial[ok]
            f_new[acc] = ft[ok]
            g_new[acc] = np.asarray(gt)[ok]
            searching[acc] = False
            t[s_idx[~ok]] *= 0.5
        failed = searching
        # a failed line search means no further progress is possible from here
        converged[idx[failed]] = True
        active[idx[failed]] = False
        good = ~failed
        gi = idx[good]
        iters[gi] += 1
        s = x_new[good] - xa[good]
        y = g_new[good] - ga[good]
        sy = np.sum(s * y, axis=1)
        upd = sy > 1e-12 * np.maximum(np.sqrt(np.sum(s * s, axis=1) * np.sum(y * y, axis=1)), 1e-300)
        Hg = Ha[good]
        if upd.any():
            rho = 1.0 / sy[upd]
            I = np.eye(q)
            V = I - rho[:, None, None] * s[upd][:, :, None] * y[upd][:, None, :]
            Hg[upd] = V @ Hg[upd] @ np.swapaxes(V, 1, 2) + rho[:, None, None] * s[upd][:, :, None] * s[upd][:, None, :]
        H[gi] = Hg
        small = (fa[good] - f_new[good]) <= ftol * np.maximum(np.maximum(np.abs(fa[good]), np.abs(f_new[good])), 1.0)
        x[gi] = x_new[good]
        f[gi] = f_new[good]
        g[gi] = g_new[good]
        converged[gi[small]] = True
        active[gi[small]] = False

    return dict(x=x, f=f, grad=g, iterations=iters, converged=converged)
