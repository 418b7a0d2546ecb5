"""Matrix-free GMRES for the discretised boundary-integral system.

The layer-potential operator couples unknowns to their complex
conjugates, so it is linear over the reals but not over the complex
field.  GMRES therefore runs with the real inner product
Re(x^H y) on complex-stored vectors, which is plain GMRES on the
underlying real system of twice the dimension.  Full orthogonalisation,
no restart, no preconditioner.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class SolveStats:
    iterations: int
    final_residual: float
    converged: bool
    stagnated: bool = False

    @property
    def residual_history(self):
        return self._history

    def _set_history(self, hist):
        self._history = hist


def gmres(apply_op, rhs, tol=1e-10, max_iter=200, x0=None):
    """Solve apply_op(x) = rhs to a relative residual tolerance.

    Returns (solution, SolveStats).  Happy breakdown counts as
    convergence; hitting max_iter or stagnating sets the flags.
    """
    rhs = np.asarray(rhs, dtype=complex)
    n = len(rhs)
    max_iter = min(max_iter, 2 * n)
    b_norm = np.linalg.norm(rhs)
    if b_norm == 0.0:
        stats = SolveStats(0, 0.0, True)
        stats._set_history([0.0])
        return np.zeros(n, dtype=complex), stats

    if x0 is None:
        x0 = np.zeros(n, dtype=complex)
        r0 = rhs.copy()
    else:
        x0 = np.asarray(x0, dtype=complex)
        r0 = rhs - apply_op(x0)

    beta = np.linalg.norm(r0)
    history = [beta / b_norm]
    if beta / b_norm <= tol:
        stats = SolveStats(0, beta / b_norm, True)
        stats._set_history(history)
        return x0.copy(), stats

    V = np.zeros((max_iter + 1, n), dtype=complex)
    V[0] = r0 / beta
    H = np.zeros((max_iter + 1, max_iter))
    cs = np.zeros(max_iter)
    sn = np.zeros(max_iter)
    g = np.zeros(max_iter + 1)
    g[0] = beta

    def rdot(a, b):
        return float(np.real(np.vdot(a, b)))

    k_done = 0
    converged = False
    for k in range(max_iter):
        w = apply_op(V[k])
        for i in range(k + 1):
            H[i, k] = rdot(V[i], w)
            w = w - H[i, k] * V[i]
        for i in range(k + 1):  # one reorthogonalisation pass
            corr = rdot(V[i], w)
            H[i, k] += corr
            w = w - corr * V[i]
        h_next = np.linalg.norm(w)

        for i in range(k):
            t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
            H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
            H[i, k] = t
        denom = np.hypot(H[k, k], h_next)
        cs[k] = H[k, k] / denom
        sn[k] = h_next / denom
        H[k, k] = denom
        H[k + 1, k] = 0.0
        g[k + 1] = -sn[k] * g[k]
        g[k] = cs[k] * g[k]

        rel = abs(g[k + 1]) / b_norm
        history.append(rel)
        k_done = k + 1
        if rel <= tol:
            converged = True
            break
        if h_next < 1e-14 * b_norm:  # happy breakdown
            converged = True
            break
        V[k + 1] = w / h_next

    y = np.linalg.solve(H[:k_done, :k_done], g[:k_done])
    x = x0 + (y[None, :] @ V[:k_done]).ravel()

    stagnated = (not converged and len(history) > 10
                 and history[-1] > 0.9 * history[-10])
    stats = SolveStats(k_done, history[-1], converged, stagnated)
    stats._set_history(history)
    return x, stats
