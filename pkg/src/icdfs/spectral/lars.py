"""Least-angle regression with the lasso modification.

Columns are centred and scaled to unit norm internally, the response is
centred; coefficients are reported back on the original column scale. In
standardized units every breakpoint of the path is the lasso solution of

    0.5 * ||y_c - X_s b||^2 + lam * ||b||_1

with ``lam`` the common absolute correlation of the active set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TINY = 1e-12
COLLINEAR_TOL = 1e-10


@dataclass
class LarsPath:
    coefs: np.ndarray          # (n_breakpoints, n_features), standardized units
    lambdas: np.ndarray        # common |correlation| at each breakpoint
    active: list               # active set at each breakpoint
    scale: np.ndarray          # column norms after centring (0 for constant columns)
    x_mean: np.ndarray
    y_mean: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def coef(self) -> np.ndarray:
        """Final coefficients on the original column scale."""
        return self.to_original(self.coefs[-1])

    @property
    def intercept(self) -> float:
        return float(self.y_mean - self.x_mean @ self.coef)

    def to_original(self, b):
        out = np.zeros_like(b)
        nz = self.scale > 0
        out[nz] = b[nz] / self.scale[nz]
        return out


def standardize(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    x_mean = X.mean(axis=0)
    Xc = X - x_mean
    scale = np.sqrt((Xc * Xc).sum(axis=0))
    degenerate = scale <= TINY * max(1.0, np.sqrt(len(X)))
    scale[degenerate] = 0.0
    Xs = np.zeros_like(Xc)
    ok = ~degenerate
    Xs[:, ok] = Xc[:, ok] / scale[ok]
    y_mean = float(y.mean())
    return Xs, y - y_mean, x_mean, scale, y_mean


def lars_path(X, y, max_nonzero: int) -> LarsPath:
    """Lasso-LARS path, stopped once ``max_nonzero`` variables are active.

    With the active set full, the path continues until the next variable
    would enter (so the final point has ``max_nonzero`` nonzero
    coefficients), or until all correlations vanish. Zero-variance columns
    and columns collinear with the active set are skipped and listed in
    ``diagnostics``.
    """
    if max_nonzero < 1:
        raise ValueError("max_nonzero must be >= 1")
    Xs, yc, x_mean, scale, y_mean = standardize(X, y)
    n, p = Xs.shape
    eligible = scale > 0
    skipped_degenerate = [int(j) for j in np.flatnonzero(~eligible)]
    collinear = []
    # exact duplicate columns: keep the lowest index of each group
    ok = np.flatnonzero(eligible)
    if ok.size > 1:
        _, first, inverse = np.unique(Xs[:, ok].T, axis=0, return_index=True, return_inverse=True)
        inverse = np.asarray(inverse).ravel()
        for pos, grp in enumerate(inverse):
            keep = ok[first[grp]]
            if ok[pos] != keep:
                eligible[ok[pos]] = False
                collinear.append({"feature": int(ok[pos]), "with": [int(keep)]})

    beta = np.zeros(p)
    c = Xs.T @ yc
    active: list[int] = []
    signs: list[float] = []
    just_dropped = None

    C = float(np.max(np.abs(c[eligible]))) if eligible.any() else 0.0
    coefs = [beta.copy()]
    lambdas = [C]
    active_hist = [[]]
    n_drops = 0
    max_steps = 8 * max(p, 1) + 8

    def pick_entering():
        mask = eligible.copy()
        mask[active] = False
        if just_dropped is not None:
            mask[just_dropped] = False
        if not mask.any():
            return None
        cand = np.flatnonzero(mask)
        return int(cand[np.argmax(np.abs(c[cand]))])

    def try_add(j):
        # refuse columns (numerically) in the span of the active set
        xj = Xs[:, j]
        if active:
            XA = Xs[:, active]
            coef, *_ = np.linalg.lstsq(XA, xj, rcond=None)
            resid = xj - XA @ coef
            if resid @ resid < COLLINEAR_TOL:
                eligible[j] = False
                tied = [active[int(i)] for i in np.flatnonzero(np.abs(coef) > 1e-8)]
                collinear.append({"feature": j, "with": tied})
                return False
        active.append(j)
        signs.append(float(np.sign(c[j])) or 1.0)
        return True

    if C <= TINY:
        return LarsPath(np.array(coefs), np.array(lambdas), active_hist, scale, x_mean, y_mean,
                        {"skipped_degenerate": skipped_degenerate, "collinear": collinear,
                         "n_drops": 0, "stopped": "zero_correlation"})

    j = pick_entering()
    while j is not None and not try_add(j):
        j = pick_entering()
    stopped = "exhausted"

    for _ in range(max_steps):
        if not active:
            stopped = "exhausted"
            break
        XA = Xs[:, active]
        s = np.array(signs)
        G = XA.T @ XA
        try:
            w = np.linalg.solve(G, s)
        except np.linalg.LinAlgError:
            w = np.linalg.lstsq(G, s, rcond=None)[0]
        AA = 1.0 / np.sqrt(max(float(s @ w), TINY))
        w *= AA
        u = XA @ w
        a = Xs.T @ u

        gamma_full = C / AA
        gamma_join, j_join = np.inf, None
        mask = eligible.copy()
        mask[active] = False
        cand = np.flatnonzero(mask)
        if cand.size:
            with np.errstate(divide="ignore", invalid="ignore"):
                g1 = (C - c[cand]) / (AA - a[cand])
                g2 = (C + c[cand]) / (AA + a[cand])
            g1 = np.where(g1 > TINY, g1, np.inf)
            g2 = np.where(g2 > TINY, g2, np.inf)
            g = np.minimum(g1, g2)
            if just_dropped is not None:
                # the column just dropped sits on the boundary; only a real step re-admits it
                at = cand == just_dropped
                g[at & (g <= 1e-9 * gamma_full)] = np.inf
            i = int(np.argmin(g))
            if np.isfinite(g[i]):
                gamma_join, j_join = float(g[i]), int(cand[i])

        gamma_drop, k_drop = np.inf, None
        with np.errstate(divide="ignore", invalid="ignore"):
            gd = np.where(w != 0, -beta[active] / w, np.inf)
        gd = np.where(gd > TINY, gd, np.inf)
        if gd.size and np.isfinite(gd.min()):
            k_drop = int(np.argmin(gd))
            gamma_drop = float(gd[k_drop])

        # events that land (numerically) on the zero-correlation point count as reaching it
        if gamma_join >= gamma_full * (1.0 - 1e-9):
            gamma_join, j_join = np.inf, None
        if gamma_drop >= gamma_full * (1.0 - 1e-9):
            gamma_drop, k_drop = np.inf, None
        gamma = min(gamma_full, gamma_join, gamma_drop)
        full_and_waiting = len(active) >= max_nonzero and gamma == gamma_join and gamma < gamma_drop
        beta[active] += gamma * w
        c -= gamma * a
        C -= gamma * AA
        just_dropped = None

        if gamma == gamma_drop and gamma_drop <= gamma_join and gamma_drop <= gamma_full:
            jj = active.pop(k_drop)
            signs.pop(k_drop)
            beta[jj] = 0.0
            just_dropped = jj
            n_drops += 1
        elif gamma == gamma_full:
            C = 0.0
            coefs.append(beta.copy())
            lambdas.append(0.0)
            active_hist.append(list(active))
            stopped = "zero_correlation"
            break
        elif full_and_waiting:
            coefs.append(beta.copy())
            lambdas.append(C)
            active_hist.append(list(active))
            stopped = "max_nonzero"
            break
        else:
            try_add(j_join)  # a collinear column is skipped; the direction is recomputed
        coefs.append(beta.copy())
        lambdas.append(C)
        active_hist.append(list(active))
    else:
        stopped = "max_steps"

    return LarsPath(
        coefs=np.array(coefs),
        lambdas=np.array(lambdas),
        active=active_hist,
        scale=scale,
        x_mean=x_mean,
        y_mean=y_mean,
        diagnostics={
            "skipped_degenerate": skipped_degenerate,
            "collinear": collinear,
            "n_drops": n_drops,
            "stopped": stopped,
            "lambda": float(lambdas[-1]),
        },
    )


def lars_lasso(X, y, max_nonzero: int) -> np.ndarray:
    """Coefficient vector (original column scale) at the end of ``lars_path``."""
    return lars_path(X, y, max_nonzero).coef
