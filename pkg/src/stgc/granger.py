"""Granger causality via nested OLS autoregressions and an F-test.

The restricted model regresses the effect series on its own ``m`` lags
(plus intercept); the unrestricted model adds ``m`` lags of the cause
series. Both are fit by normal equations over the identical observation
window, so the residual sums of squares nest. The variance comparison
is operationalized as the standard nested-model F-test; the upper-tail
p-value comes from the regularized incomplete beta function.

The pairwise sweep over all ordered sensor pairs is the hottest loop in
the package; it runs as a parallel numba kernel with a vectorized numpy
fallback (see :mod:`stgc._jit`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._jit import NUMBA_ENABLED, njit, prange
from .errors import ComputationError, ValidationError

MIN_OBS_FACTOR = 10  # observations required per VAR order before fitting

# sweep status codes
SWEEP_UNTESTED = 0
SWEEP_OK = 1
SWEEP_DEGENERATE = 2
SWEEP_TOO_SHORT = 3
SWEEP_UNDECIDABLE = 4


class DegenerateFit(ComputationError):
    """Design matrix is rank deficient (constant series, collinear lags)."""


class UndecidableTest(ComputationError):
    """Both models fit exactly; the variance comparison is vacuous."""


@dataclass(frozen=True)
class GrangerConfig:
    var_order: int = 5
    significance: float = 0.05

    def __post_init__(self):
        if self.var_order < 1:
            raise ValidationError("var_order must be >= 1")
        if not 0.0 < self.significance < 1.0:
            raise ValidationError("significance must lie in (0, 1)")


@dataclass(frozen=True)
class RegressionFit:
    """OLS fit summary; coefficients are [intercept, own lags 1..m, cause lags 1..m]."""

    coefficients: np.ndarray
    rss: float
    n_obs: int
    n_params: int
    ridged: bool = False


@dataclass(frozen=True)
class GrangerResult:
    f_stat: float
    p_value: float
    df1: int
    df2: int
    significant: bool
    rss_restricted: float
    rss_unrestricted: float


# ---------------------------------------------------------------------------
# Regularized incomplete beta / F upper tail.
# Continued fraction after Numerical Recipes; lives here (not scipy) so the
# sweep kernel can evaluate p-values inside nopython code.
# ---------------------------------------------------------------------------

@njit(cache=True)
def _betacf(a, b, x):
    max_iter = 500
    eps = 3e-14
    fpmin = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


@njit(cache=True)
def _betainc_reg(a, b, x):
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log(1.0 - x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


@njit(cache=True)
def _f_upper_tail(f, df1, df2):
    if math.isnan(f) or math.isinf(f):
        return 0.0
    if f <= 0.0:
        return 1.0
    x = df2 / (df2 + df1 * f)
    return _betainc_reg(0.5 * df2, 0.5 * df1, x)


def f_upper_tail(f: float, df1: int, df2: int) -> float:
    """P(F(df1, df2) > f); monotone non-increasing in f, 1 at f = 0."""
    if df1 < 1 or df2 < 1:
        raise ValidationError("degrees of freedom must be >= 1")
    if not math.isnan(f) and not math.isinf(f) and f < 0:
        raise ValidationError("f statistic must be non-negative")
    return float(_f_upper_tail(float(f), float(df1), float(df2)))


# ---------------------------------------------------------------------------
# Cholesky solve with degeneracy detection and ridge fallback.
# Hand-rolled so the identical code runs inside the numba kernel.
# ---------------------------------------------------------------------------

_RIDGE_SCALE = 1e-8     # lambda = 1e-8 * trace(G) on conditioning failure
_PIVOT_RTOL = 1e-13     # pivot below this * max diag aborts the factorization
_DEGENERATE_RTOL = 1e-10  # pivot ratio below this means rank deficiency


@njit(cache=True)
def _chol_solve(G, rhs):
    """Solve G beta = rhs for SPD G; returns (beta, ok, min_pivot_ratio)."""
    p = G.shape[0]
    L = np.zeros((p, p))
    beta = np.zeros(p)
    max_diag = 0.0
    for k in range(p):
        if G[k, k] > max_diag:
            max_diag = G[k, k]
    if max_diag <= 0.0:
        return beta, False, 0.0
    min_ratio = np.inf
    for j in range(p):
        d = G[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k]
        ratio = d / max_diag
        if ratio < min_ratio:
            min_ratio = ratio
        if d <= max_diag * _PIVOT_RTOL:
            return beta, False, min_ratio
        L[j, j] = math.sqrt(d)
        for i in range(j + 1, p):
            v = G[i, j]
            for k in range(j):
                v -= L[i, k] * L[j, k]
            L[i, j] = v / L[j, j]
    # forward then backward substitution
    for i in range(p):
        v = rhs[i]
        for k in range(i):
            v -= L[i, k] * beta[k]
        beta[i] = v / L[i, i]
    for i in range(p - 1, -1, -1):
        v = beta[i]
        for k in range(i + 1, p):
            v -= L[k, i] * beta[k]
        beta[i] = v / L[i, i]
    return beta, True, min_ratio


@njit(cache=True)
def _solve_gram(G, rhs):
    """Returns (beta, ridged, degenerate)."""
    beta, ok, ratio = _chol_solve(G, rhs)
    if ok:
        return beta, False, False
    if ratio < _DEGENERATE_RTOL:
        return beta, False, True
    p = G.shape[0]
    trace = 0.0
    for k in range(p):
        trace += G[k, k]
    ridged = G + _RIDGE_SCALE * trace * np.eye(p)
    beta, ok, _ = _chol_solve(ridged, rhs)
    if not ok:
        return beta, False, True
    return beta, True, False


# ---------------------------------------------------------------------------
# Public single-pair fits (numpy design matrices).
# ---------------------------------------------------------------------------

def _lagged_design(y: np.ndarray, x: np.ndarray | None, m: int):
    """Rows t = m..L-1 of [1, y[t-1..t-m], (x[t-1..t-m])] and targets y[t]."""
    length = y.shape[0]
    n = length - m
    lag_y = sliding_window_view(y, m)[:n, ::-1]
    cols = [np.ones((n, 1)), lag_y]
    if x is not None:
        cols.append(sliding_window_view(x, m)[:n, ::-1])
    design = np.concatenate(cols, axis=1)
    return design, y[m:]


def _fit(design: np.ndarray, target: np.ndarray) -> RegressionFit:
    gram = design.T @ design
    rhs = design.T @ target
    beta, ridged, degenerate = _solve_gram(gram, rhs)
    if degenerate:
        raise DegenerateFit("rank-deficient design (constant series or collinear lags)")
    resid = target - design @ beta
    return RegressionFit(
        coefficients=beta,
        rss=float(resid @ resid),
        n_obs=design.shape[0],
        n_params=design.shape[1],
        ridged=bool(ridged),
    )


def _check_length(length: int, m: int):
    if m < 1:
        raise ValidationError("var_order must be >= 1")
    if length - m < MIN_OBS_FACTOR * m:
        raise ValidationError(
            f"series of length {length} leaves fewer than {MIN_OBS_FACTOR}*m "
            f"observations for order m={m}"
        )


def fit_restricted(y: np.ndarray, m: int) -> RegressionFit:
    """OLS of y[t] on (1, y[t-1..t-m])."""
    y = np.ascontiguousarray(y, dtype=np.float64)
    _check_length(y.shape[0], m)
    return _fit(*_lagged_design(y, None, m))


def fit_unrestricted(y: np.ndarray, x: np.ndarray, m: int) -> RegressionFit:
    """OLS of y[t] on (1, y[t-1..t-m], x[t-1..t-m])."""
    y = np.ascontiguousarray(y, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != y.shape:
        raise ValidationError("cause and effect series must have equal length")
    _check_length(y.shape[0], m)
    return _fit(*_lagged_design(y, x, m))


def f_test(restricted: RegressionFit, unrestricted: RegressionFit, m: int,
           significance: float = 0.05) -> GrangerResult:
    """Nested-model F-test on the two fits' residual sums of squares."""
    if restricted.n_obs != unrestricted.n_obs:
        raise ValidationError("fits must share the same observation window")
    n_obs = unrestricted.n_obs
    df1 = m
    df2 = n_obs - 2 * m - 1
    if df2 < 1:
        raise ValidationError(f"df2 = {df2} < 1; not enough observations")
    rss_r = restricted.rss
    rss_u = unrestricted.rss
    if rss_u <= 0.0:
        if rss_r <= 0.0:
            raise UndecidableTest("both models fit exactly; no variance to compare")
        f_stat, p = math.inf, 0.0
    else:
        f_stat = max((rss_r - rss_u), 0.0) / df1 / (rss_u / df2)
        p = f_upper_tail(f_stat, df1, df2)
    return GrangerResult(
        f_stat=float(f_stat),
        p_value=float(p),
        df1=df1,
        df2=df2,
        significant=bool(p < significance),
        rss_restricted=float(rss_r),
        rss_unrestricted=float(rss_u),
    )


def granger_test(cause: np.ndarray, effect: np.ndarray, config: GrangerConfig) -> GrangerResult:
    """Test 'cause Granger-causes effect' on an already-aligned pair."""
    restricted = fit_restricted(effect, config.var_order)
    unrestricted = fit_unrestricted(effect, cause, config.var_order)
    return f_test(restricted, unrestricted, config.var_order, config.significance)


# ---------------------------------------------------------------------------
# Pairwise sweep over all ordered pairs with defined lags.
# ---------------------------------------------------------------------------

@njit(cache=True)
def _pair_stats(cause, effect, m):
    """Fit both models on one aligned pair; returns (rss_r, rss_u, n_obs, status)."""
    length = effect.shape[0]
    n = length - m
    p_full = 2 * m + 1
    gram = np.zeros((p_full, p_full))
    rhs = np.zeros(p_full)
    z = np.empty(p_full)
    for t in range(m, length):
        z[0] = 1.0
        for k in range(m):
            z[1 + k] = effect[t - 1 - k]
            z[1 + m + k] = cause[t - 1 - k]
        for a in range(p_full):
            rhs[a] += z[a] * effect[t]
            for b in range(a, p_full):
                gram[a, b] += z[a] * z[b]
    for a in range(p_full):
        for b in range(a + 1, p_full):
            gram[b, a] = gram[a, b]

    p_r = m + 1
    beta_r, _, degen_r = _solve_gram(gram[:p_r, :p_r].copy(), rhs[:p_r].copy())
    beta_u, _, degen_u = _solve_gram(gram, rhs)
    if degen_r or degen_u:
        return 0.0, 0.0, n, SWEEP_DEGENERATE

    rss_r = 0.0
    rss_u = 0.0
    for t in range(m, length):
        pred_r = beta_r[0]
        pred_u = beta_u[0]
        for k in range(m):
            pred_r += beta_r[1 + k] * effect[t - 1 - k]
            pred_u += beta_u[1 + k] * effect[t - 1 - k]
            pred_u += beta_u[1 + m + k] * cause[t - 1 - k]
        r_r = effect[t] - pred_r
        r_u = effect[t] - pred_u
        rss_r += r_r * r_r
        rss_u += r_u * r_u
    return rss_r, rss_u, n, SWEEP_OK


@njit(cache=True, parallel=True)
def _sweep_numba(series, lag_matrix, m, min_obs):  # pragma: no cover - jit
    n_nodes, length = series.shape
    fstat = np.full((n_nodes, n_nodes), np.nan)
    pval = np.full((n_nodes, n_nodes), np.nan)
    rss_r = np.full((n_nodes, n_nodes), np.nan)
    rss_u = np.full((n_nodes, n_nodes), np.nan)
    status = np.zeros((n_nodes, n_nodes), dtype=np.int8)
    for idx in prange(n_nodes * n_nodes):
        i = idx // n_nodes
        j = idx % n_nodes
        if i == j:
            continue
        s = lag_matrix[i, j]
        if s < 0:
            continue
        aligned_len = length - s
        if aligned_len - m < min_obs:
            status[i, j] = SWEEP_TOO_SHORT
            continue
        cause = series[i, : length - s]
        effect = series[j, s:]
        r, u, n_obs, code = _pair_stats(cause, effect, m)
        status[i, j] = code
        if code != SWEEP_OK:
            continue
        rss_r[i, j] = r
        rss_u[i, j] = u
        df2 = n_obs - 2 * m - 1
        if u <= 0.0:
            if r <= 0.0:
                status[i, j] = SWEEP_UNDECIDABLE
                continue
            fstat[i, j] = np.inf
            pval[i, j] = 0.0
        else:
            f = max(r - u, 0.0) / m / (u / df2)
            fstat[i, j] = f
            pval[i, j] = _f_upper_tail(f, float(m), float(df2))
    return fstat, pval, rss_r, rss_u, status


def _sweep_numpy(series, lag_matrix, m, min_obs):
    n_nodes, length = series.shape
    fstat = np.full((n_nodes, n_nodes), np.nan)
    pval = np.full((n_nodes, n_nodes), np.nan)
    rss_r = np.full((n_nodes, n_nodes), np.nan)
    rss_u = np.full((n_nodes, n_nodes), np.nan)
    status = np.zeros((n_nodes, n_nodes), dtype=np.int8)
    for i in range(n_nodes):
        for j in range(n_nodes):
            if i == j or lag_matrix[i, j] < 0:
                continue
            s = int(lag_matrix[i, j])
            if (length - s) - m < min_obs:
                status[i, j] = SWEEP_TOO_SHORT
                continue
            cause = series[i, : length - s]
            effect = series[j, s:]
            try:
                restricted = _fit(*_lagged_design(effect, None, m))
                unrestricted = _fit(*_lagged_design(effect, cause, m))
            except DegenerateFit:
                status[i, j] = SWEEP_DEGENERATE
                continue
            rss_r[i, j] = restricted.rss
            rss_u[i, j] = unrestricted.rss
            df2 = unrestricted.n_obs - 2 * m - 1
            if unrestricted.rss <= 0.0:
                if restricted.rss <= 0.0:
                    status[i, j] = SWEEP_UNDECIDABLE
                    continue
                fstat[i, j] = np.inf
                pval[i, j] = 0.0
            else:
                f = max(restricted.rss - unrestricted.rss, 0.0) / m
                f /= unrestricted.rss / df2
                fstat[i, j] = f
                pval[i, j] = f_upper_tail(f, m, df2)
            status[i, j] = SWEEP_OK
    return fstat, pval, rss_r, rss_u, status


def granger_sweep(series: np.ndarray, lag_matrix: np.ndarray, config: GrangerConfig,
                  use_numba: bool | None = None):
    """Fit every ordered pair (i, j) with a defined lag, i as the cause.

    ``series`` is the normalized [N x T] training matrix; pair (i, j) is
    aligned by ``lag_matrix[i, j]`` before fitting. Returns dense arrays
    (f_stat, p_value, rss_restricted, rss_unrestricted, status).
    """
    series = np.ascontiguousarray(series, dtype=np.float64)
    lag_matrix = np.ascontiguousarray(lag_matrix, dtype=np.int64)
    if series.ndim != 2 or lag_matrix.shape != (series.shape[0], series.shape[0]):
        raise ValidationError("series [N x T] and lag matrix [N x N] must agree")
    numba = NUMBA_ENABLED if use_numba is None else (use_numba and NUMBA_ENABLED)
    impl = _sweep_numba if numba else _sweep_numpy
    m = config.var_order
    return impl(series, lag_matrix, m, MIN_OBS_FACTOR * m)
