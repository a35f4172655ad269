"""Performance statistics for daily return series.

Annualization uses 252 trading days and arithmetic means; the Sharpe ratio
assumes a zero risk-free rate, which suits self-financing long-short spreads.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import CrossnetError

TRADING_DAYS = 252


@dataclass(frozen=True)
class PerfReport:
    r_ann: float
    sigma_ann: float
    sharpe: float
    mdd: float
    to_ann: float
    t_nw: float
    n_days: int

    def to_dict(self) -> dict:
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in asdict(self).items()}


@dataclass(frozen=True)
class FactorRegressionResult:
    alpha: float
    betas: dict[str, float]
    tstats: dict[str, float]
    r2: float
    lags: int
    n_obs: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tstats"] = {k: (v if math.isfinite(v) else None) for k, v in d["tstats"].items()}
        return d


def _series(x, min_len: int = 1) -> np.ndarray:
    a = np.asarray(x, dtype=float).ravel()
    if len(a) < min_len:
        raise CrossnetError(f"need at least {min_len} observations, got {len(a)}")
    if not np.isfinite(a).all():
        raise CrossnetError("return series contains non-finite values")
    return a


def annualized_stats(daily) -> tuple[float, float, float]:
    """``(r_ann, sigma_ann, sharpe)`` with ``r_ann = 252 * mean`` and ``sigma_ann = sqrt(252) * std(ddof=1)``."""
    r = _series(daily, 2)
    r_ann = float(r.mean() * TRADING_DAYS)
    sigma_ann = float(r.std(ddof=1) * math.sqrt(TRADING_DAYS))
    if sigma_ann == 0:
        raise CrossnetError("zero volatility: Sharpe ratio undefined")
    return r_ann, sigma_ann, r_ann / sigma_ann


def max_drawdown(daily) -> float:
    """Largest peak-to-trough loss of the compounded curve, as a number in [-1, 0].

    The curve starts at 1 before the first return, so an immediate loss counts.
    """
    r = _series(daily, 1)
    curve = np.concatenate(([1.0], np.cumprod(1.0 + r)))
    peak = np.maximum.accumulate(curve)
    return float(min(0.0, (curve / peak - 1.0).min()))


def auto_lag(n_obs: int) -> int:
    """Newey-West rule-of-thumb bandwidth ``floor(4 (T/100)^(2/9))``."""
    return int(math.floor(4.0 * (n_obs / 100.0) ** (2.0 / 9.0)))


def bartlett_weights(lags: int) -> np.ndarray:
    """Kernel weights for lags ``1..lags``."""
    return 1.0 - np.arange(1, lags + 1) / (lags + 1.0)


def long_run_variance(x, lags: int | None = None) -> float:
    """Bartlett-kernel long-run variance of ``x``.

    Autocovariances use the ``1/(T-1)`` scaling so that ``lags=0`` reduces to
    the sample variance.
    """
    x = _series(x, 2)
    T = len(x)
    L = auto_lag(T) if lags is None else int(lags)
    L = min(max(L, 0), T - 1)
    u = x - x.mean()
    gamma = [np.dot(u[l:], u[: T - l]) / (T - 1) for l in range(L + 1)]
    return float(gamma[0] + 2.0 * np.dot(bartlett_weights(L), gamma[1:]))


def newey_west_tstat(daily, lags: int | None = None) -> float:
    """t-statistic of the mean with a Bartlett HAC standard error."""
    x = _series(daily, 10)
    lrv = long_run_variance(x, lags)
    if not lrv > 0:
        raise CrossnetError(f"non-positive long-run variance ({lrv:.3g})")
    return float(x.mean() / math.sqrt(lrv / len(x)))


def hac_covariance(X: np.ndarray, resid: np.ndarray, lags: int) -> np.ndarray:
    """Bartlett HAC covariance of OLS coefficients, scaled by ``T/(T-k)``."""
    T, k = X.shape
    xu = X * resid[:, None]
    S = xu.T @ xu
    for l, w in enumerate(bartlett_weights(lags), start=1):
        G = xu[l:].T @ xu[:-l]
        S += w * (G + G.T)
    bread = np.linalg.inv(X.T @ X)
    return bread @ S @ bread * (T / (T - k))


def factor_regression(y, X, names=None, lags: int | None = None) -> FactorRegressionResult:
    """OLS of ``y`` on an intercept and factor columns ``X`` with HAC t-statistics.

    Parameters
    ----------
    y : array-like, shape (T,)
    X : array-like, shape (T,) or (T, m)
        Factor returns; a 1-D input is one factor.
    names : sequence of str, optional
        Factor names, default ``f1..fm``.
    lags : int, optional
        Bartlett bandwidth; the rule-of-thumb lag when omitted.
    """
    y = _series(y, 2)
    F = np.asarray(X, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    if F.shape[0] != len(y):
        raise CrossnetError(f"length mismatch: y has {len(y)} rows, X has {F.shape[0]}")
    if not np.isfinite(F).all():
        raise CrossnetError("factor matrix contains non-finite values")
    names = list(names) if names is not None else [f"f{k + 1}" for k in range(F.shape[1])]
    if len(names) != F.shape[1]:
        raise CrossnetError("one name per factor column required")
    D = np.column_stack([np.ones(len(y)), F])
    if len(y) <= D.shape[1] or np.linalg.matrix_rank(D) < D.shape[1]:
        raise CrossnetError("design matrix is rank deficient")

    coef, *_ = np.linalg.lstsq(D, y, rcond=None)
    resid = y - D @ coef
    L = auto_lag(len(y)) if lags is None else int(lags)
    L = min(max(L, 0), len(y) - 1)
    se = np.sqrt(np.clip(np.diag(hac_covariance(D, resid, L)), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = coef / se
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else float("nan")
    return FactorRegressionResult(
        alpha=float(coef[0]),
        betas={n: float(b) for n, b in zip(names, coef[1:])},
        tstats={n: float(v) for n, v in zip(["alpha", *names], t)},
        r2=r2,
        lags=L,
        n_obs=len(y),
    )


def perf_report(daily, to_ann: float = float("nan"), lags: int | None = None) -> PerfReport:
    """All headline statistics of a daily series; undefined ones become NaN."""
    r = _series(daily, 1)
    try:
        r_ann, sigma_ann, sharpe = annualized_stats(r)
    except CrossnetError:
        r_ann = float(r.mean() * TRADING_DAYS)
        sigma_ann = float(r.std(ddof=1) * math.sqrt(TRADING_DAYS)) if len(r) > 1 else float("nan")
        sharpe = float("nan")
    try:
        t_nw = newey_west_tstat(r, lags)
    except CrossnetError:
        t_nw = float("nan")
    return PerfReport(r_ann, sigma_ann, sharpe, max_drawdown(r), float(to_ann), t_nw, len(r))
