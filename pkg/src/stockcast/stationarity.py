"""Differencing, augmented Dickey-Fuller test and ACF/PACF estimation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

# Dickey-Fuller asymptotic critical values, regression with constant, no trend.
ADF_CRITICAL_VALUES = {"1%": -3.43, "5%": -2.86, "10%": -2.57}
ADF_MIN_LENGTH = 20
MAX_DIFFERENCES = 2


class StationarityError(ValueError):
    pass


def difference(values, d: int = 1) -> np.ndarray:
    """Apply first differencing ``d`` times; the result is ``d`` shorter."""
    values = np.asarray(values, dtype=np.float64)
    if d < 0:
        raise ValueError("d must be nonnegative")
    if len(values) <= d:
        raise StationarityError(f"length {len(values)} too short to difference {d} times")
    return np.diff(values, n=d) if d else values.copy()


@dataclass(frozen=True)
class AdfResult:
    statistic: float
    lags_used: int
    nobs: int
    critical_values: dict
    reject_at: dict

    @property
    def p_value_bracket(self) -> str:
        cv = self.critical_values
        if self.statistic < cv["1%"]:
            return "< 0.01"
        if self.statistic < cv["5%"]:
            return "0.01 - 0.05"
        if self.statistic < cv["10%"]:
            return "0.05 - 0.10"
        return "> 0.10"

    @property
    def stationary(self) -> bool:
        """Unit root rejected at the 5% level."""
        return self.reject_at["5%"]

    def to_text(self, title: str = "") -> str:
        lines = [f"# {title}"] if title else []
        lines += [
            f"statistic: {self.statistic:.10f}",
            f"lags_used: {self.lags_used}",
            f"nobs: {self.nobs}",
            f"p_value: {self.p_value_bracket}",
        ]
        for level in ("1%", "5%", "10%"):
            lines.append(f"critical_value_{level}: {self.critical_values[level]}")
            lines.append(f"reject_at_{level}: {str(self.reject_at[level]).lower()}")
        return "\n".join(lines) + "\n"


def _ols_tstat(dy, ylag, lags, start):
    """OLS of dy[t] on [1, y[t-1], dy[t-1..t-lags]] for t >= start.

    Returns (t-ratio on the level coefficient, SSR, nobs).
    """
    n = len(dy)
    cols = [np.ones(n - start), ylag[start:]]
    cols += [dy[start - j:n - j] for j in range(1, lags + 1)]
    X = np.column_stack(cols)
    target = dy[start:]
    nobs, k = X.shape
    if nobs <= k:
        raise StationarityError("not enough observations for the ADF regression")
    Q, R = np.linalg.qr(X)
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-10 * max(diag.max(), 1.0):
        raise StationarityError("singular ADF regression matrix")
    beta = np.linalg.solve(R, Q.T @ target)
    resid = target - X @ beta
    ssr = float(resid @ resid)
    sigma2 = ssr / (nobs - k)
    Rinv = np.linalg.inv(R)
    var_gamma = sigma2 * float(Rinv[1] @ Rinv[1])
    if var_gamma <= 0:
        raise StationarityError("degenerate ADF regression (zero residual variance)")
    return beta[1] / math.sqrt(var_gamma), ssr, nobs


def default_adf_maxlag(n: int) -> int:
    return int(math.floor(12.0 * (n / 100.0) ** 0.25))


def adf_test(values, max_lag: Optional[int] = None) -> AdfResult:
    """Augmented Dickey-Fuller test with constant, lag length chosen by AIC.

    All candidate lag lengths 0..max_lag are compared on a common sample; the
    chosen regression is then re-estimated on every usable observation.
    """
    y = np.asarray(values, dtype=np.float64)
    n = len(y)
    if n < ADF_MIN_LENGTH:
        raise StationarityError(f"ADF needs at least {ADF_MIN_LENGTH} values, got {n}")
    if max_lag is None:
        max_lag = default_adf_maxlag(n)
    # keep at least ~2 observations per regressor
    max_lag = max(0, min(max_lag, (n - 1) // 3 - 2))
    dy = np.diff(y)
    ylag = y[:-1]

    best_lag, best_aic = 0, np.inf
    for lags in range(max_lag + 1):
        _, ssr, nobs = _ols_tstat(dy, ylag, lags, start=max_lag)
        if ssr <= 0:
            raise StationarityError("degenerate ADF regression (perfect fit)")
        aic = nobs * math.log(ssr / nobs) + 2 * (lags + 2)
        if aic < best_aic - 1e-12:
            best_lag, best_aic = lags, aic
    stat, _, nobs = _ols_tstat(dy, ylag, best_lag, start=best_lag)
    reject = {lvl: bool(stat < cv) for lvl, cv in ADF_CRITICAL_VALUES.items()}
    return AdfResult(float(stat), best_lag, nobs, dict(ADF_CRITICAL_VALUES), reject)


def select_d(values, max_d: int = MAX_DIFFERENCES):
    """Smallest d in 0..max_d whose d-th difference passes ADF at 5%.

    Returns ``(d, results)`` where results holds the ADF outcome per tried d.
    If nothing passes, d = max_d.
    """
    results = []
    for d in range(max_d + 1):
        res = adf_test(difference(values, d))
        results.append(res)
        if res.stationary:
            return d, results
    return max_d, results


@dataclass(frozen=True)
class CorrelogramResult:
    kind: str  # "acf" or "pacf"
    lags: np.ndarray
    coefficients: np.ndarray
    confidence_band: float
    n: int

    def inside_band(self) -> np.ndarray:
        """Boolean mask over lags 1..K."""
        return np.abs(self.coefficients[1:]) <= self.confidence_band

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lag", "coefficient", "band"])
            for lag, c in zip(self.lags, self.coefficients):
                w.writerow([int(lag), repr(float(c)), repr(self.confidence_band)])
        return path


def _autocov(y, max_lag):
    y = y - y.mean()
    n = len(y)
    return np.array([y[: n - k] @ y[k:] for k in range(max_lag + 1)]) / n


def _check(values, max_lag):
    y = np.asarray(values, dtype=np.float64)
    if max_lag < 1:
        raise ValueError("max_lag must be positive")
    if len(y) <= max_lag:
        raise StationarityError(f"length {len(y)} must exceed max_lag {max_lag}")
    if np.ptp(y) == 0:
        raise StationarityError("constant sequence has no autocorrelation")
    return y


def acf(values, max_lag: int = 20) -> CorrelogramResult:
    y = _check(values, max_lag)
    gamma = _autocov(y, max_lag)
    rho = gamma / gamma[0]
    rho[0] = 1.0
    return CorrelogramResult(
        "acf", np.arange(max_lag + 1), rho, 1.96 / math.sqrt(len(y)), len(y)
    )


def durbin_levinson(rho: np.ndarray) -> np.ndarray:
    """Partial autocorrelations from autocorrelations ``rho[0..K]``."""
    K = len(rho) - 1
    out = np.zeros(K + 1)
    out[0] = 1.0
    if K == 0:
        return out
    phi = np.array([rho[1]])
    out[1] = rho[1]
    v = 1.0 - rho[1] ** 2
    for k in range(2, K + 1):
        if v <= 0:
            break
        a = (rho[k] - phi @ rho[k - 1:0:-1]) / v
        phi = np.concatenate([phi - a * phi[::-1], [a]])
        v *= 1.0 - a * a
        out[k] = a
    return out


def pacf(values, max_lag: int = 20) -> CorrelogramResult:
    y = _check(values, max_lag)
    rho = acf(y, max_lag).coefficients
    return CorrelogramResult(
        "pacf", np.arange(max_lag + 1), durbin_levinson(rho), 1.96 / math.sqrt(len(y)), len(y)
    )
