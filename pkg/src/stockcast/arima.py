"""ARIMA(p, d, q) estimation by conditional sum of squares.

Model on the d-times differenced series ``w``::

    (1 - sum_i phi_i L^i) (w_t - mu) = (1 + sum_j theta_j L^j) a_t

``intercept`` is the process mean ``mu`` of ``w``.  Residuals are computed
recursively from t = p onwards with pre-sample innovations set to zero.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.signal import lfilter

from .optim import nelder_mead
from .stationarity import CorrelogramResult, acf, difference, durbin_levinson

log = logging.getLogger(__name__)

MAX_D = 2
MAX_GRID_ORDER = 5
MAX_ITER = 2000
FTOL = 1e-8
TIE_TOL = 1e-9


class ArimaError(ValueError):
    pass


class ConvergenceError(ArimaError):
    pass


@dataclass(frozen=True, order=True)
class ArimaOrder:
    p: int
    d: int
    q: int

    def __post_init__(self):
        if min(self.p, self.d, self.q) < 0:
            raise ValueError(f"orders must be nonnegative: {self}")
        if self.d > MAX_D:
            raise ValueError(f"d must not exceed {MAX_D}")

    def __str__(self):
        return f"({self.p},{self.d},{self.q})"


@dataclass
class ArimaModel:
    order: ArimaOrder
    phi: np.ndarray
    theta: np.ndarray
    intercept: float
    sigma2: float
    n_obs: int = 0
    loglik: float = float("nan")
    stderrs: Optional[np.ndarray] = None  # [intercept, phi..., theta...]
    converged: bool = True
    stationary: bool = True
    invertible: bool = True

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64).reshape(-1)
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if len(self.phi) != self.order.p or len(self.theta) != self.order.q:
            raise ArimaError("coefficient counts do not match the order")
        if not self.sigma2 > 0:
            raise ArimaError("sigma2 must be positive")
        self.stationary = _roots_outside_unit_circle(-self.phi)
        self.invertible = _roots_outside_unit_circle(self.theta)

    @property
    def n_params(self) -> int:
        """Parameter count used by AIC/BIC: coefficients + intercept + variance."""
        return self.order.p + self.order.q + 2

    @property
    def param_names(self) -> list[str]:
        return (
            ["intercept"]
            + [f"ar.L{i}" for i in range(1, self.order.p + 1)]
            + [f"ma.L{j}" for j in range(1, self.order.q + 1)]
        )

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([[self.intercept], self.phi, self.theta])

    def to_dict(self) -> dict:
        return {
            "order": [self.order.p, self.order.d, self.order.q],
            "phi": [float(v) for v in self.phi],
            "theta": [float(v) for v in self.theta],
            "intercept": float(self.intercept),
            "sigma2": float(self.sigma2),
            "n_obs": int(self.n_obs),
            "loglik": float(self.loglik),
            "stderrs": None if self.stderrs is None else [float(v) for v in self.stderrs],
            "converged": self.converged,
            "stationary": self.stationary,
            "invertible": self.invertible,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArimaModel":
        return cls(
            ArimaOrder(*d["order"]),
            d["phi"],
            d["theta"],
            d["intercept"],
            d["sigma2"],
            n_obs=d.get("n_obs", 0),
            loglik=d.get("loglik", float("nan")),
            stderrs=None if d.get("stderrs") is None else np.array(d["stderrs"]),
            converged=d.get("converged", True),
        )


def _roots_outside_unit_circle(coefs) -> bool:
    """True if 1 + c1 z + ... + ck z^k has all roots outside |z| = 1."""
    coefs = np.asarray(coefs, dtype=np.float64)
    if coefs.size == 0:
        return True
    # equivalently, the monic reciprocal z^k + c1 z^(k-1) + ... + ck has all
    # roots inside; monic avoids dividing by a tiny leading coefficient
    roots = np.roots(np.concatenate([[1.0], coefs]))
    return bool(np.all(np.abs(roots) < 1.0))


def _residuals(w, mu, phi, theta):
    """CSS innovations of the differenced series ``w``, from t = len(phi)."""
    p = len(phi)
    y = w - mu
    e = y[p:].copy()
    for i in range(1, p + 1):
        e -= phi[i - 1] * y[p - i:len(y) - i]
    if len(theta):
        e = lfilter([1.0], np.concatenate([[1.0], theta]), e)
    return e


def css_residuals(model: ArimaModel, values) -> np.ndarray:
    """One-step residuals of ``model`` on the level series ``values``."""
    o = model.order
    w = difference(values, o.d)
    if len(w) <= o.p + o.q:
        raise ArimaError(
            f"need more than {o.p + o.q} differenced values, have {len(w)}"
        )
    return _residuals(w, model.intercept, model.phi, model.theta)


def _yule_walker_start(z, p):
    if p == 0:
        return np.zeros(0)
    rho = acf(z, p).coefficients
    # last row of the Durbin-Levinson recursion gives the AR(p) coefficients
    phi = np.array([rho[1]])
    v = 1.0 - rho[1] ** 2
    for k in range(2, p + 1):
        a = (rho[k] - phi @ rho[k - 1:0:-1]) / v if v > 0 else 0.0
        phi = np.concatenate([phi - a * phi[::-1], [a]])
        v *= 1.0 - a * a
    return phi


def _numerical_hessian(f, x, h=1e-4):
    k = len(x)
    H = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            ei = np.zeros(k)
            ej = np.zeros(k)
            ei[i] = h
            ej[j] = h
            H[i, j] = H[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4 * h * h)
    return H


def fit(
    values,
    order: ArimaOrder | tuple,
    n_cond: Optional[int] = None,
    seed: int = 0,
    max_iter: int = MAX_ITER,
) -> ArimaModel:
    """Fit by minimizing the conditional sum of squares.

    ``n_cond`` is the number of leading differenced observations treated as
    fixed (default p).  A grid search sets it to p_max so every cell is
    scored on the same residual sample.

    The simplex search is run from three starts (zeros, Yule-Walker AR
    coefficients, and a seeded perturbation of the latter) on the
    standardized series; the best converged start wins.
    """
    if not isinstance(order, ArimaOrder):
        order = ArimaOrder(*order)
    p, d, q = order.p, order.d, order.q
    w = difference(values, d)
    if len(w) < 10 * (p + q + 1):
        raise ArimaError(
            f"ARIMA{order} needs at least {10 * (p + q + 1)} differenced values, have {len(w)}"
        )
    n_cond = p if n_cond is None else n_cond
    if n_cond < p:
        raise ValueError("n_cond must be at least p")
    skip = n_cond - p
    center, scale = float(np.mean(w)), float(np.std(w))
    if scale == 0:
        raise ArimaError("constant differenced series")
    z = (w - center) / scale
    n_eff = len(z) - n_cond

    def ssr(x):
        # explosive trial points overflow; the simplex treats inf as worst
        with np.errstate(over="ignore", invalid="ignore"):
            a = _residuals(z, x[0], x[1:1 + p], x[1 + p:])[skip:]
            return float(a @ a)

    if p == 0 and q == 0:
        # closed form: CSS minimizer is the sample mean of the residual window
        best_x = np.array([float(np.mean(z[n_cond:]))])
        converged = True
    else:
        yw = _yule_walker_start(z, p)
        rng = np.random.default_rng(seed)
        starts = [
            np.zeros(1 + p + q),
            np.concatenate([[0.0], yw, np.zeros(q)]),
            np.concatenate([[0.0], yw, np.zeros(q)]) + rng.normal(0.0, 0.1, 1 + p + q),
        ]
        results = [
            nelder_mead(lambda x: ssr(x) / n_eff, s, ftol=FTOL, max_iter=max_iter)
            for s in starts
        ]
        ok = [r for r in results if r.converged]
        if not ok:
            raise ConvergenceError(
                f"ARIMA{order}: simplex search did not converge in {max_iter} iterations "
                f"from any start (best objective {min(r.fun for r in results):.6g})"
            )
        best_x = min(ok, key=lambda r: r.fun).x
        converged = True

    s2_z = ssr(best_x) / n_eff
    if not s2_z > 0:
        raise ArimaError("zero residual variance")
    stderrs = None
    H = _numerical_hessian(ssr, best_x)
    try:
        cov = 2.0 * s2_z * np.linalg.inv(H)
        diag = np.diag(cov)
        if np.all(np.isfinite(diag)) and np.all(diag > 0):
            stderrs = np.sqrt(diag)
            stderrs[0] *= scale
    except np.linalg.LinAlgError:
        pass

    sigma2 = s2_z * scale * scale
    loglik = -0.5 * n_eff * (math.log(2 * math.pi * sigma2) + 1.0)
    model = ArimaModel(
        order,
        best_x[1:1 + p],
        best_x[1 + p:],
        center + scale * best_x[0],
        sigma2,
        n_obs=n_eff,
        loglik=loglik,
        stderrs=stderrs,
        converged=converged,
    )
    if not model.stationary:
        log.warning("ARIMA%s: fitted AR polynomial is not stationary", order)
    if not model.invertible:
        log.warning("ARIMA%s: fitted MA polynomial is not invertible", order)
    return model


def aic(model: ArimaModel) -> float:
    return 2.0 * model.n_params - 2.0 * model.loglik


def bic(model: ArimaModel) -> float:
    return model.n_params * math.log(model.n_obs) - 2.0 * model.loglik


CRITERIA = {"aic": aic, "bic": bic}


@dataclass
class GridSearchResult:
    criterion: str
    d: int
    aic_matrix: np.ndarray
    bic_matrix: np.ndarray
    models: dict = field(repr=False, default_factory=dict)
    failures: dict = field(default_factory=dict)

    @property
    def matrix(self) -> np.ndarray:
        return self.bic_matrix if self.criterion == "bic" else self.aic_matrix

    def best_for(self, criterion: str) -> ArimaOrder:
        m = self.bic_matrix if criterion == "bic" else self.aic_matrix
        cells = [(float(v), p, q) for (p, q), v in np.ndenumerate(m) if np.isfinite(v)]
        if not cells:
            raise ConvergenceError("every grid cell failed")
        lowest = min(c[0] for c in cells)
        # near-ties: prefer the smaller total order, then the smaller p
        tied = [(p + q, p, q) for v, p, q in cells if v <= lowest + TIE_TOL]
        _, p, q = min(tied)
        return ArimaOrder(p, self.d, q)

    @property
    def best_order(self) -> ArimaOrder:
        return self.best_for(self.criterion)

    def to_csv(self, path, criterion: Optional[str] = None) -> Path:
        """Wide matrix: one row per p, one column per q; failed cells empty."""
        m = self.bic_matrix if (criterion or self.criterion) == "bic" else self.aic_matrix
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["p\\q"] + [str(q) for q in range(m.shape[1])])
            for p in range(m.shape[0]):
                w.writerow([str(p)] + [repr(float(v)) if np.isfinite(v) else "" for v in m[p]])
        return path


def grid_search(
    values,
    p_max: int = 2,
    q_max: int = 2,
    d: int = 0,
    criterion: str = "bic",
    seed: int = 0,
) -> GridSearchResult:
    """Fit every (p, q) up to the bounds and score each cell.

    All cells condition on the first ``p_max`` differenced values so their
    likelihoods are computed over the same observations.
    """
    criterion = criterion.lower()
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {sorted(CRITERIA)}")
    if not (0 <= p_max <= MAX_GRID_ORDER and 0 <= q_max <= MAX_GRID_ORDER):
        raise ValueError(f"grid bounds must lie in 0..{MAX_GRID_ORDER}")
    shape = (p_max + 1, q_max + 1)
    res = GridSearchResult(criterion, d, np.full(shape, np.nan), np.full(shape, np.nan))
    for p in range(p_max + 1):
        for q in range(q_max + 1):
            try:
                m = fit(values, ArimaOrder(p, d, q), n_cond=p_max, seed=seed)
            except ArimaError as exc:
                res.failures[(p, q)] = str(exc)
                log.info("grid cell (%d,%d) failed: %s", p, q, exc)
                continue
            res.models[(p, q)] = m
            res.aic_matrix[p, q] = aic(m)
            res.bic_matrix[p, q] = bic(m)
    if not res.models:
        raise ConvergenceError(f"all grid cells failed: {res.failures}")
    return res


def t_test(model: ArimaModel) -> list[dict]:
    """Per-coefficient significance; |t| > 1.96 counts as significant at 5%."""
    if model.stderrs is None:
        raise ArimaError("standard errors unavailable (Hessian not positive definite)")
    rows = []
    for name, est, se in zip(model.param_names, model.params, model.stderrs):
        t = float(est / se)
        rows.append(
            {"name": name, "estimate": float(est), "stderr": float(se),
             "t_stat": t, "significant": abs(t) > 1.96}
        )
    return rows


@dataclass(frozen=True)
class ResidualCheck:
    correlogram: CorrelogramResult
    fraction_inside: float
    passed: bool


def residual_diagnostics(model: ArimaModel, values, max_lag: int = 20) -> ResidualCheck:
    """Residual whiteness: pass when >= 90% of lags 1..max_lag sit inside the band."""
    resid = css_residuals(model, values)
    if len(resid) <= max_lag or np.ptp(resid) == 0:
        raise ArimaError("degenerate residuals")
    corr = acf(resid, max_lag)
    frac = float(np.mean(corr.inside_band()))
    return ResidualCheck(corr, frac, frac >= 0.9)


def _integrate(w_hat, levels, d):
    """Level forecast from a forecast of the d-th difference.

    ``levels`` are the d most recent observed levels, oldest first.
    """
    out = w_hat
    for k in range(1, d + 1):
        out -= math.comb(d, k) * (-1) ** k * levels[-k]
    return out


def forecast_one_step(model: ArimaModel, history) -> float:
    """Conditional expectation of the next level given ``history``."""
    o = model.order
    x = np.asarray(history, dtype=np.float64)
    if len(x) < o.p + o.d:
        raise ArimaError(f"history of {len(x)} values too short for ARIMA{o}")
    if len(x) == o.d:
        w = np.zeros(0)
    else:
        w = difference(x, o.d)
    mu = model.intercept
    a = _residuals(w, mu, model.phi, model.theta) if len(w) > o.p else np.zeros(0)
    pred = mu
    for i in range(1, o.p + 1):
        pred += model.phi[i - 1] * (w[-i] - mu)
    for j in range(1, o.q + 1):
        if j <= len(a):
            pred += model.theta[j - 1] * a[-j]
    return _integrate(pred, x, o.d)


def rolling_forecast(
    model: ArimaModel,
    train,
    test,
    refit_every: Optional[int] = None,
    seed: int = 0,
) -> np.ndarray:
    """One-step forecasts for every test point, conditioning on all actuals so far.

    With fixed parameters the whole pass is a single residual recursion over
    train + test, since the one-step prediction of ``w_t`` is ``w_t - a_t``.
    """
    train = np.asarray(train, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    o = model.order
    if len(train) < o.p + o.d:
        raise ArimaError("training history too short to forecast")
    if refit_every:
        out = np.empty(len(test))
        history = train
        for i in range(len(test)):
            if i and i % refit_every == 0:
                model = fit(history, o, seed=seed)
            out[i] = forecast_one_step(model, history)
            history = np.concatenate([history, test[i:i + 1]])
        return out

    full = np.concatenate([train, test])
    if len(train) - o.d <= o.p:
        return np.array([
            forecast_one_step(model, full[:len(train) + i]) for i in range(len(test))
        ])
    w = difference(full, o.d)
    a = _residuals(w, model.intercept, model.phi, model.theta)
    w_hat = w[o.p:] - a  # one-step predictions of w[p:]
    # level index t corresponds to w index t - d and residual index t - d - p
    idx = np.arange(len(train), len(full)) - o.d - o.p
    out = w_hat[idx].copy()
    for k in range(1, o.d + 1):
        out -= math.comb(o.d, k) * (-1) ** k * full[len(train) - k:len(full) - k]
    return out


def simulate_arma(
    phi=(),
    theta=(),
    n: int = 1000,
    mean: float = 0.0,
    sigma: float = 1.0,
    rng=None,
    burn: int = 200,
) -> np.ndarray:
    """Draw ``n`` values of a Gaussian ARMA process (same sign convention as fit)."""
    rng = np.random.default_rng(rng)
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    eps = rng.normal(0.0, sigma, n + burn)
    y = lfilter(np.concatenate([[1.0], theta]), np.concatenate([[1.0], -phi]), eps)
    return y[burn:] + mean


def save_model(model: ArimaModel, path, **extra) -> Path:
    path = Path(path)
    payload = {"kind": "arima", **extra, "model": model.to_dict()}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def load_model(path) -> tuple[ArimaModel, dict]:
    payload = json.loads(Path(path).read_text())
    if payload.get("kind") != "arima":
        raise ArimaError(f"{path} is not an ARIMA checkpoint")
    return ArimaModel.from_dict(payload["model"]), payload
