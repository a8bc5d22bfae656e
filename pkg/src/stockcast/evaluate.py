"""Error metrics, model comparison and report files (tables, traces, plots)."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

METRIC_NAMES = ("mae", "mse", "rmse")
POOLED = "POOLED"


@dataclass(frozen=True)
class Metrics:
    mae: float
    mse: float
    rmse: float
    n: int


def compute_metrics(predicted, actual) -> Metrics:
    """MAE, MSE and RMSE = sqrt(MSE) of ``predicted`` against ``actual``."""
    f = np.asarray(predicted, dtype=np.float64).reshape(-1)
    y = np.asarray(actual, dtype=np.float64).reshape(-1)
    if f.shape != y.shape:
        raise ValueError(f"length mismatch: {f.size} predictions vs {y.size} actuals")
    if f.size == 0:
        raise ValueError("cannot score an empty trace")
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values in trace")
    err = f - y
    mse = float(np.mean(err * err))
    return Metrics(float(np.mean(np.abs(err))), mse, math.sqrt(mse), int(f.size))


@dataclass
class Trace:
    dates: Sequence
    actual: np.ndarray
    predicted: np.ndarray

    def __post_init__(self):
        self.actual = np.asarray(self.actual, dtype=np.float64)
        self.predicted = np.asarray(self.predicted, dtype=np.float64)
        if not len(self.dates) == len(self.actual) == len(self.predicted):
            raise ValueError("trace dates, actuals and predictions differ in length")


@dataclass
class EvalReport:
    results: dict  # (ticker, model) -> (Metrics, Trace)
    winners: dict  # ticker -> {metric: model name or "tie"}
    pooled: dict  # model -> Metrics over all tickers' concatenated traces
    fingerprint: dict = field(default_factory=dict)

    @property
    def tickers(self) -> list[str]:
        return sorted({t for t, _ in self.results})

    @property
    def models(self) -> list[str]:
        return sorted({m for _, m in self.results})

    def metrics(self, ticker: str, model: str) -> Metrics:
        return self.results[(ticker, model)][0]

    def rmse_table(self) -> str:
        """Models as rows, tickers as columns (per-ticker RMSE)."""
        return _table(
            ["model"] + self.tickers,
            [[m] + [f"{self.metrics(t, m).rmse:.6f}" if (t, m) in self.results else "-"
                    for t in self.tickers] for m in self.models],
        )

    def pooled_table(self) -> str:
        return _table(
            ["model", "MAE", "MSE", "RMSE"],
            [[m] + [f"{getattr(self.pooled[m], k):.6f}" for k in METRIC_NAMES]
             for m in self.models],
        )

    def to_text(self) -> str:
        out = io.StringIO()
        if self.fingerprint:
            for k in sorted(self.fingerprint):
                out.write(f"# {k}: {self.fingerprint[k]}\n")
        out.write("\nRMSE by ticker\n")
        out.write(self.rmse_table())
        out.write("\nPooled over all tickers\n")
        out.write(self.pooled_table())
        out.write("\nWinners\n")
        out.write(_table(
            ["ticker"] + list(METRIC_NAMES),
            [[t] + [self.winners[t][k] for k in METRIC_NAMES] for t in self.tickers],
        ))
        return out.getvalue()


def _table(header, rows) -> str:
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    fmt = "  ".join(f"{{:<{w}}}" if i == 0 else f"{{:>{w}}}" for i, w in enumerate(widths))
    lines = [fmt.format(*header), fmt.format(*["-" * w for w in widths])]
    lines += [fmt.format(*r) for r in rows]
    return "\n".join(lines) + "\n"


def compare(traces: dict, fingerprint: Optional[dict] = None) -> EvalReport:
    """Score ``{ticker: {model: Trace}}`` and flag the winner per metric.

    Every model of a ticker must be scored on the same dates and actuals.
    Pooled metrics treat the concatenation of all tickers' traces as one.
    """
    results = {}
    winners = {}
    pooled_err: dict = {}
    for ticker in sorted(traces):
        models = traces[ticker]
        if not models:
            continue
        ref = None
        for name in sorted(models):
            tr = models[name]
            if ref is None:
                ref = tr
            elif list(tr.dates) != list(ref.dates) or not np.array_equal(tr.actual, ref.actual):
                raise ValueError(f"{ticker}: trace of {name} is not aligned with the other models")
            results[(ticker, name)] = (compute_metrics(tr.predicted, tr.actual), tr)
            pooled_err.setdefault(name, []).append((tr.predicted, tr.actual))
        winners[ticker] = {}
        for k in METRIC_NAMES:
            scores = {m: getattr(results[(ticker, m)][0], k) for m in models}
            best = min(scores.values())
            top = [m for m, v in scores.items() if v == best]
            winners[ticker][k] = top[0] if len(top) == 1 else "tie"
    pooled = {
        m: compute_metrics(np.concatenate([p for p, _ in v]), np.concatenate([a for _, a in v]))
        for m, v in pooled_err.items()
    }
    return EvalReport(results, winners, pooled, dict(fingerprint or {}))


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return matplotlib, plt


# fixed hash salt and no timestamp keep SVG bytes stable across runs
_SVG_RC = {"svg.hashsalt": "stockcast", "svg.fonttype": "none"}


def _plot_svg(path: Path, title: str, trace: Trace):
    matplotlib, plt = _pyplot()
    with matplotlib.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=(9, 4))
        x = np.arange(len(trace.dates))
        ax.plot(x, trace.actual, label="actual", color="tab:blue", linewidth=1.2)
        ax.plot(x, trace.predicted, label="predicted", color="tab:orange", linewidth=1.0)
        step = max(1, len(x) // 6)
        ax.set_xticks(x[::step])
        ax.set_xticklabels([str(d) for d in list(trace.dates)[::step]], rotation=20, fontsize=8)
        ax.set_title(title)
        ax.set_ylabel("price")
        ax.legend(loc="best")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def plot_heatmap_svg(path, matrix, title: str, row_label: str = "p", col_label: str = "q") -> Path:
    """Annotated heatmap of an information-criterion grid; NaN cells stay blank."""
    matplotlib, plt = _pyplot()
    m = np.asarray(matrix, dtype=np.float64)
    path = Path(path)
    with matplotlib.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=(1.2 * m.shape[1] + 2, 1.0 * m.shape[0] + 1.5))
        im = ax.imshow(np.ma.masked_invalid(m), cmap="viridis_r")
        for (i, j), v in np.ndenumerate(m):
            if np.isfinite(v):
                ax.text(j, i, f"{v:.1f}", ha="center", va="center", fontsize=8, color="w")
        ax.set_xticks(range(m.shape[1]))
        ax.set_yticks(range(m.shape[0]))
        ax.set_xlabel(col_label)
        ax.set_ylabel(row_label)
        ax.set_title(title)
        fig.colorbar(im, ax=ax)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def emit_report(report: EvalReport, out_dir, plots: bool = True) -> list[Path]:
    """Write metrics.csv, metrics.txt, one trace CSV and one SVG per (ticker, model)."""
    if not report.results:
        raise ValueError("empty report, nothing to write")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "metrics.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "model", "mae", "mse", "rmse", "n"])
        for (ticker, model), (m, _) in sorted(report.results.items()):
            w.writerow([ticker, model, repr(m.mae), repr(m.mse), repr(m.rmse), m.n])
        for model in report.models:
            m = report.pooled[model]
            w.writerow([POOLED, model, repr(m.mae), repr(m.mse), repr(m.rmse), m.n])
    written.append(path)

    path = out / "metrics.txt"
    path.write_text(report.to_text())
    written.append(path)

    for (ticker, model), (_, tr) in sorted(report.results.items()):
        path = out / f"trace_{ticker}_{model}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "actual", "predicted"])
            for d, a, p in zip(tr.dates, tr.actual, tr.predicted):
                w.writerow([str(d), repr(float(a)), repr(float(p))])
        written.append(path)
        if plots:
            path = out / f"plot_{ticker}_{model}.svg"
            _plot_svg(path, f"{ticker}: {model} prediction vs actual", tr)
            written.append(path)
    return written
