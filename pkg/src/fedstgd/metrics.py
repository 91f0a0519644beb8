"""Forecast metrics, the persistence baseline and the evaluation harness."""
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, UndefinedMetric


def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    return pred, target


def rmse(pred, target):
    pred, target = _pair(pred, target)
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def mae(pred, target):
    pred, target = _pair(pred, target)
    return float(np.mean(np.abs(pred - target)))


def mape(pred, target, mask_zero=True):
    """Mean absolute percentage error over targets that are not exactly zero."""
    pred, target = _pair(pred, target)
    keep = target != 0 if mask_zero else np.ones(target.shape, dtype=bool)
    if not keep.any():
        raise UndefinedMetric("every target is zero; MAPE is undefined")
    return float(100.0 * np.mean(np.abs(pred[keep] - target[keep]) / np.abs(target[keep])))


def persistence_baseline(x, t_out):
    """Repeat the last input frame for every horizon.

    ``x`` is (T_in, N, d) or batched (B, T_in, N, d).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-3] < 1:
        raise ShapeError("need at least one input step")
    last = x[..., -1:, :, :]
    return np.repeat(last, t_out, axis=-3)


@dataclass
class MetricReport:
    rmse: float
    mae: float
    mape_percent: float
    masked_count: int
    horizons: list = field(default_factory=list)  # (h, rmse, mae, mape) rows

    def table(self):
        lines = [f"{'horizon':>8} {'rmse':>12} {'mae':>12} {'mape%':>10}"]
        for h, r, a, p in self.horizons:
            lines.append(f"{h:>8d} {r:>12.6f} {a:>12.6f} {p:>10.4f}")
        lines.append(f"{'all':>8} {self.rmse:>12.6f} {self.mae:>12.6f} {self.mape_percent:>10.4f}")
        lines.append(f"masked targets: {self.masked_count}")
        return "\n".join(lines)

    def records(self):
        out = [f"scope=all rmse={self.rmse:.9g} mae={self.mae:.9g} "
               f"mape_percent={self.mape_percent:.9g} masked_count={self.masked_count}"]
        for h, r, a, p in self.horizons:
            out.append(f"scope=horizon h={h} rmse={r:.9g} mae={a:.9g} mape_percent={p:.9g}")
        return out


def _safe_mape(pred, target):
    try:
        return mape(pred, target)
    except UndefinedMetric:
        return float("nan")


def report(pred, target):
    """Metrics over (W, T_out, N, d) arrays, jointly and per horizon."""
    pred, target = _pair(pred, target)
    horizons = [(h + 1, rmse(pred[:, h], target[:, h]), mae(pred[:, h], target[:, h]),
                 _safe_mape(pred[:, h], target[:, h])) for h in range(pred.shape[1])]
    return MetricReport(rmse(pred, target), mae(pred, target), _safe_mape(pred, target),
                        int(np.sum(target == 0)), horizons)


def evaluate(predict, windows, normalizer, batch_size=64):
    """Run ``predict(x, slots) -> (B, T_out, N, d)`` over ``windows`` and score
    the denormalized predictions against denormalized targets."""
    preds = []
    for lo in range(0, len(windows), batch_size):
        sl = slice(lo, lo + batch_size)
        preds.append(np.asarray(predict(windows.x[sl], windows.slots[sl])))
    pred = np.concatenate(preds, axis=0)
    return report(normalizer.invert(pred), normalizer.invert(windows.y))


def evaluate_persistence(windows, normalizer):
    t_out = windows.y.shape[1]
    return evaluate(lambda x, s: persistence_baseline(x, t_out), windows, normalizer)
