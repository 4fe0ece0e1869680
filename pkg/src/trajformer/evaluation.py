"""Per-horizon RMSE in meters and table-style reports.

Predictions run at 5 Hz, so horizon h seconds maps to predicted frame
max(1, 5h); the "0 s" row is the first predicted frame (0.2 s lead).
Errors are always computed on denormalized (meter) coordinates.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import data as data_mod
from . import model
from . import tensor as T

HORIZONS_S = (0, 1, 2, 3, 4, 5)
FRAMES_PER_SECOND = 5


class ReportError(ValueError):
    """Raised when reports cannot be computed or compared."""


def horizon_frame(horizon_s):
    """0-based predicted-frame index for a horizon in whole seconds."""
    if horizon_s not in HORIZONS_S:
        raise ReportError(f"horizon {horizon_s} not in {HORIZONS_S}")
    return max(1, FRAMES_PER_SECOND * horizon_s) - 1


def rmse_at_horizon(preds, truths, mask, horizon_s):
    """RMSE at one horizon over trajectories, unmasked agents, both coords.

    preds/truths: [M, 25, n, 2] in meters; mask: [M, n].
    """
    preds = np.asarray(preds, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.sum() <= 0:
        raise T.ContractError("rmse_at_horizon: no unmasked agents")
    f = horizon_frame(horizon_s)
    sq = (preds[:, f] - truths[:, f]) ** 2  # [M, n, 2]
    weights = mask[:, :, None]
    return float(np.sqrt((sq * weights).sum() / (weights.sum() * sq.shape[-1])))


@dataclass
class HorizonReport:
    rows: dict          # horizon seconds -> RMSE meters
    average: float
    model_id: str
    domain: str
    sample_count: int

    def validate(self):
        assert all(v >= 0 for v in self.rows.values())
        assert abs(self.average - np.mean(list(self.rows.values()))) < 1e-9


def build_report(preds, truths, mask, model_id="model", domain="source"):
    rows = {h: rmse_at_horizon(preds, truths, mask, h) for h in HORIZONS_S}
    report = HorizonReport(rows=rows, average=float(np.mean(list(rows.values()))),
                           model_id=model_id, domain=domain,
                           sample_count=int(np.asarray(preds).shape[0]))
    report.validate()
    return report


def full_report(checkpoint_path, samples, scaler, model_id=None, domain="source",
                batch_size=32):
    """Autoregressive inference over a test split, denormalize, tabulate."""
    params, cfg, meta, _ = model.load_checkpoint(checkpoint_path)
    preds, truths, masks = [], [], []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        batch = data_mod.stack_batch(chunk)
        p_norm = model.predict(params, cfg, batch)
        preds.append(scaler.denormalize(p_norm))
        truths.append(scaler.denormalize(batch["future"]))
        masks.append(batch["mask"])
    return build_report(np.concatenate(preds), np.concatenate(truths),
                        np.concatenate(masks),
                        model_id=model_id or meta.get("format", "model"),
                        domain=domain)


def compare_reports(baseline, candidate):
    """Relative improvement (baseline - candidate) / baseline, per row."""
    if baseline.domain != candidate.domain:
        raise ReportError(
            f"cannot compare reports across domains "
            f"({baseline.domain} vs {candidate.domain})")
    rows = {h: (baseline.rows[h] - candidate.rows[h]) / baseline.rows[h]
            for h in HORIZONS_S}
    average = (baseline.average - candidate.average) / baseline.average
    return {"rows": rows, "average": average}


# ----------------------------------------------------------------------
# rendering


def write_report_csv(report, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["horizon_s", "rmse_m"])
        for h in HORIZONS_S:
            writer.writerow([h, repr(report.rows[h])])
        writer.writerow(["average", repr(report.average)])


def read_report_csv(path, model_id="model", domain="source"):
    rows = {}
    average = None
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            if row["horizon_s"] == "average":
                average = float(row["rmse_m"])
            else:
                rows[int(row["horizon_s"])] = float(row["rmse_m"])
    if average is None:
        average = float(np.mean(list(rows.values())))
    return HorizonReport(rows=rows, average=average, model_id=model_id,
                         domain=domain, sample_count=0)


def write_comparison_csv(baseline, candidate, path):
    imp = compare_reports(baseline, candidate)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["horizon_s", "rmse_m", "improvement_pct"])
        for h in HORIZONS_S:
            writer.writerow([h, repr(candidate.rows[h]),
                             f"{100.0 * imp['rows'][h]:.4f}"])
        writer.writerow(["average", repr(candidate.average),
                         f"{100.0 * imp['average']:.4f}"])
    return imp


def render_text(report):
    lines = [
        f"Model: {report.model_id}   Domain: {report.domain}   "
        f"Samples: {report.sample_count}",
        f"{'Horizon (s)':>12} | {'RMSE (m)':>10}",
        "-" * 25,
    ]
    for h in HORIZONS_S:
        lines.append(f"{h:>12} | {report.rows[h]:>10.4f}")
    lines.append(f"{'Average':>12} | {report.average:>10.4f}")
    return "\n".join(lines)
