"""PSNR / SSIM / MAE, test-set evaluation and the two-model ablation table."""

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import plotting
from .data import LUMA, make_right_mask
from .errors import ConfigError, IngestError, ShapeError

log = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
METRICS = ("PSNR", "SSIM", "MAE")
HIGHER_IS_BETTER = {"PSNR": True, "SSIM": True, "MAE": False}


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b):
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b):
    """Peak signal-to-noise ratio in dB with peak 1.0; ``inf`` for identical inputs."""
    err = mse(a, b)
    if err == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / err)


def mae(a, b):
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _luma(x):
    if x.ndim == 3 and x.shape[2] == 3:
        return x @ LUMA
    if x.ndim == 3 and x.shape[2] == 1:
        return x[..., 0]
    return x


def ssim(a, b):
    """Mean SSIM over all fully contained 11x11 Gaussian windows (sigma 1.5, range 1)."""
    a, b = _pair(a, b)
    a, b = _luma(a), _luma(b)
    if min(a.shape) < SSIM_WINDOW:
        raise ConfigError(f"image {a.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    w = gaussian_window()
    half = SSIM_WINDOW // 2

    def filt(x):
        return ndimage.correlate(x, w, mode="constant")[half:-half, half:-half]

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class MetricsReport:
    model_tag: str
    mask_ratio: float
    records: list = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    count: int = 0
    excluded_infinite_psnr: int = 0

    @property
    def ids(self):
        return [r["id"] for r in self.records]

    @classmethod
    def from_records(cls, model_tag, mask_ratio, records):
        finite = [r["psnr"] for r in records if math.isfinite(r["psnr"])]
        excluded = len(records) - len(finite)
        if excluded:
            log.warning("%d image(s) reproduced exactly (infinite PSNR); excluded from the PSNR mean", excluded)
        agg = {
            "psnr": float(np.mean(finite)) if finite else math.inf,
            "ssim": float(np.mean([r["ssim"] for r in records])),
            "mae": float(np.mean([r["mae"] for r in records])),
        }
        return cls(model_tag, mask_ratio, list(records), agg, len(records), excluded)

    @classmethod
    def from_aggregates(cls, model_tag, psnr, ssim, mae, mask_ratio=0.25, count=0):
        return cls(model_tag, mask_ratio, [], {"psnr": psnr, "ssim": ssim, "mae": mae}, count, 0)

    def to_dict(self):
        d = asdict(self)
        d["records"] = [{k: (None if isinstance(v, float) and math.isinf(v) else v) for k, v in r.items()}
                        for r in self.records]
        if math.isinf(d["aggregate"]["psnr"]):
            d["aggregate"]["psnr"] = None
        return d

    @classmethod
    def from_dict(cls, d):
        recs = [dict(r, psnr=math.inf if r["psnr"] is None else r["psnr"]) for r in d["records"]]
        agg = dict(d["aggregate"])
        if agg["psnr"] is None:
            agg["psnr"] = math.inf
        return cls(d["model_tag"], d["mask_ratio"], recs, agg, d["count"], d["excluded_infinite_psnr"])

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1))
        return path

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def evaluate_dataset(model, samples, mask_ratio=0.25, model_tag="model", canny_params=None):
    """Outpaint every test sample and score the composed frame against ground truth.

    ``model`` is a ModelBundle or any callable ``(image, mask) -> image``.
    """
    if not samples:
        raise IngestError("test set is empty")
    if callable(model):
        run = model
    else:
        from .training import outpaint

        def run(img, mask):
            return outpaint(img, mask, model, canny_params)

    records = []
    for s in samples:
        mask = make_right_mask(s.image.shape[0], s.image.shape[1], mask_ratio)
        out = run(s.image, mask)
        records.append({"id": s.id, "psnr": psnr(out, s.image), "ssim": ssim(out, s.image),
                        "mae": mae(out, s.image)})
    return MetricsReport.from_records(model_tag, mask_ratio, records)


def ablation_table(report_a, report_b):
    """Two-row PSNR / SSIM / MAE comparison; best value per column is starred.

    Returns ``{"rows": [...], "text": str, "csv": str}``. Ties star both rows.
    """
    if report_a.mask_ratio != report_b.mask_ratio:
        raise ConfigError(f"mask ratios differ: {report_a.mask_ratio} vs {report_b.mask_ratio}")
    if sorted(report_a.ids) != sorted(report_b.ids):
        raise ConfigError("reports were computed on different test sets")

    rows = []
    for rep in (report_a, report_b):
        a = rep.aggregate
        rows.append({"model": rep.model_tag, "PSNR": a["psnr"], "SSIM": a["ssim"], "MAE": a["mae"], "best": []})
    for m in METRICS:
        vals = [round(r[m], 3) for r in rows]
        target = max(vals) if HIGHER_IS_BETTER[m] else min(vals)
        for r, v in zip(rows, vals):
            if v == target:
                r["best"].append(m)

    label_w = max(len(r["model"]) for r in rows)
    lines = [" " * label_w + "".join(f"  {m:>8}" for m in METRICS)]
    for r in rows:
        cells = "".join(f"  {_fmt(r[m]) + ('*' if m in r['best'] else ' '):>8}" for m in METRICS)
        lines.append(f"{r['model']:<{label_w}}{cells}")
    lines.append("* best value in column")

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["model", "psnr", "ssim", "mae", "best_psnr", "best_ssim", "best_mae"])
    for r in rows:
        writer.writerow([r["model"], _fmt(r["PSNR"]), _fmt(r["SSIM"]), _fmt(r["MAE"])] +
                        [int(m in r["best"]) for m in METRICS])
    return {"rows": rows, "text": "\n".join(lines) + "\n", "csv": buf.getvalue()}


def _fmt(v):
    return "inf" if math.isinf(v) else f"{v:.3f}"


def write_ablation(table, out_dir, stem="ablation"):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{stem}.txt").write_text(table["text"])
    (out_dir / f"{stem}.csv").write_text(table["csv"])
    plotting.plot_ablation(table["rows"], out_dir / f"{stem}.png")
    return out_dir
