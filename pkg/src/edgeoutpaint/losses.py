"""Training objectives and per-stage weighted totals."""

import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F

from .errors import ConfigError, NumericsError, ShapeError
from .networks import EMBEDDING_DIM

ADVERSARIAL_MODES = ("nonsaturating", "hinge")


@dataclass
class LossConfig:
    """Loss weights. ``lambda_sem="auto"`` is resolved once by :func:`calibrate_lambda_sem`."""

    lambda_sem: object = "auto"
    lambda_l1: float = 1.0
    lambda_adv: float = 0.1
    lambda_fm: float = 10.0
    adversarial_mode: str = "nonsaturating"

    def __post_init__(self):
        if self.adversarial_mode not in ADVERSARIAL_MODES:
            raise ConfigError(f"adversarial_mode must be one of {ADVERSARIAL_MODES}")
        if self.lambda_sem != "auto":
            self.lambda_sem = float(self.lambda_sem)
        for name in ("lambda_sem", "lambda_l1", "lambda_adv", "lambda_fm"):
            v = getattr(self, name)
            if v == "auto" and name == "lambda_sem":
                continue
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")

    def to_dict(self):
        return asdict(self)


@dataclass
class LossBreakdown:
    """Raw terms, their weights, and the weighted total (a tensor, for backward)."""

    stage: str
    terms: dict
    weights: dict
    total: torch.Tensor = field(repr=False)

    def record(self):
        out = {k: float(v.detach()) for k, v in self.terms.items()}
        out["total"] = float(self.total.detach())
        return out


def _finite(x, what):
    if not torch.isfinite(x).all():
        raise NumericsError(f"non-finite values in {what}")


def semantic_embedding_loss(e_gt, e_pred, lambda_sem):
    """lambda * sum_i (e_gt_i - e_pred_i)^2 over the 512 embedding components.

    Accepts single vectors or batches (N x 512); batches are averaged over N.
    """
    e_gt, e_pred = torch.as_tensor(e_gt), torch.as_tensor(e_pred)
    if e_gt.shape[-1] != EMBEDDING_DIM or e_pred.shape != e_gt.shape:
        raise ShapeError(f"embeddings must both have length {EMBEDDING_DIM}, "
                         f"got {tuple(e_gt.shape)} and {tuple(e_pred.shape)}")
    sq = ((e_gt - e_pred) ** 2).sum(dim=-1)
    return lambda_sem * sq.mean()


def l1_loss(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"l1_loss shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def adversarial_loss(scores, target_real, mode="nonsaturating", role="discriminator"):
    """Mean patch loss. ``scores`` are raw logits from a patch discriminator."""
    _finite(scores, "discriminator scores")
    if mode == "nonsaturating":
        target = torch.ones_like(scores) if target_real else torch.zeros_like(scores)
        return F.binary_cross_entropy_with_logits(scores, target)
    if mode == "hinge":
        if role == "generator":
            return -scores.mean()
        if target_real:
            return F.relu(1.0 - scores).mean()
        return F.relu(1.0 + scores).mean()
    raise ConfigError(f"unknown adversarial mode {mode!r}")


def feature_matching_loss(real_feats, fake_feats):
    if len(real_feats) != len(fake_feats) or not real_feats:
        raise ShapeError("feature lists must be non-empty and of equal length")
    total = 0.0
    for r, f in zip(real_feats, fake_feats):
        if r.shape != f.shape:
            raise ShapeError(f"feature shapes differ: {tuple(r.shape)} vs {tuple(f.shape)}")
        total = total + (r - f).abs().mean()
    return total / len(real_feats)


def edge_stage_loss(adv, fm, config):
    w = {"adv": config.lambda_adv, "fm": config.lambda_fm}
    terms = {"adv": adv, "fm": fm}
    total = sum(w[k] * terms[k] for k in w)
    return LossBreakdown("edge", terms, w, total)


def inpaint_stage_loss(l1, adv, fm, e_gt, e_out, config, lambda_sem=None, stage="inpaint"):
    """Weighted inpaint/joint total; the semantic term compares embeddings of
    the ground truth and the composed output."""
    lam = config.lambda_sem if lambda_sem is None else lambda_sem
    if lam == "auto":
        raise ConfigError("lambda_sem is still 'auto'; calibrate it before training")
    sem = semantic_embedding_loss(e_gt, e_out, 1.0)
    w = {"l1": config.lambda_l1, "adv": config.lambda_adv, "fm": config.lambda_fm, "sem": float(lam)}
    terms = {"l1": l1, "adv": adv, "fm": fm, "sem": sem}
    total = sum(w[k] * terms[k] for k in w)
    return LossBreakdown(stage, terms, w, total)


def calibrate_lambda_sem(l1_value, sem_distance, config):
    """Pick lambda so the weighted semantic term starts at the L1 term's magnitude."""
    if config.lambda_sem != "auto":
        return float(config.lambda_sem)
    if sem_distance <= 0 or not math.isfinite(sem_distance):
        return 1.0
    return float(config.lambda_l1 * l1_value / sem_distance)
