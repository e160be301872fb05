"""Three-stage adversarial training, composition, inference and checkpoints."""

import json
import logging
import random
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import plotting
from .data import DEFAULT_CANNY, known_region_edges, to_grayscale
from .errors import CheckpointError, ConfigError, IngestError, MaskError, NumericsError, ProvenanceError, ShapeError
from .losses import (LossConfig, adversarial_loss, calibrate_lambda_sem, edge_stage_loss,
                     feature_matching_loss, inpaint_stage_loss, l1_loss, semantic_embedding_loss)
from .networks import STAGES, ModelBundle, NetworkConfig

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "edgeoutpaint-bundle/1"
PAPER_ITERATIONS_PER_STAGE = 75_000


@dataclass
class StageConfig:
    stage: str
    iterations: int = 300
    batch_size: int = 4
    learning_rate: float = 1e-4
    d_to_g_lr_ratio: float = 0.1
    seed: int = 0
    loss_config: LossConfig = field(default_factory=LossConfig)
    checkpoint_every: int = 100

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if isinstance(self.loss_config, dict):
            self.loss_config = LossConfig(**self.loss_config)
        if self.iterations < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ConfigError(f"invalid stage config {self}")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")


@dataclass
class TrainReport:
    stage: str
    iterations: int
    curves: dict
    wall_time: float
    checkpoint: str
    seed: int
    lambda_sem: float = None

    def generator_totals(self):
        return self.curves["total"]


def seed_everything(seed, deterministic=True):
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(deterministic, warn_only=True)


def _is_binary(mask):
    if torch.is_tensor(mask):
        return bool(((mask == 0) | (mask == 1)).all())
    mask = np.asarray(mask)
    return bool(np.isin(mask, (0, 1)).all())


def compose(x_gt, x_pred, mask):
    """Keep ground truth where mask is 1 and the prediction where it is 0.

    Works on numpy H x W (x C) arrays or torch N x C x H x W tensors; the
    mask broadcasts across channels.
    """
    if x_gt.shape != x_pred.shape:
        raise ShapeError(f"compose shapes differ: {tuple(x_gt.shape)} vs {tuple(x_pred.shape)}")
    if not _is_binary(mask):
        raise MaskError("compose requires a mask over {0, 1}")
    if torch.is_tensor(x_gt):
        if mask.ndim != x_gt.ndim or mask.shape[-2:] != x_gt.shape[-2:]:
            raise ShapeError(f"mask {tuple(mask.shape)} does not broadcast to {tuple(x_gt.shape)}")
        m = mask.to(x_gt.dtype)
    else:
        mask = np.asarray(mask)
        if mask.shape != x_gt.shape[:2]:
            raise ShapeError(f"mask {mask.shape} does not match image {x_gt.shape[:2]}")
        m = (mask if x_gt.ndim == 2 else mask[..., None]).astype(x_gt.dtype)
    return x_gt * m + x_pred * (1 - m)


@dataclass
class SplitTensors:
    ids: list
    image: torch.Tensor
    gray: torch.Tensor
    edges: torch.Tensor
    mask: torch.Tensor
    known_edges: torch.Tensor

    def __len__(self):
        return len(self.ids)

    def batch(self, idx, device="cpu"):
        return {k: getattr(self, k)[idx].to(device) for k in ("image", "gray", "edges", "mask", "known_edges")}


def stack_samples(samples, canny_params=None):
    """Stack samples into NCHW tensors, adding the known-region edge channel."""
    if not samples:
        raise IngestError("dataset is empty")
    p = dict(DEFAULT_CANNY, **(canny_params or {}))

    def t(arrs):
        return torch.from_numpy(np.stack(arrs).astype(np.float32))

    return SplitTensors(
        [s.id for s in samples],
        t([s.image for s in samples]).permute(0, 3, 1, 2).contiguous(),
        t([s.gray for s in samples])[:, None],
        t([s.edges for s in samples])[:, None],
        t([s.mask for s in samples])[:, None],
        t([known_region_edges(s.gray, s.mask, p["sigma"], p["low"], p["high"]) for s in samples])[:, None],
    )


class _BatchSampler:
    """Epoch-wise seeded permutations; the generator state makes it resumable."""

    def __init__(self, n, batch_size, seed):
        self.n, self.batch_size = n, batch_size
        self.gen = torch.Generator().manual_seed(seed)
        self.queue = []

    def next(self):
        while len(self.queue) < self.batch_size:
            self.queue.extend(torch.randperm(self.n, generator=self.gen).tolist())
        idx, self.queue = self.queue[:self.batch_size], self.queue[self.batch_size:]
        return torch.tensor(idx)

    def state(self):
        return {"gen": self.gen.get_state(), "queue": list(self.queue)}

    def load(self, state):
        self.gen.set_state(state["gen"])
        self.queue = list(state["queue"])


def check_provenance(stage, bundle):
    if stage == "edge" and bundle.provenance not in ("fresh", "edge"):
        raise ProvenanceError(f"edge stage needs a fresh or edge bundle, got {bundle.provenance!r}")
    if stage == "joint" and "edge" not in bundle.history:
        raise ProvenanceError("joint stage needs a trained edge generator")


def _edge_step(bundle, batch, cfg, opt_g, opt_d):
    g, d = bundle.edge_generator, bundle.edge_discriminator
    lc = cfg.loss_config
    gray, edges, mask = batch["gray"], batch["edges"], batch["mask"]
    pred = g(gray * mask, batch["known_edges"], mask)
    out = compose(edges, pred, mask)
    real_in = torch.cat([gray, edges], 1)

    opt_d.zero_grad()
    d_real, _ = d(real_in)
    d_fake, _ = d(torch.cat([gray, out.detach()], 1))
    d_loss = (adversarial_loss(d_real, True, lc.adversarial_mode) +
              adversarial_loss(d_fake, False, lc.adversarial_mode)) / 2
    d_loss.backward()
    opt_d.step()

    opt_g.zero_grad()
    g_fake, fake_feats = d(torch.cat([gray, out], 1))
    with torch.no_grad():
        _, real_feats = d(real_in)
    adv = adversarial_loss(g_fake, True, lc.adversarial_mode, "generator")
    fm = feature_matching_loss(real_feats, fake_feats)
    loss = edge_stage_loss(adv, fm, lc)
    return loss, d_loss, pred, out


def _inpaint_prior(bundle, batch, stage):
    if stage == "inpaint":
        return batch["edges"]
    with torch.no_grad():
        pred_e = bundle.edge_generator(batch["gray"] * batch["mask"], batch["known_edges"], batch["mask"])
    return compose(batch["known_edges"], pred_e, batch["mask"])


def _inpaint_step(bundle, batch, cfg, opt_g, opt_d, lambda_sem):
    g, d, emb = bundle.inpaint_generator, bundle.image_discriminator, bundle.embedder
    lc = cfg.loss_config
    image, mask = batch["image"], batch["mask"]
    prior = _inpaint_prior(bundle, batch, cfg.stage)
    pred = g(image * mask, prior, mask)
    out = compose(image, pred, mask)

    opt_d.zero_grad()
    d_real, _ = d(image)
    d_fake, _ = d(out.detach())
    d_loss = (adversarial_loss(d_real, True, lc.adversarial_mode) +
              adversarial_loss(d_fake, False, lc.adversarial_mode)) / 2
    d_loss.backward()
    opt_d.step()

    opt_g.zero_grad()
    g_fake, fake_feats = d(out)
    with torch.no_grad():
        _, real_feats = d(image)
        e_gt = emb(image)
    adv = adversarial_loss(g_fake, True, lc.adversarial_mode, "generator")
    fm = feature_matching_loss(real_feats, fake_feats)
    l1 = l1_loss(pred, image)
    e_out = emb(out)
    loss = inpaint_stage_loss(l1, adv, fm, e_gt, e_out, lc, lambda_sem, stage=cfg.stage)
    return loss, d_loss, prior, out


def _initial_lambda(bundle, data, cfg, device):
    """Resolve ``lambda_sem="auto"`` from the first batch, or reuse a stored value."""
    lc = cfg.loss_config
    if lc.lambda_sem != "auto":
        return float(lc.lambda_sem)
    if "lambda_sem" in bundle.meta:
        return float(bundle.meta["lambda_sem"])
    n = min(len(data), cfg.batch_size)
    batch = data.batch(torch.arange(n), device)
    with torch.no_grad():
        prior = _inpaint_prior(bundle, batch, cfg.stage)
        pred = bundle.inpaint_generator(batch["image"] * batch["mask"], prior, batch["mask"])
        out = compose(batch["image"], pred, batch["mask"])
        l1 = float(l1_loss(pred, batch["image"]))
        dist = float(semantic_embedding_loss(bundle.embedder(batch["image"]), bundle.embedder(out), 1.0))
    lam = calibrate_lambda_sem(l1, dist, lc)
    log.info("calibrated lambda_sem=%.4g (l1=%.4g, embedding distance=%.4g)", lam, l1, dist)
    return lam


def _set_modes(bundle, stage):
    bundle.eval()
    if stage == "edge":
        nets = [bundle.edge_generator, bundle.edge_discriminator]
    else:
        nets = [bundle.inpaint_generator, bundle.image_discriminator]
    for n in nets:
        n.train()
    return nets


def train_stage(config, data, bundle, out_dir=None, canny_params=None, device="cpu",
                deterministic=True, on_iteration=None, run_meta=None):
    """Run one training stage on a copy of ``bundle``.

    ``data`` is a list of Samples (or pre-stacked SplitTensors). With
    ``out_dir`` set, per-iteration logs, periodic checkpoints, sample grids
    and a loss figure are written there, and an interrupted run resumes from
    its last partial checkpoint. Returns ``(new_bundle, TrainReport)``.
    """
    check_provenance(config.stage, bundle)
    if not isinstance(data, SplitTensors):
        data = stack_samples(list(data), canny_params)
    if len(data) == 0:
        raise IngestError("dataset is empty")

    seed_everything(config.seed, deterministic)
    bundle = bundle.copy().to(device)
    g_net, d_net = _set_modes(bundle, config.stage)
    lr_g = config.learning_rate
    opt_g = torch.optim.Adam(g_net.parameters(), lr=lr_g, betas=(0.0, 0.9))
    opt_d = torch.optim.Adam(d_net.parameters(), lr=lr_g * config.d_to_g_lr_ratio, betas=(0.0, 0.9))
    sampler = _BatchSampler(len(data), config.batch_size, config.seed)

    curves, start, elapsed = {}, 0, 0.0
    lambda_sem = None
    paths = _stage_paths(out_dir, config.stage) if out_dir else None
    if paths and paths["partial"].exists():
        bundle, resume = load_checkpoint(paths["partial"], with_resume=True)
        bundle = bundle.to(device)
        g_net, d_net = _set_modes(bundle, config.stage)
        opt_g = torch.optim.Adam(g_net.parameters(), lr=lr_g, betas=(0.0, 0.9))
        opt_d = torch.optim.Adam(d_net.parameters(), lr=lr_g * config.d_to_g_lr_ratio, betas=(0.0, 0.9))
        opt_g.load_state_dict(resume["opt_g"])
        opt_d.load_state_dict(resume["opt_d"])
        sampler.load(resume["sampler"])
        torch.set_rng_state(resume["torch_rng"])
        curves = {k: list(v) for k, v in resume["curves"].items()}
        start, elapsed = resume["iteration"], resume["wall_time"]
        lambda_sem = resume["lambda_sem"]
        log.info("resuming %s stage at iteration %d", config.stage, start)
        if paths["log"].exists():
            kept = paths["log"].read_text().splitlines()[:start]
            paths["log"].write_text("".join(line + "\n" for line in kept))
    elif paths and paths["log"].exists():
        paths["log"].unlink()

    if config.stage != "edge" and lambda_sem is None:
        lambda_sem = _initial_lambda(bundle, data, config, device)
        bundle.meta["lambda_sem"] = lambda_sem

    t0 = time.perf_counter()
    for it in range(start, config.iterations):
        batch = data.batch(sampler.next(), device)
        try:
            if config.stage == "edge":
                loss, d_loss, vis_edges, out = _edge_step(bundle, batch, config, opt_g, opt_d)
            else:
                loss, d_loss, vis_edges, out = _inpaint_step(bundle, batch, config, opt_g, opt_d, lambda_sem)
        except NumericsError as exc:
            raise NumericsError(f"{exc} ({config.stage} stage, iteration {it})", iteration=it) from exc
        if not torch.isfinite(loss.total) or not torch.isfinite(d_loss):
            raise NumericsError(f"non-finite loss in {config.stage} stage at iteration {it}", iteration=it)
        loss.total.backward()
        opt_g.step()

        rec = loss.record()
        rec["d_loss"] = float(d_loss.detach())
        for k, v in rec.items():
            curves.setdefault(k, []).append(v)
        if paths:
            with paths["log"].open("a") as fh:
                fh.write(json.dumps({"iteration": it + 1, "stage": config.stage, **rec}) + "\n")
        done = it + 1
        if paths and (done % config.checkpoint_every == 0 or done == config.iterations):
            plotting.save_sample_grid(_grid_rows(batch, vis_edges, out, config.stage),
                                      paths["samples"] / f"{config.stage}_{done:06d}.png")
            if done < config.iterations:
                resume = {
                    "iteration": done, "curves": curves, "opt_g": opt_g.state_dict(),
                    "opt_d": opt_d.state_dict(), "sampler": sampler.state(),
                    "torch_rng": torch.get_rng_state(), "lambda_sem": lambda_sem,
                    "wall_time": elapsed + time.perf_counter() - t0,
                }
                save_checkpoint(bundle, paths["partial"], resume=resume)
        if on_iteration is not None:
            on_iteration(done, rec)

    bundle.history = list(bundle.history) + [config.stage]
    if run_meta:
        bundle.meta.update(run_meta)
    bundle.eval()
    ckpt = ""
    if paths:
        save_checkpoint(bundle, paths["final"])
        ckpt = str(paths["final"])
        if paths["partial"].exists():
            paths["partial"].unlink()
    report = TrainReport(config.stage, config.iterations, curves,
                         elapsed + time.perf_counter() - t0, ckpt, config.seed, lambda_sem)
    if paths:
        (paths["log"].parent / f"{config.stage}_report.json").write_text(
            json.dumps(asdict(report), indent=1))
        plotting.plot_loss_curves(report, paths["figures"] / f"{config.stage}_losses.png")
    return bundle.to("cpu"), report


def _stage_paths(out_dir, stage):
    out_dir = Path(out_dir)
    p = {
        "final": out_dir / "checkpoints" / f"{stage}.pt",
        "partial": out_dir / "checkpoints" / f"{stage}_partial.pt",
        "log": out_dir / "logs" / f"{stage}.jsonl",
        "samples": out_dir / "samples",
        "figures": out_dir / "figures",
    }
    for key in ("final", "log"):
        p[key].parent.mkdir(parents=True, exist_ok=True)
    p["samples"].mkdir(parents=True, exist_ok=True)
    p["figures"].mkdir(parents=True, exist_ok=True)
    return p


def _to_hwc(t):
    a = t.detach().cpu().numpy()
    return np.repeat(a[0][..., None], 3, axis=2) if a.shape[0] == 1 else a.transpose(1, 2, 0)


def _grid_rows(batch, edges, out, stage):
    rows = []
    for i in range(min(4, out.shape[0])):
        if stage == "edge":
            masked, gt = batch["gray"][i] * batch["mask"][i], batch["edges"][i]
        else:
            masked, gt = batch["image"][i] * batch["mask"][i], batch["image"][i]
        rows.append([_to_hwc(masked), _to_hwc(edges[i]), _to_hwc(out[i]), _to_hwc(gt)])
    return rows


@torch.no_grad()
def outpaint(img, mask, bundle, canny_params=None, strict=True, return_edges=False):
    """Fill the mask=0 region of ``img`` (H x W x 3 in [0, 1]).

    Known pixels are copied through unchanged. ``strict=False`` skips the
    provenance check so untrained bundles can be exercised.
    """
    img = np.asarray(img)
    mask = np.asarray(mask)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"outpaint expects H x W x 3, got {img.shape}")
    if img.shape[:2] != mask.shape:
        raise ShapeError(f"image {img.shape[:2]} and mask {mask.shape} differ")
    if not _is_binary(mask):
        raise MaskError("outpaint requires a mask over {0, 1}")
    if strict:
        if bundle.provenance in ("fresh", "edge"):
            raise ProvenanceError(f"bundle with provenance {bundle.provenance!r} cannot outpaint")
        if bundle.provenance == "inpaint":
            warnings.warn("outpainting with an inpaint-stage bundle; joint training not run", stacklevel=2)
    p = dict(DEFAULT_CANNY, **(canny_params or {}))
    device = next(bundle.inpaint_generator.parameters()).device
    bundle.edge_generator.eval()
    bundle.inpaint_generator.eval()

    known = img * mask[..., None].astype(img.dtype)
    gray = to_grayscale(known)
    edges = known_region_edges(gray, mask, p["sigma"], p["low"], p["high"])

    def t(a):
        a = np.asarray(a, dtype=np.float32)
        a = a[None, None] if a.ndim == 2 else a.transpose(2, 0, 1)[None]
        return torch.from_numpy(np.ascontiguousarray(a)).to(device)

    m = t(mask)
    pred_e = bundle.edge_generator(t(gray) * m, t(edges), m)
    edges_c = compose(t(edges), pred_e, m)
    pred = bundle.inpaint_generator(t(known), edges_c, m)
    pred = pred[0].permute(1, 2, 0).cpu().numpy().astype(img.dtype)
    out = compose(img, pred, mask)
    if return_edges:
        return out, edges_c[0, 0].cpu().numpy()
    return out


def save_checkpoint(bundle, path, resume=None):
    """Write the bundle as a torch archive keyed ``<network>.<parameter>``.

    ``resume`` carries optimizer/sampler state for mid-stage restarts.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = {}
    for name, module in bundle.modules().items():
        for k, v in module.state_dict().items():
            state[f"{name}.{k}"] = v.detach().cpu().clone()
    payload = {
        "format": CHECKPOINT_FORMAT,
        "network_config": bundle.config.to_dict(),
        "history": list(bundle.history),
        "provenance": bundle.provenance,
        "meta": dict(bundle.meta),
        "state": state,
    }
    if resume:
        payload["resume"] = resume
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path, with_resume=False):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not an edgeoutpaint checkpoint")
    try:
        config = NetworkConfig(**payload["network_config"])
        bundle = ModelBundle.create(config)
        for name, module in bundle.modules().items():
            prefix = name + "."
            sub = {k[len(prefix):]: v for k, v in payload["state"].items() if k.startswith(prefix)}
            module.load_state_dict(sub, strict=True)
    except (RuntimeError, TypeError, KeyError, ConfigError) as exc:
        raise CheckpointError(f"checkpoint {path} does not match its config snapshot: {exc}") from exc
    history = list(payload.get("history", []))
    if any(h not in STAGES for h in history):
        raise CheckpointError(f"bad provenance history {history}")
    bundle.history = history
    bundle.meta = dict(payload.get("meta", {}))
    bundle.eval()
    if with_resume:
        return bundle, payload.get("resume")
    return bundle
