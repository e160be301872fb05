"""End-to-end acceptance checks; each test records one PASS/FAIL line in the
terminal summary (see conftest.py)."""

import contextlib
import math
import re
import shutil
import time
from pathlib import Path

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from conftest import ACCEPTANCE_RESULTS
from edgeoutpaint import cli
from edgeoutpaint.config import load_config
from edgeoutpaint.data import load_split, make_right_mask, make_sample
from edgeoutpaint.evaluation import MetricsReport, ablation_table, gaussian_window, mae, psnr, ssim
from edgeoutpaint.losses import LossConfig, semantic_embedding_loss
from edgeoutpaint.networks import (EdgeGenerator, GeneratorConfig, InpaintGenerator, ModelBundle, NetworkConfig,
                                   SemanticEmbedder, semantic_embedding)
from edgeoutpaint.synthetic import landscape
from edgeoutpaint.training import StageConfig, compose, load_checkpoint, outpaint, stack_samples, train_stage

ROOT = Path(__file__).resolve().parents[1]
STAGES = ("edge", "inpaint", "joint")


@contextlib.contextmanager
def criterion(name):
    detail = {}
    try:
        yield detail
    except BaseException as exc:
        ACCEPTANCE_RESULTS.append((name, False, f"{type(exc).__name__}: {exc}".splitlines()[0][:160]))
        raise
    ACCEPTANCE_RESULTS.append((name, True, detail.get("msg", "")))


def _curve_means(logfile):
    import json
    totals = [json.loads(line)["total"] for line in logfile.read_text().splitlines()]
    return float(np.mean(totals[:50])), float(np.mean(totals[-50:])), len(totals)


@pytest.fixture(scope="session")
def smoke_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke")
    cfg = load_config(ROOT / "configs" / "smoke.yaml", env={"EDGEOUTPAINT_OUTPUT_ROOT": str(out)})
    t0 = time.perf_counter()
    cli.cmd_prepare(cfg)
    reports = cli.cmd_train(cfg, "all")
    return cfg, reports, time.perf_counter() - t0


# 1
def test_reproducibility_statement_documented():
    with criterion("published-number reproducibility statement") as d:
        readme = (ROOT / "README.md").read_text()
        for needle in ("23.127", "0.894", "0.040", "75,000", "not reproducible"):
            assert needle in readme, needle
        paper_cfg = load_config(ROOT / "configs" / "paper.yaml", check_paths=False)
        assert all(paper_cfg.stages[s]["iterations"] == 75_000 for s in STAGES)
        d["msg"] = "README documents the full-scale schedule; configs/paper.yaml records it"


# 2
def _psnr_loop(a, b):
    s = 0.0
    for x, y in zip(a.ravel(), b.ravel()):
        s += (float(x) - float(y)) ** 2
    return 10 * math.log10(1 / (s / a.size))


def _mae_loop(a, b):
    s = 0.0
    for x, y in zip(a.ravel(), b.ravel()):
        s += abs(float(x) - float(y))
    return s / a.size


def _ssim_loop(a, b):
    w = gaussian_window()
    k = w.shape[0]
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for i in range(a.shape[0] - k + 1):
        for j in range(a.shape[1] - k + 1):
            acc = [0.0] * 5
            for u in range(k):
                for v in range(k):
                    x, y, wt = a[i + u, j + v], b[i + u, j + v], w[u, v]
                    acc[0] += wt * x
                    acc[1] += wt * y
                    acc[2] += wt * x * x
                    acc[3] += wt * y * y
                    acc[4] += wt * x * y
            ma, mb = acc[0], acc[1]
            va, vb, cov = acc[2] - ma * ma, acc[3] - mb * mb, acc[4] - ma * mb
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return sum(vals) / len(vals)


def test_metric_oracles():
    with criterion("metric oracle equivalence") as d:
        rng = np.random.default_rng(2024)
        t0 = time.perf_counter()
        worst = [0.0, 0.0, 0.0]
        for _ in range(100):
            a, b = rng.random((16, 16)), rng.random((16, 16))
            worst[0] = max(worst[0], abs(psnr(a, b) - _psnr_loop(a, b)))
            worst[1] = max(worst[1], abs(ssim(a, b) - _ssim_loop(a, b)))
            worst[2] = max(worst[2], abs(mae(a, b) - _mae_loop(a, b)))
        elapsed = time.perf_counter() - t0
        assert worst[0] < 1e-6 and worst[1] < 1e-5 and worst[2] < 1e-9, worst
        assert elapsed < 60
        d["msg"] = f"max err psnr {worst[0]:.1e} dB, ssim {worst[1]:.1e}, mae {worst[2]:.1e}; {elapsed:.1f}s"


# 3
def test_composition_suite():
    with criterion("composition suite") as d:
        rng = np.random.default_rng(7)
        t0 = time.perf_counter()
        for _ in range(1000):
            h, w = rng.integers(1, 24, 2)
            c = int(rng.choice([1, 3]))
            gt = rng.random((h, w, c)).astype(rng.choice([np.float32, np.float64]))
            pred = rng.random((h, w, c)).astype(gt.dtype)
            m = (rng.random((h, w)) < rng.random()).astype(gt.dtype)
            ones, zeros = np.ones((h, w), gt.dtype), np.zeros((h, w), gt.dtype)
            assert np.array_equal(compose(gt, pred, ones), gt)
            assert np.array_equal(compose(gt, pred, zeros), pred)
            assert np.array_equal(compose(gt, gt, m), gt)
            assert np.array_equal(compose(gt, pred, m) + compose(pred, gt, m), gt + pred)
            assert np.array_equal(compose(gt, pred, m), compose(pred, gt, 1 - m))
        d["msg"] = f"1000 cases bit-exact in {time.perf_counter() - t0:.2f}s"


# 4
def test_semantic_loss_suite():
    with criterion("semantic embedding loss") as d:
        rng = np.random.default_rng(11)
        t = lambda x: torch.as_tensor(x, dtype=torch.float64)  # noqa: E731
        a = rng.standard_normal(512)
        assert float(semantic_embedding_loss(t(a), t(a), 1.0)) == 0
        b = a.copy()
        b[rng.integers(512)] += 1e-3
        assert float(semantic_embedding_loss(t(a), t(b), 1.0)) > 0

        b = rng.standard_normal(512)
        oracle = 0.0
        for x, y in zip(a, b):
            oracle += (x - y) ** 2
        assert abs(float(semantic_embedding_loss(t(a), t(b), 0.5)) - 0.5 * oracle) < 1e-7

        worst = 0.0
        for _ in range(20):
            gt = t(rng.standard_normal(512))
            p = t(rng.standard_normal(512)).requires_grad_(True)
            semantic_embedding_loss(gt, p, 0.7).backward()
            fd = np.empty(512)
            for i in range(512):
                up, dn = p.detach().clone(), p.detach().clone()
                up[i] += 1e-6
                dn[i] -= 1e-6
                fd[i] = (float(semantic_embedding_loss(gt, up, 0.7)) -
                         float(semantic_embedding_loss(gt, dn, 0.7))) / 2e-6
            worst = max(worst, np.linalg.norm(p.grad.numpy() - fd) / np.linalg.norm(fd))
        assert worst < 1e-4

        base = semantic_embedding_loss(t(a), t(b), 1.0)
        for c in (0.0, 0.25, 3.0, 17.5):
            assert float(semantic_embedding_loss(t(a), t(b), c)) == float(c * base)
        d["msg"] = f"worst finite-difference rel err {worst:.1e}"


# 5
def test_known_region_preservation():
    with criterion("known-region preservation") as d:
        rng = np.random.default_rng(5)
        bundles = [
            ModelBundle.create(NetworkConfig(generator_channels=8, residual_blocks=1, discriminator_channels=8,
                                             embedder_channels=(8, 16), embedder_input=32), seed=s)
            for s in range(3)
        ] + [ModelBundle.create(NetworkConfig(), seed=9)]
        for i, b in enumerate(bundles):
            b.history = [[], ["edge"], ["edge", "inpaint"], ["edge", "inpaint", "joint"]][i]
        checked = 0
        for k in range(50):
            side = int(rng.choice([32, 48, 64]))
            img = landscape(k, side) if k % 2 else rng.random((side, side, 3)).astype(np.float32)
            mask = make_right_mask(side, side, 0.25)
            out = outpaint(img, mask, bundles[k % len(bundles)], strict=False)
            keep = mask == 1
            assert np.array_equal(out[keep], img[keep]), k
            checked += int(keep.sum())
        d["msg"] = f"50 images, {len(bundles)} bundles, {checked} known pixels bit-exact"


# 6
@pytest.mark.slow
def test_smoke_training(smoke_run):
    with criterion("smoke training") as d:
        cfg, reports, elapsed = smoke_run
        assert len(list((ROOT / "corpus" / "smoke").glob("*.png"))) <= 100
        assert cfg.side == 128
        parts = []
        for s in STAGES:
            assert (cfg.checkpoint_dir / f"{s}.pt").exists()
            lead, trail, n = _curve_means(Path(cfg.output_root) / "logs" / f"{s}.jsonl")
            assert n == 300
            assert trail < lead, (s, lead, trail)
            parts.append(f"{s} {lead:.3f}->{trail:.3f}")
        assert elapsed <= 30 * 60
        d["msg"] = "; ".join(parts) + f"; {elapsed / 60:.1f} min"


@pytest.mark.slow
def test_smoke_edge_bce_improves(smoke_run):
    # masked-region BCE of predicted edges against Canny ground truth, trained vs initial weights
    cfg, _, _ = smoke_run
    data = stack_samples(load_split(cfg.data_dir / "train"), cfg.canny)
    hole = data.mask == 0
    scores = {}
    for name, bundle in (("init", ModelBundle.create(cfg.networks, cfg.seed)),
                         ("trained", load_checkpoint(cfg.checkpoint_dir / "edge.pt"))):
        g = bundle.edge_generator.eval()
        with torch.no_grad():
            pred = g(data.gray * data.mask, data.known_edges, data.mask).clamp(1e-6, 1 - 1e-6)
        scores[name] = float(F.binary_cross_entropy(pred[hole], data.edges[hole]))
    assert scores["trained"] < scores["init"], scores


# 7
@pytest.mark.slow
def test_overfit_single_image():
    with criterion("overfit sanity") as d:
        torch.manual_seed(0)
        sample = [make_sample("one", landscape(3, 64), 0.25)]
        lc = LossConfig(lambda_sem=0.0, lambda_adv=0.0, lambda_fm=0.0)
        cfg = StageConfig("inpaint", iterations=500, batch_size=1, loss_config=lc)
        _, report = train_stage(cfg, sample, ModelBundle.create(NetworkConfig(), seed=0))
        l1 = report.curves["l1"]
        first = next((i + 1 for i, v in enumerate(l1) if v < 0.05), None)
        assert first is not None and first <= 500
        assert np.mean(l1[-10:]) < 0.05
        d["msg"] = f"L1 {l1[0]:.3f} -> {np.mean(l1[-10:]):.4f}; first below 0.05 at iteration {first}"


# 8
@pytest.mark.slow
def test_ablation_harness(smoke_run, tmp_path_factory, capsys):
    with criterion("ablation harness") as d:
        cfg, reports, _ = smoke_run
        out = tmp_path_factory.mktemp("smoke_no_sem")
        cfg0 = load_config(ROOT / "configs" / "smoke_no_sem.yaml", env={"EDGEOUTPAINT_OUTPUT_ROOT": str(out)})
        assert cfg0.fingerprint() == cfg.fingerprint()
        cli.cmd_prepare(cfg0)
        # both runs share the edge stage; only the semantic term differs downstream
        cfg0.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        shutil.copy(cfg.checkpoint_dir / "edge.pt", cfg0.checkpoint_dir / "edge.pt")
        cli.cmd_train(cfg0, "all")
        assert load_checkpoint(cfg0.checkpoint_dir / "joint.pt").meta["lambda_sem"] == 0.0
        assert reports["inpaint"].lambda_sem > 0

        capsys.readouterr()
        reps, table = cli.cmd_evaluate(cfg, [cfg.checkpoint_dir / "joint.pt", cfg0.checkpoint_dir / "joint.pt"])
        printed = capsys.readouterr().out
        lines = printed.splitlines()
        assert lines[0].split() == ["PSNR", "SSIM", "MAE"]
        assert lines[1].startswith("Model without L_sEM") and lines[2].startswith("Model with L_sEM")
        assert lines[3] == "* best value in column" and len(lines) == 4
        for line in lines[1:3]:
            assert re.fullmatch(r"Model with(out)? L_sEM\s+(\s+\d+\.\d{3}\*? ?){3}", line), line
        assert len(list((Path(cfg.output_root) / "eval").glob("metrics_*.json"))) == 2

        stub = ablation_table(MetricsReport.from_aggregates("Model without L_sEM", 22.702, 0.890, 0.043),
                              MetricsReport.from_aggregates("Model with L_sEM", 23.127, 0.894, 0.040))
        s = stub["text"].splitlines()
        assert s[1].split()[-3:] == ["22.702", "0.890", "0.043"]
        assert s[2].split()[-3:] == ["23.127*", "0.894*", "0.040*"]
        d["msg"] = " | ".join(l.strip() for l in lines[1:3])


# 9
def _tiny_config(path, corpus, out):
    import yaml
    stage = {"iterations": 3, "batch_size": 2, "checkpoint_every": 2}
    path.write_text(yaml.safe_dump({
        "data": {"root": str(corpus), "side": 32}, "output_root": str(out),
        "networks": {"generator_channels": 8, "residual_blocks": 1, "discriminator_channels": 8,
                     "embedder_channels": [8, 16], "embedder_input": 32},
        "stages": {s: dict(stage) for s in STAGES}}))
    return path


def test_determinism(tmp_path, corpus_dir):
    with criterion("determinism") as d:
        curves, outputs = [], []
        image = landscape(99, 32)
        mask = make_right_mask(32, 32, 0.25)
        for run in ("a", "b"):
            cfg = load_config(_tiny_config(tmp_path / f"{run}.yaml", corpus_dir, tmp_path / run))
            cli.cmd_prepare(cfg)
            reports = cli.cmd_train(cfg, "all")
            curves.append({s: reports[s].curves for s in STAGES})
            outputs.append(outpaint(image, mask, load_checkpoint(cfg.checkpoint_dir / "joint.pt")))
        assert curves[0] == curves[1]
        assert np.array_equal(outputs[0], outputs[1])
        n = sum(len(v) for s in STAGES for v in curves[0][s].values())
        d["msg"] = f"{n} logged loss values and the outpainted image identical across runs"


# 10
def test_shape_contracts():
    with criterion("shape contracts") as d:
        emb = SemanticEmbedder()
        rng = np.random.default_rng(3)
        for side in (8, 16, 32, 64, 100, 128, 256):
            e = semantic_embedding(emb, rng.random((side, side, 3)).astype(np.float32))
            assert e.shape == (512,)
        torch.manual_seed(0)
        eg = EdgeGenerator(GeneratorConfig(8, 1, 2, 3, 1)).eval()
        ig = InpaintGenerator(GeneratorConfig(8, 1, 2, 5, 3)).eval()
        for side in (16, 32, 64, 128):
            m = torch.ones(1, 1, side, side)
            with torch.no_grad():
                assert eg(torch.rand(1, 1, side, side), torch.zeros(1, 1, side, side), m).shape[-2:] == (side, side)
                assert ig(torch.rand(1, 3, side, side), torch.zeros(1, 1, side, side), m).shape[-2:] == (side, side)
        for _ in range(1000):
            w = int(rng.integers(1, 512))
            r = float(rng.uniform(1e-3, 1 - 1e-3))
            mask = make_right_mask(2, w, r)
            assert int((mask == 0).all(axis=0).sum()) == math.floor(r * w)
        d["msg"] = "embeddings 512 at 7 sizes; generators shape-preserving; 1000-case mask sweep"
