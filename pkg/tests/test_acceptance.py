"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s`.  The overfit smoke test and
the reproducibility check drive the installed CLI in single-threaded
subprocesses; everything else runs in-process.
"""

import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

import mmpcqa.network as net
from mmpcqa import diffcore as dc
from mmpcqa import verify
from mmpcqa.clouds import fps, knn, normalize, patch_up, ColoredPointCloud
from mmpcqa.evalkit import PredictionSet, correlation_metrics, logistic_fit
from mmpcqa.harness import ablate
from mmpcqa.harness.config import (
    OptimConfig, RenderSettings, RunConfig, SeedConfig,
)
from mmpcqa.network import ModelConfig
from mmpcqa.objective import rank_loss
from mmpcqa.synthdata import build_dataset


def _report(criterion, detail):
    print(f"\n[criterion {criterion}] PASS: {detail}")


def _single_thread_env():
    env = dict(os.environ)
    env.update({"OPENBLAS_NUM_THREADS": "1", "OMP_NUM_THREADS": "1",
                "MKL_NUM_THREADS": "1", "NUMEXPR_NUM_THREADS": "1"})
    return env


def _cli(args, cwd):
    proc = subprocess.run([sys.executable, "-m", "mmpcqa"] + args,
                          cwd=cwd, env=_single_thread_env(),
                          capture_output=True, text=True)
    if proc.returncode != 0:
        raise AssertionError(f"CLI {' '.join(args)} failed "
                             f"({proc.returncode}):\n{proc.stdout}\n{proc.stderr}")
    return proc.stdout


SMOKE_MODEL = dict(n_s=256, n_p=6, n_i=4, point_hidden=(32, 64), c_p=64,
                   image_stages=(8, 16, 32, 64), c_prime=64, heads=2,
                   ffn_dim=256, head_hidden=128)

TINY_MODEL = dict(n_s=64, n_p=3, n_i=2, point_hidden=(16, 32), c_p=32,
                  image_stages=(4, 8, 16), c_prime=16, heads=2, ffn_dim=32,
                  head_hidden=16)


def tiny_config(manifest, epochs=2):
    return RunConfig(manifest=str(manifest), model=ModelConfig(**TINY_MODEL),
                     optim=OptimConfig(lr=1e-3, epochs=epochs, batch_size=4),
                     render=RenderSettings(width=64, height=64, crop=48))


# --------------------------------------------------------------------------
def test_criterion_1_gradient_suite():
    t0 = time.perf_counter()
    results = verify.run_suite(seed=0)
    elapsed = time.perf_counter() - t0
    for r in results:
        assert r.passed, f"{r.name}: {r.max_error:.3e} > {r.tolerance:g}"
    op_names = {r.name for r in results}
    for required in ("matmul", "add", "concat", "relu", "softmax", "conv2d",
                     "max_pool_rows", "mean_pool_rows",
                     "global_average_pool_2d", "layer_norm", "scale_by",
                     "network.inputs", "loss.mse", "loss.rank"):
        assert required in op_names
    assert elapsed < 120, f"gradient suite took {elapsed:.0f}s (limit 120s)"
    _report(1, f"{len(results)} gradient checks green in {elapsed:.1f}s")


# --------------------------------------------------------------------------
def test_criterion_2_oracle_equivalence():
    rng = np.random.default_rng(0)

    # fps / knn vs brute force, exact, on clouds up to N = 512
    def fps_oracle(points, k, start):
        chosen = [start]
        for _ in range(1, k):
            best_i, best_v = None, -1.0
            for i in range(len(points)):
                dmin = min(float(np.sum((points[i] - points[j]) ** 2))
                           for j in chosen)
                if dmin > best_v:
                    best_v, best_i = dmin, i
            chosen.append(best_i)
        return np.array(chosen)

    def knn_oracle(points, anchor, k):
        pairs = sorted((float(np.sum((points[i] - points[anchor]) ** 2)), i)
                       for i in range(len(points)))
        return np.array([i for _, i in pairs[:k]])

    for n in (16, 100, 512):
        geo = rng.standard_normal((n, 3))
        if n == 100:  # exercise exact ties
            geo = np.repeat(geo[:50], 2, axis=0)
        cloud = normalize(ColoredPointCloud(geometry=geo,
                                            color=np.zeros((n, 3))))
        k = min(n, 12)
        start = int(rng.integers(n))
        assert np.array_equal(fps(cloud, k, start),
                              fps_oracle(cloud.geometry, k, start))
        anchor = int(rng.integers(n))
        assert np.array_equal(knn(cloud, anchor, k),
                              knn_oracle(cloud.geometry, anchor, k))

    # rank loss bit-identical with the double-loop definition
    def rank_oracle(q, y):
        n = len(q)
        total = 0.0
        for i in range(n):
            for j in range(n):
                e = 1.0 if q[i] >= q[j] else -1.0
                total += max(0.0, abs(q[i] - q[j]) - e * (y[i] - y[j]))
        return total / (n * n)

    for _ in range(100):
        n = int(rng.integers(1, 16))
        q, y = rng.standard_normal(n), rng.standard_normal(n)
        assert rank_loss(q, y)[0] == rank_oracle(q, y)

    # correlations vs rank-table / O(n^2) oracles on 100 vectors incl. ties
    def franks(v):
        order = np.argsort(v, kind="stable")
        ranks = np.empty(len(v))
        i = 0
        while i < len(v):
            j = i
            while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
                j += 1
            ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
            i = j + 1
        return ranks

    def pearson(a, b):
        ac, bc = a - a.mean(), b - b.mean()
        return float((ac * bc).sum() / np.sqrt((ac * ac).sum() * (bc * bc).sum()))

    def taub(x, y):
        n = len(x)
        conc = disc = tx = ty = 0
        for i in range(n):
            for j in range(i + 1, n):
                dx, dy = x[i] - x[j], y[i] - y[j]
                if dx == 0 and dy == 0:
                    tx += 1
                    ty += 1
                elif dx == 0:
                    tx += 1
                elif dy == 0:
                    ty += 1
                elif dx * dy > 0:
                    conc += 1
                else:
                    disc += 1
        n0 = n * (n - 1) / 2
        return (conc - disc) / np.sqrt((n0 - tx) * (n0 - ty))

    checked = 0
    for trial in range(100):
        n = int(rng.integers(5, 40))
        x, y = rng.standard_normal(n), rng.standard_normal(n)
        if trial % 2:
            x, y = np.round(x * 2) / 2, np.round(y * 2) / 2
            if np.std(x) == 0 or np.std(y) == 0:
                continue
        m = correlation_metrics(PredictionSet(predicted=x, mos=y))
        assert abs(m.srcc - pearson(franks(x), franks(y))) <= 1e-9
        assert abs(m.krcc - taub(x, y)) <= 1e-9
        _, mapped = logistic_fit(PredictionSet(predicted=x, mos=y))
        assert abs(m.plcc - pearson(mapped, y)) <= 1e-9
        assert abs(m.rmse - float(np.sqrt(np.mean((mapped - y) ** 2)))) <= 1e-9
        checked += 1
    assert checked >= 90
    _report(2, f"fps/knn exact, rank loss bit-identical, "
               f"{checked} correlation vectors within 1e-9")


# --------------------------------------------------------------------------
def test_criterion_3_structural_formula_invariants():
    rng = np.random.default_rng(1)
    # patch-up sub-model count: floor(N / N_s) + 1, always covering N
    for n, n_s in ((5000, 2048), (2048, 2048), (4096, 256), (999, 128)):
        geo = rng.standard_normal((n, 3))
        cloud = normalize(ColoredPointCloud(geometry=geo, color=np.zeros((n, 3))))
        subset = patch_up(cloud, n_s)
        assert subset.n_delta == n // n_s + 1
        assert subset.n_delta * n_s > n

    # fused quality feature has exactly 4 * C' entries
    cfg = ModelConfig(**TINY_MODEL)
    store = net.init_model(cfg, seed=0, dtype=np.float64)
    sub = rng.standard_normal((cfg.n_p, cfg.n_s, 3))
    img = rng.standard_normal((cfg.n_i, 3, 16, 16))
    pe = net.encode_pointcloud(dc.tensor(sub), store, cfg)
    ie = net.encode_projections(dc.tensor(img), store, cfg)
    feat = net.fuse_scma(pe, ie, store, cfg)
    assert feat.data.shape == (1, 4 * cfg.c_prime)
    assert ModelConfig().quality_dim == 1024  # default C' = 256

    # image embedding is the ordered concat of stage-wise global averages:
    # zero weights + distinct stage biases make each segment a known constant
    probe = net.init_model(cfg, seed=0, dtype=np.float64)
    marks = (0.25, 0.5, 0.75)
    for k, mark in enumerate(marks):
        probe.entry(f"image.conv{k}.w").value[:] = 0
        probe.entry(f"image.conv{k}.b").value[:] = mark
    emb = net.encode_projections(dc.tensor(np.zeros((2, 3, 16, 16))), probe, cfg)
    offsets = np.cumsum((0,) + cfg.image_stages)
    for k, mark in enumerate(marks):
        segment = emb.per_item.data[:, offsets[k]:offsets[k + 1]]
        assert np.allclose(segment, mark)
    assert len(cfg.image_stages) == 3 and len(ModelConfig().image_stages) == 4
    _report(3, "patch-up count formula, 4C' fusion length and stage-wise "
               "GAP concatenation all hold")


# --------------------------------------------------------------------------
def test_criterion_4_symmetry_invariants():
    rng = np.random.default_rng(2)
    cfg = ModelConfig(**TINY_MODEL)
    store = net.init_model(cfg, seed=3, dtype=np.float32)
    sub = rng.standard_normal((cfg.n_p, cfg.n_s, 3))
    img = rng.standard_normal((cfg.n_i, 3, 16, 16))

    # point permutation inside each sub-model: bit-identical embedding
    shuffled = sub.copy()
    for m in range(sub.shape[0]):
        shuffled[m] = sub[m][rng.permutation(sub.shape[1])]
    a = net.encode_pointcloud(dc.tensor(sub.astype(np.float32)), store, cfg)
    b = net.encode_pointcloud(dc.tensor(shuffled.astype(np.float32)), store, cfg)
    assert np.array_equal(a.per_item.data, b.per_item.data)

    # reordering sub-models / projections moves the score by <= 1e-5
    base = float(net.predict(store, cfg, sub, img).data[0, 0])
    flipped = float(net.predict(store, cfg, sub[::-1].copy(),
                                img[::-1].copy()).data[0, 0])
    assert abs(base - flipped) <= 1e-5

    # attention softmax rows sum to one within 1e-10 (64-bit check mode)
    store64 = net.init_model(cfg, seed=3, dtype=np.float64)
    net.attention_probe = []
    try:
        pe = net.encode_pointcloud(dc.tensor(sub), store64, cfg)
        ie = net.encode_projections(dc.tensor(img), store64, cfg)
        net.fuse_scma(pe, ie, store64, cfg)
        assert net.attention_probe
        for attn in net.attention_probe:
            assert np.abs(attn.sum(axis=-1) - 1.0).max() <= 1e-10
    finally:
        net.attention_probe = None
    _report(4, "permutation exactness, reorder tolerance and softmax row sums hold")


# --------------------------------------------------------------------------
def test_criterion_5_overfit_smoke(tmp_path):
    t0 = time.perf_counter()
    ds = tmp_path / "ds"
    _cli(["synth", "--out", str(ds), "--contents", "4",
          "--types", "downsample,geom_noise,color_noise,color_quantize",
          "--levels", "3", "--points", "4096", "--seed", "0"], cwd=tmp_path)

    config = RunConfig(
        manifest=str(ds / "manifest.csv"),
        model=ModelConfig(**SMOKE_MODEL),
        optim=OptimConfig(lr=1e-3, epochs=200, batch_size=8),
        render=RenderSettings(width=128, height=128, crop=64, splat_radius=1,
                              background=(0.0, 0.0, 0.0)),
        seeds=SeedConfig(global_seed=0, resample_per_epoch=False))
    config_path = tmp_path / "smoke.json"
    config_path.write_text(config.to_json())

    run_dir = tmp_path / "run"
    _cli(["train", "--config", str(config_path), "--out", str(run_dir)],
         cwd=tmp_path)
    losses = []
    for line in (run_dir / "log.csv").read_text().splitlines()[1:]:
        losses.append(float(line.split(",")[1]))
    assert len(losses) == 200

    out = _cli(["eval", "--checkpoint", str(run_dir / "final.ckpt"),
                "--config", str(config_path),
                "--out", str(tmp_path / "eval")], cwd=tmp_path)
    report = json.loads((tmp_path / "eval" / "report.json").read_text())
    srcc = report["mean"]["srcc"]
    elapsed = time.perf_counter() - t0

    assert losses[-1] < 0.1 * losses[0], \
        f"final loss {losses[-1]:.3f} not < 10% of initial {losses[0]:.3f}"
    assert srcc >= 0.9, f"train SRCC {srcc:.3f} < 0.9"
    assert elapsed <= 600, f"smoke test took {elapsed:.0f}s (limit 600s)"
    _report(5, f"train SRCC {srcc:.3f}, loss {losses[0]:.1f} -> {losses[-1]:.2f} "
               f"({100 * losses[-1] / losses[0]:.1f}%), {elapsed:.0f}s single-core")


# --------------------------------------------------------------------------
def test_criterion_6_protocol_fidelity(tmp_path):
    ds = tmp_path / "ds9"
    _cli(["synth", "--out", str(ds), "--contents", "9", "--types",
          "downsample", "--levels", "2", "--points", "400", "--seed", "1"],
         cwd=tmp_path)
    config_path = tmp_path / "xval.json"
    config_path.write_text(tiny_config(ds / "manifest.csv").to_json())
    out_dir = tmp_path / "xv"
    _cli(["xval", "--config", str(config_path), "--k", "9",
          "--out", str(out_dir)], cwd=tmp_path)

    report = json.loads((out_dir / "report.json").read_text())
    assert len(report["folds"]) == 9
    tested = []
    for i in range(9):
        log = (out_dir / f"fold{i}" / "access.log").read_text().strip()
        train_contents = set()
        eval_contents = set()
        for line in log.splitlines():
            phase, path = line.split(" ", 1)
            cid = Path(path).name.split("_")[0]
            (train_contents if phase == "train" else eval_contents).add(cid)
        assert len(eval_contents) == 1          # one content per test fold
        assert not train_contents & eval_contents  # fold discipline
        assert len(train_contents) == 8
        tested.extend(eval_contents)
    assert sorted(tested) == [f"content{i:02d}" for i in range(9)]
    _report(6, "9 folds, each content tested exactly once, access log clean")


# --------------------------------------------------------------------------
def test_criterion_7_logistic_mapping():
    rng = np.random.default_rng(3)
    worst = -np.inf
    for _ in range(50):
        n = int(rng.integers(10, 80))
        x = np.sort(rng.standard_normal(n) * rng.uniform(0.5, 3.0))
        y = (np.tanh(rng.uniform(0.5, 3.0) * x) * rng.uniform(1.0, 5.0)
             + rng.uniform(-2.0, 6.0) + rng.standard_normal(n) * 0.03)
        fit, _ = logistic_fit(PredictionSet(predicted=x, mos=y))
        a = np.stack([x, np.ones_like(x)], axis=1)
        coef = np.linalg.lstsq(a, y, rcond=None)[0]
        affine_rmse = float(np.sqrt(np.mean((a @ coef - y) ** 2)))
        assert fit.rmse <= affine_rmse + 1e-6
        worst = max(worst, fit.rmse - affine_rmse)

    x = np.sort(rng.uniform(1, 9, 60))
    fit, _ = logistic_fit(PredictionSet(predicted=x, mos=x.copy()))
    assert fit.rmse <= 1e-9
    _report(7, f"50 monotone fits beat affine LS (worst margin {worst:.2e}), "
               f"identity RMSE {fit.rmse:.1e}")


# --------------------------------------------------------------------------
def test_criterion_8_ablation_structure(tmp_path):
    manifest = build_dataset(3, ["downsample", "color_noise"], 2, seed=2,
                             out_dir=tmp_path / "ds", n_points=600)
    cfg = tiny_config(tmp_path / "ds" / "manifest.csv", epochs=1)

    rows = ablate(cfg, "modality", tmp_path / "ab_mod", manifest=manifest)
    assert [r["variant"] for r in rows] == ["p", "i", "p+i", "full"]
    csv_text = (tmp_path / "ab_mod" / "ablation_modality.csv").read_text()
    lines = csv_text.strip().splitlines()
    assert lines[0] == "variant,srcc,krcc,plcc,rmse"
    assert len(lines) == 5
    for line in lines[1:]:
        fields = line.split(",")
        assert len(fields) == 5
        for value in fields[1:]:
            float(value)  # well-formed numbers

    rows = ablate(cfg, "patching", tmp_path / "ab_patch", manifest=manifest)
    assert [r["variant"] for r in rows] == ["patch_up", "fps_groups"]
    assert (tmp_path / "ab_patch" / "ablation_patching.csv").exists()
    _report(8, "modality study emits 4 variants, patching study 2; CSVs well-formed")


# --------------------------------------------------------------------------
def test_criterion_9_reproducibility(tmp_path):
    ds = tmp_path / "ds"
    _cli(["synth", "--out", str(ds), "--contents", "3", "--types",
          "downsample,color_noise", "--levels", "2", "--points", "500",
          "--seed", "4"], cwd=tmp_path)
    config_path = tmp_path / "repro.json"
    config_path.write_text(tiny_config(ds / "manifest.csv", epochs=3).to_json())

    for tag in ("a", "b"):
        _cli(["xval", "--config", str(config_path), "--k", "3",
              "--out", str(tmp_path / f"xv_{tag}")], cwd=tmp_path)
    a, b = tmp_path / "xv_a", tmp_path / "xv_b"
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    assert (a / "report.csv").read_bytes() == (b / "report.csv").read_bytes()
    for i in range(3):
        for name in ("final.ckpt", "best.ckpt", "config.json", "log.csv",
                     "report.json"):
            assert (a / f"fold{i}" / name).read_bytes() == \
                (b / f"fold{i}" / name).read_bytes(), f"fold{i}/{name}"

    # checkpoint round-trip: loading the saved bytes gives the exact scores
    from mmpcqa.diffcore import checkpoint
    from mmpcqa.harness.training import evaluate
    from mmpcqa.synthdata import DatasetManifest
    cfg = RunConfig.from_json(config_path.read_text())
    manifest = DatasetManifest.load(cfg.manifest)
    store = checkpoint.load(a / "fold0" / "final.ckpt")
    mem = evaluate(store, cfg, ["content00"], manifest=manifest)
    disk = evaluate(a / "fold0" / "final.ckpt", cfg, ["content00"],
                    manifest=manifest)
    assert np.array_equal(mem.predicted, disk.predicted)
    _report(9, "two single-threaded runs byte-identical; checkpoint "
               "round-trip evaluation exact")
