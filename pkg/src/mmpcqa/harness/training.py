"""Training loop, deterministic evaluation and the k-fold experiment runner."""

import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import diffcore as dc
from .. import network
from ..clouds import ColoredPointCloud, normalize, patch_up, read_ply, select_submodels
from ..diffcore import checkpoint
from ..evalkit import EvalReport, FoldPlan, PredictionSet, evaluate_run, make_folds
from ..objective import LossWeights, total_loss
from ..render import render_views
from ..synthdata import DatasetManifest
from .config import (
    TAG_EVAL, TAG_FOLDS, TAG_INIT, TAG_SHUFFLE, TAG_SUBMODELS, TAG_VIEWS,
    RunConfig, derive_seed, item_key,
)


@dataclass
class LoadedItem:
    entry: object                     # ManifestEntry
    colored: ColoredPointCloud        # normalized geometry, original color
    norm: object                      # NormalizedCloud
    subset: object = None             # SubModelSet (patch_up sampling)
    fps_groups: np.ndarray = None     # (n_p, n_s, 3) (fps_groups sampling)
    key: int = 0


@dataclass
class RunRecord:
    run_id: str
    config: RunConfig
    epoch_losses: list = field(default_factory=list)
    best_epoch: int = -1
    run_dir: str = ""
    report: EvalReport = None
    wall_clock: float = 0.0
    access_log: list = field(default_factory=list)


def run_id_for(config: RunConfig) -> str:
    return hashlib.sha256(config.to_json().encode()).hexdigest()[:12]


def load_item(entry, config: RunConfig, access_log=None, phase="train") -> LoadedItem:
    if access_log is not None:
        access_log.append(f"{phase} {entry.path}")
    raw = read_ply(entry.path)
    norm = normalize(raw, provenance=entry.path)
    colored = ColoredPointCloud(geometry=norm.geometry, color=raw.color)
    item = LoadedItem(entry=entry, colored=colored, norm=norm,
                      key=item_key(entry.path))
    if config.sampling == "patch_up":
        # pad mode: heavily downsampled stimuli may fall below n_s points
        item.subset = patch_up(norm, config.model.n_s, mode="pad")
    else:
        item.fps_groups = fps_group_submodels(norm, config.model.n_p,
                                              config.model.n_s)
    return item


def fps_group_submodels(norm, n_p: int, n_s: int) -> np.ndarray:
    """Ablation baseline: n_p * n_s globally-FPS-sampled points, split into
    n_p sequential groups (cycled when the cloud is smaller)."""
    from .. import kernels
    want = n_p * n_s
    k = min(norm.n, want)
    idx = kernels.fps(norm.geometry, k, 0)
    if k < want:
        idx = idx[np.arange(want) % k]
    return norm.geometry[idx].reshape(n_p, n_s, 3)


def item_inputs(item: LoadedItem, config: RunConfig, epoch: int):
    """Sub-model coordinates and rendered crops for one item at one epoch."""
    g = config.seeds.global_seed
    e = epoch if config.seeds.resample_per_epoch else 0
    if config.sampling == "patch_up":
        sel_seed = derive_seed(g, TAG_SUBMODELS, e, item.key)
        submodels = select_submodels(item.norm, item.subset, config.model.n_p,
                                     sel_seed,
                                     with_replacement=config.submodel_replacement)
    else:
        submodels = item.fps_groups
    view_seed = derive_seed(g, TAG_VIEWS, e, item.key)
    rc = config.render
    patches = render_views(item.colored, config.model.n_i, view_seed,
                           width=rc.width, height=rc.height, crop=rc.crop,
                           distance=rc.distance, splat_radius=rc.splat_radius,
                           background=rc.background)
    patches = np.stack([p.transpose(2, 0, 1) for p in patches])  # (n_i, 3, h, w)
    return submodels, patches


def eval_item_inputs(item: LoadedItem, config: RunConfig):
    """Fixed-seed variant used for inference; independent of training epochs.

    Under the fixed-per-cloud seed policy each cloud has one canonical set of
    views/sub-models, so inference reuses exactly the draws training saw;
    under per-epoch resampling, inference draws its own fixed eval stream.
    """
    if not config.seeds.resample_per_epoch:
        return item_inputs(item, config, epoch=0)
    g = config.seeds.global_seed
    if config.sampling == "patch_up":
        sel_seed = derive_seed(g, TAG_EVAL, TAG_SUBMODELS, item.key)
        submodels = select_submodels(item.norm, item.subset, config.model.n_p,
                                     sel_seed,
                                     with_replacement=config.submodel_replacement)
    else:
        submodels = item.fps_groups
    view_seed = derive_seed(g, TAG_EVAL, TAG_VIEWS, item.key)
    rc = config.render
    patches = render_views(item.colored, config.model.n_i, view_seed,
                           width=rc.width, height=rc.height, crop=rc.crop,
                           distance=rc.distance, splat_radius=rc.splat_radius,
                           background=rc.background)
    patches = np.stack([p.transpose(2, 0, 1) for p in patches])
    return submodels, patches


def _batch_forward(store, config, items, inputs):
    """Forward all items of a batch on one tape; returns (n,) prediction node."""
    preds = []
    for item, (submodels, patches) in zip(items, inputs):
        out = network.predict(store, config.model, submodels, patches)
        preds.append(dc.reshape(out, (1,)))
    return dc.concat(preds, axis=0)


def train(config: RunConfig, train_contents, run_dir,
          manifest: DatasetManifest = None) -> RunRecord:
    """Train on all manifest entries whose content is in train_contents.

    Per epoch, every item gets freshly selected sub-models and freshly
    rendered view crops (per the seed policy), then batched forward/backward
    and one Adam step per batch.  Saves final and best (lowest epoch loss)
    checkpoints plus config, loss log and file-access log.
    """
    t_start = time.perf_counter()
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    if manifest is None:
        manifest = DatasetManifest.load(config.manifest)
    train_contents = set(train_contents)
    entries = [e for e in manifest.entries if e.content_id in train_contents]
    if not entries:
        raise ValueError("no training entries after content filtering")

    record = RunRecord(run_id=run_id_for(config), config=config,
                       run_dir=str(run_dir))
    items = [load_item(e, config, record.access_log, phase="train")
             for e in entries]
    labels_all = np.array([it.entry.mos for it in items])

    g = config.seeds.global_seed
    store = network.init_model(config.model, seed=derive_seed(g, TAG_INIT))
    weights = LossWeights(lambda_mse=config.loss.lambda_mse,
                          lambda_rank=config.loss.lambda_rank)
    opt = config.optim

    best_loss = np.inf
    best_bytes = checkpoint.save_bytes(store)
    for epoch in range(opt.epochs):
        order = np.random.default_rng(
            derive_seed(g, TAG_SHUFFLE, epoch)).permutation(len(items))
        epoch_loss = 0.0
        for lo in range(0, len(items), opt.batch_size):
            batch_idx = order[lo:lo + opt.batch_size]
            batch_items = [items[i] for i in batch_idx]
            inputs = [item_inputs(it, config, epoch) for it in batch_items]
            store.begin_tape()
            preds = _batch_forward(store, config, batch_items, inputs)
            q = preds.data.astype(np.float64)
            y = labels_all[batch_idx]
            loss, grad = total_loss(q, y, weights)
            if not np.isfinite(loss):
                paths = [it.entry.path for it in batch_items]
                raise RuntimeError(f"non-finite loss {loss!r} at epoch {epoch} "
                                   f"on batch {paths}")
            preds.backward(grad.astype(preds.dtype))
            store.end_tape()
            dc.adam_step(store, lr=opt.lr, betas=(opt.beta1, opt.beta2),
                         eps=opt.eps, weight_decay=opt.weight_decay)
            epoch_loss += float(loss) * len(batch_idx)
        epoch_loss /= len(items)
        record.epoch_losses.append(float(epoch_loss))
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            record.best_epoch = epoch
            best_bytes = checkpoint.save_bytes(store)

    (run_dir / "config.json").write_text(config.to_json())
    with open(run_dir / "log.csv", "w") as fh:
        fh.write("epoch,mean_loss\n")
        for i, v in enumerate(record.epoch_losses):
            fh.write(f"{i},{v!r}\n")
    checkpoint.save(store, run_dir / "final.ckpt")
    (run_dir / "best.ckpt").write_bytes(best_bytes)
    (run_dir / "access.log").write_text("\n".join(record.access_log) + "\n")
    record.wall_clock = time.perf_counter() - t_start
    (run_dir / "meta.json").write_text(
        f'{{"run_id": "{record.run_id}", "wall_clock_sec": {record.wall_clock:.3f}}}\n')
    return record


def evaluate(store_or_path, config: RunConfig, test_contents,
             manifest: DatasetManifest = None, access_log=None) -> PredictionSet:
    """Deterministic inference over the test contents of a manifest."""
    if isinstance(store_or_path, (str, Path)):
        if not Path(store_or_path).exists():
            raise FileNotFoundError(f"checkpoint not found: {store_or_path}")
        store = checkpoint.load(store_or_path)
    else:
        store = store_or_path
    expected = [name for name, _, _ in network.param_specs(config.model)]
    missing = [n for n in expected if n not in store]
    extra = [n for n in store.names() if n not in expected]
    if missing or extra:
        raise ValueError(f"checkpoint does not match the model config; "
                         f"missing={missing} unexpected={extra}")
    for name, shape, _ in network.param_specs(config.model):
        if store.value(name).shape != tuple(shape):
            raise ValueError(f"checkpoint tensor {name} has shape "
                             f"{store.value(name).shape}, expected {tuple(shape)}")

    if manifest is None:
        manifest = DatasetManifest.load(config.manifest)
    test_contents = set(test_contents)
    entries = [e for e in manifest.entries if e.content_id in test_contents]
    if not entries:
        raise ValueError("no evaluation entries after content filtering")
    preds = []
    for entry in entries:
        item = load_item(entry, config, access_log, phase="eval")
        submodels, patches = eval_item_inputs(item, config)
        store.begin_tape()
        out = network.predict(store, config.model, submodels, patches)
        preds.append(float(out.data[0, 0]))
    return PredictionSet(
        predicted=np.array(preds),
        mos=np.array([e.mos for e in entries]),
        content_ids=[e.content_id for e in entries],
        distortions=[f"{e.distortion}:{e.level}" for e in entries])


def fold_plan(config: RunConfig, k: int,
              manifest: DatasetManifest = None) -> FoldPlan:
    if manifest is None:
        manifest = DatasetManifest.load(config.manifest)
    contents = manifest.content_ids()
    return make_folds(contents, k,
                      seed=derive_seed(config.seeds.global_seed, TAG_FOLDS))


def cross_validate(config: RunConfig, k: int, out_dir,
                   manifest: DatasetManifest = None):
    """Full k-fold protocol: train each fold, evaluate on its test contents,
    average the per-fold metrics."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if manifest is None:
        manifest = DatasetManifest.load(config.manifest)
    plan = fold_plan(config, k, manifest)
    fold_sets = []
    records = []
    for i in range(plan.k):
        fold_dir = out_dir / f"fold{i}"
        record = train(config, plan.train_contents(i), fold_dir,
                       manifest=manifest)
        eval_log = []
        ps = evaluate(fold_dir / "final.ckpt", config, plan.folds[i],
                      manifest=manifest, access_log=eval_log)
        with open(fold_dir / "access.log", "a") as fh:
            fh.write("\n".join(eval_log) + "\n")
        report = evaluate_run([ps])
        (fold_dir / "report.json").write_text(report.to_json())
        (fold_dir / "report.csv").write_text(report.to_csv())
        record.report = report
        fold_sets.append(ps)
        records.append(record)
    report = evaluate_run(fold_sets)
    (out_dir / "report.json").write_text(report.to_json())
    (out_dir / "report.csv").write_text(report.to_csv())
    return report, records, plan
