import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from mmpcqa import diffcore as dc
from mmpcqa import network
from mmpcqa.diffcore import checkpoint
from mmpcqa.harness import ablate, cross_validate, evaluate, train
from mmpcqa.harness.cli import main as cli_main
from mmpcqa.harness.config import OptimConfig, RenderSettings, RunConfig
from mmpcqa.harness.training import (
    _batch_forward, item_inputs, load_item, run_id_for,
)
from mmpcqa.network import ModelConfig
from mmpcqa.objective import total_loss, LossWeights
from mmpcqa.synthdata import ManifestEntry, build_dataset


TINY_MODEL = dict(n_s=64, n_p=3, n_i=2, point_hidden=(16, 32), c_p=32,
                  image_stages=(4, 8, 16), c_prime=16, heads=2, ffn_dim=32,
                  head_hidden=16)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    manifest = build_dataset(3, ["downsample", "color_noise"], 2, seed=0,
                             out_dir=out, n_points=600)
    return manifest, out


def tiny_config(manifest_path, epochs=2, **overrides):
    cfg = RunConfig(
        manifest=str(manifest_path),
        model=ModelConfig(**TINY_MODEL),
        optim=OptimConfig(lr=1e-3, epochs=epochs, batch_size=4),
        render=RenderSettings(width=64, height=64, crop=48))
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


class TestConfig:
    def test_defaults_match_training_recipe(self):
        cfg = RunConfig()
        assert cfg.optim.lr == 5e-5
        assert cfg.optim.weight_decay == 1e-4
        assert cfg.optim.epochs == 50
        assert cfg.loss.lambda_mse == 1.0 and cfg.loss.lambda_rank == 1.0
        assert cfg.model.n_s == 2048
        assert cfg.model.n_p == 6 and cfg.model.n_i == 4
        assert cfg.model.heads == 8 and cfg.model.ffn_dim == 2048
        assert cfg.render.crop == 224
        assert cfg.seeds.resample_per_epoch

    def test_json_roundtrip(self):
        cfg = RunConfig(manifest="m.csv", model=ModelConfig(**TINY_MODEL))
        back = RunConfig.from_json(cfg.to_json())
        assert back == cfg
        assert back.to_json() == cfg.to_json()

    def test_validation(self):
        with pytest.raises(ValueError):
            RunConfig(sampling="nonsense")


class TestTrain:
    def test_deterministic_checkpoints(self, dataset, tmp_path):
        manifest, _ = dataset
        cfg = tiny_config(manifest_path="")
        contents = ["content00", "content01"]
        train(cfg, contents, tmp_path / "a", manifest=manifest)
        train(cfg, contents, tmp_path / "b", manifest=manifest)
        for name in ("final.ckpt", "best.ckpt", "log.csv", "config.json"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes(), name

    def test_loss_decreases_on_tiny_overfit(self, dataset, tmp_path):
        manifest, _ = dataset
        cfg = tiny_config("", epochs=6)
        record = train(cfg, manifest.content_ids(), tmp_path / "run",
                       manifest=manifest)
        assert record.epoch_losses[-1] < record.epoch_losses[0]
        assert record.best_epoch >= 0

    def test_zero_gradient_fixed_point(self, dataset):
        # all-equal zero labels and a zeroed output layer: every gradient
        # vanishes, so the loss stays constant across steps
        manifest, out = dataset
        cfg = tiny_config("")
        cfg.loss.lambda_rank = 0.0
        entries = [replace_mos(e) for e in manifest.entries[:4]]
        items = [load_item(e, cfg) for e in entries]
        store = network.init_model(cfg.model, seed=0)
        store.entry("head.fc1.w").value[:] = 0
        store.entry("head.fc1.b").value[:] = 0
        losses = []
        for step in range(3):
            inputs = [item_inputs(it, cfg, epoch=0) for it in items]
            store.begin_tape()
            preds = _batch_forward(store, cfg, items, inputs)
            loss, grad = total_loss(preds.data.astype(np.float64),
                                    np.zeros(len(items)),
                                    LossWeights(1.0, 0.0))
            preds.backward(grad.astype(preds.dtype))
            store.end_tape()
            dc.adam_step(store, lr=1e-3)
            losses.append(loss)
        assert losses == [0.0, 0.0, 0.0]

    def test_run_dir_layout(self, dataset, tmp_path):
        manifest, _ = dataset
        cfg = tiny_config("")
        train(cfg, ["content00", "content01"], tmp_path / "run",
              manifest=manifest)
        for name in ("config.json", "log.csv", "best.ckpt", "final.ckpt",
                     "access.log", "meta.json"):
            assert (tmp_path / "run" / name).exists(), name
        stored = RunConfig.from_json((tmp_path / "run" / "config.json").read_text())
        assert stored.model == cfg.model

    def test_no_entries_rejected(self, dataset, tmp_path):
        manifest, _ = dataset
        cfg = tiny_config("")
        with pytest.raises(ValueError):
            train(cfg, ["nonexistent"], tmp_path / "x", manifest=manifest)


def replace_mos(entry, mos=0.0):
    return ManifestEntry(path=entry.path, content_id=entry.content_id,
                         distortion=entry.distortion, level=entry.level,
                         mos=mos)


class TestEvaluate:
    def test_checkpoint_roundtrip_exact(self, dataset, tmp_path):
        manifest, _ = dataset
        cfg = tiny_config("")
        record = train(cfg, ["content00", "content01"], tmp_path / "run",
                       manifest=manifest)
        store = checkpoint.load(tmp_path / "run" / "final.ckpt")
        from_memory = evaluate(store, cfg, ["content02"], manifest=manifest)
        from_disk = evaluate(tmp_path / "run" / "final.ckpt", cfg,
                             ["content02"], manifest=manifest)
        assert np.array_equal(from_memory.predicted, from_disk.predicted)

    def test_eval_deterministic(self, dataset, tmp_path):
        manifest, _ = dataset
        cfg = tiny_config("")
        train(cfg, ["content00"], tmp_path / "run", manifest=manifest)
        a = evaluate(tmp_path / "run" / "final.ckpt", cfg, ["content02"],
                     manifest=manifest)
        b = evaluate(tmp_path / "run" / "final.ckpt", cfg, ["content02"],
                     manifest=manifest)
        assert np.array_equal(a.predicted, b.predicted)

    def test_missing_checkpoint(self, dataset):
        manifest, _ = dataset
        cfg = tiny_config("")
        with pytest.raises(FileNotFoundError):
            evaluate("/nonexistent.ckpt", cfg, ["content00"], manifest=manifest)

    def test_config_mismatch_lists_tensors(self, dataset, tmp_path):
        manifest, _ = dataset
        cfg = tiny_config("")
        train(cfg, ["content00"], tmp_path / "run", manifest=manifest)
        other = tiny_config("")
        other.model = ModelConfig(**{**TINY_MODEL, "c_prime": 32})
        with pytest.raises(ValueError, match="fuse"):
            evaluate(tmp_path / "run" / "final.ckpt", other, ["content02"],
                     manifest=manifest)


class TestXval:
    def test_fold_discipline_and_report(self, dataset, tmp_path):
        manifest, _ = dataset
        cfg = tiny_config("")
        report, records, plan = cross_validate(cfg, k=3, out_dir=tmp_path / "xv",
                                               manifest=manifest)
        assert plan.k == 3
        assert len(report.fold_metrics) == 3
        # every content is tested exactly once
        tested = [c for fold in plan.folds for c in fold]
        assert sorted(tested) == sorted(manifest.content_ids())
        # fold discipline via the access log: no test content during training
        for i in range(3):
            log = (tmp_path / "xv" / f"fold{i}" / "access.log").read_text()
            test_contents = set(plan.folds[i])
            for line in log.splitlines():
                phase, path = line.split(" ", 1)
                cid = Path(path).name.split("_")[0]
                if phase == "train":
                    assert cid not in test_contents
        assert (tmp_path / "xv" / "report.json").exists()
        assert (tmp_path / "xv" / "report.csv").exists()

    def test_fps_groups_sampling(self, dataset, tmp_path):
        manifest, _ = dataset
        cfg = tiny_config("", sampling="fps_groups")
        record = train(cfg, ["content00"], tmp_path / "run", manifest=manifest)
        assert len(record.epoch_losses) == cfg.optim.epochs


class TestSeedPolicy:
    def test_resampling_changes_inputs_across_epochs(self, dataset):
        from mmpcqa.harness.training import eval_item_inputs, item_inputs, load_item
        manifest, _ = dataset
        cfg = tiny_config("")
        item = load_item(manifest.entries[0], cfg)
        _, p0 = item_inputs(item, cfg, epoch=0)
        _, p1 = item_inputs(item, cfg, epoch=1)
        assert not np.array_equal(p0, p1)

    def test_fixed_policy_pins_inputs_and_eval_reuses_them(self, dataset):
        from mmpcqa.harness.training import eval_item_inputs, item_inputs, load_item
        manifest, _ = dataset
        cfg = tiny_config("")
        cfg.seeds.resample_per_epoch = False
        item = load_item(manifest.entries[0], cfg)
        s0, p0 = item_inputs(item, cfg, epoch=0)
        s7, p7 = item_inputs(item, cfg, epoch=7)
        assert np.array_equal(p0, p7) and np.array_equal(s0, s7)
        se, pe = eval_item_inputs(item, cfg)
        assert np.array_equal(p0, pe) and np.array_equal(s0, se)

    def test_resampling_eval_uses_own_stream(self, dataset):
        from mmpcqa.harness.training import eval_item_inputs, item_inputs, load_item
        manifest, _ = dataset
        cfg = tiny_config("")
        item = load_item(manifest.entries[0], cfg)
        _, p0 = item_inputs(item, cfg, epoch=0)
        _, pe = eval_item_inputs(item, cfg)
        assert not np.array_equal(p0, pe)


class TestAblate:
    def test_modality_study_rows(self, dataset, tmp_path):
        manifest, _ = dataset
        cfg = tiny_config("", epochs=1)
        rows = ablate(cfg, "modality", tmp_path / "ab", manifest=manifest)
        assert [r["variant"] for r in rows] == ["p", "i", "p+i", "full"]
        text = (tmp_path / "ab" / "ablation_modality.csv").read_text()
        assert len(text.strip().splitlines()) == 5

    def test_patching_study_rows(self, dataset, tmp_path):
        manifest, _ = dataset
        cfg = tiny_config("", epochs=1)
        rows = ablate(cfg, "patching", tmp_path / "ab", manifest=manifest)
        assert [r["variant"] for r in rows] == ["patch_up", "fps_groups"]

    def test_counts_study_rows(self, dataset, tmp_path):
        manifest, _ = dataset
        cfg = tiny_config("", epochs=1)
        rows = ablate(cfg, "counts", tmp_path / "ab", manifest=manifest)
        labels = [r["variant"] for r in rows]
        assert labels == [f"p.n_p={n}" for n in (2, 4, 6, 8)] + \
            [f"i.n_i={n}" for n in (2, 4, 6, 8)]

    def test_unknown_study(self, dataset, tmp_path):
        manifest, _ = dataset
        cfg = tiny_config("", epochs=1)
        with pytest.raises(ValueError):
            ablate(cfg, "everything", tmp_path / "ab", manifest=manifest)


class TestCli:
    def write_config(self, dataset, tmp_path):
        manifest, out = dataset
        cfg = tiny_config(out / "manifest.csv")
        path = tmp_path / "config.json"
        path.write_text(cfg.to_json())
        return path

    def test_unknown_subcommand_exit_1(self, capsys):
        assert cli_main(["definitely-not-a-command"]) == 1

    def test_unknown_flag_exit_1(self, capsys):
        assert cli_main(["synth", "--bogus-flag"]) == 1

    def test_train_missing_manifest_exit_1(self, tmp_path, capsys):
        assert cli_main(["train", "--manifest", str(tmp_path / "nope.csv"),
                         "--out", str(tmp_path / "o")]) == 1

    def test_train_and_eval(self, dataset, tmp_path, capsys):
        config = self.write_config(dataset, tmp_path)
        out = tmp_path / "run"
        assert cli_main(["train", "--config", str(config),
                         "--out", str(out)]) == 0
        assert (out / "final.ckpt").exists()
        assert cli_main(["eval", "--checkpoint", str(out / "final.ckpt"),
                         "--config", str(config),
                         "--contents", "content02"]) == 0
        captured = capsys.readouterr()
        assert "SRCC=" in captured.out

    def test_xval_structure(self, dataset, tmp_path, capsys):
        config = self.write_config(dataset, tmp_path)
        out = tmp_path / "xv"
        assert cli_main(["xval", "--config", str(config), "--k", "3",
                         "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert len(report["folds"]) == 3

    def test_synth_patch_render(self, tmp_path, capsys):
        ds = tmp_path / "ds"
        assert cli_main(["synth", "--out", str(ds), "--contents", "2",
                         "--types", "downsample", "--levels", "1",
                         "--points", "400", "--seed", "5"]) == 0
        ply = str(ds / "content00_pristine.ply")
        assert cli_main(["patch", ply, "--ns", "128",
                         "--out", str(tmp_path / "sub.json")]) == 0
        doc = json.loads((tmp_path / "sub.json").read_text())
        assert len(doc["submodels"]) == 400 // 128 + 1
        assert cli_main(["render", ply, "--width", "64", "--height", "64",
                         "--out", str(tmp_path / "v.png")]) == 0
        assert (tmp_path / "v.png").exists()

    def test_run_id_stable(self):
        cfg = RunConfig(model=ModelConfig(**TINY_MODEL))
        assert run_id_for(cfg) == run_id_for(RunConfig(model=ModelConfig(**TINY_MODEL)))

    def test_gradcheck_subcommand(self, capsys):
        assert cli_main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "max_rel_err" in out
