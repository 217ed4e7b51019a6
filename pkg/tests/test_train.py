import hashlib
import json
import math

import pytest
import torch

from eraque.backbone import CheckpointError, STUDENT_SPEC, build_network, save_checkpoint
from eraque.bench import split_by_content
from eraque.train import (TrainConfig, carve_validation, lr_at, predict_items, train_student,
                          train_teacher)


def small_cfg(**kw):
    base = dict(epochs=2, lr0=1e-3, batch_size=8, canvas=(72, 128), crop=(64, 112),
                frames_per_clip_per_epoch=1, eval_stride=3, val_fraction=0.34, net="student")
    base.update(kw)
    return TrainConfig(**base)


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def split(tiny_corpus):
    return split_by_content(tiny_corpus[1], 0.75, seed=0)


@pytest.fixture(scope="module")
def teacher_ckpt(tiny_corpus, split, tmp_path_factory):
    run = tmp_path_factory.mktemp("teacher")
    res = train_teacher(tiny_corpus[1], split, small_cfg(net="teacher", epochs=1), run)
    return res.best_checkpoint


def test_lr_schedule_examples():
    cfg = TrainConfig(lr0=1e-4, epochs=50)
    assert lr_at(0, cfg) == pytest.approx(1e-4)
    assert lr_at(25, cfg) == pytest.approx(5e-5)
    assert lr_at(49, cfg) == pytest.approx(1e-4 * 0.5 * (1 + math.cos(math.pi * 49 / 50)))
    lrs = [lr_at(e, cfg) for e in range(50)]
    assert all(a > b for a, b in zip(lrs, lrs[1:]))
    assert all(0 < v <= 1e-4 for v in lrs)
    with pytest.raises(ValueError):
        lr_at(50, cfg)


def test_config_validation_and_roundtrip():
    with pytest.raises(ValueError, match="crop"):
        TrainConfig(canvas=(72, 128), crop=(100, 100)).validate()
    with pytest.raises(ValueError):
        TrainConfig(epochs=0).validate()
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"learning_rate": 1.0})
    cfg = small_cfg(seed=4)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_validation_carve_is_content_disjoint(tiny_corpus, split):
    manifest = tiny_corpus[1]
    fit, val = carve_validation(manifest, split.train, 0.34, seed=0)
    by_id = manifest.by_id()
    assert val and fit
    assert not {by_id[i].content_id for i in fit} & {by_id[i].content_id for i in val}
    assert sorted(fit + val) == sorted(split.train)


def test_smoke_run_records_and_determinism(tiny_corpus, split, tmp_path):
    manifest = tiny_corpus[1]
    a = train_teacher(manifest, split, small_cfg(epochs=3), tmp_path / "a")
    b = train_teacher(manifest, split, small_cfg(epochs=3), tmp_path / "b")
    assert [r["epoch"] for r in a.records] == [0, 1, 2]
    for rec in a.records:
        assert set(rec["losses"]) == {"total", "mae", "rank"}
        assert math.isfinite(rec["losses"]["total"])
    assert a.records[-1]["losses"]["total"] < a.records[0]["losses"]["total"]
    assert [r["losses"] for r in a.records] == [r["losses"] for r in b.records]
    assert sha(a.last_checkpoint) == sha(b.last_checkpoint)
    cfg = json.loads((tmp_path / "a" / "config.json").read_text())
    assert cfg["kind"] == "train" and cfg["lr0"] == 1e-3
    preds = predict_items(a.best_checkpoint, manifest, split.test)
    assert set(preds) == set(split.test)
    assert all(math.isfinite(v) for v in preds.values())


def test_rank_weight_isolated(tiny_corpus, split, tmp_path):
    manifest = tiny_corpus[1]
    r0 = train_teacher(manifest, split, small_cfg(epochs=1, lam=0.0), tmp_path / "l0")
    r1 = train_teacher(manifest, split, small_cfg(epochs=1, lam=1.0), tmp_path / "l1")
    l0, l1 = r0.records[0]["losses"], r1.records[0]["losses"]
    assert l0["total"] == pytest.approx(l0["mae"], abs=1e-12)
    # first batch identical, so any divergence comes from the rank term only
    assert l1["rank"] > 0
    assert l1["total"] != l0["total"]


def test_resume_after_crash_is_exact(tiny_corpus, split, tmp_path, monkeypatch):
    import eraque.train as train_mod

    manifest = tiny_corpus[1]
    full = train_teacher(manifest, split, small_cfg(epochs=3), tmp_path / "full")

    real = train_mod.validation_scores
    calls = {"n": 0}

    def crashing(*a, **kw):
        calls["n"] += 1
        if calls["n"] == 3:
            raise KeyboardInterrupt
        return real(*a, **kw)

    run = tmp_path / "part"
    monkeypatch.setattr(train_mod, "validation_scores", crashing)
    with pytest.raises(KeyboardInterrupt):
        train_teacher(manifest, split, small_cfg(epochs=3), run)
    monkeypatch.setattr(train_mod, "validation_scores", real)
    # a record that outlived its checkpoint must not be duplicated on resume
    with open(run / "records.jsonl", "a") as fh:
        fh.write(json.dumps({**full.records[2], "losses": {"total": -1.0}}) + "\n")
    res = train_teacher(manifest, split, small_cfg(epochs=3), run, resume=True)
    assert [r["epoch"] for r in res.records] == [0, 1, 2]
    assert [r["losses"] for r in res.records] == [r["losses"] for r in full.records]
    sd_a = torch.load(full.last_checkpoint, weights_only=False)["state_dict"]
    sd_b = torch.load(res.last_checkpoint, weights_only=False)["state_dict"]
    assert all(torch.equal(sd_a[k], sd_b[k]) for k in sd_a)


def test_student_without_distillation_matches_plain_training(tiny_corpus, split, teacher_ckpt,
                                                             tmp_path):
    manifest = tiny_corpus[1]
    before = sha(teacher_ckpt)
    plain = train_teacher(manifest, split, small_cfg(), tmp_path / "plain")
    off = train_student(manifest, split, small_cfg(enable_kd=False, enable_attention=False),
                        tmp_path / "off", teacher_checkpoint=teacher_ckpt)
    assert [r["losses"]["total"] for r in plain.records] == \
        [r["losses"]["total"] for r in off.records]
    sd_a = torch.load(plain.last_checkpoint, weights_only=False)["state_dict"]
    sd_b = torch.load(off.last_checkpoint, weights_only=False)["state_dict"]
    assert all(torch.equal(sd_a[k], sd_b[k]) for k in sd_a)
    assert sha(teacher_ckpt) == before


def test_distillation_smoke(tiny_corpus, split, teacher_ckpt, tmp_path):
    before = sha(teacher_ckpt)
    res = train_student(tiny_corpus[1], split, small_cfg(), tmp_path / "kd",
                        teacher_checkpoint=teacher_ckpt)
    for rec in res.records:
        parts = rec["losses"]
        assert {"kd", "at1", "at2", "at3", "at4"} <= set(parts)
        assert all(math.isfinite(v) and v >= 0 for v in parts.values())
    assert sha(teacher_ckpt) == before
    cfg = json.loads((tmp_path / "kd" / "config.json").read_text())
    assert cfg["kind"] == "distill" and cfg["teacher_checkpoint"] == str(teacher_ckpt)


def test_distillation_needs_teacher(tiny_corpus, split, tmp_path):
    with pytest.raises(CheckpointError):
        train_student(tiny_corpus[1], split, small_cfg(), tmp_path / "x")
    with pytest.raises(CheckpointError):
        train_student(tiny_corpus[1], split, small_cfg(), tmp_path / "y",
                      teacher_checkpoint=tmp_path / "missing.pt")


def test_distillation_rejects_mismatched_teacher(tiny_corpus, split, tmp_path):
    from eraque.backbone import BackboneSpec
    odd = build_network(BackboneSpec((1, 1, 1, 1), (32, 64, 128, 256)))
    save_checkpoint(odd, tmp_path / "odd.pt")
    with pytest.raises(ValueError, match="stage 1"):
        train_student(tiny_corpus[1], split, small_cfg(), tmp_path / "z",
                      teacher_checkpoint=tmp_path / "odd.pt")


def test_student_spec_is_default_for_student_runs(tiny_corpus, split, tmp_path):
    res = train_teacher(tiny_corpus[1], split, small_cfg(epochs=1), tmp_path / "s")
    spec = torch.load(res.best_checkpoint, weights_only=False)["spec"]
    assert tuple(spec["blocks_per_stage"]) == STUDENT_SPEC.blocks_per_stage
