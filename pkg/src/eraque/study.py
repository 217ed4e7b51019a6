"""Seeded teacher / student comparison on a synthetic corpus.

Per seed: a content-disjoint split, then four runs on the same split:
the lam=1 teacher, a lam=0 teacher, a student trained from scratch and a
student distilled from the lam=1 teacher. Test-set SCC, residual F-tests
and hard-pair ordering accuracy are collected for each.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .bench import correlations, f_test_residuals, split_by_content
from .core import load_manifest
from .losses import hard_pair_accuracy
from .synth import MANIFEST_NAME, SynthConfig, generate_synth_corpus
from .train import TrainConfig, predict_items, train_student, train_teacher

log = logging.getLogger(__name__)


@dataclass
class StudyConfig:
    synth: SynthConfig = field(default_factory=lambda: SynthConfig(num_contents=15))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        epochs=20, lr0=1e-3, batch_size=16, canvas=(72, 128), crop=(64, 112),
        frames_per_clip_per_epoch=8, eval_stride=2, val_fraction=0.2))
    seeds: tuple = (0, 1, 2)
    split_ratio: float = 0.8
    alpha: float = 0.05
    tau: float = 0.1


def _scores(ckpt, manifest, ids, stride):
    pred = predict_items(ckpt, manifest, ids, stride=stride)
    return np.array([pred[i] for i in ids])


def run_seed(manifest, seed: int, cfg: StudyConfig, work: Path) -> dict:
    split = split_by_content(manifest, cfg.split_ratio, seed)
    base = replace(cfg.train, seed=seed)
    t0 = time.perf_counter()
    runs = {
        "teacher": train_teacher(manifest, split, replace(base, net="teacher", lam=1.0),
                                 work / "teacher"),
        "teacher_lam0": train_teacher(manifest, split, replace(base, net="teacher", lam=0.0),
                                      work / "teacher_lam0"),
        "student_scratch": train_teacher(manifest, split, replace(base, net="student"),
                                         work / "student_scratch"),
    }
    runs["student_distilled"] = train_student(manifest, split, replace(base, net="student"),
                                              work / "student_distilled",
                                              teacher_checkpoint=runs["teacher"].best_checkpoint)
    ids = list(split.test)
    truth = np.array([manifest.by_id()[i].mos_norm for i in ids])
    preds = {k: _scores(r.best_checkpoint, manifest, ids, cfg.train.eval_stride)
             for k, r in runs.items()}
    out = {"seed": seed, "test_contents": list(split.test_contents), "n_test": len(ids)}
    for k, p in preds.items():
        c = correlations(p, truth)
        acc, n_hard = hard_pair_accuracy(truth, p, cfg.tau)
        out[k] = {"scc": c["scc"], "pcc": c["pcc"], "rmse_mos": 4.0 * c["rmse"],
                  "hard_pair_acc": acc, "n_hard_pairs": n_hard}
    # residuals on the MOS scale
    res = {k: 4.0 * (p - truth) for k, p in preds.items()}
    out["ftest_distilled_vs_teacher"] = f_test_residuals(
        res["student_distilled"], res["teacher"], cfg.alpha).to_dict()
    out["wall_time"] = time.perf_counter() - t0
    return out


def summarize(per_seed: list, alpha=0.05) -> dict:
    med = lambda k, m: float(np.median([r[k][m] for r in per_seed]))  # noqa: E731
    n_nonsig = sum(not r["ftest_distilled_vs_teacher"]["significant"] for r in per_seed)
    return {
        "median_scc": {k: med(k, "scc") for k in
                       ("teacher", "teacher_lam0", "student_scratch", "student_distilled")},
        "median_hard_pair_acc": {k: med(k, "hard_pair_acc") for k in ("teacher", "teacher_lam0")},
        "ftest_nonsignificant_seeds": n_nonsig,
        "distillation_benefit": med("student_distilled", "scc") >= med("student_scratch", "scc"),
        "ftest_ok": n_nonsig >= 2,
        "hard_rank_benefit": med("teacher", "hard_pair_acc") >= med("teacher_lam0", "hard_pair_acc"),
    }


def run_study(cfg: StudyConfig, work_dir) -> dict:
    work = Path(work_dir)
    corpus = work / "corpus"
    if (corpus / MANIFEST_NAME).exists():
        manifest = load_manifest(corpus / MANIFEST_NAME)
    else:
        manifest = generate_synth_corpus(cfg.synth, corpus)
    per_seed = []
    for seed in cfg.seeds:
        r = run_seed(manifest, seed, cfg, work / f"seed_{seed}")
        log.info("seed %d: %s", seed, json.dumps(r, sort_keys=True))
        per_seed.append(r)
    result = {"per_seed": per_seed, "summary": summarize(per_seed, cfg.alpha),
              "config": {"synth": asdict(cfg.synth), "train": cfg.train.to_dict(),
                         "seeds": list(cfg.seeds)}}
    (work / "study.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return result
