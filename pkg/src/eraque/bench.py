"""Evaluation protocol: content-disjoint splits, correlation metrics,
residual F-tests and the benchmark report."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import _kernels
from .core import Manifest, denormalize_mos

log = logging.getLogger(__name__)

REPORT_SCHEMA = 1


class CoverageError(ValueError):
    def __init__(self, metric, missing):
        self.metric, self.missing = metric, sorted(missing)
        super().__init__(f"{metric}: no score for test ids {self.missing}")


# -- splitting ---------------------------------------------------------------

@dataclass(frozen=True)
class Split:
    train: tuple
    test: tuple
    train_contents: tuple = ()
    test_contents: tuple = ()

    def to_dict(self):
        return {"train": list(self.train), "test": list(self.test),
                "train_contents": list(self.train_contents),
                "test_contents": list(self.test_contents)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["train"]), tuple(d["test"]),
                   tuple(d.get("train_contents", ())), tuple(d.get("test_contents", ())))


def split_by_content(manifest: Manifest, ratio: float = 0.8, seed: int = 0) -> Split:
    """Shuffle content ids with ``seed`` and send ``round(ratio * n)`` of them to train.

    Both sides always get at least one content.
    """
    contents = manifest.content_ids()
    if len(contents) < 2:
        raise ValueError(f"need at least 2 distinct contents to split, got {len(contents)}")
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(contents))
    shuffled = [contents[k] for k in order]
    n_train = min(len(contents) - 1, max(1, int(round(ratio * len(contents)))))
    train_c, test_c = set(shuffled[:n_train]), set(shuffled[n_train:])
    train = tuple(it.id for it in manifest if it.content_id in train_c)
    test = tuple(it.id for it in manifest if it.content_id in test_c)
    return Split(train, test, tuple(sorted(train_c)), tuple(sorted(test_c)))


# -- correlation metrics -----------------------------------------------------

def kendall_tau_b(x, y) -> float:
    s, n0, tx, ty = _kernels.tau_b_counts(np.ascontiguousarray(x, dtype=np.float64),
                                          np.ascontiguousarray(y, dtype=np.float64))
    denom = math.sqrt((n0 - tx) * (n0 - ty))
    if denom == 0:
        raise ValueError("Kendall tau-b undefined for a constant vector")
    return s / denom


def _pearson(x, y) -> float:
    dx, dy = x - x.mean(), y - y.mean()
    return float(np.sum(dx * dy) / math.sqrt(np.sum(dx * dx) * np.sum(dy * dy)))


def correlations(pred, mos) -> dict:
    """PCC, SCC (average ranks on ties), KCC (tau-b) and RMSE."""
    pred = np.asarray(pred, dtype=np.float64)
    mos = np.asarray(mos, dtype=np.float64)
    if pred.shape != mos.shape or pred.ndim != 1:
        raise ValueError(f"pred {pred.shape} and mos {mos.shape} must be equal-length vectors")
    if pred.size < 3:
        raise ValueError("need at least 3 samples")
    if np.all(mos == mos[0]) or np.all(pred == pred[0]):
        raise ValueError("correlation undefined for a constant vector")
    return {
        "pcc": _pearson(pred, mos),
        "scc": _pearson(stats.rankdata(pred), stats.rankdata(mos)),
        "kcc": kendall_tau_b(pred, mos),
        "rmse": float(np.sqrt(np.mean((pred - mos) ** 2))),
    }


def affine_fit(pred, mos) -> np.ndarray:
    """Least-squares ``a * pred + b`` onto the MOS scale."""
    pred = np.asarray(pred, dtype=np.float64)
    a, b = np.polyfit(pred, np.asarray(mos, dtype=np.float64), 1)
    return a * pred + b


# -- significance ------------------------------------------------------------

@dataclass(frozen=True)
class FTestResult:
    F: float
    p_value: float
    significant: bool
    df: tuple

    def to_dict(self):
        return {"F": self.F, "p_value": self.p_value, "significant": self.significant,
                "df": list(self.df)}


def f_test_residuals(res_a, res_b, alpha: float = 0.05) -> FTestResult:
    """Two-tailed variance-ratio test; the larger variance is the numerator."""
    res_a = np.asarray(res_a, dtype=np.float64)
    res_b = np.asarray(res_b, dtype=np.float64)
    if res_a.size < 3 or res_b.size < 3:
        raise ValueError("each residual list needs at least 3 values")
    va, vb = np.var(res_a, ddof=1), np.var(res_b, ddof=1)
    if va == 0 or vb == 0:
        raise ValueError("zero residual variance")
    if va >= vb:
        F, df = va / vb, (res_a.size - 1, res_b.size - 1)
    else:
        F, df = vb / va, (res_b.size - 1, res_a.size - 1)
    p = min(1.0, 2.0 * float(stats.f.sf(F, *df)))
    crit = float(stats.f.ppf(1.0 - alpha / 2.0, *df))
    return FTestResult(float(F), p, bool(F > crit), df)


# -- score sources -----------------------------------------------------------

def read_score_file(path) -> tuple[dict, str]:
    """Read line-keyed ``{"id", "score"}`` or ``{"id", "score_mos"}`` records.

    Returns ``(scores, scale)`` where ``scale`` is ``"mos"`` when every
    record carries ``score_mos`` and ``"affine"`` otherwise.
    """
    scores, on_mos = {}, True
    with open(path, encoding="utf-8") as fh:
        for lineno, ln in enumerate(fh, start=1):
            if not ln.strip():
                continue
            try:
                rec = json.loads(ln)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if "id" not in rec:
                raise ValueError(f"{path}:{lineno}: record without id")
            if "score_mos" in rec:
                scores[str(rec["id"])] = float(rec["score_mos"])
            elif "score" in rec:
                scores[str(rec["id"])] = float(rec["score"])
                on_mos = False
            else:
                raise ValueError(f"{path}:{lineno}: record without score")
    return scores, ("mos" if on_mos and scores else "affine")


def write_score_file(path, scores: dict, normalized=True):
    """Write model scores on both scales, one record per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for vid, s in scores.items():
            rec = {"id": vid, "score_norm": float(s), "score_mos": denormalize_mos(s)} \
                if normalized else {"id": vid, "score": float(s)}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# -- report ------------------------------------------------------------------

@dataclass
class EvalReport:
    rows: dict = field(default_factory=dict)
    ftest: dict = field(default_factory=dict)
    split: dict = field(default_factory=dict)
    alpha: float = 0.05
    predictions: dict = field(default_factory=dict)

    def to_dict(self):
        return {"schema_version": REPORT_SCHEMA, "alpha": self.alpha, "rows": self.rows,
                "ftest": self.ftest, "split": self.split, "predictions": self.predictions}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def table(self) -> str:
        lines = [f"{'metric':<16}{'PCC':>9}{'SCC':>9}{'KCC':>9}{'RMSE':>9}  scale"]
        for name, r in self.rows.items():
            lines.append(f"{name:<16}{r['pcc']:>9.4f}{r['scc']:>9.4f}{r['kcc']:>9.4f}"
                         f"{r['rmse']:>9.4f}  {r['scale']}")
        names = list(self.rows)
        if len(names) > 1:
            lines.append("")
            lines.append(f"F-test (alpha={self.alpha}): 1 = significant difference")
            lines.append(" " * 16 + "".join(f"{n[:8]:>9}" for n in names))
            for a in names:
                cells = ["-" if a == b else str(int(self.ftest[a][b]["significant"])) for b in names]
                lines.append(f"{a:<16}" + "".join(f"{c:>9}" for c in cells))
        return "\n".join(lines) + "\n"


REPORT_JSON_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "alpha", "rows", "ftest", "split", "predictions"],
    "properties": {
        "schema_version": {"type": "integer"},
        "alpha": {"type": "number"},
        "rows": {"type": "object", "additionalProperties": {
            "type": "object",
            "required": ["pcc", "scc", "kcc", "rmse", "scale", "n"],
            "properties": {
                "pcc": {"type": "number", "minimum": -1, "maximum": 1},
                "scc": {"type": "number", "minimum": -1, "maximum": 1},
                "kcc": {"type": "number", "minimum": -1, "maximum": 1},
                "rmse": {"type": "number", "minimum": 0},
                "scale": {"enum": ["mos", "affine"]},
                "n": {"type": "integer"},
            }}},
        "ftest": {"type": "object"},
        "split": {"type": "object", "required": ["train_contents", "test_contents"]},
        "predictions": {"type": "object"},
    },
}


def evaluate_scores(sources: dict, mos: dict, test_ids, split: Split | None = None,
                    alpha: float = 0.05) -> EvalReport:
    """Build a report from ``{metric: (scores_by_id, scale)}``.

    ``scale="mos"`` scores are compared as they are; ``"affine"`` scores are
    first mapped onto the MOS scale by least squares (PCC is unaffected).
    """
    test_ids = list(test_ids)
    truth = np.array([mos[i] for i in test_ids])
    rows, residuals, preds = {}, {}, {}
    for name, (scores, scale) in sources.items():
        missing = [i for i in test_ids if i not in scores]
        if missing:
            raise CoverageError(name, missing)
        raw = np.array([scores[i] for i in test_ids], dtype=np.float64)
        mapped = raw if scale == "mos" else affine_fit(raw, truth)
        row = correlations(raw, truth)
        if scale != "mos":
            row["rmse"] = correlations(mapped, truth)["rmse"]
        row.update(scale=scale, n=len(test_ids))
        rows[name] = row
        residuals[name] = mapped - truth
        preds[name] = {i: float(v) for i, v in zip(test_ids, raw)}
    ftest = {a: {} for a in rows}
    for a in rows:
        for b in rows:
            if a != b:
                ftest[a][b] = f_test_residuals(residuals[a], residuals[b], alpha).to_dict()
    split_summary = {"test_ids": test_ids}
    if split is not None:
        split_summary.update(train_contents=list(split.train_contents),
                             test_contents=list(split.test_contents),
                             n_train=len(split.train), n_test=len(split.test))
    else:
        split_summary.update(train_contents=[], test_contents=[])
    return EvalReport(rows, ftest, split_summary, alpha, preds)


def fr_video_score(manifest: Manifest, item, metric: str, stride: int = 1) -> float:
    """Mean per-frame full-reference score against the item's reference frames."""
    from .fr import FR_METRICS
    from .media import load_frames

    ref_path = manifest.reference_path(item)
    if ref_path is None:
        raise ValueError(f"{item.id}: no reference_source for full-reference metric {metric}")
    ref = load_frames(ref_path, stride, item_id=item.id)
    dist = load_frames(manifest.source_path(item), stride, item_id=item.id)
    if len(ref) != len(dist):
        raise ValueError(f"{item.id}: {len(ref)} reference frames vs {len(dist)} distorted")
    fn = FR_METRICS[metric]
    return float(np.mean([fn(r, d) for r, d in zip(ref, dist)]))


def benchmark(manifest: Manifest, split: Split, score_files: dict | None = None,
              model_checkpoints: dict | None = None, fr_metrics=(), stride: int = 1,
              alpha: float = 0.05, decoder: str | None = None) -> EvalReport:
    """Score the test partition with every configured source and evaluate.

    ``score_files``: metric name -> path of line-keyed scores.
    ``model_checkpoints``: row name -> quality-net checkpoint path, scored in-process.
    ``fr_metrics``: any of ``psnr``, ``ssim``, ``ms_ssim``.
    """
    from .train import predict_items

    items = manifest.by_id()
    test_ids = list(split.test)
    unknown = [i for i in test_ids if i not in items]
    if unknown:
        raise ValueError(f"split test ids missing from manifest: {unknown}")
    mos = {i: items[i].mos_raw for i in test_ids}
    sources = {}
    for name, path in (score_files or {}).items():
        sources[name] = read_score_file(path)
    for name, ckpt in (model_checkpoints or {}).items():
        norm = predict_items(ckpt, manifest, test_ids, stride=stride, decoder=decoder)
        sources[name] = ({i: denormalize_mos(v) for i, v in norm.items()}, "mos")
    for metric in fr_metrics:
        sources[metric] = ({i: fr_video_score(manifest, items[i], metric, stride)
                            for i in test_ids}, "affine")
    if not sources:
        raise ValueError("benchmark needs at least one metric source")
    return evaluate_scores(sources, mos, test_ids, split, alpha)
