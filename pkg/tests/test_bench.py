import json

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle_stats
from eraque.bench import (REPORT_JSON_SCHEMA, CoverageError, Split, benchmark, correlations,
                          evaluate_scores, f_test_residuals, read_score_file, split_by_content,
                          write_score_file)
from eraque.core import Manifest, VideoItem


def _manifest(n_contents, clips=3):
    items = [VideoItem(id=f"c{c}_{k}", content_id=f"g{c}", codec="x", frame_source=".",
                       mos_raw=1 + k) for c in range(n_contents) for k in range(clips)]
    return Manifest(tuple(items))


def test_split_ten_contents():
    m = _manifest(10)
    sp = split_by_content(m, 0.8, seed=3)
    assert len(sp.train_contents) == 8 and len(sp.test_contents) == 2
    assert split_by_content(m, 0.8, seed=3) == sp


@given(st.integers(2, 25), st.integers(0, 10_000), st.floats(0.05, 0.95))
def test_split_invariants(n, seed, ratio):
    m = _manifest(n, clips=2)
    sp = split_by_content(m, ratio, seed)
    assert set(sp.train) | set(sp.test) == {it.id for it in m}
    assert not set(sp.train) & set(sp.test)
    by = m.by_id()
    assert not {by[i].content_id for i in sp.train} & {by[i].content_id for i in sp.test}
    assert sp.train and sp.test


def test_split_needs_two_contents():
    with pytest.raises(ValueError):
        split_by_content(_manifest(1), 0.8, 0)


def test_split_dict_roundtrip():
    sp = split_by_content(_manifest(5), 0.8, 1)
    assert Split.from_dict(json.loads(json.dumps(sp.to_dict()))) == sp


def test_correlation_examples():
    mos = [1.0, 2.0, 3.5, 4.0, 4.5]
    c = correlations(mos, mos)
    assert (c["pcc"], c["scc"], c["kcc"], c["rmse"]) == pytest.approx((1, 1, 1, 0))
    assert correlations(mos[::-1], mos)["scc"] == pytest.approx(-1.0)
    c = correlations([1, 2, 3, 5], [1, 2, 3, 4])
    assert c["kcc"] == 1.0
    assert c["rmse"] == 0.5
    assert c["pcc"] == pytest.approx(oracle_stats.pearson([1, 2, 3, 5], [1, 2, 3, 4]), abs=1e-14)


def test_correlation_errors():
    with pytest.raises(ValueError):
        correlations([1, 2, 3], [2, 2, 2])
    with pytest.raises(ValueError):
        correlations([1, 2], [1, 2])
    with pytest.raises(ValueError):
        correlations([1, 2, 3], [1, 2])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_correlations_match_textbook(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 60))
    pred = np.round(rng.random(n), int(rng.integers(1, 4)))
    mos = np.round(rng.random(n) * 4 + 1, 1)
    if len(set(pred)) < 2 or len(set(mos)) < 2:
        return
    c = correlations(pred, mos)
    p, m = pred.tolist(), mos.tolist()
    assert c["pcc"] == pytest.approx(oracle_stats.pearson(p, m), abs=1e-10)
    assert c["scc"] == pytest.approx(oracle_stats.spearman(p, m), abs=1e-10)
    assert c["kcc"] == pytest.approx(oracle_stats.kendall_tau_b(p, m), abs=1e-10)
    assert c["rmse"] == pytest.approx(oracle_stats.rmse(p, m), abs=1e-10)


def test_monotone_and_affine_invariance():
    rng = np.random.default_rng(5)
    pred, mos = rng.random(30), rng.random(30)
    base = correlations(pred, mos)
    mono = correlations(np.exp(3 * pred), mos)
    aff = correlations(2.5 * pred + 7, mos)
    assert mono["scc"] == pytest.approx(base["scc"]) and mono["kcc"] == pytest.approx(base["kcc"])
    assert aff["pcc"] == pytest.approx(base["pcc"])


def test_ftest_examples():
    r = np.random.default_rng(0).normal(size=50)
    res = f_test_residuals(r, r)
    assert res.F == 1.0 and not res.significant
    rng = np.random.default_rng(1)
    a, b = rng.normal(0, 10, 100), rng.normal(0, 1, 100)
    assert f_test_residuals(a, b).significant
    ab, ba = f_test_residuals(a, b), f_test_residuals(b, a)
    assert ab.F == ba.F and ab.significant == ba.significant
    with pytest.raises(ValueError):
        f_test_residuals([1, 1, 1], [1, 2, 3])


def test_ftest_null_rejection_rate():
    rng = np.random.default_rng(42)
    hits = sum(f_test_residuals(rng.normal(size=100), rng.normal(size=100)).significant
               for _ in range(1000))
    assert 0.03 <= hits / 1000 <= 0.07


def test_evaluate_perfect_metric_row():
    mos = {f"v{i}": 1.0 + i * 0.5 for i in range(6)}
    rep = evaluate_scores({"oracle": (dict(mos), "mos")}, mos, list(mos))
    row = rep.rows["oracle"]
    assert (row["pcc"], row["scc"], row["kcc"], row["rmse"]) == pytest.approx((1, 1, 1, 0))


def test_score_file_roundtrip_and_coverage(tmp_path):
    write_score_file(tmp_path / "a.jsonl", {"v1": 0.25, "v2": 0.5})
    scores, scale = read_score_file(tmp_path / "a.jsonl")
    assert scale == "mos" and scores == {"v1": 2.0, "v2": 3.0}
    (tmp_path / "b.jsonl").write_text('{"id": "v1", "score": 80}\n')
    scores, scale = read_score_file(tmp_path / "b.jsonl")
    assert scale == "affine"
    mos = {"v1": 2.0, "v2": 3.0, "v3": 4.0}
    with pytest.raises(CoverageError, match="v2"):
        evaluate_scores({"vmaf": (scores, scale)}, mos, list(mos))


def test_benchmark_on_corpus(tiny_corpus, tmp_path):
    _, manifest = tiny_corpus
    sp = split_by_content(manifest, 0.5, 0)
    ext = tmp_path / "ext.jsonl"
    # a stand-in external metric, on an arbitrary scale
    ext.write_text("".join(json.dumps({"id": it.id, "score": 20 * it.mos_raw + (k % 3)}) + "\n"
                           for k, it in enumerate(manifest)))
    rep = benchmark(manifest, sp, score_files={"ext": ext}, fr_metrics=("psnr", "ssim"), stride=3)
    assert list(rep.rows) == ["ext", "psnr", "ssim"]
    for r in rep.rows.values():
        assert -1 <= r["pcc"] <= 1 and -1 <= r["scc"] <= 1 and -1 <= r["kcc"] <= 1
        assert r["rmse"] >= 0
    for a in rep.rows:
        for b in rep.rows:
            if a != b:
                assert rep.ftest[a][b]["F"] == rep.ftest[b][a]["F"]
                assert rep.ftest[a][b]["significant"] == rep.ftest[b][a]["significant"]
    jsonschema.validate(json.loads(rep.to_json()), REPORT_JSON_SCHEMA)
    assert "PCC" in rep.table()
