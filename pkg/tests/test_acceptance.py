"""Acceptance gate: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``. Criteria 6 to 8 train
18 models on a 500-note synthetic corpus and take about 25 minutes on one
core; set ``PHIDEID_SKIP_SLOW=1`` to skip them during development.
"""
import os
import time

import numpy as np
import pytest

from conftest import FIXTURES, load_eval_golden, random_features
from oracles import brute_log_partition, brute_marginals, brute_viterbi
from phideid.corpus import EhrMetadata, generate_synthetic_corpus, split_corpus
from phideid.embedding import Config, CharVocab, TokenVocab, embed_sequence
from phideid.evaluation import BINARY_HIPAA, format_tsv, full_report
from phideid.features import CATALOG, FeatureSchema, build_schema, extract_all, fired_names
from phideid.neural import autodiff as ad
from phideid.neural.autodiff import Parameter, Tape
from phideid.neural.gradcheck import check_entries
from phideid.neural.rng import Rng
from phideid.tagger import Tagger, log_partition, viterbi
from phideid.tokenizer import tokenize_document
from phideid.training import evaluate, prepare_documents, run_experiment, select_epoch, to_examples

slow = pytest.mark.skipif(os.environ.get("PHIDEID_SKIP_SLOW") == "1", reason="PHIDEID_SKIP_SLOW=1")

ACCEPTANCE_CFG = Config(max_epochs=4)
SEEDS = (1, 2, 3)
MODES = ("all", "none", "ehr_only")


@pytest.fixture
def gate(capsys):
    def report(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {n} failed: {detail}"
    return report


def test_criterion_1_crf_oracle_equivalence(gate):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_score, worst_rel, paths_ok = 0.0, 0.0, True
    for _ in range(100):
        T, K = int(rng.integers(1, 7)), int(rng.integers(1, 6))
        em, tr = rng.normal(scale=2, size=(T, K)), rng.normal(size=(K + 2, K + 2))
        got = viterbi(em, tr)
        ref_path, ref_score = brute_viterbi(em.tolist(), tr.tolist())
        paths_ok &= list(got.path) == ref_path
        worst_score = max(worst_score, abs(got.score - ref_score))
        z = brute_log_partition(em.tolist(), tr.tolist())
        worst_rel = max(worst_rel, abs(log_partition(em, tr) - z) / abs(z))
    elapsed = time.perf_counter() - t0
    ok = paths_ok and worst_score <= 1e-9 and worst_rel <= 1e-8 and elapsed < 5
    gate(1, ok, f"paths equal={paths_ok} max|score diff|={worst_score:.1e} "
                f"max rel logZ err={worst_rel:.1e} time={elapsed:.2f}s")


GRAD_CFG = Config(d_char=4, d_char_lstm=2, d_token=2, d_label_lstm=4, d_feat=2, dropout_p=0.5)


def test_criterion_2_gradient_check(gate):
    surfaces = ["Dr", "Lee", "seen", "on", "3/14"]
    schema = FeatureSchema(tuple(CATALOG.entries[:6]))
    model = Tagger.init(GRAD_CFG, schema, CharVocab.build(surfaces), TokenVocab.build(surfaces), Rng(0))
    rng = Rng(1)
    for p in model.parameters():
        p.value[...] = rng.derive(p.name).uniform(-0.5, 0.5, p.shape)
    ex = model.encode(surfaces, random_features(Rng(2), 5, 6), ["O", "B-Doctor", "O", "O", "B-Date"])
    t0 = time.perf_counter()
    entries = check_entries(model, ex, epsilon=1e-5, n_samples=400)
    elapsed = time.perf_counter() - t0
    distinct = {(e.name, e.index) for e in entries}
    covered = {e.name for e in entries}
    names = {p.name for p in model.parameters()}
    worst = max(e.rel_error for e in entries)
    ok = len(distinct) >= 200 and covered == names and worst <= 1e-4 and elapsed < 30
    gate(2, ok, f"{len(distinct)} distinct entries over {len(covered)}/{len(names)} tensors, "
                f"max rel err={worst:.1e}, time={elapsed:.1f}s")


def test_criterion_3_emission_gradient_identity(gate):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(30):
        T, K = int(rng.integers(1, 6)), int(rng.integers(1, 5))
        em, tr = rng.normal(size=(T, K)), rng.normal(size=(K + 2, K + 2))
        gold = rng.integers(0, K, T)
        E = Parameter(em.copy(), "em")
        with Tape() as tape:
            grads = tape.backward(ad.crf_nll(E, ad.constant(tr), gold))
        expected = np.array(brute_marginals(em.tolist(), tr.tolist()))
        expected[np.arange(T), gold] -= 1.0
        worst = max(worst, float(np.abs(grads.dense(E) - expected).max()))
    gate(3, worst <= 1e-8, f"max |dNLL/dem - (marginals - gold)| = {worst:.1e} over 30 instances")


def test_criterion_4_shape_contract(gate):
    cfg = Config()
    dims = (cfg.embedding_dim(len(CATALOG)), cfg.embedding_dim(0))
    surfaces = ["Seen", "Lee"]
    structural = []
    for schema in (CATALOG, build_schema("none")):
        model = Tagger.init(cfg, schema, CharVocab.build(surfaces), TokenVocab.build(surfaces), Rng(0))
        ex = model.encode(surfaces, np.zeros((2, len(schema))) if len(schema) else None)
        structural.append((embed_sequence(ex.enc, model.emb, cfg).shape[1], model.label_fwd.W.shape[0]))
    ok = dims == (175, 150) and structural == [(175, 175), (150, 150)]
    gate(4, ok, f"config dims={dims}, embedded/label-LSTM input dims={structural}")


def test_criterion_5_metric_golden(gate):
    gold, pred = load_eval_golden()
    got = format_tsv(full_report(gold, pred))
    expected = (FIXTURES / "eval_golden" / "expected.tsv").read_text()
    gate(5, got == expected, "20-token fixture report matches expected.tsv byte for byte"
         if got == expected else "report differs from expected.tsv")


def run_all_modes(parts, out_dir):
    return {mode: run_experiment(ACCEPTANCE_CFG, build_schema(mode), *parts, seeds=SEEDS, criterion="recall",
                                 out_dir=out_dir / mode, source_schema=CATALOG)
            for mode in MODES}


@pytest.fixture(scope="module")
def experiment(tmp_path_factory, resources):
    docs = generate_synthetic_corpus(500, 0)
    split = split_corpus(docs, seed=0)
    by_id = {d.doc_id: d for d in docs}
    parts = [prepare_documents([by_id[i] for i in ids], resources) for ids in (split.train, split.validation,
                                                                                split.test)]
    t0 = time.perf_counter()
    runs = run_all_modes(parts, tmp_path_factory.mktemp("acceptance"))
    return parts, runs, time.perf_counter() - t0


@slow
def test_criterion_6_synthetic_replication(gate, experiment):
    _, runs, elapsed = experiment
    f1_all = runs["all"].mean[BINARY_HIPAA].f1
    pat_none, pat_ehr = runs["none"].mean["Patient"].recall, runs["ehr_only"].mean["Patient"].recall
    rec_none, rec_ehr = runs["none"].mean[BINARY_HIPAA].recall, runs["ehr_only"].mean[BINARY_HIPAA].recall
    ok = f1_all >= 95.0 and pat_ehr >= pat_none and rec_ehr >= rec_none and elapsed < 20 * 60
    gate(6, ok, f"(a) all-features HIPAA F1={f1_all:.2f}; (b) Patient recall none={pat_none:.2f} "
                f"ehr={pat_ehr:.2f}; (c) HIPAA recall none={rec_none:.2f} ehr={rec_ehr:.2f}; "
                f"time={elapsed / 60:.1f} min")


@slow
def test_criterion_7_selection_property(gate, experiment):
    _, runs, _ = experiment
    checked, ok = 0, True
    for rs in runs.values():
        for run in rs.runs:
            by_recall, by_f1 = select_epoch(run.records, "recall"), select_epoch(run.records, "f1")
            ok &= by_recall.metric("recall") >= by_f1.metric("recall") and by_recall == run.selected
            checked += 1
    gate(7, ok, f"recall-selected validation recall >= F1-selected on {checked} runs")


@slow
def test_criterion_8_determinism(gate, experiment, tmp_path):
    parts, runs, _ = experiment
    again = run_all_modes(parts, tmp_path)
    same_metrics = all(
        a.mean == b.mean and all(
            ra.test == rb.test and [r.validation for r in ra.records] == [r.validation for r in rb.records]
            and [r.train_loss for r in ra.records] == [r.train_loss for r in rb.records]
            for ra, rb in zip(a.runs, b.runs))
        for a, b in ((runs[m], again[m]) for m in MODES))
    reload_ok = True
    for rs in runs.values():
        for run in rs.runs:
            model = Tagger.load(run.selected.checkpoint)
            reload_ok &= evaluate(model, to_examples(model, parts[1])) == run.selected.validation
    gate(8, same_metrics and reload_ok, f"repeat bit-exact={same_metrics}, checkpoint reload bit-exact={reload_ok}")


def test_criterion_9_feature_golden(gate, resources):
    d = FIXTURES / "feature_golden"
    text = (d / "note.txt").read_text(encoding="utf-8")
    meta = EhrMetadata.from_json((d / "note.meta.json").read_text(encoding="utf-8"))
    rows = [ln.split("\t") for ln in (d / "golden.tsv").read_text(encoding="utf-8").splitlines()
            if ln and not ln.startswith("#")]
    got = []
    for k, seq in enumerate(tokenize_document(text)):
        for t, v in zip(seq.tokens, extract_all(seq, meta, CATALOG, resources)):
            got.append([str(k), t.surface, str(t.start), str(t.end), "".join(map(str, v)),
                        ",".join(fired_names(v, CATALOG))])
    ext = [r for r in got if r[1] in ("ext", "6599")]
    gap_ok = len(ext) == 2 and all("re_phone" not in r[5] for r in ext)
    ok = got == rows and gap_ok
    gate(9, ok, f"{len(rows)} tokens bit-exact={got == rows}, extension tokens fire no phone bit={gap_ok}")
