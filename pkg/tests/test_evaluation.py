import json
import random

import pytest

from facegate.evaluation import (ConfusionCounts, EngineConfig, ManifestEntry,
                                 ManifestError, MetricRow, classify_detection,
                                 classify_matching, dump_encodings_jsonl,
                                 load_encodings_jsonl, load_manifest, metrics,
                                 pair_plan, report_to_csv, report_to_json,
                                 round2_half_up, run_eval, total_score)
from facegate.fixtures import CORPUS_MIN_SIZE, build_corpus, corpus_cascade
from facegate.matching import ReferenceEmbedder

MANIFEST = b"""path,label,has_face
alice1.ppm,alice,true
alice2.ppm,alice,true
bob1.ppm,bob,true
nonface1.ppm,,false
"""


class TestManifest:
    def test_four_row_fixture(self):
        entries = load_manifest(MANIFEST)
        assert len(entries) == 4
        assert entries[0] == ManifestEntry("alice1.ppm", "alice", True)
        assert entries[3] == ManifestEntry("nonface1.ppm", "", False)

    def test_label_flag_inconsistency_is_line_numbered(self):
        bad = MANIFEST.replace(b"nonface1.ppm,,false", b"nonface1.ppm,zoe,false")
        with pytest.raises(ManifestError, match="line 5"):
            load_manifest(bad)
        bad = MANIFEST.replace(b"bob1.ppm,bob,true", b"bob1.ppm,,true")
        with pytest.raises(ManifestError, match="line 4"):
            load_manifest(bad)

    def test_duplicate_path_rejected(self):
        bad = MANIFEST + b"alice1.ppm,alice,true\n"
        with pytest.raises(ManifestError, match="duplicate"):
            load_manifest(bad)

    def test_header_required(self):
        with pytest.raises(ManifestError, match="header"):
            load_manifest(b"file,name,face\na,b,true\n")

    def test_bool_spelling_enforced(self):
        bad = MANIFEST.replace(b"alice,true", b"alice,True")
        with pytest.raises(ManifestError, match="true or false"):
            load_manifest(bad)

    def test_identity_truth_by_shared_label(self):
        entries = load_manifest(MANIFEST)
        alice1, alice2, bob1, nonface = entries
        assert alice1.label == alice2.label
        assert alice1.label != bob1.label


class TestPairPlan:
    def test_three_entries_make_six_ordered_pairs(self):
        entries = load_manifest(MANIFEST)[:3]
        plan = pair_plan(entries)
        assert len(plan) == 6
        assert all(p != g for p, g in plan)

    def test_550_entries_make_301950_pairs(self):
        entries = [ManifestEntry(f"img{i:04d}.ppm", f"p{i // 2}", True)
                   for i in range(550)]
        assert len(pair_plan(entries)) == 301_950

    def test_lexicographic_and_deterministic(self):
        entries = load_manifest(MANIFEST)
        plan = pair_plan(entries)
        assert plan == sorted(plan)
        assert plan == pair_plan(list(reversed(entries)))

    def test_bijection_onto_distinct_pairs(self):
        entries = load_manifest(MANIFEST)
        plan = pair_plan(entries)
        paths = [e.path for e in entries]
        assert set(plan) == {(p, g) for p in paths for g in paths if p != g}
        assert len(set(plan)) == len(plan)

    def test_fewer_than_two_rejected(self):
        with pytest.raises(ValueError, match="at least 2"):
            pair_plan(load_manifest(MANIFEST)[:1])


class TestClassification:
    @pytest.mark.parametrize("has_face,count,cell", [
        (True, 1, "tp"),
        (True, 2, "fp"),
        (True, 5, "fp"),
        (True, 0, "fn"),
        (False, 0, "tn"),
        (False, 1, "fp"),
        (False, 2, "fp"),
    ])
    def test_detection_cells(self, has_face, count, cell):
        assert classify_detection(has_face, count) == cell

    def test_matching_cells(self):
        # same label, similarity 80% -> predicted match -> TP
        assert classify_matching(True, True, False) == "tp"
        # different labels, similarity 60% -> not a match -> TN
        assert classify_matching(False, False, False) == "tn"
        # a face image went undetected -> FP by definition
        assert classify_matching(False, None, True) == "fp"
        assert classify_matching(True, None, True) == "fp"
        # same face judged non-match -> FN; different judged match -> FP
        assert classify_matching(True, False, False) == "fn"
        assert classify_matching(False, True, False) == "fp"
        # nothing comparable and no face missed -> skip
        assert classify_matching(False, None, False) is None


PUBLISHED = {
    "existing_matching": (ConfusionCounts(504, 265234, 12504, 14),
                          (4.674832, 0.18966, 97.2973, 0.378583)),
    "existing_detection": (ConfusionCounts(250500, 33810, 17424, 216),
                           (88.73125, 88.10805, 99.91385, 93.64031)),
    "enhanced_matching": (ConfusionCounts(512, 1186, 282906, 18),
                          (99.57698, 30.15312, 96.60377, 45.9605)),
    "enhanced_detection": (ConfusionCounts(276150, 8472, 17328, 0),
                           (97.19424, 97.02342, 100.0, 98.48923)),
}


class TestMetrics:
    @pytest.mark.parametrize("name", sorted(PUBLISHED))
    def test_published_rows_within_a_thousandth(self, name):
        counts, expected = PUBLISHED[name]
        row = metrics(counts)
        for got, want in zip((row.accuracy, row.precision, row.recall, row.f1),
                             expected):
            assert got == pytest.approx(want, abs=1e-3)

    def test_degenerate_perfect_case(self):
        row = metrics(ConfusionCounts(1, 0, 0, 0))
        assert (row.accuracy, row.precision, row.recall, row.f1) == \
            (100.0, 100.0, 100.0, 100.0)
        assert row.zero_division == ()

    def test_zero_division_flags(self):
        row = metrics(ConfusionCounts(0, 0, 5, 3))
        assert row.precision == 0.0 and row.recall == 0.0 and row.f1 == 0.0
        assert set(row.zero_division) == {"precision", "f1"}

    def test_all_zero_counts_rejected(self):
        with pytest.raises(ValueError):
            metrics(ConfusionCounts())

    def test_counts_partition_invariant(self):
        c = ConfusionCounts(2, 3, 4, 5)
        assert c.total == 14


class TestTotalScore:
    def test_reproduces_all_published_cells(self):
        existing = total_score(metrics(PUBLISHED["existing_matching"][0]),
                               metrics(PUBLISHED["existing_detection"][0]))
        enhanced = total_score(metrics(PUBLISHED["enhanced_matching"][0]),
                               metrics(PUBLISHED["enhanced_detection"][0]))
        assert (existing.accuracy, existing.precision,
                existing.recall, existing.f1) == (46.70, 44.15, 98.61, 47.01)
        assert (enhanced.accuracy, enhanced.precision,
                enhanced.recall, enhanced.f1) == (98.39, 63.59, 98.30, 72.23)

    def test_boundary_rounding_is_exact(self):
        # (45.96 + 98.49) / 2 = 72.225 must round half-up to 72.23 even
        # though the binary double of 72.225 sits below the true value
        assert float(round2_half_up((round2_half_up(45.9605)
                                     + round2_half_up(98.48923)) / 2)) == 72.23

    def test_plain_mean_of_rows(self):
        a = MetricRow(40.0, 40.0, 40.0, 40.0)
        b = MetricRow(60.0, 60.0, 60.0, 60.0)
        t = total_score(a, b)
        assert (t.accuracy, t.precision, t.recall, t.f1) == (50.0,) * 4


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("eval_corpus")
    manifest = build_corpus(out)
    entries = load_manifest(manifest.read_bytes())
    engine = EngineConfig(model=corpus_cascade(), provider=ReferenceEmbedder(),
                          min_size=CORPUS_MIN_SIZE)
    return out, entries, engine


def test_bundled_corpus_matches_generator(tmp_path):
    # the shipped files must be exactly what build_corpus produces
    from facegate.data import corpus_dir
    build_corpus(tmp_path)
    shipped = corpus_dir()
    generated = sorted(p.name for p in tmp_path.iterdir())
    assert sorted(p.name for p in shipped.iterdir()) == generated
    for name in generated:
        assert (shipped / name).read_bytes() == (tmp_path / name).read_bytes()


class TestRunEval:
    def test_corpus_yields_132_records_partitioned(self, corpus):
        base, entries, engine = corpus
        report = run_eval(entries, engine, base_dir=base)
        assert report.comparisons == 132
        assert len(report.records) == 132
        assert report.detection_counts.total == 132
        assert report.errored == 0
        assert (report.matching_counts.total + report.skipped_matching) == 132

    def test_same_identity_pairs_match_cross_do_not(self, corpus):
        base, entries, engine = corpus
        report = run_eval(entries, engine, base_dir=base)
        cells = {(r.probe, r.gallery): r.matching_cell for r in report.records}
        assert cells[("alice1.ppm", "alice2.ppm")] == "tp"
        assert cells[("alice2.ppm", "alice1.ppm")] == "tp"
        assert cells[("alice1.ppm", "bob2.ppm")] == "tn"
        assert cells[("nonface1.ppm", "nonface2.ppm")] == "skipped"
        assert report.matching_counts.tp == 10  # 5 identities, ordered pairs

    def test_eve_decoy_books_detection_fp(self, corpus):
        base, entries, engine = corpus
        report = run_eval(entries, engine, base_dir=base)
        eve2 = [r for r in report.records if r.probe == "eve2.ppm"]
        assert all(r.detection_outcome == "multiple" for r in eve2)
        assert report.detection_counts.fp == 11  # eve2 as probe, 11 galleries
        assert report.detection_counts.tp == 9 * 11
        assert report.detection_counts.tn == 2 * 11

    def test_symmetric_distances(self, corpus):
        base, entries, engine = corpus
        report = run_eval(entries, engine, base_dir=base)
        d = {(r.probe, r.gallery): r.d_face for r in report.records}
        for (p, g), v in d.items():
            assert d[(g, p)] == v

    def test_report_bytes_deterministic_and_jobs_invariant(self, corpus):
        base, entries, engine = corpus
        r1 = run_eval(entries, engine, base_dir=base, jobs=1)
        r2 = run_eval(entries, engine, base_dir=base, jobs=4)
        assert report_to_json(r1) == report_to_json(r2)
        assert report_to_csv(r1) == report_to_csv(r2)

    def test_missing_image_is_errored_not_fatal(self, corpus):
        base, entries, engine = corpus
        extra = entries + [ManifestEntry("missing.ppm", "zoe", True)]
        report = run_eval(extra, engine, base_dir=base)
        assert report.comparisons == 13 * 12
        assert report.errored == 2 * 12  # as probe and as gallery
        assert report.detection_counts.total == report.comparisons - report.errored

    def test_precomputed_mode(self, corpus, tmp_path):
        base, entries, engine = corpus
        pipeline = run_eval(entries, engine, base_dir=base)
        encs = {}
        for e in entries:
            if e.has_face:
                analysis = engine.analyze(
                    __import__("facegate.imageio", fromlist=["decode_netpbm"])
                    .decode_netpbm((base / e.path).read_bytes()))
                encs[e.path] = (engine.provider.name, analysis.encoding)
        blob = dump_encodings_jsonl(encs)
        loaded = load_encodings_jsonl(blob)
        report = run_eval(entries, mode="precomputed-encodings",
                          encodings=loaded, base_dir=base)
        assert report.comparisons == 132
        # same matching decisions as the pipeline run
        assert report.matching_counts == pipeline.matching_counts
        # uncovered entries count as face-not-found
        assert report.detection_counts.tn == 22
        # symmetric d_face in precomputed mode
        d = {(r.probe, r.gallery): r.d_face for r in report.records}
        assert all(d[(g, p)] == v for (p, g), v in d.items())

    def test_baseline_detector_engine(self, corpus):
        from dataclasses import replace as dc_replace
        from facegate.detector import DetectParams
        base, entries, engine = corpus
        baseline = dc_replace(engine, detector="baseline",
                              baseline_params=DetectParams(1.1, 3, CORPUS_MIN_SIZE))
        report = run_eval(entries, baseline, base_dir=base)
        assert report.detector == "baseline"
        assert report.comparisons == 132
        assert report.detection_counts.total == 132
        # non-faces stay clean even without the sweep
        assert report.detection_counts.tn == 22
        # faces are found (some images group into more than one cluster
        # at fixed parameters, landing in FP rather than TP)
        assert report.detection_counts.fn == 0
        assert report.matching_counts.tp >= 10

    def test_nonface_pair_rule_count(self, corpus):
        base, entries, engine = corpus
        skip = run_eval(entries, engine, base_dir=base)
        count = run_eval(entries, engine, base_dir=base,
                         nonface_pair_rule="count")
        assert count.skipped_matching == 0
        assert count.matching_counts.tn == \
            skip.matching_counts.tn + skip.skipped_matching

    def test_json_report_shape(self, corpus):
        base, entries, engine = corpus
        report = run_eval(entries, engine, base_dir=base)
        doc = json.loads(report_to_json(report).decode())
        assert doc["schema"] == 1
        assert doc["provider"] == "reference-v1"
        assert len(doc["records"]) == 132
        assert set(doc["total_score"]) == {"accuracy", "precision", "recall", "f1"}

    def test_csv_report_prints_two_decimals(self, corpus):
        base, entries, engine = corpus
        text = report_to_csv(run_eval(entries, engine, base_dir=base)).decode()
        for line in text.splitlines():
            if line.startswith(("matching_metrics", "detection_metrics", "total_score")):
                for cell in line.split(",")[1:]:
                    assert len(cell.split(".")[1]) == 2


class TestEncodingsFile:
    def test_round_trip(self):
        rng = random.Random(4100)
        from facegate.matching import FaceEncoding
        encs = {
            f"img{i}.ppm": ("reference-v1",
                            FaceEncoding(tuple(rng.uniform(-1, 1)
                                               for _ in range(128))))
            for i in range(5)
        }
        assert load_encodings_jsonl(dump_encodings_jsonl(encs)) == encs

    def test_errors_are_line_numbered(self):
        from facegate.evaluation import EncodingsFileError
        with pytest.raises(EncodingsFileError, match="line 1"):
            load_encodings_jsonl(b"not json\n")
        good = b'{"id": "a", "provider": "p", "vector": [' + \
            b",".join(b"0.0" for _ in range(128)) + b"]}\n"
        with pytest.raises(EncodingsFileError, match="line 2"):
            load_encodings_jsonl(good + b'{"id": "b"}\n')
        with pytest.raises(EncodingsFileError, match="duplicate"):
            load_encodings_jsonl(good + good)
