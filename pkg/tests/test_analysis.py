"""Degradation math, ranking, IMR classification, paradoxes, rendering."""

import random

import pytest

from throttlescout.analysis import (
    MissingBaselineError,
    build_report,
    classify_imrs,
    compute_degradation,
    detect_paradoxes,
    rank_candidates,
    render_report,
    select_mimr,
)
from throttlescout.core import Direction, ResourceKind, Target
from throttlescout.runner import INVALID

from conftest import (
    LATENCY_MS,
    STREAM_BASELINE_MS,
    STREAM_DELTAS,
    STREAM_RANK_ORDER,
    make_record,
    streaming_records,
)

LOWER = Direction.LOWER_IS_BETTER
HIGHER = Direction.HIGHER_IS_BETTER


class TestComputeDegradation:
    def test_kafka_network_from_latency_table(self):
        # baseline 31.95 s; throttling kafka's network added 98696.2 ms
        d = compute_degradation(31950.0, 31950.0 + 98696.2, LOWER)
        assert d == pytest.approx(98696.2 / 31950.0)
        assert d == pytest.approx(3.089, abs=5e-4)

    def test_identity_is_zero(self):
        assert compute_degradation(17.5, 17.5, LOWER) == 0.0
        assert compute_degradation(17.5, 17.5, HIGHER) == 0.0

    def test_throughput_drop(self):
        assert compute_degradation(100.0, 80.0, HIGHER) == pytest.approx(0.20)

    def test_nonpositive_baseline(self):
        with pytest.raises(ValueError):
            compute_degradation(0.0, 1.0, LOWER)
        with pytest.raises(ValueError):
            compute_degradation(-3.0, 1.0, LOWER)


def stream_cells():
    return {
        Target(svc, res): delta / STREAM_BASELINE_MS
        for (svc, res), delta in STREAM_DELTAS.items()
    }


class TestRankCandidates:
    def test_streaming_table_order(self):
        ranked = rank_candidates(stream_cells())
        assert [(t.service, t.resource) for t, _ in ranked] == STREAM_RANK_ORDER
        # CPU rows of spark-master and kafka land last
        tail = [(t.service, t.resource.name) for t, _ in ranked[-2:]]
        assert tail == [("kafka", "CPU_CORES"), ("spark-master", "CPU_CORES")]

    def test_all_equal_falls_back_to_lexicographic(self):
        cells = {
            Target("b", ResourceKind.NET_BW): 0.5,
            Target("a", ResourceKind.NET_BW): 0.5,
            Target("a", ResourceKind.CPU_QUOTA): 0.5,
        }
        ranked = [t for t, _ in rank_candidates(cells)]
        assert ranked == sorted(cells)

    def test_single_candidate(self):
        t = Target("only", ResourceKind.NET_BW)
        assert rank_candidates({t: 0.3}) == [(t, 0.3)]

    def test_output_is_permutation_of_input(self):
        rng = random.Random(5)
        kinds = list(ResourceKind)
        for _ in range(50):
            cells = {
                Target(f"s{i}", rng.choice(kinds)): rng.uniform(-1, 3)
                for i in range(rng.randint(1, 8))
            }
            ranked = rank_candidates(cells)
            assert sorted(t for t, _ in ranked) == sorted(cells)


class TestClassifyImrs:
    def test_theta_half_matches_bolded_cells(self):
        imrs = classify_imrs(rank_candidates(stream_cells()), theta=0.5)
        assert [(t.service, t.resource.name) for t in imrs] == [
            ("kafka", "NET_BW"),
            ("spark-master", "DISK_RW_BW"),
        ]

    def test_unreachable_theta(self):
        assert classify_imrs(rank_candidates(stream_cells()), theta=10.0) == []

    def test_theta_tenth_adds_three(self):
        imrs = classify_imrs(rank_candidates(stream_cells()), theta=0.10)
        assert [(t.service, t.resource.name) for t in imrs] == [
            ("kafka", "NET_BW"),
            ("spark-master", "DISK_RW_BW"),
            ("spark-worker", "NET_BW"),   # 9547.7/31950  = 0.299
            ("redis", "NET_BW"),          # 7481/31950    = 0.234
            ("kafka", "DISK_RW_BW"),      # 4058.2/31950  = 0.127
        ]

    def test_monotone_in_theta(self):
        rng = random.Random(13)
        ranked = rank_candidates(
            {Target(f"s{i}", ResourceKind.NET_BW): rng.uniform(-0.5, 2.0) for i in range(12)}
        )
        for _ in range(50):
            t1, t2 = sorted((rng.uniform(0.01, 2.0), rng.uniform(0.01, 2.0)))
            assert set(classify_imrs(ranked, t2)) <= set(classify_imrs(ranked, t1))

    def test_invalid_theta(self):
        with pytest.raises(ValueError):
            classify_imrs([], 0.0)


class TestSelectMimr:
    A = Target("a", ResourceKind.NET_BW)
    B = Target("b", ResourceKind.DISK_RW_BW)

    def test_crossing_yields_co_imrs(self):
        # A leads at 40% (0.30 > 0.20) but trails at 80% (0.45 < 0.60)
        curves = {self.A: {40.0: 0.30, 80.0: 0.45}, self.B: {40.0: 0.20, 80.0: 0.60}}
        mimr, co = select_mimr([self.B, self.A], curves)
        assert mimr is None
        assert set(co) == {self.A, self.B}

    def test_dominance_yields_mimr(self):
        curves = {self.A: {40.0: 0.30, 80.0: 0.65}, self.B: {40.0: 0.20, 80.0: 0.60}}
        mimr, co = select_mimr([self.A, self.B], curves)
        assert mimr == self.A and co == []

    def test_singleton(self):
        mimr, co = select_mimr([self.A], {self.A: {40.0: 0.3}})
        assert mimr == self.A and co == []

    def test_empty_is_no_imr_found(self):
        assert select_mimr([], {}) == (None, [])

    def test_equal_curves_keep_rank_winner(self):
        curves = {self.A: {40.0: 0.30}, self.B: {40.0: 0.30}}
        mimr, co = select_mimr([self.A, self.B], curves)
        assert mimr == self.A and co == []


class TestDetectParadoxes:
    def curves(self):
        return {Target(s, r): {50.0: d / STREAM_BASELINE_MS} for (s, r), d in STREAM_DELTAS.items()}

    def test_streaming_paradoxes(self):
        found = detect_paradoxes(self.curves(), epsilon=0.05)
        names = {(p.target.service, p.target.resource.name) for p in found}
        assert names == {("spark-master", "CPU_CORES"), ("kafka", "CPU_CORES")}
        # most paradoxical first: spark-master CPU at -3242/31950 = -0.1015
        assert found[0].target.service == "spark-master"
        assert found[0].degradation == pytest.approx(-3242.0 / 31950.0)
        # redis disk (-1552.9/31950 = -0.0486) sits inside the noise band
        assert ("redis", "DISK_RW_BW") not in names

    def test_wide_epsilon_is_empty(self):
        assert detect_paradoxes(self.curves(), epsilon=0.20) == []

    def test_all_positive_is_empty(self):
        curves = {Target("s", ResourceKind.NET_BW): {40.0: 0.1, 80.0: 0.2}}
        assert detect_paradoxes(curves, epsilon=0.05) == []

    def test_annotates_most_negative_level(self):
        t = Target("s", ResourceKind.NET_BW)
        found = detect_paradoxes({t: {20.0: -0.06, 40.0: -0.30, 80.0: 0.1}}, 0.05)
        assert found[0].level_percent == 40.0
        assert found[0].degradation == -0.30


class TestBuildReport:
    def test_streaming_report(self):
        report = build_report(streaming_records(), LATENCY_MS, theta=0.5, epsilon=0.05)
        assert report.baseline == STREAM_BASELINE_MS
        assert report.mimr == Target("kafka", ResourceKind.NET_BW)
        assert [
            (c.target.service, c.target.resource) for c in report.candidates
        ] == STREAM_RANK_ORDER
        assert len(report.imr_set) == 2
        assert report.co_imrs == ()
        paradox_targets = {(p.target.service, p.target.resource.name) for p in report.paradoxes}
        assert paradox_targets == {("spark-master", "CPU_CORES"), ("kafka", "CPU_CORES")}

    def test_report_invariants(self):
        report = build_report(streaming_records(), LATENCY_MS, theta=0.10, epsilon=0.05)
        imr = set(report.imr_set)
        if report.mimr is not None:
            assert report.mimr in imr
        assert set(report.co_imrs) <= imr
        assert {p.target for p in report.paradoxes}.isdisjoint(imr)

    def test_missing_baseline(self):
        records = [r for r in streaming_records() if not r.is_baseline]
        with pytest.raises(MissingBaselineError):
            build_report(records, LATENCY_MS, 0.5, 0.05)

    def test_missing_cell_produces_caveat(self):
        records = streaming_records()
        records.append(
            make_record("kafka", ResourceKind.CPU_CORES, 80.0, 1, None, status=INVALID, reason="x")
        )
        report = build_report(records, LATENCY_MS, 0.5, 0.05)
        assert report.missing_cells
        assert any("no OK measurement" in c for c in report.caveats)
        assert report.invalid_count == 1

    def test_scale_invariance(self):
        baseline = build_report(streaming_records(), LATENCY_MS, 0.10, 0.05)
        for scale in (0.5, 2.0, 4.0):  # powers of two keep the floats exact
            scaled_records = [
                make_record(
                    r.target.service if r.target else None,
                    r.target.resource if r.target else None,
                    r.level.percent if r.level else 0.0,
                    r.rep,
                    r.metric_value * scale,
                )
                for r in streaming_records()
            ]
            scaled = build_report(scaled_records, LATENCY_MS, 0.10, 0.05)
            assert [c.target for c in scaled.candidates] == [
                c.target for c in baseline.candidates
            ]
            assert scaled.imr_set == baseline.imr_set
            assert scaled.mimr == baseline.mimr
            assert scaled.co_imrs == baseline.co_imrs
            assert [p.target for p in scaled.paradoxes] == [
                p.target for p in baseline.paradoxes
            ]

    def test_higher_is_better_direction(self):
        records = [
            make_record(None, None, 0.0, 1, 100.0),
            make_record("s", ResourceKind.NET_BW, 50.0, 1, 80.0),
        ]
        from throttlescout.core import MetricSpec

        report = build_report(
            records, MetricSpec("qps", HIGHER, "req/s"), theta=0.10, epsilon=0.05
        )
        assert report.candidates[0].rank_d == pytest.approx(0.20)
        assert report.imr_set == (Target("s", ResourceKind.NET_BW),)


class TestRenderReport:
    def test_first_row_is_kafka_net_flagged_mimr(self):
        report = build_report(streaming_records(), LATENCY_MS, 0.5, 0.05)
        _, text = render_report(report)
        lines = text.splitlines()
        first_data = next(l for l in lines if l.strip().startswith("1 "))
        assert "kafka/NET_BW" in first_data
        assert "MIMR" in first_data

    def test_paradox_section_present(self):
        report = build_report(streaming_records(), LATENCY_MS, 0.5, 0.05)
        _, text = render_report(report)
        assert "paradoxical (improved under stress):" in text
        assert "spark-master/CPU_CORES" in text

    def test_empty_imr_set_prints_top_three(self):
        report = build_report(streaming_records(), LATENCY_MS, theta=10.0, epsilon=0.05)
        _, text = render_report(report)
        assert "no IMRs" in text and "theta=10" in text
        assert "kafka/NET_BW" in text  # top-3 still shown
        assert text.count("\n  ") >= 1

    def test_byte_determinism(self):
        report1 = build_report(streaming_records(), LATENCY_MS, 0.5, 0.05, "digest")
        report2 = build_report(streaming_records(), LATENCY_MS, 0.5, 0.05, "digest")
        assert render_report(report1) == render_report(report2)

    def test_json_has_required_keys(self):
        import json as jsonlib

        report = build_report(streaming_records(), LATENCY_MS, 0.5, 0.05, "abc123")
        json_text, _ = render_report(report)
        doc = jsonlib.loads(json_text)
        for key in (
            "baseline",
            "metric",
            "candidates",
            "imr_set",
            "mimr",
            "co_imrs",
            "paradoxes",
            "caveats",
            "config_digest",
        ):
            assert key in doc
        assert doc["mimr"] == {"service": "kafka", "resource": "NET_BW"}
        first = doc["candidates"][0]
        assert set(first) >= {"service", "resource", "curve", "rank"}
        assert first["curve"] == {"50": pytest.approx(98696.2 / 31950.0)}

    def test_absence_caveat_always_present(self):
        report = build_report(streaming_records(), LATENCY_MS, 0.5, 0.05)
        json_text, text = render_report(report)
        assert "not proof of no benefit" in text
        assert "not proof of no benefit" in json_text
