import csv

import pytest
from hypothesis import given, settings, strategies as st

from kwspot.evaluate import (
    DetCurve,
    OperatingPoint,
    det_curve,
    eer,
    evaluate_scores,
    fn_at_fp,
    read_det_csv,
    write_det_csv,
    write_det_svg,
    write_report,
)
from kwspot.scoring import ScoredUtterance


def scored(pos, neg):
    out = [ScoredUtterance(f"p{i}", "positive", s, "t") for i, s in enumerate(pos)]
    out += [ScoredUtterance(f"n{i}", "negative", s, "t") for i, s in enumerate(neg)]
    return out


def brute_force_rates(pos, neg, threshold):
    """Accept iff score >= threshold; count errors directly."""
    fp = sum(s >= threshold for s in neg) / len(neg)
    fn = sum(s < threshold for s in pos) / len(pos)
    return fp, fn


class TestDetCurve:
    def test_hand_example_points(self):
        pos, neg = [0.9, 0.8, 0.4], [0.7, 0.3, 0.1]
        curve = det_curve(scored(pos, neg))
        got = {(p.threshold, p.fp_rate, p.fn_rate) for p in curve.points}
        # thresholds: all-reject extreme plus every distinct score
        expected = {(1.9, 0.0, 1.0)}
        for th in {0.9, 0.8, 0.7, 0.4, 0.3, 0.1}:
            expected.add((th, *brute_force_rates(pos, neg, th)))
        assert got == expected
        assert curve.num_pos == 3 and curve.num_neg == 3

    def test_requires_both_polarities(self):
        with pytest.raises(ValueError):
            det_curve([ScoredUtterance("p", "positive", 0.5, "t")])

    @given(
        st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=20),
        st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=20),
    )
    @settings(max_examples=80)
    def test_every_point_matches_brute_force(self, pos, neg):
        curve = det_curve(scored(pos, neg))
        for p in curve.points:
            fp, fn = brute_force_rates(pos, neg, p.threshold)
            assert p.fp_rate == pytest.approx(fp)
            assert p.fn_rate == pytest.approx(fn)

    @given(
        st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=20),
        st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=20),
    )
    @settings(max_examples=80)
    def test_monotone_tradeoff(self, pos, neg):
        curve = det_curve(scored(pos, neg))
        fps = [p.fp_rate for p in curve.points]
        fns = [p.fn_rate for p in curve.points]
        assert fps == sorted(fps)
        assert fns == sorted(fns, reverse=True)
        assert fps[0] == 0.0 and fns[0] == 1.0  # all-reject extreme


class TestEer:
    def test_hand_example(self):
        # pos {0.9, 0.8, 0.4}, neg {0.7, 0.3, 0.1}: the sweep crosses
        # fn == fp == 1/3 between thresholds 0.7 and 0.4
        curve = det_curve(scored([0.9, 0.8, 0.4], [0.7, 0.3, 0.1]))
        assert eer(curve) == pytest.approx(1 / 3)

    def test_perfect_separation(self):
        curve = det_curve(scored([0.9, 0.8], [0.2, 0.1]))
        assert eer(curve) == pytest.approx(0.0)

    def test_fully_swapped(self):
        curve = det_curve(scored([0.1, 0.2], [0.8, 0.9]))
        assert eer(curve) == pytest.approx(1.0)

    def test_exact_point_preferred(self):
        # threshold 0.5 attains fp = fn = 0.5 exactly
        curve = det_curve(scored([0.9, 0.4], [0.5, 0.1]))
        assert eer(curve) == pytest.approx(0.5)

    @given(
        st.lists(st.floats(0, 1, allow_nan=False), min_size=2, max_size=25),
        st.lists(st.floats(0, 1, allow_nan=False), min_size=2, max_size=25),
    )
    @settings(max_examples=80)
    def test_bounded_and_consistent(self, pos, neg):
        curve = det_curve(scored(pos, neg))
        e = eer(curve)
        assert 0.0 <= e <= 1.0
        # the interpolated crossing lies within the envelope of the point
        # that comes closest to fp == fn
        best_point = min(curve.points, key=lambda p: abs(p.fp_rate - p.fn_rate))
        assert e <= max(best_point.fp_rate, best_point.fn_rate) + 1e-12
        assert e >= min(best_point.fp_rate, best_point.fn_rate) - 1e-12


class TestFnAtFp:
    def test_interpolated_value(self):
        # hand-built curve: fp 0.0->0.02 while fn 0.5->0.3; at fp=0.01 the
        # interpolated fn is 0.4
        curve = DetCurve(
            (
                OperatingPoint(2.0, 0.0, 0.5),
                OperatingPoint(1.0, 0.02, 0.3),
            ),
            num_pos=10,
            num_neg=100,
        )
        assert fn_at_fp(curve, 0.01) == pytest.approx(0.4)

    def test_exact_point(self):
        curve = DetCurve(
            (OperatingPoint(2.0, 0.0, 1.0), OperatingPoint(1.0, 0.01, 0.2), OperatingPoint(0.5, 0.5, 0.1)),
            num_pos=5,
            num_neg=100,
        )
        assert fn_at_fp(curve, 0.01) == pytest.approx(0.2)

    def test_target_below_reachable_fp(self):
        curve = DetCurve(
            (OperatingPoint(1.0, 0.05, 0.6), OperatingPoint(0.5, 0.2, 0.1)),
            num_pos=5,
            num_neg=20,
        )
        assert fn_at_fp(curve, 0.01) == pytest.approx(0.6)

    def test_bad_target(self):
        curve = det_curve(scored([0.9], [0.1]))
        with pytest.raises(ValueError):
            fn_at_fp(curve, 0.0)
        with pytest.raises(ValueError):
            fn_at_fp(curve, 1.0)

    @given(
        st.lists(st.floats(0, 1, allow_nan=False), min_size=2, max_size=25),
        st.lists(st.floats(0, 1, allow_nan=False), min_size=2, max_size=25),
        st.sampled_from([0.005, 0.01, 0.05, 0.1, 0.5]),
    )
    @settings(max_examples=80)
    def test_within_bracketing_fns(self, pos, neg, target):
        curve = det_curve(scored(pos, neg))
        v = fn_at_fp(curve, target)
        assert 0.0 <= v <= 1.0


class TestIo:
    def test_det_csv_round_trip(self, tmp_path):
        curve = det_curve(scored([0.9, 0.8, 0.4], [0.7, 0.3, 0.1]))
        path = tmp_path / "det.csv"
        write_det_csv(curve, path)
        assert path.read_text().splitlines()[0] == "threshold,fp_rate,fn_rate"
        loaded = read_det_csv(path)
        assert loaded.points == curve.points

    def test_report_format(self, tmp_path):
        path = tmp_path / "report.csv"
        write_report(
            {
                "ttkws": {"eer": 0.05, "fn_at_1pct_fp": 0.2, "fn_at_0.5pct_fp": 0.3},
                "asr": {"eer": 0.12, "fn_at_1pct_fp": 0.5, "fn_at_0.5pct_fp": 0.6},
            },
            path,
        )
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["system", "eer", "fn_at_1pct_fp", "fn_at_0.5pct_fp"]
        assert [r[0] for r in rows[1:]] == ["asr", "ttkws"]  # sorted
        assert float(rows[2][1]) == 0.05

    def test_evaluate_scores_keys(self):
        m = evaluate_scores(scored([0.9, 0.8, 0.4], [0.7, 0.3, 0.1]))
        assert set(m) == {"eer", "fn_at_1pct_fp", "fn_at_0.5pct_fp"}
        assert m["eer"] == pytest.approx(1 / 3)

    def test_svg_written(self, tmp_path):
        curve = det_curve(scored([0.9, 0.4], [0.7, 0.1]))
        path = tmp_path / "det.svg"
        write_det_svg(curve, path)
        text = path.read_text()
        assert text.startswith("<svg") and "</svg>" in text
