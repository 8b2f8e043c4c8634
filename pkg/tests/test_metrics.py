from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kanspoof.metrics import (
    MetricInputError,
    ScoreFormatError,
    ScoreSet,
    TdcfParams,
    compute_eer,
    compute_min_tdcf,
    metrics_report,
    parse_scores,
    read_scores,
    write_metrics,
    write_scores,
)

# C1 == C2 == 0.5: the normalised cost is FAR + FRR
SYMMETRIC = TdcfParams(
    pi_target=0.5, pi_nontarget=0.0, pi_spoof=0.5, c_miss=1.0, c_fa=1.0,
    asv_miss=0.0, asv_false_alarm=0.0, asv_spoof_pass=1.0,
)


def brute_sweep(bona, spoof):
    """O(n^2) threshold sweep: every unique score plus one above the max."""
    ts = sorted(set(bona) | set(spoof))
    ts.append(np.nextafter(ts[-1], np.inf))
    fa = [sum(1 for s in spoof if s >= t) for t in ts]
    fr = [sum(1 for b in bona if b < t) for t in ts]
    return ts, fa, fr


def brute_eer(bona, spoof):
    """Returns the float EER (same interpolation formula) and the exact rational one."""
    ts, fa, fr = brute_sweep(bona, spoof)
    nb, ns = len(bona), len(spoof)
    far = [Fraction(a, ns) for a in fa]
    frr = [Fraction(r, nb) for r in fr]
    i = next(k for k in range(len(ts)) if far[k] <= frr[k])
    if far[i] == frr[i] or i == 0:
        return float(far[i]), far[i]
    d0, d1 = far[i - 1] - frr[i - 1], far[i] - frr[i]
    alpha = d0 / (d0 - d1)
    exact = far[i - 1] + alpha * (far[i] - far[i - 1])
    approx = fa[i - 1] / ns + float(alpha) * (fa[i] / ns - fa[i - 1] / ns)
    return approx, exact


def brute_tdcf(bona, spoof, params):
    c1, c2 = params.weights()
    ts, fa, fr = brute_sweep(bona, spoof)
    vals = [(c1 * r / len(bona) + c2 * a / len(spoof)) / min(c1, c2) for a, r in zip(fa, fr)]
    return min(vals), [t for t, v in zip(ts, vals) if v == min(vals)]


class TestEer:
    def test_perfect_separation(self):
        assert compute_eer(ScoreSet.from_arrays([0.9, 0.8], [0.1, 0.2]))[0] == 0.0

    def test_total_inversion(self):
        assert compute_eer(ScoreSet.from_arrays([0.1, 0.2], [0.9, 0.8]))[0] == 1.0

    def test_interleaved(self):
        eer, thr = compute_eer(ScoreSet.from_arrays([0.8, 0.4], [0.6, 0.2]))
        assert eer == 0.5 and thr == 0.6

    def test_matches_brute_force(self, rng):
        for _ in range(300):
            nb, ns = rng.integers(1, 60, size=2)
            # coarse rounding forces ties between and within classes
            bona = np.round(rng.normal(0.5, 1.0, nb), int(rng.integers(0, 3)))
            spoof = np.round(rng.normal(-0.5, 1.0, ns), int(rng.integers(0, 3)))
            approx, exact = brute_eer(list(bona), list(spoof))
            eer, _ = compute_eer(ScoreSet.from_arrays(bona, spoof))
            assert eer == approx
            assert abs(eer - float(exact)) <= 1e-15

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(-20, 20), min_size=1, max_size=30), st.lists(st.integers(-20, 20), min_size=1, max_size=30))
    def test_range_and_shift_invariance(self, bona, spoof):
        base = compute_eer(ScoreSet.from_arrays(bona, spoof))[0]
        assert 0.0 <= base <= 1.0
        shifted = compute_eer(ScoreSet.from_arrays(np.array(bona) * 2.0 + 7, np.array(spoof) * 2.0 + 7))[0]
        assert shifted == base

    def test_requires_both_classes(self):
        with pytest.raises(MetricInputError):
            compute_eer(ScoreSet.from_arrays([0.1], []))

    def test_rejects_non_finite(self):
        with pytest.raises(MetricInputError):
            compute_eer(ScoreSet.from_arrays([np.nan], [0.1]))


class TestMinTdcf:
    def test_perfect_separation(self):
        assert compute_min_tdcf(ScoreSet.from_arrays([0.9, 0.8], [0.1, 0.2]), TdcfParams())[0] == 0.0

    def test_matches_brute_force(self, rng):
        params = TdcfParams()
        for _ in range(200):
            bona = list(np.round(rng.normal(0.5, 1.0, rng.integers(1, 40)), 1))
            spoof = list(np.round(rng.normal(-0.5, 1.0, rng.integers(1, 40)), 1))
            val, thr = compute_min_tdcf(ScoreSet.from_arrays(bona, spoof), params)
            ref, ref_thr = brute_tdcf(bona, spoof, params)
            assert val == pytest.approx(ref, abs=1e-12)
            assert thr == ref_thr[0]

    def test_weights(self):
        c1, c2 = TdcfParams().weights()
        assert c1 == pytest.approx(0.9 * 0.95 - 0.05 * 10 * 0.01)
        assert c2 == pytest.approx(10 * 0.05 * 0.3)

    def test_symmetric_set_minimiser_brackets_eer_threshold(self):
        bona = [-0.2, 0.3, 0.6, 0.9]
        spoof = [-b for b in bona]
        s = ScoreSet.from_arrays(bona, spoof)
        eer, eer_thr = compute_eer(s)
        val, _ = compute_min_tdcf(s, SYMMETRIC)
        _, minimisers = brute_tdcf(bona, spoof, SYMMETRIC)
        assert min(minimisers) <= eer_thr <= max(minimisers)
        assert val <= 2 * eer

    def test_adding_correct_utterance_never_hurts(self, rng):
        params = TdcfParams()
        for _ in range(200):
            bona = list(rng.normal(0.5, 1.0, rng.integers(1, 20)))
            spoof = list(rng.normal(-0.5, 1.0, rng.integers(1, 20)))
            before = compute_min_tdcf(ScoreSet.from_arrays(bona, spoof), params)[0]
            if rng.random() < 0.5:
                bona.append(max(bona + spoof) + rng.uniform(0.01, 1.0))
            else:
                spoof.append(min(bona + spoof) - rng.uniform(0.01, 1.0))
            after = compute_min_tdcf(ScoreSet.from_arrays(bona, spoof), params)[0]
            assert after <= before + 1e-12

    def test_degenerate_normalisation(self):
        with pytest.raises(ValueError, match="degenerate"):
            compute_min_tdcf(ScoreSet.from_arrays([1.0], [0.0]), TdcfParams(pi_spoof=0.0))

    def test_invalid_probability(self):
        with pytest.raises(ValueError):
            TdcfParams(asv_miss=1.5).validate()


class TestScoreFiles:
    def test_round_trip(self, tmp_path, rng):
        scores = [(f"utt{i}", float(v)) for i, v in enumerate(rng.normal(size=20))]
        p = tmp_path / "s.txt"
        write_scores(p, scores)
        back = parse_scores(p)
        assert [u for u, _ in back] == [u for u, _ in scores]
        np.testing.assert_allclose([v for _, v in back], [v for _, v in scores], atol=5e-7)
        q = tmp_path / "t.txt"
        write_scores(q, back)
        assert p.read_bytes() == q.read_bytes()

    def test_format(self, tmp_path):
        write_scores(tmp_path / "s.txt", [("a", 1.0), ("b", -0.1234567)])
        assert (tmp_path / "s.txt").read_text() == "a 1.000000\nb -0.123457\n"

    def test_join(self, tmp_path):
        p = tmp_path / "s.txt"
        write_scores(p, [("a", 1.0), ("b", 0.0)])
        s = read_scores(p, {"a": "bonafide", "b": "spoof"})
        assert s.bonafide == [("a", 1.0)] and s.spoof == [("b", 0.0)]
        with pytest.raises(ScoreFormatError, match="'b'"):
            read_scores(p, {"a": "bonafide"})

    def test_empty_file(self, tmp_path):
        (tmp_path / "s.txt").write_text("")
        with pytest.raises(MetricInputError):
            parse_scores(tmp_path / "s.txt")

    def test_errors_carry_line_numbers(self, tmp_path):
        (tmp_path / "s.txt").write_text("a 1.0\nb oops\n")
        with pytest.raises(ScoreFormatError, match=":2:"):
            parse_scores(tmp_path / "s.txt")
        (tmp_path / "d.txt").write_text("a 1.0\na 2.0\n")
        with pytest.raises(ScoreFormatError, match="duplicate"):
            parse_scores(tmp_path / "d.txt")

    def test_writer_rejects_bad_input(self, tmp_path):
        with pytest.raises(ScoreFormatError):
            write_scores(tmp_path / "s.txt", [("a", 1.0), ("a", 2.0)])
        with pytest.raises(ScoreFormatError):
            write_scores(tmp_path / "s.txt", [("a", float("inf"))])

    def test_metrics_report(self, tmp_path):
        rep = metrics_report(ScoreSet.from_arrays([0.8, 0.4], [0.6, 0.2]), TdcfParams())
        assert set(rep) == {"eer", "eer_threshold", "min_tdcf", "min_tdcf_threshold", "n_bonafide", "n_spoof"}
        write_metrics(tmp_path / "m.json", rep)
        assert '"eer": 0.5' in (tmp_path / "m.json").read_text()
