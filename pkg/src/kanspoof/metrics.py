"""Detection metrics over bonafide/spoof scores (higher = more bonafide).

Both metrics sweep the same thresholds: every unique score plus one
sentinel just above the maximum.  At threshold ``t``

* false acceptance  ``FAR(t) = #{spoof >= t} / n_spoof``
* false rejection   ``FRR(t) = #{bonafide < t} / n_bonafide``

so a tie between a bonafide and a spoof score counts the spoof as accepted
and the bonafide as accepted too.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MetricInputError(ValueError):
    """Scores are missing, empty or non-finite."""


class ScoreFormatError(ValueError):
    """A score file could not be parsed or joined with its labels."""


@dataclass
class ScoreSet:
    bonafide: list[tuple[str, float]] = field(default_factory=list)
    spoof: list[tuple[str, float]] = field(default_factory=list)

    @classmethod
    def from_arrays(cls, bonafide, spoof) -> "ScoreSet":
        return cls(
            [(f"b{i}", float(s)) for i, s in enumerate(bonafide)],
            [(f"s{i}", float(s)) for i, s in enumerate(spoof)],
        )

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        b = np.array([s for _, s in self.bonafide], dtype=np.float64)
        s = np.array([v for _, v in self.spoof], dtype=np.float64)
        return b, s

    def swapped(self) -> "ScoreSet":
        return ScoreSet(list(self.spoof), list(self.bonafide))


@dataclass(frozen=True)
class TdcfParams:
    """Constants of the normalised tandem detection cost.

    The ASV operating point is fixed: ``asv_miss`` (target rejected),
    ``asv_false_alarm`` (non-target accepted) and ``asv_spoof_pass``
    (spoof accepted).  ``c_miss`` / ``c_fa`` weight both systems' errors.
    """

    pi_target: float = 0.9
    pi_nontarget: float = 0.05
    pi_spoof: float = 0.05
    c_miss: float = 1.0
    c_fa: float = 10.0
    asv_miss: float = 0.05
    asv_false_alarm: float = 0.01
    asv_spoof_pass: float = 0.3

    def validate(self) -> "TdcfParams":
        for name in ("pi_target", "pi_nontarget", "pi_spoof", "asv_miss", "asv_false_alarm", "asv_spoof_pass"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability, got {v}")
        if self.c_miss <= 0 or self.c_fa <= 0:
            raise ValueError("costs must be positive")
        return self

    def weights(self) -> tuple[float, float]:
        """Cost weights of the countermeasure's miss and false-alarm rates."""
        c1 = self.pi_target * (self.c_miss - self.c_miss * self.asv_miss) - (
            self.pi_nontarget * self.c_fa * self.asv_false_alarm
        )
        c2 = self.c_fa * self.pi_spoof * self.asv_spoof_pass
        return c1, c2


def _check(scores: ScoreSet) -> tuple[np.ndarray, np.ndarray]:
    b, s = scores.arrays()
    if b.size == 0 or s.size == 0:
        raise MetricInputError("both bonafide and spoof scores are required")
    if not (np.all(np.isfinite(b)) and np.all(np.isfinite(s))):
        raise MetricInputError("scores must be finite")
    return b, s


def error_counts(bonafide: np.ndarray, spoof: np.ndarray):
    """Thresholds and integer counts ``(#spoof >= t, #bonafide < t)`` at each."""
    uniq = np.unique(np.concatenate([bonafide, spoof]))
    thresholds = np.append(uniq, np.nextafter(uniq[-1], np.inf))
    b_sorted = np.sort(bonafide)
    s_sorted = np.sort(spoof)
    fa = spoof.size - np.searchsorted(s_sorted, thresholds, side="left")
    fr = np.searchsorted(b_sorted, thresholds, side="left")
    return thresholds, fa, fr


def eer_from_counts(thresholds, fa, fr, n_bonafide: int, n_spoof: int) -> tuple[float, float]:
    """Linearly interpolated crossing of FAR and FRR along the sweep."""
    # sign of FAR - FRR in exact integer arithmetic
    diff = [int(a) * n_bonafide - int(r) * n_spoof for a, r in zip(fa, fr)]
    i = next(k for k, d in enumerate(diff) if d <= 0)
    far_i = fa[i] / n_spoof
    if diff[i] == 0 or i == 0:
        return float(far_i), float(thresholds[i])
    alpha = diff[i - 1] / (diff[i - 1] - diff[i])
    far_p = fa[i - 1] / n_spoof
    eer = far_p + alpha * (far_i - far_p)
    thr = thresholds[i - 1] + alpha * (thresholds[i] - thresholds[i - 1])
    return float(eer), float(thr)


def compute_eer(scores: ScoreSet) -> tuple[float, float]:
    """Equal error rate and the threshold where it occurs."""
    b, s = _check(scores)
    thresholds, fa, fr = error_counts(b, s)
    return eer_from_counts(thresholds, fa, fr, b.size, s.size)


def compute_min_tdcf(scores: ScoreSet, params: TdcfParams) -> tuple[float, float]:
    """Minimum normalised t-DCF over the threshold sweep.

    ``t-DCF(t) = (C1 * FRR(t) + C2 * FAR(t)) / min(C1, C2)`` where C1, C2
    come from :meth:`TdcfParams.weights`.
    """
    params.validate()
    c1, c2 = params.weights()
    norm = min(c1, c2)
    if norm <= 0:
        raise ValueError(f"degenerate t-DCF normalisation min(C1, C2) = {norm}")
    b, s = _check(scores)
    thresholds, fa, fr = error_counts(b, s)
    curve = (c1 * (fr / b.size) + c2 * (fa / s.size)) / norm
    i = int(np.argmin(curve))
    return float(curve[i]), float(thresholds[i])


def metrics_report(scores: ScoreSet, params: TdcfParams) -> dict:
    eer, eer_thr = compute_eer(scores)
    tdcf, tdcf_thr = compute_min_tdcf(scores, params)
    return {
        "eer": eer,
        "eer_threshold": eer_thr,
        "min_tdcf": tdcf,
        "min_tdcf_threshold": tdcf_thr,
        "n_bonafide": len(scores.bonafide),
        "n_spoof": len(scores.spoof),
    }


def write_metrics(path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


# -- score files -------------------------------------------------------------


def write_scores(path, scores: list[tuple[str, float]]) -> None:
    """One ``utt_id score`` line per utterance, score to 6 decimals."""
    seen = set()
    lines = []
    for utt, score in scores:
        if utt in seen:
            raise ScoreFormatError(f"duplicate utterance id {utt!r}")
        if not math.isfinite(score):
            raise ScoreFormatError(f"non-finite score for {utt!r}")
        seen.add(utt)
        lines.append(f"{utt} {score:.6f}\n")
    Path(path).write_text("".join(lines))


def parse_scores(path) -> list[tuple[str, float]]:
    text = Path(path).read_text()
    out: list[tuple[str, float]] = []
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ScoreFormatError(f"{path}:{lineno}: expected 'utt_id score'")
        try:
            value = float(parts[1])
        except ValueError:
            raise ScoreFormatError(f"{path}:{lineno}: unparseable score {parts[1]!r}") from None
        if parts[0] in seen:
            raise ScoreFormatError(f"{path}:{lineno}: duplicate utterance id {parts[0]!r}")
        seen.add(parts[0])
        out.append((parts[0], value))
    if not out:
        raise MetricInputError(f"{path}: empty score file")
    return out


def read_scores(path, labels: dict[str, str]) -> ScoreSet:
    """Parse a score file and split it by the ``labels`` manifest."""
    result = ScoreSet()
    for utt, value in parse_scores(path):
        label = labels.get(utt)
        if label is None:
            raise ScoreFormatError(f"utterance {utt!r} is not in the label manifest")
        if label == "bonafide":
            result.bonafide.append((utt, value))
        elif label == "spoof":
            result.spoof.append((utt, value))
        else:
            raise ScoreFormatError(f"utterance {utt!r} has label {label!r}")
    return result
