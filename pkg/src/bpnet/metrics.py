"""Clinical agreement statistics: error summaries, device-standard checks
(AAMI pass/fail, BHS grading), Bland-Altman limits of agreement, Pearson
correlation, and error histograms.

Error sign convention: estimate minus reference, everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ErrorStats",
    "AamiResult",
    "BhsResult",
    "BlandAltmanResult",
    "SubjectPrediction",
    "EvalReport",
    "error_stats",
    "aami_check",
    "bhs_grade",
    "bland_altman",
    "pearson_r",
    "error_histogram",
    "build_report",
    "AAMI_MAX_MEAN_ERROR",
    "AAMI_MAX_ERROR_SD",
    "AAMI_MIN_SUBJECTS",
    "BHS_THRESHOLDS_MMHG",
    "BHS_GRADE_CUTOFFS",
]

AAMI_MAX_MEAN_ERROR = 5.0   # mmHg
AAMI_MAX_ERROR_SD = 8.0     # mmHg
AAMI_MIN_SUBJECTS = 85

BHS_THRESHOLDS_MMHG = (5.0, 10.0, 15.0)
# grade -> minimum cumulative percentage within 5 / 10 / 15 mmHg
BHS_GRADE_CUTOFFS = {
    "A": (60.0, 85.0, 95.0),
    "B": (50.0, 75.0, 90.0),
    "C": (40.0, 65.0, 85.0),
}

LOA_SD_MULTIPLE = 1.96


@dataclass
class ErrorStats:
    me: float
    sde: float
    rmse: float
    mae: float
    n: int


@dataclass
class AamiResult:
    passed: bool
    me: float
    sde: float
    n_subjects: int
    failures: list[str] = field(default_factory=list)


@dataclass
class BhsResult:
    pct_within_5: float
    pct_within_10: float
    pct_within_15: float
    grade: str


@dataclass
class BlandAltmanResult:
    mean_diff: float
    sd_diff: float
    loa_low: float
    loa_high: float
    means: np.ndarray
    diffs: np.ndarray


@dataclass
class SubjectPrediction:
    """One subject's reference and estimated pressure series (mmHg)."""

    subject_id: str
    sbp_ref: np.ndarray
    sbp_est: np.ndarray
    dbp_ref: np.ndarray
    dbp_est: np.ndarray


def _paired(ref, est):
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape:
        raise ValueError("length mismatch")
    if ref.size == 0:
        raise ValueError("empty series")
    return ref, est


def error_stats(ref, est) -> ErrorStats:
    """Mean error, sample standard deviation of error (n-1 denominator),
    RMSE and MAE of ``est - ref``."""
    ref, est = _paired(ref, est)
    errors = est - ref
    sde = float(np.std(errors, ddof=1)) if errors.size > 1 else 0.0
    return ErrorStats(
        me=float(np.mean(errors)),
        sde=sde,
        rmse=float(np.sqrt(np.mean(errors ** 2))),
        mae=float(np.mean(np.abs(errors))),
        n=int(errors.size),
    )


def aami_check(stats: ErrorStats, n_subjects: int) -> AamiResult:
    """Device passes when |ME| <= 5 mmHg, SDE <= 8 mmHg, and the study
    population has at least 85 subjects; every violated clause is listed."""
    failures = []
    if abs(stats.me) > AAMI_MAX_MEAN_ERROR:
        failures.append(
            f"mean error {stats.me:.2f} mmHg exceeds +-{AAMI_MAX_MEAN_ERROR:g} mmHg"
        )
    if stats.sde > AAMI_MAX_ERROR_SD:
        failures.append(
            f"error standard deviation {stats.sde:.2f} mmHg exceeds {AAMI_MAX_ERROR_SD:g} mmHg"
        )
    if n_subjects < AAMI_MIN_SUBJECTS:
        failures.append(
            f"population {n_subjects} below the required {AAMI_MIN_SUBJECTS} subjects"
        )
    return AamiResult(
        passed=not failures,
        me=stats.me,
        sde=stats.sde,
        n_subjects=n_subjects,
        failures=failures,
    )


def bhs_grade(errors) -> BhsResult:
    """Grade by cumulative percentage of absolute errors within the 5/10/15
    mmHg thresholds."""
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise ValueError("empty series")
    magnitude = np.abs(errors)
    percentages = tuple(float((magnitude <= t).mean() * 100.0) for t in BHS_THRESHOLDS_MMHG)
    grade = "D"
    for name, cutoffs in BHS_GRADE_CUTOFFS.items():
        if all(p >= c for p, c in zip(percentages, cutoffs)):
            grade = name
            break
    return BhsResult(*percentages, grade=grade)


def bland_altman(ref, est) -> BlandAltmanResult:
    """Differences est - ref against pair means, with the mean difference
    and limits of agreement mean +- 1.96 sd (sample sd)."""
    ref, est = _paired(ref, est)
    diffs = est - ref
    mean_diff = float(np.mean(diffs))
    sd_diff = float(np.std(diffs, ddof=1)) if diffs.size > 1 else 0.0
    return BlandAltmanResult(
        mean_diff=mean_diff,
        sd_diff=sd_diff,
        loa_low=mean_diff - LOA_SD_MULTIPLE * sd_diff,
        loa_high=mean_diff + LOA_SD_MULTIPLE * sd_diff,
        means=(ref + est) / 2.0,
        diffs=diffs,
    )


def pearson_r(ref, est) -> float:
    """Product-moment correlation; undefined for constant series."""
    ref, est = _paired(ref, est)
    ref_c = ref - ref.mean()
    est_c = est - est.mean()
    denom = np.sqrt((ref_c ** 2).sum() * (est_c ** 2).sum())
    if denom == 0.0:
        raise ValueError("undefined correlation for constant series")
    return float((ref_c * est_c).sum() / denom)


def error_histogram(errors, bin_width: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Histogram over bins centered on integer multiples of ``bin_width``
    covering [min, max]; counts sum to the number of errors."""
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise ValueError("empty series")
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    bins = np.rint(errors / bin_width).astype(int)
    k_min, k_max = int(bins.min()), int(bins.max())
    counts = np.bincount(bins - k_min, minlength=k_max - k_min + 1)
    edges = (np.arange(k_min, k_max + 2) - 0.5) * bin_width
    return edges, counts


@dataclass
class EvalReport:
    """Per-subject and pooled statistics plus the standards verdicts."""

    per_subject: dict
    averaged: dict
    combined: dict
    aami: dict
    bhs: dict
    bland_altman: dict
    pearson: dict
    histograms: dict
    n_subjects: int

    def to_dict(self) -> dict:
        def stats_dict(s: ErrorStats) -> dict:
            return {"me": s.me, "sde": s.sde, "rmse": s.rmse, "mae": s.mae, "n": s.n}

        return {
            "n_subjects": self.n_subjects,
            "per_subject": {
                sid: {k: stats_dict(v) for k, v in entry.items()}
                for sid, entry in self.per_subject.items()
            },
            "averaged": self.averaged,
            "combined": {k: stats_dict(v) for k, v in self.combined.items()},
            "aami": {
                k: {
                    "passed": v.passed,
                    "me": v.me,
                    "sde": v.sde,
                    "n_subjects": v.n_subjects,
                    "failures": list(v.failures),
                }
                for k, v in self.aami.items()
            },
            "bhs": {
                k: {
                    "pct_within_5": v.pct_within_5,
                    "pct_within_10": v.pct_within_10,
                    "pct_within_15": v.pct_within_15,
                    "grade": v.grade,
                }
                for k, v in self.bhs.items()
            },
            "bland_altman": {
                k: {
                    "mean_diff": v.mean_diff,
                    "sd_diff": v.sd_diff,
                    "loa_low": v.loa_low,
                    "loa_high": v.loa_high,
                }
                for k, v in self.bland_altman.items()
            },
            "pearson": self.pearson,
            "histograms": {
                k: {"bin_edges": list(map(float, e)), "counts": list(map(int, c))}
                for k, (e, c) in self.histograms.items()
            },
        }


def build_report(predictions: list[SubjectPrediction], histogram_bin_width: float = 1.0) -> EvalReport:
    """Aggregate per-subject predictions two ways: averaging per-subject
    RMSE/MAE values, and stacking all series before computing the pooled
    statistics. Standards checks run on the pooled stack."""
    if not predictions:
        raise ValueError("no subjects")
    per_subject = {}
    for p in predictions:
        per_subject[p.subject_id] = {
            "sbp": error_stats(p.sbp_ref, p.sbp_est),
            "dbp": error_stats(p.dbp_ref, p.dbp_est),
        }
    averaged = {
        channel: {
            "rmse": float(np.mean([per_subject[p.subject_id][channel].rmse for p in predictions])),
            "mae": float(np.mean([per_subject[p.subject_id][channel].mae for p in predictions])),
        }
        for channel in ("sbp", "dbp")
    }
    stacked = {
        "sbp": (
            np.concatenate([p.sbp_ref for p in predictions]),
            np.concatenate([p.sbp_est for p in predictions]),
        ),
        "dbp": (
            np.concatenate([p.dbp_ref for p in predictions]),
            np.concatenate([p.dbp_est for p in predictions]),
        ),
    }
    combined = {k: error_stats(ref, est) for k, (ref, est) in stacked.items()}
    n_subjects = len(predictions)
    return EvalReport(
        per_subject=per_subject,
        averaged=averaged,
        combined=combined,
        aami={k: aami_check(combined[k], n_subjects) for k in combined},
        bhs={k: bhs_grade(est - ref) for k, (ref, est) in stacked.items()},
        bland_altman={k: bland_altman(ref, est) for k, (ref, est) in stacked.items()},
        pearson={k: pearson_r(ref, est) for k, (ref, est) in stacked.items()},
        histograms={
            k: error_histogram(est - ref, histogram_bin_width) for k, (ref, est) in stacked.items()
        },
        n_subjects=n_subjects,
    )
