import numpy as np
from scipy import stats

from borrowbench.data import BinaryArm, ContinuousArm, StudySet


def binary_study(hist, cc=(6, 1), ct=(23, 14)):
    """hist: list of (n, y)."""
    return StudySet("binary", tuple((f"H{i + 1}", BinaryArm(*a)) for i, a in enumerate(hist)),
                    BinaryArm(*cc), BinaryArm(*ct))


def continuous_study(hist, cc=(55, 4.8, 6.3), ct=(64, 2.9, 9.6)):
    """hist: list of (n, mean, sd)."""
    return StudySet("continuous", tuple((f"H{i + 1}", ContinuousArm(*a)) for i, a in enumerate(hist)),
                    ContinuousArm(*cc), ContinuousArm(*ct))


def ks_to(draws, cdf):
    return stats.kstest(np.asarray(draws), cdf).statistic


def ks_two(a, b):
    return stats.ks_2samp(np.asarray(a), np.asarray(b)).statistic


# criterion -> (passed, detail); printed by the terminal-summary hook
ACCEPTANCE: dict = {}


class Criterion:
    """Collects named checks for one acceptance criterion and records the verdict."""

    def __init__(self, key):
        self.key = key
        self.failed = []
        self.notes = []

    def check(self, ok, label):
        self.notes.append(label)
        if not ok:
            self.failed.append(label)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            ACCEPTANCE[self.key] = (False, f"error: {exc_type.__name__}: {exc}")
            return False
        detail = "; ".join(self.failed) if self.failed else "; ".join(self.notes)
        ACCEPTANCE[self.key] = (not self.failed, detail)
        print(f"{self.key} {'PASS' if not self.failed else 'FAIL'}  {detail}")
        assert not self.failed, f"{self.key} failed: {'; '.join(self.failed)}"
        return False
