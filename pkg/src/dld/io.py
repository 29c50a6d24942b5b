"""Trial-data ingestion, the real-data estimate workflow and serializers.

Input CSV schema: header ``stage,arm,value``; stage-1 rows carry arm 1 or 2,
stage-2 rows carry arm ``S`` (the selected arm).
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import statistics
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable

from scipy import optimize

from .estimators import ALL_ESTIMATORS, SYMBOLS, EstimatorId, estimate, umvcue
from .model import TrialDesign, TwoStageObservation, reduce

FIELDS = ("stage", "arm", "value")


class DataValidationError(ValueError):
    """Base class for malformed trial data."""


class RaggedArmsError(DataValidationError):
    pass


class TwoArmStageTwoError(DataValidationError):
    pass


class NonNumericValueError(DataValidationError):
    pass


@dataclass(frozen=True)
class TrialDataset:
    stage1_arm1: tuple[float, ...]
    stage1_arm2: tuple[float, ...]
    stage2: tuple[float, ...]
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("stage1_arm1", "stage1_arm2", "stage2"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if not self.stage1_arm1 or not self.stage1_arm2:
            raise DataValidationError("both stage-1 arms need at least one value")
        if len(self.stage1_arm1) != len(self.stage1_arm2):
            raise RaggedArmsError(
                f"stage-1 arms have unequal lengths {len(self.stage1_arm1)} and "
                f"{len(self.stage1_arm2)}"
            )
        if not self.stage2:
            raise DataValidationError("stage 2 needs at least one value")
        bad = [v for v in self.stage1_arm1 + self.stage1_arm2 + self.stage2 if not math.isfinite(v)]
        if bad:
            raise NonNumericValueError(f"non-finite value {bad[0]!r}")

    @property
    def n1(self) -> int:
        return len(self.stage1_arm1)

    @property
    def n2(self) -> int:
        return len(self.stage2)

    def means(self) -> tuple[float, float, float]:
        return (statistics.fmean(self.stage1_arm1), statistics.fmean(self.stage1_arm2),
                statistics.fmean(self.stage2))

    def observation(self) -> TwoStageObservation:
        return TwoStageObservation.from_means(*self.means())

    def pooled_stage1_sd(self) -> float:
        """Pooled sample SD of the two stage-1 arms."""
        if self.n1 < 2:
            raise DataValidationError("pooled SD needs at least two subjects per arm")
        v1 = statistics.variance(self.stage1_arm1)
        v2 = statistics.variance(self.stage1_arm2)
        return math.sqrt((v1 + v2) / 2)

    def swapped(self) -> "TrialDataset":
        return TrialDataset(self.stage1_arm2, self.stage1_arm1, self.stage2, dict(self.metadata))


def _parse_value(raw: str, line: int) -> float:
    try:
        v = float(raw)
    except (TypeError, ValueError):
        raise NonNumericValueError(f"line {line}: value {raw!r} is not numeric") from None
    if not math.isfinite(v):
        raise NonNumericValueError(f"line {line}: value {raw!r} is not finite")
    return v


def ingest_csv(source) -> TrialDataset:
    """Read a dataset from a path or a text stream."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8", newline="") as fh:
            ds = ingest_csv(fh)
        ds.metadata["source"] = str(source)
        return ds
    reader = csv.DictReader(source)
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != list(FIELDS):
        raise DataValidationError(f"header must be {','.join(FIELDS)}, got {reader.fieldnames}")
    arms: dict[str, list[float]] = {"1": [], "2": []}
    stage2: list[float] = []
    for row in reader:
        line = reader.line_num
        stage, arm = (row.get("stage") or "").strip(), (row.get("arm") or "").strip().upper()
        value = _parse_value((row.get("value") or "").strip(), line)
        if stage == "1":
            if arm not in arms:
                raise DataValidationError(f"line {line}: stage-1 arm must be 1 or 2, got {arm!r}")
            arms[arm].append(value)
        elif stage == "2":
            if arm in ("1", "2"):
                raise TwoArmStageTwoError(
                    f"line {line}: stage-2 rows must use arm S; only the selected arm continues"
                )
            if arm != "S":
                raise DataValidationError(f"line {line}: stage-2 arm must be S, got {arm!r}")
            stage2.append(value)
        else:
            raise DataValidationError(f"line {line}: stage must be 1 or 2, got {stage!r}")
    return TrialDataset(arms["1"], arms["2"], stage2, {})


def dataset_to_csv(ds: TrialDataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FIELDS)
    for arm, values in (("1", ds.stage1_arm1), ("2", ds.stage1_arm2), ("S", ds.stage2)):
        stage = "2" if arm == "S" else "1"
        for v in values:
            w.writerow((stage, arm, repr(v)))
    return buf.getvalue()


def bundled_dataset(name: str = "binding_protein3.csv") -> TrialDataset:
    """A dataset shipped with the package."""
    text = resources.files("dld").joinpath("data", name).read_text(encoding="utf-8")
    ds = ingest_csv(io.StringIO(text))
    ds.metadata["source"] = f"bundled:{name}"
    return ds


# --- sigma ------------------------------------------------------------------

@dataclass(frozen=True)
class SigmaPolicy:
    """Either a fixed sigma or the pooled stage-1 sample SD."""

    kind: str = "pooled-stage1"
    value: float | None = None

    def __post_init__(self):
        if self.kind not in ("fixed", "pooled-stage1"):
            raise ValueError(f"unknown sigma policy {self.kind!r}")
        if self.kind == "fixed" and not (self.value is not None and math.isfinite(self.value)
                                         and self.value > 0):
            raise ValueError(f"fixed sigma must be positive, got {self.value!r}")

    @classmethod
    def fixed(cls, sigma: float) -> "SigmaPolicy":
        return cls("fixed", float(sigma))

    def resolve(self, ds: TrialDataset) -> tuple[float, str]:
        if self.kind == "fixed":
            return self.value, "fixed"
        return ds.pooled_stage1_sd(), "pooled-stage1"


def back_solve_sigma(ds: TrialDataset, umvcue_value: float,
                     lo: float = 1e-3, hi: float = 1e7) -> float:
    """The sigma at which the conditionally unbiased estimate equals
    ``umvcue_value``, found by bisection.

    The correction sigma * kappa * M(q / sigma) grows monotonically in
    sigma, so the root is unique whenever the target lies below t1.
    """
    obs = ds.observation()

    def gap(sigma):
        design = TrialDesign(ds.n1, ds.n2, sigma)
        return float(umvcue(design, reduce(design, obs))) - umvcue_value

    if gap(lo) * gap(hi) > 0:
        raise ValueError("target is not bracketed by the sigma search interval")
    return optimize.bisect(gap, lo, hi, xtol=1e-12, rtol=1e-15, maxiter=500)


# --- estimate report --------------------------------------------------------

@dataclass(frozen=True)
class EstimateReport:
    values: dict[EstimatorId, float]
    n1: int
    n2: int
    sigma: float
    sigma_source: str
    means: tuple[float, float, float]
    selected: int
    statistics: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "design": {"n1": self.n1, "n2": self.n2, "sigma": self.sigma,
                       "sigma_source": self.sigma_source},
            "means": {"stage1_arm1": self.means[0], "stage1_arm2": self.means[1],
                      "stage2": self.means[2]},
            "selected_arm": self.selected,
            "statistics": self.statistics,
            "estimates": {t.value: self.values[t] for t in self.values},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("estimator", "symbol", "value", "n1", "n2", "sigma", "sigma_source"))
        for t, v in self.values.items():
            w.writerow((t.value, SYMBOLS[t], repr(v), self.n1, self.n2, repr(self.sigma),
                        self.sigma_source))
        return buf.getvalue()

    def table(self) -> str:
        """Human-readable table at 6 significant digits."""
        lines = [f"n1={self.n1} n2={self.n2} sigma={self.sigma:.6g} ({self.sigma_source}) "
                 f"selected arm {self.selected}"]
        for t, v in self.values.items():
            lines.append(f"{SYMBOLS[t]:<12}{t.value:<24}{v:.6g}")
        return "\n".join(lines) + "\n"


def estimate_command(ds: TrialDataset, sigma_policy: SigmaPolicy = SigmaPolicy(),
                     tags: Iterable[EstimatorId] = ALL_ESTIMATORS) -> EstimateReport:
    sigma, source = sigma_policy.resolve(ds)
    design = TrialDesign(ds.n1, ds.n2, sigma)
    obs = ds.observation()
    stats = reduce(design, obs)
    values = {EstimatorId(t): float(estimate(t, design, obs)) for t in tags}
    st = {k: float(getattr(stats, k)) for k in ("xbar_s", "xbar_loser", "d1", "d2", "t1", "t2", "q")}
    return EstimateReport(values, ds.n1, ds.n2, float(sigma), source, ds.means(),
                          int(obs.selected), st)


# --- files --------------------------------------------------------------------

def atomic_write(path, text: str) -> Path:
    """Write ``text`` to ``path`` via a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def rows_to_csv(header: Iterable[str], rows: Iterable[Iterable]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()
