"""Evaluator-accuracy reporting and the design-quality assessment rubric:
visual-fidelity composite, instruction-compliance vector, and the collapsed
accuracy metric.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

ACCEPT_COMPOSITE_THRESHOLD = 4.0
DEFAULT_SOFT_MINIMUM = 1.0
EQUAL_WEIGHTS = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
_EPS = 1e-9


class MissingPicksError(ValueError):
    def __init__(self, case_ids: list[str]):
        self.case_ids = case_ids
        super().__init__(f"no pick recorded for case(s): {', '.join(case_ids)}")


@dataclass(frozen=True)
class GoldLabel:
    case_id: str
    scenario_id: int
    correct_candidate_id: str

    def __post_init__(self) -> None:
        if not 1 <= self.scenario_id <= 8:
            raise ValueError(f"scenario_id must be in 1..8, got {self.scenario_id}")


def read_gold_labels(path: str | Path) -> list[GoldLabel]:
    """Gold-label CSV: case_id, scenario_id, correct_candidate_id."""
    labels = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            labels.append(
                GoldLabel(
                    case_id=row["case_id"],
                    scenario_id=int(row["scenario_id"]),
                    correct_candidate_id=row["correct_candidate_id"],
                )
            )
    return labels


@dataclass(frozen=True)
class AccuracyRow:
    scenario_id: int
    cases: int
    matches: int

    @property
    def accuracy(self) -> float:
        return self.matches / self.cases

    @property
    def percent(self) -> str:
        return f"{100.0 * self.matches / self.cases:.1f}"


@dataclass(frozen=True)
class AccuracyReport:
    rows: tuple[AccuracyRow, ...]
    overall: AccuracyRow
    warnings: tuple[str, ...] = ()

    def percent_by_scenario(self) -> dict[int, str]:
        return {row.scenario_id: row.percent for row in self.rows}

    def format_table(self) -> str:
        header = ["Design Scenario"] + [str(r.scenario_id) for r in self.rows] + ["Overall"]
        values = ["Eval Acc. (%)"] + [r.percent for r in self.rows] + [self.overall.percent]
        width = max(len(c) for c in header + values)
        fmt = lambda cells: "  ".join(c.rjust(width) for c in cells)  # noqa: E731
        return fmt(header) + "\n" + fmt(values)

    def to_dict(self) -> dict:
        return {
            "per_scenario": {
                str(r.scenario_id): {"cases": r.cases, "matches": r.matches, "percent": r.percent}
                for r in self.rows
            },
            "overall": {
                "cases": self.overall.cases,
                "matches": self.overall.matches,
                "percent": self.overall.percent,
            },
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def evaluator_accuracy(labels: list[GoldLabel], picks: dict[str, str]) -> AccuracyReport:
    """Per-scenario accuracy of the evaluator's picks against gold labels."""
    missing = sorted(label.case_id for label in labels if label.case_id not in picks)
    if missing:
        raise MissingPicksError(missing)
    per_scenario: dict[int, list[bool]] = {}
    for label in labels:
        hit = picks[label.case_id] == label.correct_candidate_id
        per_scenario.setdefault(label.scenario_id, []).append(hit)

    rows = []
    warnings = []
    for scenario_id in range(1, 9):
        outcomes = per_scenario.get(scenario_id)
        if not outcomes:
            warnings.append(f"scenario {scenario_id} has zero cases; row omitted")
            continue
        rows.append(
            AccuracyRow(scenario_id=scenario_id, cases=len(outcomes), matches=sum(outcomes))
        )
    if not rows:
        raise ValueError("no scenario has any cases")
    total_cases = sum(r.cases for r in rows)
    total_matches = sum(r.matches for r in rows)
    overall = AccuracyRow(scenario_id=0, cases=total_cases, matches=total_matches)
    for message in warnings:
        logger.warning("%s", message)
    return AccuracyReport(rows=tuple(rows), overall=overall, warnings=tuple(warnings))


@dataclass(frozen=True)
class FidelityScore:
    """1-5 Likert scores for lane plausibility, scene integration, and
    background preservation, aggregated by a weighted composite."""

    lane_plausibility: int
    scene_integration: int
    background_preservation: int
    background_change_flag: bool = False
    weights: tuple[float, float, float] = EQUAL_WEIGHTS

    def __post_init__(self) -> None:
        for name in ("lane_plausibility", "scene_integration", "background_preservation"):
            value = getattr(self, name)
            if not 1 <= value <= 5:
                raise ValueError(f"{name} must be in 1..5, got {value}")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be non-negative")
        if abs(sum(self.weights) - 1.0) > _EPS:
            raise ValueError(f"weights must sum to 1, got {sum(self.weights)}")


def composite_fidelity(score: FidelityScore) -> float:
    """Weighted mean of the three sub-scores; lies in [1, 5]."""
    subs = (score.lane_plausibility, score.scene_integration, score.background_preservation)
    return float(sum(w * s for w, s in zip(score.weights, subs)))


@dataclass(frozen=True)
class ComplianceRecord:
    """Binary constraint vector (True == satisfied) plus global adherence."""

    hard: dict[str, bool] = field(default_factory=dict)
    soft: dict[str, bool] = field(default_factory=dict)
    global_adherence: int = 3

    def __post_init__(self) -> None:
        if not 1 <= self.global_adherence <= 5:
            raise ValueError("global_adherence must be in 1..5")

    @property
    def compliance_rate(self) -> float:
        total = len(self.hard) + len(self.soft)
        if total == 0:
            return 1.0
        satisfied = sum(self.hard.values()) + sum(self.soft.values())
        return satisfied / total

    @property
    def soft_rate(self) -> float:
        if not self.soft:
            return 1.0
        return sum(self.soft.values()) / len(self.soft)

    @property
    def all_hard_satisfied(self) -> bool:
        return all(self.hard.values())


def accept_case(
    fidelity: FidelityScore,
    compliance: ComplianceRecord,
    soft_minimum: float = DEFAULT_SOFT_MINIMUM,
) -> bool:
    """Collapsed accept/reject: composite >= 4 (inclusive), no background-change
    flag, every hard constraint satisfied, soft satisfaction >= soft_minimum."""
    if composite_fidelity(fidelity) < ACCEPT_COMPOSITE_THRESHOLD - _EPS:
        return False
    if fidelity.background_change_flag:
        return False
    if not compliance.all_hard_satisfied:
        return False
    return compliance.soft_rate >= soft_minimum - _EPS


def accuracy(cases: list[bool]) -> float:
    """Proportion of accepted cases."""
    if not cases:
        raise ValueError("accuracy requires at least one case")
    return sum(cases) / len(cases)
