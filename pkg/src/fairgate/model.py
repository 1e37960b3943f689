"""Core domain types: records, datasets, utilities, criteria and decision rules.

All types are immutable after construction and every operation here is a pure
function, so everything in this module is safe to share across threads.

Decision rules map a risk score (an estimate of the probability that the
outcome is 1) to a decision probability. Deterministic rules yield 0 or 1
everywhere except at threshold boundaries, where an explicit randomization
probability splits the score atom. Scores are compared with exact equality:
inputs are decimal text, so two records either share an atom or they do not.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence


class CoverageError(KeyError):
    """A rule was asked to decide for a group or stratum it does not cover."""


# ---------------------------------------------------------------------------
# Individuals and datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Record:
    """One individual: risk score, binary outcome, group and optional extras."""

    id: str
    label: int
    group: str
    score: float | None = None
    legit: Mapping[str, str] = field(default_factory=dict)
    features: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r} (record {self.id})")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score!r} (record {self.id})")


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of records with declared groups and attributes."""

    records: tuple[Record, ...]
    groups: tuple[str, ...]
    legit_names: tuple[str, ...] = ()
    feature_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        declared = set(self.groups)
        seen: set[str] = set()
        for rec in self.records:
            if rec.group not in declared:
                raise ValueError(f"record {rec.id} references undeclared group {rec.group!r}")
            seen.add(rec.group)
            for name in rec.legit:
                if name not in self.legit_names:
                    raise ValueError(
                        f"record {rec.id} carries undeclared legitimate attribute {name!r}"
                    )
        missing = declared - seen
        if missing:
            raise ValueError(f"declared groups without records: {sorted(missing)}")

    @classmethod
    def from_records(
        cls,
        records: Sequence[Record],
        legit_names: Sequence[str] = (),
        feature_names: Sequence[str] = (),
    ) -> "Dataset":
        groups = tuple(sorted({r.group for r in records}))
        return cls(tuple(records), groups, tuple(legit_names), tuple(feature_names))

    def __len__(self) -> int:
        return len(self.records)

    def by_group(self) -> dict[str, list[Record]]:
        out: dict[str, list[Record]] = {g: [] for g in self.groups}
        for rec in self.records:
            out[rec.group].append(rec)
        return out

    def require_scores(self) -> None:
        for rec in self.records:
            if rec.score is None:
                raise ValueError(f"record {rec.id} has no score")

    def stratum_of(self, record: Record) -> tuple[str, ...]:
        """Legitimate-attribute value tuple of a record, in declared name order."""
        try:
            return tuple(record.legit[name] for name in self.legit_names)
        except KeyError as exc:
            raise ValueError(f"record {record.id} misses legitimate attribute {exc}") from exc


# ---------------------------------------------------------------------------
# Payoff matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UtilityMatrix:
    """Decision-maker payoff u(d, y) for each of the four (decision, outcome) cells."""

    u00: float
    u01: float
    u10: float
    u11: float

    def __post_init__(self) -> None:
        if not (self.u11 > self.u01 or self.u00 > self.u10):
            raise ValueError(
                "degenerate utility: deciding 1 must help when the outcome is 1, "
                "or deciding 0 must help when the outcome is 0"
            )

    def u(self, d: int, y: int) -> float:
        return (self.u00, self.u01, self.u10, self.u11)[2 * d + y]

    @classmethod
    def accuracy(cls) -> "UtilityMatrix":
        """Payoff 1 when the decision matches the outcome, 0 otherwise."""
        return cls(1.0, 0.0, 0.0, 1.0)

    def cells(self) -> tuple[float, float, float, float]:
        return (self.u00, self.u01, self.u10, self.u11)


@dataclass(frozen=True)
class BenefitMatrix:
    """Decision-subject benefit b(d, y) for each (decision, outcome) cell."""

    b00: float
    b01: float
    b10: float
    b11: float

    def __post_init__(self) -> None:
        cells = {self.b00, self.b01, self.b10, self.b11}
        if len(cells) == 1:
            raise ValueError("benefit matrix is constant: nothing is distributed")

    def b(self, d: int, y: int) -> float:
        return (self.b00, self.b01, self.b10, self.b11)[2 * d + y]

    def cells(self) -> tuple[float, float, float, float]:
        return (self.b00, self.b01, self.b10, self.b11)


# ---------------------------------------------------------------------------
# Fairness criteria
# ---------------------------------------------------------------------------


class CriterionKind(str, Enum):
    INDEPENDENCE = "independence"
    CONDITIONAL_STATISTICAL_PARITY = "conditional_statistical_parity"
    SEPARATION = "separation"
    TPR_PARITY = "tpr_parity"
    FPR_PARITY = "fpr_parity"
    SUFFICIENCY = "sufficiency"
    PPV_PARITY = "ppv_parity"
    FOR_PARITY = "for_parity"


@dataclass(frozen=True)
class FairnessCriterion:
    """A statistical group fairness criterion with its relaxation level gamma.

    gamma = 1 demands exact parity of the criterion's rate family across
    groups; gamma = 0 removes the constraint; 0.8 is the four-fifths rule.
    """

    kind: CriterionKind
    gamma: float = 1.0
    legit_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.kind is CriterionKind.CONDITIONAL_STATISTICAL_PARITY and not self.legit_names:
            raise ValueError("conditional statistical parity needs at least one legitimate attribute")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "gamma": self.gamma,
            "legit_names": list(self.legit_names),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "FairnessCriterion":
        return cls(
            kind=CriterionKind(data["kind"]),
            gamma=float(data.get("gamma", 1.0)),
            legit_names=tuple(data.get("legit_names", ())),
        )


# ---------------------------------------------------------------------------
# Decision rules
# ---------------------------------------------------------------------------


def _check_unit(value: float, what: str) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{what} must be in [0, 1], got {value}")


@dataclass(frozen=True)
class SingleThreshold:
    """Accept scores above tau; at tau accept with probability ``boundary``.

    The default boundary of 1 gives closed acceptance (score >= tau).
    """

    tau: float
    boundary: float = 1.0

    def __post_init__(self) -> None:
        _check_unit(self.tau, "threshold")
        _check_unit(self.boundary, "boundary probability")

    def probability(self, score: float, group: str, legit: Mapping[str, str]) -> float:
        if score > self.tau:
            return 1.0
        if score == self.tau:
            return self.boundary
        return 0.0


@dataclass(frozen=True)
class GroupCut:
    """Per-group threshold with the probability of accepting exactly at it."""

    tau: float
    boundary: float = 1.0

    def __post_init__(self) -> None:
        _check_unit(self.tau, "threshold")
        _check_unit(self.boundary, "boundary probability")


@dataclass(frozen=True)
class GroupThreshold:
    """Group-specific thresholds: accept score > tau_g, split the atom at tau_g."""

    cuts: Mapping[str, GroupCut]

    def _cut(self, group: str) -> GroupCut:
        try:
            return self.cuts[group]
        except KeyError:
            raise CoverageError(f"rule does not cover group {group!r}") from None

    def probability(self, score: float, group: str, legit: Mapping[str, str]) -> float:
        cut = self._cut(group)
        if score > cut.tau:
            return 1.0
        if score == cut.tau:
            return cut.boundary
        return 0.0


@dataclass(frozen=True)
class IntervalCut:
    """Per-group accept interval [low, high] with boundary randomization.

    Exactly one endpoint is active: either 0 < low < high = 1 (lower-bound
    form, randomized at low) or 0 = low < high < 1 (upper-bound form,
    randomized at high).
    """

    low: float
    high: float
    boundary: float = 1.0

    def __post_init__(self) -> None:
        _check_unit(self.low, "interval low endpoint")
        _check_unit(self.high, "interval high endpoint")
        _check_unit(self.boundary, "boundary probability")
        lower_form = 0.0 < self.low < self.high == 1.0
        upper_form = 0.0 == self.low < self.high < 1.0
        if not (lower_form or upper_form):
            raise ValueError(
                f"interval [{self.low}, {self.high}] is neither a lower-bound "
                "(0 < low < high = 1) nor an upper-bound (0 = low < high < 1) form"
            )

    @property
    def is_lower_form(self) -> bool:
        return self.high == 1.0

    def probability(self, score: float) -> float:
        if self.is_lower_form:
            if score > self.low:
                return 1.0
            if score == self.low:
                return self.boundary
            return 0.0
        if score < self.high:
            return 1.0
        if score == self.high:
            return self.boundary
        return 0.0


@dataclass(frozen=True)
class GroupInterval:
    """Group-specific lower- or upper-bound interval rules."""

    cuts: Mapping[str, IntervalCut]

    def _cut(self, group: str) -> IntervalCut:
        try:
            return self.cuts[group]
        except KeyError:
            raise CoverageError(f"rule does not cover group {group!r}") from None

    def probability(self, score: float, group: str, legit: Mapping[str, str]) -> float:
        return self._cut(group).probability(score)


@dataclass(frozen=True)
class StratifiedGroupThreshold:
    """Thresholds per (group, legitimate-attribute stratum)."""

    legit_names: tuple[str, ...]
    cuts: Mapping[tuple[str, tuple[str, ...]], GroupCut]

    def _cut(self, group: str, legit: Mapping[str, str]) -> GroupCut:
        try:
            stratum = tuple(legit[name] for name in self.legit_names)
        except KeyError as exc:
            raise CoverageError(
                f"group {group!r}: record misses legitimate attribute {exc}"
            ) from None
        try:
            return self.cuts[(group, stratum)]
        except KeyError:
            raise CoverageError(
                f"rule does not cover group {group!r} in stratum {stratum!r}"
            ) from None

    def probability(self, score: float, group: str, legit: Mapping[str, str]) -> float:
        cut = self._cut(group, legit)
        if score > cut.tau:
            return 1.0
        if score == cut.tau:
            return cut.boundary
        return 0.0


@dataclass(frozen=True)
class Mixture:
    """Per-group mixture of two rules: apply ``first`` with probability w_g."""

    weights: Mapping[str, float]
    first: "DecisionRule"
    second: "DecisionRule"

    def __post_init__(self) -> None:
        for group, w in self.weights.items():
            if not 0.0 <= w <= 1.0:
                raise ValueError(f"mixture weight for group {group!r} must be in [0, 1], got {w}")

    def _weight(self, group: str) -> float:
        try:
            return self.weights[group]
        except KeyError:
            raise CoverageError(f"mixture does not cover group {group!r}") from None

    def probability(self, score: float, group: str, legit: Mapping[str, str]) -> float:
        w = self._weight(group)
        p1 = self.first.probability(score, group, legit) if w > 0.0 else 0.0
        p2 = self.second.probability(score, group, legit) if w < 1.0 else 0.0
        return w * p1 + (1.0 - w) * p2


DecisionRule = (
    SingleThreshold | GroupThreshold | GroupInterval | StratifiedGroupThreshold | Mixture
)

_EMPTY: Mapping[str, str] = {}


def decision_probability(
    rule: DecisionRule, score: float, group: str, legit: Mapping[str, str] = _EMPTY
) -> float:
    """Probability that the rule decides 1, taken over its randomization."""
    return rule.probability(score, group, legit)


def decide(
    rule: DecisionRule,
    score: float,
    group: str,
    legit: Mapping[str, str] = _EMPTY,
    random_draw: float = 0.0,
) -> int:
    """Sample a binary decision using one uniform [0, 1) draw.

    The draw selects the branch of a mixture and is rescaled before being
    passed on, so the sub-rule still sees a uniform draw; for threshold and
    interval rules it resolves the boundary randomization. With a fixed draw,
    raising the score never flips a threshold decision from 1 to 0.
    """
    if not 0.0 <= random_draw < 1.0:
        raise ValueError(f"random draw must be in [0, 1), got {random_draw}")
    if isinstance(rule, Mixture):
        w = rule._weight(group)
        if random_draw < w:
            return decide(rule.first, score, group, legit, random_draw / w)
        return decide(rule.second, score, group, legit, (random_draw - w) / (1.0 - w))
    p = rule.probability(score, group, legit)
    if p == 1.0:
        return 1
    if p == 0.0:
        return 0
    return 1 if random_draw < p else 0


# ---------------------------------------------------------------------------
# Rule serialization
# ---------------------------------------------------------------------------


def rule_to_dict(rule: DecisionRule) -> dict:
    if isinstance(rule, SingleThreshold):
        return {"kind": "single_threshold", "tau": rule.tau, "boundary": rule.boundary}
    if isinstance(rule, GroupThreshold):
        return {
            "kind": "group_threshold",
            "groups": {
                g: {"tau": c.tau, "boundary": c.boundary} for g, c in sorted(rule.cuts.items())
            },
        }
    if isinstance(rule, GroupInterval):
        return {
            "kind": "group_interval",
            "groups": {
                g: {"low": c.low, "high": c.high, "boundary": c.boundary}
                for g, c in sorted(rule.cuts.items())
            },
        }
    if isinstance(rule, StratifiedGroupThreshold):
        return {
            "kind": "stratified_group_threshold",
            "legit_names": list(rule.legit_names),
            "cuts": [
                {"group": g, "stratum": list(s), "tau": c.tau, "boundary": c.boundary}
                for (g, s), c in sorted(rule.cuts.items())
            ],
        }
    if isinstance(rule, Mixture):
        return {
            "kind": "mixture",
            "weights": dict(sorted(rule.weights.items())),
            "first": rule_to_dict(rule.first),
            "second": rule_to_dict(rule.second),
        }
    raise TypeError(f"unknown rule type {type(rule).__name__}")


def rule_from_dict(data: Mapping) -> DecisionRule:
    kind = data["kind"]
    if kind == "single_threshold":
        return SingleThreshold(float(data["tau"]), float(data.get("boundary", 1.0)))
    if kind == "group_threshold":
        return GroupThreshold(
            {
                g: GroupCut(float(c["tau"]), float(c.get("boundary", 1.0)))
                for g, c in data["groups"].items()
            }
        )
    if kind == "group_interval":
        return GroupInterval(
            {
                g: IntervalCut(float(c["low"]), float(c["high"]), float(c.get("boundary", 1.0)))
                for g, c in data["groups"].items()
            }
        )
    if kind == "stratified_group_threshold":
        return StratifiedGroupThreshold(
            legit_names=tuple(data["legit_names"]),
            cuts={
                (c["group"], tuple(c["stratum"])): GroupCut(
                    float(c["tau"]), float(c.get("boundary", 1.0))
                )
                for c in data["cuts"]
            },
        )
    if kind == "mixture":
        return Mixture(
            weights={g: float(w) for g, w in data["weights"].items()},
            first=rule_from_dict(data["first"]),
            second=rule_from_dict(data["second"]),
        )
    raise ValueError(f"unknown rule kind {kind!r}")


def write_rule_file(
    path: str | Path, rule: DecisionRule, criterion: FairnessCriterion | None = None
) -> None:
    """Persist a rule (and the criterion it was optimized for) as readable JSON.

    Floats are written at full round-trip precision, so re-parsing reproduces
    identical decision probabilities.
    """
    doc = {
        "rule": rule_to_dict(rule),
        "criterion": criterion.to_dict() if criterion is not None else None,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def read_rule_file(path: str | Path) -> tuple[DecisionRule, FairnessCriterion | None]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    rule = rule_from_dict(doc["rule"])
    criterion = None
    if doc.get("criterion") is not None:
        criterion = FairnessCriterion.from_dict(doc["criterion"])
    return rule, criterion
