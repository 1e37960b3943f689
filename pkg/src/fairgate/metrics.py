"""Empirical group rates, disparity ratios, utilities and equal-chances checks.

All quantities are computed from analytic decision probabilities rather than
sampled decisions, so parity can be verified exactly. Conditioning cells that
are empty are reported as undefined (``None``) instead of silently counting
as fair or unfair; ratio computations skip them and emit a warning.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping

from .assessment import JustifierKind, MoralAssessment
from .model import (
    BenefitMatrix,
    CriterionKind,
    Dataset,
    DecisionRule,
    FairnessCriterion,
    UtilityMatrix,
    decision_probability,
)


class UndefinedMetricError(ValueError):
    """Every cell the criterion needs is undefined on this data."""


class UndefinedCellWarning(UserWarning):
    """An empty conditioning cell was skipped in a ratio computation."""


@dataclass(frozen=True)
class GroupRates:
    """Per-group empirical rates of a rule on a dataset.

    positive_rate  P(D=1 | G=g)
    tpr            P(D=1 | Y=1, G=g)
    fpr            P(D=1 | Y=0, G=g)
    ppv            P(Y=1 | D=1, G=g)
    for_rate       P(Y=1 | D=0, G=g)

    A rate is ``None`` when its conditioning cell is empty. ``expected_accepts``
    is the expected number of positive decisions (the PPV denominator) and
    ``label_count[(g, y)]`` the count behind the TPR/FPR denominators.
    ``stratum_positive_rate`` holds P(D=1 | L=l, G=g) keyed by (stratum, group).
    """

    groups: tuple[str, ...]
    size: Mapping[str, int]
    label_count: Mapping[tuple[str, int], int]
    expected_accepts: Mapping[str, float]
    positive_rate: Mapping[str, float | None]
    tpr: Mapping[str, float | None]
    fpr: Mapping[str, float | None]
    ppv: Mapping[str, float | None]
    for_rate: Mapping[str, float | None]
    legit_names: tuple[str, ...] = ()
    stratum_positive_rate: Mapping[tuple[tuple[str, ...], str], float | None] = None  # type: ignore[assignment]
    stratum_size: Mapping[tuple[tuple[str, ...], str], int] = None  # type: ignore[assignment]


def compute_rates(dataset: Dataset, rule: DecisionRule) -> GroupRates:
    """All conditional rates of the rule on the dataset, per group and stratum."""
    if not dataset.records:
        raise ValueError("cannot compute rates on an empty dataset")
    dataset.require_scores()

    size: dict[str, int] = {g: 0 for g in dataset.groups}
    label_count: dict[tuple[str, int], int] = {(g, y) for g in dataset.groups for y in (0, 1)}
    label_count = {key: 0 for key in label_count}
    accept = {g: 0.0 for g in dataset.groups}
    accept_y1 = {g: 0.0 for g in dataset.groups}  # sum of dp over Y=1 records
    accept_y0 = {g: 0.0 for g in dataset.groups}
    accept_times_y = {g: 0.0 for g in dataset.groups}  # sum of dp * y
    reject_times_y = {g: 0.0 for g in dataset.groups}  # sum of (1 - dp) * y
    stratum_size: dict[tuple[tuple[str, ...], str], int] = {}
    stratum_accept: dict[tuple[tuple[str, ...], str], float] = {}

    for rec in dataset.records:
        g = rec.group
        dp = decision_probability(rule, rec.score, g, rec.legit)
        size[g] += 1
        label_count[(g, rec.label)] += 1
        accept[g] += dp
        if rec.label == 1:
            accept_y1[g] += dp
            accept_times_y[g] += dp
            reject_times_y[g] += 1.0 - dp
        else:
            accept_y0[g] += dp
        if dataset.legit_names:
            key = (dataset.stratum_of(rec), g)
            stratum_size[key] = stratum_size.get(key, 0) + 1
            stratum_accept[key] = stratum_accept.get(key, 0.0) + dp

    def _rate(num: float, den: float) -> float | None:
        return num / den if den > 0 else None

    positive_rate = {g: _rate(accept[g], size[g]) for g in dataset.groups}
    tpr = {g: _rate(accept_y1[g], label_count[(g, 1)]) for g in dataset.groups}
    fpr = {g: _rate(accept_y0[g], label_count[(g, 0)]) for g in dataset.groups}
    ppv = {g: _rate(accept_times_y[g], accept[g]) for g in dataset.groups}
    for_rate = {g: _rate(reject_times_y[g], size[g] - accept[g]) for g in dataset.groups}
    stratum_positive_rate = {
        key: _rate(stratum_accept[key], stratum_size[key]) for key in sorted(stratum_size)
    }

    return GroupRates(
        groups=dataset.groups,
        size=size,
        label_count=label_count,
        expected_accepts=accept,
        positive_rate=positive_rate,
        tpr=tpr,
        fpr=fpr,
        ppv=ppv,
        for_rate=for_rate,
        legit_names=dataset.legit_names,
        stratum_positive_rate=stratum_positive_rate,
        stratum_size={key: stratum_size[key] for key in sorted(stratum_size)},
    )


def _criterion_families(
    rates: GroupRates, criterion: FairnessCriterion
) -> list[tuple[str, Mapping[str, float | None]]]:
    kind = criterion.kind
    if kind is CriterionKind.INDEPENDENCE:
        return [("positive_rate", rates.positive_rate)]
    if kind is CriterionKind.CONDITIONAL_STATISTICAL_PARITY:
        strata = sorted({stratum for (stratum, _g) in rates.stratum_positive_rate})
        families = []
        for stratum in strata:
            values = {
                g: rates.stratum_positive_rate.get((stratum, g)) for g in rates.groups
            }
            families.append((f"positive_rate@{'/'.join(stratum)}", values))
        if not families:
            raise UndefinedMetricError("no legitimate-attribute strata present in the data")
        return families
    if kind is CriterionKind.SEPARATION:
        return [("tpr", rates.tpr), ("fpr", rates.fpr)]
    if kind is CriterionKind.TPR_PARITY:
        return [("tpr", rates.tpr)]
    if kind is CriterionKind.FPR_PARITY:
        return [("fpr", rates.fpr)]
    if kind is CriterionKind.SUFFICIENCY:
        return [("ppv", rates.ppv), ("for_rate", rates.for_rate)]
    if kind is CriterionKind.PPV_PARITY:
        return [("ppv", rates.ppv)]
    return [("for_rate", rates.for_rate)]


def _family_ratio(values: Iterable[float]) -> float:
    """Worst ordered-pair ratio of a rate family: min(values) / max(values).

    Both-zero pairs count as 1 (equal is fair) and one-sided zeros as 0
    (maximally unequal), the continuous limits of the ratio at zero.
    """
    values = list(values)
    lo, hi = min(values), max(values)
    if hi == 0.0:
        return 1.0
    if lo == 0.0:
        return 0.0
    return lo / hi


@dataclass(frozen=True)
class DisparityDetail:
    """Overall disparity ratio with the per-family breakdown and skipped cells."""

    ratio: float
    per_family: Mapping[str, float | None]
    skipped: tuple[str, ...]


def disparity_detail(rates: GroupRates, criterion: FairnessCriterion) -> DisparityDetail:
    per_family: dict[str, float | None] = {}
    skipped: list[str] = []
    for name, values in _criterion_families(rates, criterion):
        defined = [v for v in values.values() if v is not None]
        undefined_groups = [g for g, v in values.items() if v is None]
        if undefined_groups:
            skipped.extend(f"{name}:{g}" for g in undefined_groups)
            warnings.warn(
                f"{name} undefined for group(s) {undefined_groups}; cells skipped",
                UndefinedCellWarning,
                stacklevel=3,
            )
        if len(defined) < 2:
            per_family[name] = None
            continue
        per_family[name] = _family_ratio(defined)
    ratios = [r for r in per_family.values() if r is not None]
    if not ratios:
        raise UndefinedMetricError(
            f"every {criterion.kind.value} cell is undefined on this data"
        )
    return DisparityDetail(ratio=min(ratios), per_family=per_family, skipped=tuple(skipped))


def disparity_ratio(rates: GroupRates, criterion: FairnessCriterion) -> float:
    """Worst cross-group rate ratio for the criterion's families, in [0, 1].

    Separation and sufficiency take the minimum over both of their rate
    families; conditional statistical parity takes the minimum across strata.
    A value of 1 means exact parity on every applicable family.
    """
    return disparity_detail(rates, criterion).ratio


def decision_maker_utility(
    dataset: Dataset, rule: DecisionRule, utility: UtilityMatrix
) -> float:
    """Mean expected payoff of the rule: with the accuracy matrix, the accuracy."""
    if not dataset.records:
        raise ValueError("cannot compute utility on an empty dataset")
    dataset.require_scores()
    total = 0.0
    for rec in dataset.records:
        dp = decision_probability(rule, rec.score, rec.group, rec.legit)
        total += dp * utility.u(1, rec.label) + (1.0 - dp) * utility.u(0, rec.label)
    return total / len(dataset.records)


# ---------------------------------------------------------------------------
# Equal-chances expectation check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FecEntry:
    """Expected benefit of one (group, justifier value) cell with its support."""

    group: str
    justifier_value: object
    expected_benefit: float | None
    support: float


@dataclass(frozen=True)
class FecTable:
    """Expected benefits per group and justifier value, with the worst gap.

    ``max_disparity`` is the largest cross-group absolute difference of the
    expected benefit among the relevant justifier values, ``None`` when no
    value has at least two supported groups. Zero-support cells stay listed
    but never enter the disparity.
    """

    entries: tuple[FecEntry, ...]
    max_disparity: float | None


def fec_check(
    dataset: Dataset,
    rule: DecisionRule,
    assessment: MoralAssessment,
    benefit: BenefitMatrix,
) -> FecTable:
    """Check equality of expected benefits across groups, per justifier value.

    Outcome justifiers condition on the observed label; decision justifiers
    weight each record by its analytic probability of receiving the
    conditioning decision; legitimate justifiers condition on the stratum;
    no justifier compares unconditional expectations.
    """
    dataset.require_scores()
    by_group = dataset.by_group()

    def expected(records: list, weight_fn) -> tuple[float | None, float]:
        total_w = 0.0
        total_b = 0.0
        for rec in records:
            dp = decision_probability(rule, rec.score, rec.group, rec.legit)
            w, b = weight_fn(rec, dp)
            total_w += w
            total_b += b
        if total_w == 0.0:
            return None, 0.0
        return total_b / total_w, total_w

    entries: list[FecEntry] = []
    kind = assessment.justifier
    if kind is JustifierKind.OUTCOME:
        for j in sorted(assessment.relevant_values):
            for g in dataset.groups:
                subset = [r for r in by_group[g] if r.label == j]
                value, support = expected(
                    subset,
                    lambda rec, dp, j=j: (1.0, dp * benefit.b(1, j) + (1.0 - dp) * benefit.b(0, j)),
                )
                entries.append(FecEntry(g, j, value, support))
    elif kind is JustifierKind.DECISION:
        for j in sorted(assessment.relevant_values):
            for g in dataset.groups:
                value, support = expected(
                    by_group[g],
                    lambda rec, dp, j=j: (
                        dp if j == 1 else 1.0 - dp,
                        (dp if j == 1 else 1.0 - dp) * benefit.b(j, rec.label),
                    ),
                )
                entries.append(FecEntry(g, j, value, support))
    elif kind is JustifierKind.LEGITIMATE:
        strata = sorted(
            {
                tuple(rec.legit[name] for name in assessment.justifier_names)
                for rec in dataset.records
            }
        )
        for stratum in strata:
            for g in dataset.groups:
                subset = [
                    r
                    for r in by_group[g]
                    if tuple(r.legit[name] for name in assessment.justifier_names) == stratum
                ]
                value, support = expected(
                    subset,
                    lambda rec, dp: (
                        1.0,
                        dp * benefit.b(1, rec.label) + (1.0 - dp) * benefit.b(0, rec.label),
                    ),
                )
                entries.append(FecEntry(g, "/".join(stratum), value, support))
    else:
        for g in dataset.groups:
            value, support = expected(
                by_group[g],
                lambda rec, dp: (
                    1.0,
                    dp * benefit.b(1, rec.label) + (1.0 - dp) * benefit.b(0, rec.label),
                ),
            )
            entries.append(FecEntry(g, None, value, support))

    max_disparity: float | None = None
    values_by_j: dict[object, list[float]] = {}
    for entry in entries:
        if entry.support > 0.0 and entry.expected_benefit is not None:
            values_by_j.setdefault(entry.justifier_value, []).append(entry.expected_benefit)
    for values in values_by_j.values():
        if len(values) >= 2:
            gap = max(values) - min(values)
            if max_disparity is None or gap > max_disparity:
                max_disparity = gap
    return FecTable(entries=tuple(entries), max_disparity=max_disparity)


# ---------------------------------------------------------------------------
# Structured report
# ---------------------------------------------------------------------------


def metric_report(
    dataset: Dataset,
    rule: DecisionRule,
    criterion: FairnessCriterion,
    utility: UtilityMatrix,
    assessment: MoralAssessment | None = None,
    benefit: BenefitMatrix | None = None,
) -> dict:
    """JSON-serializable report: every rate cell with counts, ratio, utility, FEC."""
    rates = compute_rates(dataset, rule)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UndefinedCellWarning)
        detail = disparity_detail(rates, criterion)
    report = {
        "groups": {
            g: {
                "size": rates.size[g],
                "outcome_counts": {
                    "0": rates.label_count[(g, 0)],
                    "1": rates.label_count[(g, 1)],
                },
                "expected_accepts": rates.expected_accepts[g],
                "positive_rate": rates.positive_rate[g],
                "tpr": rates.tpr[g],
                "fpr": rates.fpr[g],
                "ppv": rates.ppv[g],
                "for_rate": rates.for_rate[g],
            }
            for g in rates.groups
        },
        "strata": [
            {
                "stratum": "/".join(stratum),
                "group": g,
                "size": rates.stratum_size[(stratum, g)],
                "positive_rate": rates.stratum_positive_rate[(stratum, g)],
            }
            for (stratum, g) in rates.stratum_positive_rate
        ],
        "criterion": criterion.to_dict(),
        "disparity_ratio": detail.ratio,
        "disparity_per_family": dict(detail.per_family),
        "skipped_cells": list(detail.skipped),
        "utility": decision_maker_utility(dataset, rule, utility),
        "utility_matrix": list(utility.cells()),
    }
    if assessment is not None and benefit is not None:
        table = fec_check(dataset, rule, assessment, benefit)
        report["fec"] = {
            "entries": [
                {
                    "group": e.group,
                    "justifier_value": e.justifier_value,
                    "expected_benefit": e.expected_benefit,
                    "support": e.support,
                }
                for e in table.entries
            ],
            "max_disparity": table.max_disparity,
        }
    return report
