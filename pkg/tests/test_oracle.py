import random
import warnings

import pytest

from conftest import make_dataset, random_instance
from fairgate.metrics import compute_rates, decision_maker_utility, disparity_detail
from fairgate.model import (
    CriterionKind,
    FairnessCriterion,
    GroupCut,
    GroupThreshold,
    SingleThreshold,
    UtilityMatrix,
)
from fairgate.optimizer import (
    InfeasibleConstraintError,
    OptimizationProblem,
    optimize_unconstrained,
)
from fairgate.oracle import MAX_ORACLE_RECORDS, OracleSizeError, brute_force_oracle

ACC = UtilityMatrix.accuracy()


def oracle_problem(rows, kind, gamma, step=0.01, **kw):
    ds = rows if hasattr(rows, "records") else make_dataset(rows)
    return OptimizationProblem(
        ds, ACC, FairnessCriterion(kind, gamma=gamma, legit_names=kw.pop("legit_names", ())),
        grid_step=step, **kw,
    )


def test_size_guard():
    rows = [(0.5, i % 2, "ab"[i % 2]) for i in range(MAX_ORACLE_RECORDS + 1)]
    prob = oracle_problem(rows, CriterionKind.INDEPENDENCE, 1.0)
    with pytest.raises(OracleSizeError, match="refuses"):
        brute_force_oracle(prob)


def test_gamma_zero_matches_unconstrained_family_max():
    rng = random.Random(17)
    for _ in range(5):
        ds = random_instance(rng, n_groups=2, max_records=16)
        prob = oracle_problem(ds, CriterionKind.INDEPENDENCE, 0.0)
        rule = brute_force_oracle(prob)
        free = optimize_unconstrained(ds, ACC)
        assert decision_maker_utility(ds, rule, ACC) >= decision_maker_utility(ds, free, ACC) - 1e-12


def test_independence_oracle_beats_hand_constructed_feasible_rules():
    rows = [(0.9, 1, "A"), (0.6, 1, "A"), (0.4, 0, "A"), (0.2, 0, "A"),
            (0.8, 1, "B"), (0.5, 0, "B"), (0.3, 1, "B"), (0.1, 0, "B")]
    prob = oracle_problem(rows, CriterionKind.INDEPENDENCE, 1.0)
    rule = brute_force_oracle(prob)
    best = decision_maker_utility(prob.dataset, rule, ACC)
    baselines = [
        SingleThreshold(0.0, boundary=1.0),
        SingleThreshold(1.0, boundary=0.0),
        GroupThreshold({"A": GroupCut(0.6), "B": GroupCut(0.5)}),  # rates 0.5 / 0.5
        GroupThreshold({"A": GroupCut(0.4), "B": GroupCut(0.3)}),  # rates 0.75 / 0.75
    ]
    crit = prob.criterion
    for baseline in baselines:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ratio = disparity_detail(compute_rates(prob.dataset, baseline), crit).ratio
        assert ratio >= 1.0 - 1e-12  # all baselines engineered feasible
        assert best >= decision_maker_utility(prob.dataset, baseline, ACC) - 1e-9


def test_oracle_rules_are_feasible():
    rng = random.Random(23)
    kinds = [CriterionKind.INDEPENDENCE, CriterionKind.TPR_PARITY, CriterionKind.FPR_PARITY]
    for kind in kinds:
        ds = random_instance(rng, n_groups=2, max_records=14)
        for gamma in (0.5, 1.0):
            prob = oracle_problem(ds, kind, gamma)
            try:
                rule = brute_force_oracle(prob)
            except InfeasibleConstraintError:
                continue
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                ratio = disparity_detail(compute_rates(ds, rule), prob.criterion).ratio
            assert ratio >= gamma - 1e-9


def test_separation_three_group_needs_gamma_zero():
    rng = random.Random(29)
    ds = random_instance(rng, n_groups=3, max_records=15)
    with pytest.raises(OracleSizeError):
        brute_force_oracle(oracle_problem(ds, CriterionKind.SEPARATION, 1.0))
    rule = brute_force_oracle(oracle_problem(ds, CriterionKind.SEPARATION, 0.0))
    assert isinstance(rule, GroupThreshold)


def test_conditional_parity_oracle_agrees_with_per_stratum_search():
    rows = [
        (0.9, 1, "A", {"j": "x"}), (0.4, 0, "A", {"j": "x"}),
        (0.8, 1, "B", {"j": "x"}), (0.3, 0, "B", {"j": "x"}),
        (0.7, 1, "A", {"j": "y"}), (0.2, 0, "A", {"j": "y"}),
        (0.6, 1, "B", {"j": "y"}), (0.1, 0, "B", {"j": "y"}),
    ]
    ds = make_dataset(rows, legit_names=("j",))
    prob = oracle_problem(
        ds, CriterionKind.CONDITIONAL_STATISTICAL_PARITY, 1.0,
        legit_names=("j",), min_count=1,
    )
    rule = brute_force_oracle(prob)
    assert decision_maker_utility(ds, rule, ACC) == pytest.approx(1.0)
