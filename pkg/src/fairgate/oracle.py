"""Exhaustive reference search used to verify the optimizers.

Candidate rules are enumerated over the candidate grid (distinct scores with
bracketing sentinels, boundary randomization and mixture weights on a
configurable grid) and evaluated directly from record masks, independently
of the optimizer's prefix algebra. Intended for tests and --verify runs
only; refuses datasets beyond the size guard.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .model import (
    CriterionKind,
    DecisionRule,
    GroupCut,
    GroupInterval,
    GroupThreshold,
    IntervalCut,
    Mixture,
    Record,
    StratifiedGroupThreshold,
    UtilityMatrix,
)
from .optimizer import InfeasibleConstraintError, OptimizationProblem

MAX_ORACLE_RECORDS = 500


class OracleSizeError(ValueError):
    """The instance exceeds what exhaustive enumeration can afford."""


@dataclass
class _GroupData:
    group: str
    scores: np.ndarray
    labels: np.ndarray
    du: np.ndarray  # u(1, y) - u(0, y) per record
    taus: np.ndarray  # candidate thresholds: distinct scores plus sentinels

    @classmethod
    def build(cls, group: str, records: Sequence[Record], utility: UtilityMatrix) -> "_GroupData":
        scores = np.array([r.score for r in records], dtype=float)
        labels = np.array([r.label for r in records], dtype=int)
        du = np.where(
            labels == 1, utility.u(1, 1) - utility.u(0, 1), utility.u(1, 0) - utility.u(0, 0)
        )
        uniq = np.unique(scores)
        taus = list(uniq)
        if uniq[0] > 0.0:
            taus.insert(0, uniq[0] / 2.0)
        if uniq[-1] < 1.0:
            taus.append((uniq[-1] + 1.0) / 2.0)
        return cls(group, scores, labels, du, np.array(taus))

    @property
    def n(self) -> int:
        return len(self.scores)

    @property
    def n_pos(self) -> int:
        return int((self.labels == 1).sum())

    def threshold_masks(self) -> tuple[np.ndarray, np.ndarray]:
        """(above, at) boolean masks of every candidate threshold."""
        above = self.scores[None, :] > self.taus[:, None]
        at = self.scores[None, :] == self.taus[:, None]
        return above, at

    def family_weights(self, family: str) -> np.ndarray | None:
        if family == "positive_rate":
            return np.full(self.n, 1.0 / self.n)
        if family == "tpr":
            if self.n_pos == 0:
                return None
            return (self.labels == 1) / self.n_pos
        if family == "fpr":
            n_neg = self.n - self.n_pos
            if n_neg == 0:
                return None
            return (self.labels == 0) / n_neg
        raise ValueError(family)


def _q_grid(step: float) -> np.ndarray:
    count = int(round(1.0 / step))
    return np.linspace(0.0, 1.0, count + 1)


@dataclass
class _PointSet:
    """Flattened candidate points of one group: value, utility and identity."""

    values: np.ndarray
    utils: np.ndarray
    tau_idx: np.ndarray | None = None
    qs: np.ndarray | None = None


def _threshold_points(data: _GroupData, family: str, qs: np.ndarray) -> _PointSet | None:
    weights = data.family_weights(family)
    if weights is None:
        return None
    above, at = data.threshold_masks()
    rate_above = above @ weights
    rate_at = at @ weights
    util_above = above @ data.du
    util_at = at @ data.du
    values = rate_above[:, None] + qs[None, :] * rate_at[:, None]
    utils = util_above[:, None] + qs[None, :] * util_at[:, None]
    t_count, q_count = values.shape
    tau_idx = np.repeat(np.arange(t_count), q_count)
    q_flat = np.tile(qs, t_count)
    return _PointSet(values.ravel(), utils.ravel(), tau_idx, q_flat)


def _window_search(
    point_sets: Mapping[str, _PointSet], gamma: float
) -> tuple[float, dict[str, int]] | None:
    """Exhaustive max utility over grid tuples with rate ratios >= gamma.

    A tuple is feasible iff all chosen values fit in [gamma * M, M] for some
    M; scanning M over every candidate value with per-group sliding maxima
    visits the best feasible tuple exactly.
    """
    groups = sorted(point_sets)
    orders = {g: np.argsort(point_sets[g].values, kind="stable") for g in groups}
    sorted_vals = {g: point_sets[g].values[orders[g]] for g in groups}
    sorted_utils = {g: point_sets[g].utils[orders[g]] for g in groups}
    designations = np.unique(np.concatenate([sorted_vals[g] for g in groups]))

    if gamma == 0.0:
        picks = {}
        total = 0.0
        for g in groups:
            idx = int(np.argmax(point_sets[g].utils))
            picks[g] = idx
            total += float(point_sets[g].utils[idx])
        return total, picks

    from collections import deque

    state = {g: {"dq": deque(), "add": 0, "drop": 0} for g in groups}
    best_total: float | None = None
    best_picks: dict[str, int] | None = None
    for m in designations:
        lo = gamma * m
        feasible = True
        total = 0.0
        for g in groups:
            st = state[g]
            vals, utils = sorted_vals[g], sorted_utils[g]
            dq = st["dq"]
            while st["add"] < len(vals) and vals[st["add"]] <= m:
                while dq and utils[dq[-1]] <= utils[st["add"]]:
                    dq.pop()
                dq.append(st["add"])
                st["add"] += 1
            while st["drop"] < len(vals) and vals[st["drop"]] < lo:
                st["drop"] += 1
            while dq and dq[0] < st["drop"]:
                dq.popleft()
            if not dq:
                feasible = False
                break
            total += float(utils[dq[0]])
        if feasible and (best_total is None or total > best_total):
            best_total = total
            best_picks = {g: int(orders[g][state[g]["dq"][0]]) for g in groups}
    if best_total is None:
        return None
    return best_total, best_picks


def _cut_for_point(data: _GroupData, points: _PointSet, idx: int) -> GroupCut:
    return GroupCut(tau=float(data.taus[points.tau_idx[idx]]), boundary=float(points.qs[idx]))


def _oracle_single_family(
    groups_data: Mapping[str, _GroupData], family: str, gamma: float, qs: np.ndarray
) -> GroupThreshold:
    point_sets: dict[str, _PointSet] = {}
    free_cuts: dict[str, GroupCut] = {}
    for g, data in groups_data.items():
        points = _threshold_points(data, family, qs)
        if points is None:
            fallback = _threshold_points(data, "positive_rate", qs)
            idx = int(np.argmax(fallback.utils))
            free_cuts[g] = _cut_for_point(data, fallback, idx)
            continue
        point_sets[g] = points
    found = _window_search(point_sets, gamma)
    if found is None:
        raise InfeasibleConstraintError("oracle found no feasible grid tuple")
    _, picks = found
    cuts = {g: _cut_for_point(groups_data[g], point_sets[g], idx) for g, idx in picks.items()}
    cuts.update(free_cuts)
    return GroupThreshold(cuts)


# ---------------------------------------------------------------------------
# Joint TPR+FPR: vertex-pair mixtures with exact weights
# ---------------------------------------------------------------------------


def _roc_vertices(data: _GroupData) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, util) of every deterministic threshold cut."""
    above, _ = data.threshold_masks()
    pos = (data.labels == 1).astype(float)
    neg = (data.labels == 0).astype(float)
    n_pos = data.n_pos
    n_neg = data.n - n_pos
    tpr = (above @ pos) / n_pos if n_pos else np.zeros(len(data.taus))
    fpr = (above @ neg) / n_neg if n_neg else np.zeros(len(data.taus))
    util = above @ data.du
    return fpr, tpr, util


def _oracle_separation_both(
    groups_data: Mapping[str, _GroupData], gamma: float
) -> DecisionRule:
    groups = sorted(groups_data)
    if gamma == 0.0:
        cuts = {}
        for g in groups:
            fpr, tpr, util = _roc_vertices(groups_data[g])
            idx = int(np.argmax(util))
            cuts[g] = GroupCut(tau=float(groups_data[g].taus[idx]), boundary=0.0)
        return GroupThreshold(cuts)
    if len(groups) != 2:
        raise OracleSizeError(
            "joint TPR+FPR enumeration is implemented for two groups "
            "(use gamma = 0 for more)"
        )
    ga, gb = groups
    fa, ta, ua = _roc_vertices(groups_data[ga])
    fb, tb, ub = _roc_vertices(groups_data[gb])
    if len(fa) > 80 or len(fb) > 80:
        raise OracleSizeError("too many threshold vertices for pairwise enumeration")

    use_tpr = groups_data[ga].n_pos > 0 and groups_data[gb].n_pos > 0
    use_fpr = (groups_data[ga].n - groups_data[ga].n_pos) > 0 and (
        groups_data[gb].n - groups_data[gb].n_pos
    ) > 0

    ia, ja = np.triu_indices(len(fa))
    ib, jb = np.triu_indices(len(fb))

    best = {"util": -np.inf}
    tol = 1e-9
    for pa in range(len(ia)):
        a1, a2 = int(ia[pa]), int(ja[pa])
        # Point of group a: w * vertex1 + (1 - w) * vertex2, linear in w.
        ta0, dta = ta[a2], ta[a1] - ta[a2]
        fa0, dfa = fa[a2], fa[a1] - fa[a2]
        ua0, dua = ua[a2], ua[a1] - ua[a2]
        tb0, dtb = tb[jb], tb[ib] - tb[jb]
        fb0, dfb = fb[jb], fb[ib] - fb[jb]
        ub0, dub = ub[jb], ub[ib] - ub[jb]

        # Constraints alpha * wa + beta * wb + delta >= 0, broadcast over pairs.
        cons: list[tuple[float, np.ndarray, np.ndarray]] = []
        if use_tpr:
            cons.append((dta, -gamma * dtb, ta0 - gamma * tb0))
            cons.append((-gamma * dta, dtb, tb0 - gamma * ta0))
        if use_fpr:
            cons.append((dfa, -gamma * dfb, fa0 - gamma * fb0))
            cons.append((-gamma * dfa, dfb, fb0 - gamma * fa0))

        zeros = np.zeros(len(ib))
        ones = np.ones(len(ib))
        candidates: list[tuple[np.ndarray, np.ndarray]] = [
            (zeros, zeros),
            (zeros, ones),
            (ones, zeros),
            (ones, ones),
        ]
        for alpha, beta, delta in cons:
            with np.errstate(divide="ignore", invalid="ignore"):
                for wa_fixed in (zeros, ones):
                    wb = np.where(beta != 0.0, -(alpha * wa_fixed + delta) / np.where(beta != 0.0, beta, 1.0), np.nan)
                    candidates.append((wa_fixed, wb))
                for wb_fixed in (0.0, 1.0):
                    denom = np.where(alpha != 0.0, alpha, np.nan)
                    wa = -(beta * wb_fixed + delta) / denom
                    candidates.append((wa, np.full(len(ib), wb_fixed)))
        for c1 in range(len(cons)):
            for c2 in range(c1 + 1, len(cons)):
                a1c, b1c, d1c = cons[c1]
                a2c, b2c, d2c = cons[c2]
                det = a1c * b2c - a2c * b1c
                with np.errstate(divide="ignore", invalid="ignore"):
                    safe = np.where(np.abs(det) > 1e-14, det, np.nan)
                    wa = (d2c * b1c - d1c * b2c) / safe
                    wb = (a2c * d1c - a1c * d2c) / safe
                candidates.append((wa, wb))

        for wa, wb in candidates:
            wa = np.broadcast_to(wa, len(ib)).astype(float)
            wb = np.broadcast_to(wb, len(ib)).astype(float)
            ok = (wa >= -tol) & (wa <= 1 + tol) & (wb >= -tol) & (wb <= 1 + tol)
            ok &= ~np.isnan(wa) & ~np.isnan(wb)
            for alpha, beta, delta in cons:
                ok &= alpha * wa + beta * wb + delta >= -tol
            if not ok.any():
                continue
            utils = np.where(ok, ua0 + dua * wa + ub0 + dub * wb, -np.inf)
            pb = int(np.argmax(utils))
            if utils[pb] > best["util"]:
                best = {
                    "util": float(utils[pb]),
                    "a": (a1, a2, float(min(max(wa[pb], 0.0), 1.0))),
                    "b": (int(ib[pb]), int(jb[pb]), float(min(max(wb[pb], 0.0), 1.0))),
                }
    if not np.isfinite(best["util"]):
        raise InfeasibleConstraintError("oracle found no feasible vertex-pair mixture")

    a1, a2, wa = best["a"]
    b1, b2, wb = best["b"]
    first = GroupThreshold(
        {
            ga: GroupCut(tau=float(groups_data[ga].taus[a1]), boundary=0.0),
            gb: GroupCut(tau=float(groups_data[gb].taus[b1]), boundary=0.0),
        }
    )
    second = GroupThreshold(
        {
            ga: GroupCut(tau=float(groups_data[ga].taus[a2]), boundary=0.0),
            gb: GroupCut(tau=float(groups_data[gb].taus[b2]), boundary=0.0),
        }
    )
    return Mixture(weights={ga: wa, gb: wb}, first=first, second=second)


# ---------------------------------------------------------------------------
# Sufficiency: interval candidates on the grid
# ---------------------------------------------------------------------------


@dataclass
class _IntervalPoints:
    ppv: np.ndarray
    forr: np.ndarray
    utils: np.ndarray
    lower_branch: np.ndarray  # bool
    tau_values: np.ndarray
    qs: np.ndarray


def _interval_points(data: _GroupData, qs: np.ndarray) -> _IntervalPoints:
    valid_tau = (data.taus > 0.0) & (data.taus < 1.0)
    taus = data.taus[valid_tau]
    above = data.scores[None, :] > taus[:, None]
    below = data.scores[None, :] < taus[:, None]
    at = data.scores[None, :] == taus[:, None]
    pos = (data.labels == 1).astype(float)
    parts = []
    for lower, base_mask in ((True, above), (False, below)):
        ep = base_mask.sum(axis=1)[:, None] + qs[None, :] * at.sum(axis=1)[:, None]
        epy = (base_mask @ pos)[:, None] + qs[None, :] * (at @ pos)[:, None]
        util = (base_mask @ data.du)[:, None] + qs[None, :] * (at @ data.du)[:, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            ppv = np.where(ep > 0, epy / np.where(ep > 0, ep, 1.0), np.nan)
            rej = data.n - ep
            forr = np.where(rej > 0, (data.n_pos - epy) / np.where(rej > 0, rej, 1.0), np.nan)
        t_count, q_count = ep.shape
        parts.append(
            (
                ppv.ravel(),
                forr.ravel(),
                util.ravel(),
                np.full(t_count * q_count, lower),
                np.repeat(taus, q_count),
                np.tile(qs, t_count),
            )
        )
    merged = [np.concatenate([p[i] for p in parts]) for i in range(6)]
    return _IntervalPoints(*merged)


def _interval_cut(points: _IntervalPoints, idx: int) -> IntervalCut:
    tau = float(points.tau_values[idx])
    q = float(points.qs[idx])
    if points.lower_branch[idx]:
        return IntervalCut(low=tau, high=1.0, boundary=q)
    return IntervalCut(low=0.0, high=tau, boundary=q)


def _oracle_sufficiency(
    groups_data: Mapping[str, _GroupData],
    relaxation: str,
    gamma: float,
    qs: np.ndarray,
) -> GroupInterval:
    groups = sorted(groups_data)
    points = {g: _interval_points(groups_data[g], qs) for g in groups}

    if gamma == 0.0:
        cuts = {}
        for g in groups:
            idx = int(np.argmax(points[g].utils))
            cuts[g] = _interval_cut(points[g], idx)
        return GroupInterval(cuts)

    if relaxation in ("ppv_only", "for_only"):
        key = "ppv" if relaxation == "ppv_only" else "forr"
        sets = {}
        for g in groups:
            vals = getattr(points[g], key)
            keep = ~np.isnan(vals)
            sets[g] = (_PointSet(vals[keep], points[g].utils[keep], None, None), np.nonzero(keep)[0])
        found = _window_search({g: sets[g][0] for g in groups}, gamma)
        if found is None:
            raise InfeasibleConstraintError("oracle found no feasible grid tuple")
        _, picks = found
        cuts = {g: _interval_cut(points[g], int(sets[g][1][idx])) for g, idx in picks.items()}
        return GroupInterval(cuts)

    if len(groups) != 2:
        raise OracleSizeError(
            "joint PPV+FOR enumeration is implemented for two groups "
            "(use gamma = 0 for more)"
        )
    ga, gb = groups
    pa, pb = points[ga], points[gb]
    keep_a = ~np.isnan(pa.ppv) & ~np.isnan(pa.forr)
    keep_b = ~np.isnan(pb.ppv) & ~np.isnan(pb.forr)
    idx_a = np.nonzero(keep_a)[0]
    idx_b = np.nonzero(keep_b)[0]
    if len(idx_a) * len(idx_b) > 40_000_000:
        raise OracleSizeError("too many interval pairs for joint enumeration")
    best_util = -np.inf
    best_pair: tuple[int, int] | None = None
    ppv_b, for_b, util_b = pb.ppv[idx_b], pb.forr[idx_b], pb.utils[idx_b]
    for a_pos in range(len(idx_a)):
        a_idx = int(idx_a[a_pos])
        p_a, f_a, u_a = pa.ppv[a_idx], pa.forr[a_idx], pa.utils[a_idx]
        ok = (
            (ppv_b >= gamma * p_a)
            & (p_a >= gamma * ppv_b)
            & (for_b >= gamma * f_a)
            & (f_a >= gamma * for_b)
        )
        if not ok.any():
            continue
        utils = np.where(ok, u_a + util_b, -np.inf)
        b_pos = int(np.argmax(utils))
        if utils[b_pos] > best_util:
            best_util = float(utils[b_pos])
            best_pair = (a_idx, int(idx_b[b_pos]))
    if best_pair is None:
        raise InfeasibleConstraintError("oracle found no feasible interval pair")
    return GroupInterval(
        {
            ga: _interval_cut(pa, best_pair[0]),
            gb: _interval_cut(pb, best_pair[1]),
        }
    )


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def brute_force_oracle(problem: OptimizationProblem) -> DecisionRule:
    """Feasible utility-max rule found by exhaustive grid enumeration."""
    dataset = problem.dataset
    if len(dataset.records) > MAX_ORACLE_RECORDS:
        raise OracleSizeError(
            f"oracle refuses datasets over {MAX_ORACLE_RECORDS} records "
            f"(got {len(dataset.records)})"
        )
    utility = problem.utility
    gamma = problem.criterion.gamma
    kind = problem.criterion.kind
    qs = _q_grid(problem.grid_step)
    groups_data = {
        g: _GroupData.build(g, recs, utility) for g, recs in dataset.by_group().items()
    }

    if kind is CriterionKind.INDEPENDENCE:
        return _oracle_single_family(groups_data, "positive_rate", gamma, qs)
    if kind is CriterionKind.TPR_PARITY:
        return _oracle_single_family(groups_data, "tpr", gamma, qs)
    if kind is CriterionKind.FPR_PARITY:
        return _oracle_single_family(groups_data, "fpr", gamma, qs)
    if kind is CriterionKind.SEPARATION:
        return _oracle_separation_both(groups_data, gamma)
    if kind is CriterionKind.SUFFICIENCY:
        return _oracle_sufficiency(groups_data, "both", gamma, qs)
    if kind is CriterionKind.PPV_PARITY:
        return _oracle_sufficiency(groups_data, "ppv_only", gamma, qs)
    if kind is CriterionKind.FOR_PARITY:
        return _oracle_sufficiency(groups_data, "for_only", gamma, qs)
    if kind is CriterionKind.CONDITIONAL_STATISTICAL_PARITY:
        return _oracle_conditional_parity(problem, qs)
    raise ValueError(f"unsupported criterion {kind}")


def _oracle_conditional_parity(problem: OptimizationProblem, qs: np.ndarray) -> DecisionRule:
    dataset, utility = problem.dataset, problem.utility
    names = problem.criterion.legit_names
    gamma = problem.criterion.gamma
    strata: dict[tuple[str, ...], dict[str, list[Record]]] = {}
    for rec in dataset.records:
        stratum = tuple(rec.legit[name] for name in names)
        strata.setdefault(stratum, {}).setdefault(rec.group, []).append(rec)
    cuts: dict[tuple[str, tuple[str, ...]], GroupCut] = {}
    for stratum in sorted(strata):
        groups_here = strata[stratum]
        data = {g: _GroupData.build(g, recs, utility) for g, recs in groups_here.items()}
        constrained = (
            all(len(groups_here.get(g, ())) >= problem.min_count for g in dataset.groups)
            and len(data) >= 2
        )
        if constrained:
            rule = _oracle_single_family(data, "positive_rate", gamma, qs)
            for g, cut in rule.cuts.items():
                cuts[(g, stratum)] = cut
        else:
            for g, gd in data.items():
                pts = _threshold_points(gd, "positive_rate", qs)
                idx = int(np.argmax(pts.utils))
                cuts[(g, stratum)] = _cut_for_point(gd, pts, idx)
    return StratifiedGroupThreshold(legit_names=names, cuts=cuts)
