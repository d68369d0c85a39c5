import json
import logging
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from core import rng
from core.graph_core import (degree_stats, edge_group_counts, monochromatic_triangle_mask,
                             write_column, write_edges, write_features)
from core.stats import feature_correlation_report
from models import (AugmentationConfig, CorrelationReport, CounterfactualReading, EdgeDeletionPlan,
                    EdgeScheme, FeatureMaskPlan, Graph, GraphView, ValidationError, ViewSettings,
                    _require_probability)

logger = logging.getLogger(__name__)

# Parity groups; the cross group stands for both (0,1) and (1,0) orientations.
CROSS, ZERO_ZERO, ONE_ONE = 'cross', '00', '11'
PARITY_GROUPS = (CROSS, ZERO_ZERO, ONE_ONE)


# =============================================================================
# FEATURE MASKING
# =============================================================================

def feature_mask_plan(report: CorrelationReport, p_f: float) -> FeatureMaskPlan:
    """Keep feature i with probability p_i^(uncorr) · (1 - p_f)."""
    _require_probability('p_f', p_f)
    keep = np.clip(report.p_uncorr * (1.0 - p_f), 0.0, 1.0)
    return FeatureMaskPlan(keep_prob=keep, base_mask_prob=float(p_f), method=report.method)


def uniform_feature_plan(plan: FeatureMaskPlan) -> FeatureMaskPlan:
    """Every feature kept with the mean adaptive keep probability."""
    mean = float(plan.keep_prob.mean()) if plan.keep_prob.size else 0.0
    return FeatureMaskPlan(keep_prob=np.full_like(plan.keep_prob, mean),
                           base_mask_prob=plan.base_mask_prob, method=None)


def sample_feature_mask(plan: FeatureMaskPlan, seed: int, view_id: int) -> np.ndarray:
    return rng.bernoulli(plan.keep_prob, seed, view_id, rng.FEATURE_MASK).astype(np.int8)


def apply_feature_mask(X: np.ndarray, mask: np.ndarray) -> np.ndarray:
    X = np.asarray(X)
    mask = np.asarray(mask)
    if mask.ndim != 1 or mask.shape[0] != X.shape[1]:
        raise ValidationError(f"mask length {mask.shape} does not match {X.shape[1]} feature columns")
    return np.where(mask.astype(bool)[None, :], X, 0.0).astype(X.dtype, copy=False)


# =============================================================================
# EDGE DELETION PLANS
# =============================================================================

def _plan(scheme: EdgeScheme, pre_clamp: np.ndarray, upper: np.ndarray, params: Dict,
          warnings=()) -> EdgeDeletionPlan:
    delete = np.clip(pre_clamp, 0.0, upper)
    for w in warnings:
        logger.warning(f"{scheme.value} plan: {w}")
    return EdgeDeletionPlan(scheme=scheme, delete_prob=delete, params=params,
                            pre_clamp=pre_clamp, warnings=tuple(warnings))


def degree_factor(g: Graph) -> np.ndarray:
    """(d_max - d_mean)/(d_max - min(d_i, d_j)) per edge over the original degrees.

    Ones on a regular graph; inf where both endpoints have degree d_max.
    """
    stats = degree_stats(g)
    if stats.d_max == stats.d_mean:
        return np.ones(g.n_edges)
    e = g.edge_list
    min_degree = np.minimum(stats.degrees[e[:, 0]], stats.degrees[e[:, 1]])
    with np.errstate(divide='ignore'):
        return (stats.d_max - stats.d_mean) / (stats.d_max - min_degree).astype(np.float64)


def _degree_adjusted(g: Graph, pre_clamp: np.ndarray, upper, params: Dict, p_max: Optional[float]):
    """Scale base probabilities by the degree factor and cap them at p_max.

    Edges with an infinite factor get the cap.
    """
    if p_max is None:
        return pre_clamp, upper, params
    _require_probability('p_max', p_max)
    factor = degree_factor(g)
    upper = np.minimum(upper, p_max)
    with np.errstate(invalid='ignore'):
        scaled = factor * pre_clamp
    return np.where(np.isfinite(factor), scaled, upper), upper, dict(params, degree_p_max=p_max)


def edge_probs_dyadic(g: Graph, p_kappa: float, p_max: float,
                      degree_cap: Optional[float] = None) -> EdgeDeletionPlan:
    """Cross-group edges get 1 - p_kappa, same-group edges 1 - (|E_d|/|E_s|)·p_kappa,
    so expected kept edges match across the two categories; capped at p_max.

    A ``degree_cap`` makes the plan degree-aware (see ``degree_factor``).
    """
    _require_probability('p_kappa', p_kappa)
    _require_probability('p_max', p_max)
    counts = edge_group_counts(g)
    same = g.same_group_mask
    warnings = []
    if counts.same == 0 or counts.diff == 0:
        empty = 'same-attribute' if counts.same == 0 else 'cross-attribute'
        if g.n_edges:
            warnings.append(f"no {empty} edges; remaining edges use 1 - p_kappa")
        same_prob = 1.0 - p_kappa
    else:
        same_prob = 1.0 - (counts.diff / counts.same) * p_kappa
    pre = np.where(same, same_prob, 1.0 - p_kappa)
    params = {'p_kappa': p_kappa, 'p_max': p_max}
    pre, upper, params = _degree_adjusted(g, pre, p_max, params, degree_cap)
    return _plan(EdgeScheme.DYADIC, pre, upper, params, warnings)


def _parity_group_of_edges(g: Graph) -> np.ndarray:
    e = g.edge_list
    si, sj = g.sensitive[e[:, 0]], g.sensitive[e[:, 1]]
    groups = np.full(len(e), CROSS, dtype=object)
    groups[(si == 0) & (sj == 0)] = ZERO_ZERO
    groups[(si == 1) & (sj == 1)] = ONE_ONE
    return groups


def _parity_cardinalities(g: Graph) -> Dict[str, int]:
    by_pair = edge_group_counts(g).by_pair
    return {CROSS: by_pair[(0, 1)], ZERO_ZERO: by_pair[(0, 0)], ONE_ONE: by_pair[(1, 1)]}


def edge_probs_parity(g: Graph, p_kappa: float, caps: Tuple[float, float, float],
                      degree_cap: Optional[float] = None) -> EdgeDeletionPlan:
    """Equalize expected kept edges across the (s_i, s_j) groups.

    The smallest nonempty group gets 1 - p_kappa (never capped); group ab gets
    1 - (m/|E_ab|)·p_kappa. Caps are assigned to nonempty groups in ascending
    order of cardinality.
    """
    _require_probability('p_kappa', p_kappa)
    caps = tuple(float(c) for c in caps)
    if len(caps) != 3:
        raise ValidationError(f"parity scheme needs three caps, got {len(caps)}")
    for i, cap in enumerate(caps, start=1):
        _require_probability(f"p_max{i}", cap)
    if not caps[0] <= caps[1] <= caps[2]:
        raise ValidationError(f"parity caps must satisfy p_max1 <= p_max2 <= p_max3, got {caps}")

    card = _parity_cardinalities(g)
    nonempty = sorted((grp for grp in PARITY_GROUPS if card[grp] > 0),
                      key=lambda grp: (card[grp], PARITY_GROUPS.index(grp)))
    warnings = [f"group {grp} has no edges and is skipped" for grp in PARITY_GROUPS
                if card[grp] == 0 and g.n_edges]
    groups = _parity_group_of_edges(g)
    pre = np.zeros(g.n_edges)
    upper = np.ones(g.n_edges)
    if nonempty:
        m = card[nonempty[0]]
        for rank, grp in enumerate(nonempty):
            sel = groups == grp
            pre[sel] = 1.0 - (m / card[grp]) * p_kappa
            upper[sel] = 1.0 if rank == 0 else caps[rank]
    params = {'p_kappa': p_kappa, 'p_max1': caps[0], 'p_max2': caps[1], 'p_max3': caps[2]}
    pre, upper, params = _degree_adjusted(g, pre, upper, params, degree_cap)
    return _plan(EdgeScheme.PARITY, pre, upper, params, warnings)


def edge_probs_counterfactual(g: Graph, p1: float, p2: float, p3: float, p4: float, view_id: int,
                              reading: CounterfactualReading = CounterfactualReading.RETENTION,
                              degree_cap: Optional[float] = None) -> EdgeDeletionPlan:
    """View 1 uses (p1, p2), view 2 uses (p3, p4) for (same, cross) edges.

    Under the retention reading the values are keep probabilities, so view 1 keeps
    mostly same-attribute edges and view 2 mostly cross-attribute edges.
    """
    for name, value in (('p1', p1), ('p2', p2), ('p3', p3), ('p4', p4)):
        _require_probability(name, value)
    if not p1 > p2:
        raise ValidationError(f"counterfactual scheme requires p1 > p2, got p1={p1}, p2={p2}")
    if not p3 < p4:
        raise ValidationError(f"counterfactual scheme requires p3 < p4, got p3={p3}, p4={p4}")
    if view_id == 1:
        same_value, cross_value = p1, p2
    elif view_id == 2:
        same_value, cross_value = p3, p4
    else:
        raise ValidationError(f"view_id must be 1 or 2, got {view_id}")
    if reading is CounterfactualReading.RETENTION:
        same_value, cross_value = 1.0 - same_value, 1.0 - cross_value
    pre = np.where(g.same_group_mask, same_value, cross_value).astype(np.float64)
    params = {'p1': p1, 'p2': p2, 'p3': p3, 'p4': p4, 'view_id': view_id, 'reading': reading.value}
    pre, upper, params = _degree_adjusted(g, pre, 1.0, params, degree_cap)
    return _plan(EdgeScheme.COUNTERFACTUAL, pre, upper, params)


def edge_probs_triangle(g: Graph, alpha: float, p_b1: float, p_b2: float,
                        degree_cap: Optional[float] = None) -> EdgeDeletionPlan:
    """min(alpha·p_b1, 1) on monochromatic-triangle edges, p_b1 on other
    same-attribute edges, p_b2 on cross-attribute edges."""
    _require_probability('p_b1', p_b1)
    _require_probability('p_b2', p_b2)
    if not alpha > 1:
        raise ValidationError(f"triangle scheme requires alpha > 1, got {alpha}")
    if not p_b1 > p_b2:
        raise ValidationError(f"triangle scheme requires p_b1 > p_b2, got p_b1={p_b1}, p_b2={p_b2}")
    in_triangle = monochromatic_triangle_mask(g)
    pre = np.where(g.same_group_mask, p_b1, p_b2).astype(np.float64)
    pre[in_triangle] = alpha * p_b1
    params = {'alpha': alpha, 'p_b1': p_b1, 'p_b2': p_b2}
    pre, upper, params = _degree_adjusted(g, pre, 1.0, params, degree_cap)
    return _plan(EdgeScheme.TRIANGLE, pre, upper, params)


def edge_probs_degree(g: Graph, p_b1: float, p_b2: float, p_max: float) -> EdgeDeletionPlan:
    """min(factor · base, p_max), factor = (d_max - d_mean)/(d_max - min(d_i, d_j)).

    Degrees come from the original graph. A regular graph uses factor 1; an edge
    whose endpoints both have degree d_max gets p_max.
    """
    for name, value in (('p_b1', p_b1), ('p_b2', p_b2), ('p_max', p_max)):
        _require_probability(name, value)
    if not p_b1 > p_b2:
        raise ValidationError(f"degree scheme requires p_b1 > p_b2, got p_b1={p_b1}, p_b2={p_b2}")
    base = np.where(g.same_group_mask, p_b1, p_b2).astype(np.float64)
    params = {'p_b1': p_b1, 'p_b2': p_b2, 'p_max': p_max}
    pre, upper, _ = _degree_adjusted(g, base, 1.0, params, p_max)
    return _plan(EdgeScheme.DEGREE, pre, upper, params)


def uniform_edge_plan(plan: EdgeDeletionPlan) -> EdgeDeletionPlan:
    """Every edge deleted with the mean adaptive deletion probability."""
    mean = float(plan.delete_prob.mean()) if plan.delete_prob.size else 0.0
    params = dict(plan.params, uniform=True)
    return EdgeDeletionPlan(scheme=plan.scheme, delete_prob=np.full_like(plan.delete_prob, mean),
                            params=params, warnings=plan.warnings)


def edge_plan_for_view(g: Graph, settings: ViewSettings, view_id: int,
                       reading: CounterfactualReading = CounterfactualReading.RETENTION) -> Optional[EdgeDeletionPlan]:
    scheme = settings.edge_scheme
    if scheme is None:
        return None
    cap = settings.p_max if settings.degree_aware else None
    if scheme is EdgeScheme.DYADIC:
        plan = edge_probs_dyadic(g, settings.p_kappa, settings.p_max, cap)
    elif scheme is EdgeScheme.PARITY:
        plan = edge_probs_parity(g, settings.p_kappa, settings.p_max_caps, cap)
    elif scheme is EdgeScheme.COUNTERFACTUAL:
        plan = edge_probs_counterfactual(g, settings.p1, settings.p2, settings.p3, settings.p4, view_id,
                                         reading, cap)
    elif scheme is EdgeScheme.TRIANGLE:
        plan = edge_probs_triangle(g, settings.alpha, settings.p_b1, settings.p_b2, cap)
    elif scheme is EdgeScheme.DEGREE:
        plan = edge_probs_degree(g, settings.p_b1, settings.p_b2, settings.p_max)
    else:
        raise ValidationError(f"unknown edge scheme {scheme}")
    return uniform_edge_plan(plan) if settings.uniform else plan


def expected_retention_by_group(g: Graph, plan: EdgeDeletionPlan, clamped: bool = False) -> Dict[str, float]:
    """Expected kept directed edge instances per (s_i, s_j) group."""
    probs = plan.delete_prob if clamped or plan.pre_clamp is None else plan.pre_clamp
    keep = 1.0 - probs
    groups = _parity_group_of_edges(g)
    # each undirected edge contributes two directed instances; cross edges one per orientation
    result = {
        ZERO_ZERO: 2.0 * float(keep[groups == ZERO_ZERO].sum()),
        ONE_ONE: 2.0 * float(keep[groups == ONE_ONE].sum()),
        '01': float(keep[groups == CROSS].sum()),
        '10': float(keep[groups == CROSS].sum()),
    }
    result['same'] = float(keep[g.same_group_mask].sum())
    result['diff'] = float(keep[~g.same_group_mask].sum())
    return result


def sample_edge_deletion(g: Graph, plan: EdgeDeletionPlan, seed: int, view_id: int) -> sp.csr_matrix:
    """One Bernoulli(delete_prob) coin per undirected edge; both orientations go together."""
    if plan.delete_prob.shape != (g.n_edges,):
        raise ValidationError(f"plan has {plan.delete_prob.shape} probabilities for {g.n_edges} edges")
    deleted = rng.bernoulli(plan.delete_prob, seed, view_id, rng.EDGE_DELETE)
    kept = g.edge_list[~deleted]
    rows = np.concatenate((kept[:, 0], kept[:, 1]))
    cols = np.concatenate((kept[:, 1], kept[:, 0]))
    adjacency = sp.csr_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=g.adjacency.shape)
    adjacency.sort_indices()
    return adjacency


# =============================================================================
# VIEWS
# =============================================================================

class ViewSampler:
    """Builds the per-view plans of an augmentation config once and draws fresh
    view pairs for any seed."""

    def __init__(self, g: Graph, cfg: AugmentationConfig):
        cfg.validate()
        self.graph = g
        self.cfg = cfg
        self._reports: Dict = {}
        self.feature_plans = {}
        self.edge_plans = {}
        for view_id in (1, 2):
            settings = cfg.view(view_id)
            self.feature_plans[view_id] = self._feature_plan(settings)
            self.edge_plans[view_id] = edge_plan_for_view(g, settings, view_id, cfg.counterfactual_reading)

    def _feature_plan(self, settings: ViewSettings) -> Optional[FeatureMaskPlan]:
        if not settings.feature_masking:
            return None
        if settings.method not in self._reports:
            self._reports[settings.method] = feature_correlation_report(self.graph, settings.method)
        plan = feature_mask_plan(self._reports[settings.method], settings.p_f)
        return uniform_feature_plan(plan) if settings.uniform else plan

    def sample(self, seed: int, view_id: int) -> GraphView:
        g = self.graph
        settings = self.cfg.view(view_id)
        fplan = self.feature_plans[view_id]
        eplan = self.edge_plans[view_id]
        if fplan is not None:
            mask = sample_feature_mask(fplan, seed, view_id)
            features = apply_feature_mask(g.features, mask)
        else:
            mask = np.ones(g.n_features, dtype=np.int8)
            features = g.features
        adjacency = sample_edge_deletion(g, eplan, seed, view_id) if eplan is not None else g.adjacency
        provenance = {
            'seed': int(seed),
            'view_id': view_id,
            'augmentation': settings.describe(),
            'feature_masking': None if fplan is None else {
                'method': fplan.method.value if fplan.method else 'uniform',
                'p_f': fplan.base_mask_prob,
                'mean_keep_prob': float(fplan.keep_prob.mean()) if fplan.keep_prob.size else 0.0,
                'kept_features': int(mask.sum()),
            },
            'edge_deletion': None if eplan is None else dict(eplan.summary(), kept_edges=int(adjacency.nnz // 2)),
        }
        return GraphView(adjacency=adjacency, features=features, feature_mask=mask, provenance=provenance)

    def sample_pair(self, seed: int) -> Tuple[GraphView, GraphView]:
        return self.sample(seed, 1), self.sample(seed, 2)


def make_views(g: Graph, cfg: AugmentationConfig, seed: int) -> Tuple[GraphView, GraphView]:
    return ViewSampler(g, cfg).sample_pair(seed)


def export_view(view: GraphView, g: Graph, directory) -> Dict[str, str]:
    """Write a view in the standard formats plus a provenance sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        'edges': directory / 'edges.tsv',
        'features': directory / 'features.csv',
        'sensitive': directory / 'sensitive.txt',
        'provenance': directory / 'provenance.json',
    }
    write_edges(view.adjacency, paths['edges'])
    write_features(view.features, paths['features'])
    write_column(g.sensitive, paths['sensitive'])
    if g.labels is not None:
        paths['labels'] = directory / 'labels.txt'
        write_column(g.labels, paths['labels'])
    with open(paths['provenance'], 'w') as fh:
        json.dump(view.provenance, fh, indent=2, sort_keys=True)
    return {k: str(v) for k, v in paths.items()}
