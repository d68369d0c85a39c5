import logging
import os
from pathlib import Path
from typing import FrozenSet, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp

from core import rng
from models import (DegreeStats, EdgeGroupCounts, Graph, ParseError, SbmSpec,
                    StructuralError, ValidationError)

logger = logging.getLogger(__name__)


# =============================================================================
# CONSTRUCTION & IO
# =============================================================================

def build_graph(n_nodes: int, edges, features, sensitive, labels=None) -> Tuple[Graph, int, int]:
    """Canonicalize a raw edge list into a Graph.

    Returns (graph, dropped_self_loops, dropped_duplicates). Duplicates are counted
    over undirected pairs, so listing both (i, j) and (j, i) counts once.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n_nodes):
        raise StructuralError(f"edge endpoint out of range for {n_nodes} nodes")

    loops = edges[:, 0] == edges[:, 1]
    edges = edges[~loops]
    lo = np.minimum(edges[:, 0], edges[:, 1])
    hi = np.maximum(edges[:, 0], edges[:, 1])
    unique = np.unique(np.column_stack((lo, hi)), axis=0) if edges.size else np.empty((0, 2), np.int64)
    duplicates = len(edges) - len(unique)

    rows = np.concatenate((unique[:, 0], unique[:, 1]))
    cols = np.concatenate((unique[:, 1], unique[:, 0]))
    adjacency = sp.csr_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(n_nodes, n_nodes))
    adjacency.sort_indices()

    graph = Graph(
        adjacency=adjacency,
        features=np.array(features, dtype=np.float64, copy=True).reshape(n_nodes, -1),
        sensitive=np.array(sensitive, dtype=np.int8, copy=True),
        labels=None if labels is None else np.array(labels, dtype=np.int8, copy=True),
    )
    return graph, int(loops.sum()), int(duplicates)


def _numbered_lines(path):
    line_number = 0
    with open(path, 'r', encoding='utf-8') as fh:
        try:
            for line_number, line in enumerate(fh, start=1):
                yield line_number, line
        except UnicodeDecodeError as e:
            raise ParseError(path, line_number + 1, f"not valid UTF-8 text ({e.reason})")


def _read_binary_column(path, kind: str) -> np.ndarray:
    values = []
    for line_number, line in _numbered_lines(path):
        token = line.strip()
        if not token:
            continue
        try:
            value = int(token)
        except ValueError:
            raise ParseError(path, line_number, f"expected an integer {kind} value, got '{token}'")
        if value not in (0, 1):
            raise ValidationError(f"{path}:{line_number}: {kind} value must be 0 or 1, got {value}")
        values.append(value)
    return np.array(values, dtype=np.int8)


def _read_edges(path) -> np.ndarray:
    pairs = []
    for line_number, line in _numbered_lines(path):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 2:
            raise ParseError(path, line_number, f"expected 'i<TAB>j', got '{line.rstrip()}'")
        try:
            pairs.append((int(fields[0]), int(fields[1])))
        except ValueError:
            raise ParseError(path, line_number, f"non-integer node id in '{line.rstrip()}'")
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def _read_features(path) -> np.ndarray:
    try:
        frame = pd.read_csv(path, header=None, dtype=str, skip_blank_lines=True)
    except pd.errors.EmptyDataError:
        raise StructuralError(f"feature file {path} is empty")
    except pd.errors.ParserError as e:
        raise ParseError(path, 0, f"malformed CSV: {e}")
    except UnicodeDecodeError as e:
        raise ParseError(path, 0, f"not valid UTF-8 text ({e.reason})")
    numeric = frame.apply(pd.to_numeric, errors='coerce')
    bad_rows = numeric.isna().any(axis=1).to_numpy()
    if bad_rows.any():
        row = int(np.flatnonzero(bad_rows)[0])
        raise ParseError(path, row + 1, f"non-numeric or missing feature value in row {row}")
    return numeric.to_numpy(dtype=np.float64)


def load_graph(edges_path, features_path, sensitive_path, labels_path=None) -> Graph:
    """Load a graph from the edge-list / CSV / 0-1 column formats.

    The node count is the number of feature rows; self-loops and duplicate edges
    are dropped with a warning.
    """
    for path in (edges_path, features_path, sensitive_path, labels_path):
        if path is not None and not os.path.isfile(path):
            raise FileNotFoundError(f"Input file not found: {path}")

    features = _read_features(features_path)
    n_nodes = features.shape[0]
    sensitive = _read_binary_column(sensitive_path, 'sensitive')
    if sensitive.size != n_nodes:
        raise StructuralError(f"{sensitive_path} has {sensitive.size} values but {features_path} has {n_nodes} rows")
    labels = None
    if labels_path is not None:
        labels = _read_binary_column(labels_path, 'label')
        if labels.size != n_nodes:
            raise StructuralError(f"{labels_path} has {labels.size} values but {features_path} has {n_nodes} rows")

    edges = _read_edges(edges_path)
    if edges.size:
        bad = (edges < 0) | (edges >= n_nodes)
        if bad.any():
            row = int(np.flatnonzero(bad.any(axis=1))[0])
            raise StructuralError(f"{edges_path}:{row + 1}: node id out of range [0, {n_nodes})")

    graph, loops, duplicates = build_graph(n_nodes, edges, features, sensitive, labels)
    if loops or duplicates:
        logger.warning(f"Dropped {loops} self-loops and {duplicates} duplicate edges while loading {edges_path}")
    logger.info(f"Loaded graph: {graph.n_nodes} nodes, {graph.n_edges} edges, {graph.n_features} features")
    return graph


def write_edges(adjacency: sp.spmatrix, path):
    upper = sp.triu(adjacency, k=1, format='coo')
    order = np.lexsort((upper.col, upper.row))
    with open(path, 'w') as fh:
        for i, j in zip(upper.row[order], upper.col[order]):
            fh.write(f"{i}\t{j}\n")


def write_features(features: np.ndarray, path):
    pd.DataFrame(features).to_csv(path, header=False, index=False, float_format='%.17g')


def write_column(values: np.ndarray, path):
    with open(path, 'w') as fh:
        fh.writelines(f"{int(v)}\n" for v in values)


def save_graph(g: Graph, directory) -> dict:
    """Write ``g`` in the standard file formats; returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        'edges': directory / 'edges.tsv',
        'features': directory / 'features.csv',
        'sensitive': directory / 'sensitive.txt',
    }
    write_edges(g.adjacency, paths['edges'])
    write_features(g.features, paths['features'])
    write_column(g.sensitive, paths['sensitive'])
    if g.labels is not None:
        paths['labels'] = directory / 'labels.txt'
        write_column(g.labels, paths['labels'])
    return {k: str(v) for k, v in paths.items()}


# =============================================================================
# ANALYTICS
# =============================================================================

def degree_stats(g: Graph) -> DegreeStats:
    degrees = np.asarray(g.adjacency.sum(axis=1)).ravel().astype(np.int64)
    if degrees.size == 0:
        return DegreeStats(degrees=degrees, d_max=0, d_mean=0.0)
    return DegreeStats(degrees=degrees, d_max=int(degrees.max()), d_mean=float(degrees.sum() / g.n_nodes))


def edge_group_counts(g: Graph) -> EdgeGroupCounts:
    """Counts over directed edge instances, grouped by (s_i, s_j)."""
    coo = g.adjacency.tocoo()
    si = g.sensitive[coo.row].astype(np.int64)
    sj = g.sensitive[coo.col].astype(np.int64)
    counts = np.bincount(2 * si + sj, minlength=4)
    by_pair = {(0, 0): int(counts[0]), (0, 1): int(counts[1]), (1, 0): int(counts[2]), (1, 1): int(counts[3])}
    return EdgeGroupCounts(
        same=by_pair[(0, 0)] + by_pair[(1, 1)],
        diff=by_pair[(0, 1)] + by_pair[(1, 0)],
        by_pair=by_pair,
    )


def monochromatic_triangle_mask(g: Graph) -> np.ndarray:
    """Boolean per undirected edge (aligned with ``g.edge_list``): edge lies in a
    triangle whose three nodes share one sensitive value.

    Such a triangle uses only same-group edges, so the masked product
    A_mono ∘ (A_mono · A_mono) counts, per same-group edge, its monochromatic
    common neighbours.
    """
    edges = g.edge_list
    if edges.size == 0:
        return np.zeros(0, dtype=bool)
    same = g.same_group_mask
    e = edges[same]
    a_mono = sp.csr_matrix(
        (np.ones(2 * len(e), dtype=np.int64),
         (np.concatenate((e[:, 0], e[:, 1])), np.concatenate((e[:, 1], e[:, 0])))),
        shape=g.adjacency.shape)
    wedges = a_mono.multiply(a_mono @ a_mono).tocsr()
    closed = np.asarray(wedges[edges[:, 0], edges[:, 1]]).ravel() > 0
    return closed & same


def monochromatic_triangle_edges(g: Graph) -> FrozenSet[Tuple[int, int]]:
    mask = monochromatic_triangle_mask(g)
    return frozenset((int(i), int(j)) for i, j in g.edge_list[mask])


# =============================================================================
# SYNTHETIC GRAPHS
# =============================================================================

def generate_sbm(spec: SbmSpec, seed: int) -> Graph:
    """Two-block stochastic block model with sensitive-dependent features.

    Block b holds the nodes with S = b. Biased features have mean
    ``feature_shift * s``; the rest are centred noise. Labels threshold a noisy
    score built from the first informative unbiased features plus ``label_bias``
    times the centred sensitive value.
    """
    spec.validate()
    n0, n1 = (int(v) for v in spec.nodes_per_block)
    n = n0 + n1
    sensitive = np.concatenate((np.zeros(n0, dtype=np.int8), np.ones(n1, dtype=np.int8)))

    iu, ju = np.triu_indices(n, k=1)
    probs = np.where(sensitive[iu] == sensitive[ju], spec.p_within, spec.p_between)
    present = rng.bernoulli(probs, seed, rng.SBM_EDGES)
    edges = np.column_stack((iu[present], ju[present]))

    feature_rng = rng.generator(seed, rng.SBM_FEATURES)
    features = feature_rng.normal(0.0, spec.noise_scale, size=(n, spec.n_features))
    features[:, :spec.n_biased_features] += spec.feature_shift * sensitive[:, None]

    informative = features[:, spec.n_biased_features:spec.n_biased_features + spec.n_informative_features]
    label_rng = rng.generator(seed, rng.SBM_LABELS)
    score = informative.sum(axis=1) + spec.label_bias * (2.0 * sensitive - 1.0)
    score += label_rng.normal(0.0, spec.label_noise, size=n) if spec.label_noise > 0 else 0.0
    labels = (score > 0).astype(np.int8)

    graph, _, _ = build_graph(n, edges, features, sensitive, labels)
    logger.debug(f"Generated SBM graph: {graph.n_nodes} nodes, {graph.n_edges} edges")
    return graph


# =============================================================================
# GCN PROPAGATION
# =============================================================================

def normalized_adjacency(view) -> sp.csr_matrix:
    """D̃^(-1/2) (A' + I) D̃^(-1/2) for the adjacency of a GraphView or Graph."""
    a = view.adjacency if hasattr(view, 'adjacency') else view
    n = a.shape[0]
    a_tilde = sp.csr_matrix(a, dtype=np.float64) + sp.identity(n, dtype=np.float64, format='csr')
    d_inv_sqrt = 1.0 / np.sqrt(np.asarray(a_tilde.sum(axis=1)).ravel())
    scale = sp.diags(d_inv_sqrt)
    return (scale @ a_tilde @ scale).tocsr()
