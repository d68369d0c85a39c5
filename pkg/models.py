import enum
import json
import logging
from dataclasses import dataclass, field, asdict
from functools import cached_property
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1


# =============================================================================
# ERRORS
# =============================================================================

class FairAugError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(FairAugError, ValueError):
    pass


class ParseError(ValidationError):
    def __init__(self, path, line_number: int, message: str):
        self.path = str(path)
        self.line_number = line_number
        super().__init__(f"{self.path}:{line_number}: {message}")


class StructuralError(ValidationError):
    pass


class UndefinedMetricError(FairAugError):
    pass


class NumericError(FairAugError, ArithmeticError):
    pass


class TrainingAbortedError(FairAugError, RuntimeError):
    def __init__(self, epoch: int, losses: List[float], message: str):
        self.epoch = epoch
        self.losses = list(losses)
        tail = ', '.join(f"{v:.6g}" for v in self.losses[-5:])
        super().__init__(f"Training aborted at epoch {epoch}: {message} (last losses: [{tail}])")


# =============================================================================
# ENUMS
# =============================================================================

class CorrelationMethod(enum.Enum):
    PEARSON = "pearson"
    SPEARMAN = "spearman"


class EdgeScheme(enum.Enum):
    DYADIC = "dyadic"
    PARITY = "parity"
    COUNTERFACTUAL = "counterfactual"
    TRIANGLE = "triangle"
    DEGREE = "degree"


class CounterfactualReading(enum.Enum):
    RETENTION = "retention"
    DELETION = "deletion"


def _require_probability(name: str, value: float):
    if not (0.0 <= float(value) <= 1.0):
        raise ValidationError(f"{name} must lie in [0, 1], got {value}")


# =============================================================================
# GRAPH DATA MODEL
# =============================================================================

@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected graph with node features and a binary sensitive attribute.

    ``adjacency`` is a symmetric 0/1 CSR matrix without self-loops. Construct
    through ``core.graph_core.build_graph`` to canonicalize raw edge lists.
    """
    adjacency: sp.csr_matrix
    features: np.ndarray
    sensitive: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.adjacency.shape[0]
        if self.adjacency.shape != (n, n):
            raise StructuralError(f"adjacency must be square, got {self.adjacency.shape}")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise StructuralError(f"features must have {n} rows, got shape {self.features.shape}")
        if self.sensitive.shape != (n,):
            raise StructuralError(f"sensitive vector must have length {n}, got {self.sensitive.shape}")
        if not np.all(np.isin(self.sensitive, (0, 1))):
            raise ValidationError("sensitive values must be 0 or 1")
        if self.labels is not None:
            if self.labels.shape != (n,):
                raise StructuralError(f"labels must have length {n}, got {self.labels.shape}")
            if not np.all(np.isin(self.labels, (0, 1))):
                raise ValidationError("label values must be 0 or 1")
        if not np.all(np.isfinite(self.features)):
            raise ValidationError("features contain non-finite entries")
        if self.adjacency.diagonal().any():
            raise StructuralError("adjacency stores self-loops")
        if (self.adjacency != self.adjacency.T).nnz:
            raise StructuralError("adjacency is not symmetric")
        for arr in (self.features, self.sensitive, self.labels):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_edges(self) -> int:
        """Number of undirected edges."""
        return self.adjacency.nnz // 2

    @cached_property
    def edge_list(self) -> np.ndarray:
        """Undirected edges as an (E, 2) array with i < j, in row-major order.

        Every per-edge vector (deletion plans, triangle masks) is aligned with this order.
        """
        upper = sp.triu(self.adjacency, k=1, format='coo')
        order = np.lexsort((upper.col, upper.row))
        edges = np.column_stack((upper.row[order], upper.col[order])).astype(np.int64)
        edges.setflags(write=False)
        return edges

    @cached_property
    def same_group_mask(self) -> np.ndarray:
        """Per undirected edge: True when both endpoints share the sensitive value."""
        e = self.edge_list
        mask = self.sensitive[e[:, 0]] == self.sensitive[e[:, 1]]
        mask.setflags(write=False)
        return mask


@dataclass(frozen=True)
class EdgeGroupCounts:
    same: int
    diff: int
    by_pair: Dict[Tuple[int, int], int]

    @property
    def same_edges(self) -> int:
        """Undirected same-attribute edges; `same` counts each edge in both directions."""
        return self.same // 2

    @property
    def diff_edges(self) -> int:
        return self.diff // 2

    def to_dict(self) -> Dict:
        return {
            'same_edges': self.same_edges,
            'diff_edges': self.diff_edges,
            'directed': {
                'same': self.same,
                'diff': self.diff,
                'by_pair': {f"{a}{b}": c for (a, b), c in sorted(self.by_pair.items())},
            },
        }


@dataclass(frozen=True, eq=False)
class DegreeStats:
    degrees: np.ndarray
    d_max: int
    d_mean: float

    def to_dict(self) -> Dict:
        return {'d_max': self.d_max, 'd_mean': self.d_mean,
                'd_min': int(self.degrees.min()) if self.degrees.size else 0}


@dataclass(frozen=True)
class SbmSpec:
    nodes_per_block: Tuple[int, int]
    p_within: float
    p_between: float
    n_features: int
    n_biased_features: int
    noise_scale: float = 1.0
    feature_shift: float = 1.0
    n_informative_features: int = 4
    label_bias: float = 0.5
    label_noise: float = 1.0

    def validate(self):
        _require_probability('p_within', self.p_within)
        _require_probability('p_between', self.p_between)
        if len(self.nodes_per_block) != 2 or min(self.nodes_per_block) < 0:
            raise ValidationError(f"nodes_per_block must be two non-negative counts, got {self.nodes_per_block}")
        if sum(self.nodes_per_block) == 0:
            raise ValidationError("SBM graph must have at least one node")
        if self.n_features < 1:
            raise ValidationError("n_features must be positive")
        if not 0 <= self.n_biased_features <= self.n_features:
            raise ValidationError(
                f"n_biased_features ({self.n_biased_features}) must lie in [0, n_features={self.n_features}]")
        if self.n_informative_features < 0 or self.noise_scale < 0 or self.label_noise < 0:
            raise ValidationError("n_informative_features, noise_scale and label_noise must be non-negative")
        return True


# =============================================================================
# STATISTICS
# =============================================================================

@dataclass(frozen=True, eq=False)
class CorrelationReport:
    method: CorrelationMethod
    r: np.ndarray
    p_uncorr: np.ndarray
    degenerate: np.ndarray
    n_samples: int

    @property
    def n_features(self) -> int:
        return self.r.shape[0]

    def to_dict(self) -> Dict:
        return {
            'method': self.method.value,
            'n_samples': self.n_samples,
            'r': self.r.tolist(),
            'p_uncorr': self.p_uncorr.tolist(),
            'degenerate': [int(i) for i in np.flatnonzero(self.degenerate)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# =============================================================================
# AUGMENTATION
# =============================================================================

@dataclass(frozen=True, eq=False)
class FeatureMaskPlan:
    keep_prob: np.ndarray
    base_mask_prob: float
    method: Optional[CorrelationMethod]


@dataclass(frozen=True, eq=False)
class EdgeDeletionPlan:
    scheme: EdgeScheme
    delete_prob: np.ndarray
    params: Dict[str, float]
    pre_clamp: Optional[np.ndarray] = None
    warnings: Tuple[str, ...] = ()

    def summary(self) -> Dict:
        p = self.delete_prob
        return {
            'scheme': self.scheme.value,
            'params': dict(self.params),
            'n_edges': int(p.size),
            'mean_delete_prob': float(p.mean()) if p.size else 0.0,
            'min_delete_prob': float(p.min()) if p.size else 0.0,
            'max_delete_prob': float(p.max()) if p.size else 0.0,
            'warnings': list(self.warnings),
        }


@dataclass(frozen=True)
class ViewSettings:
    """Augmentation settings for one contrastive view.

    ``edge_scheme`` None disables edge deletion; ``uniform`` replaces the adaptive
    probabilities by their mean (the uniform control). ``degree_aware`` scales the
    dyadic, parity, counterfactual or triangle probabilities by the degree factor,
    capped at ``p_max``.
    """
    feature_masking: bool = False
    method: CorrelationMethod = CorrelationMethod.PEARSON
    p_f: float = 0.0
    edge_scheme: Optional[EdgeScheme] = None
    p_kappa: float = 0.85
    p_max: float = 0.85
    p_max_caps: Tuple[float, float, float] = (0.5, 0.8, 0.85)
    p1: float = 0.75
    p2: float = 0.15
    p3: float = 0.30
    p4: float = 0.60
    alpha: float = 1.4
    p_b1: float = 0.6
    p_b2: float = 0.2
    degree_aware: bool = False
    uniform: bool = False

    def validate(self):
        for name in ('p_f', 'p_kappa', 'p_max', 'p1', 'p2', 'p3', 'p4', 'p_b1', 'p_b2'):
            _require_probability(name, getattr(self, name))
        for i, cap in enumerate(self.p_max_caps, start=1):
            _require_probability(f"p_max{i}", cap)
        if len(self.p_max_caps) != 3 or not (self.p_max_caps[0] <= self.p_max_caps[1] <= self.p_max_caps[2]):
            raise ValidationError(f"parity caps must satisfy p_max1 <= p_max2 <= p_max3, got {self.p_max_caps}")
        if self.edge_scheme is EdgeScheme.COUNTERFACTUAL:
            if not self.p1 > self.p2:
                raise ValidationError(f"counterfactual scheme requires p1 > p2, got p1={self.p1}, p2={self.p2}")
            if not self.p3 < self.p4:
                raise ValidationError(f"counterfactual scheme requires p3 < p4, got p3={self.p3}, p4={self.p4}")
        if self.edge_scheme in (EdgeScheme.TRIANGLE, EdgeScheme.DEGREE) and not self.p_b1 > self.p_b2:
            raise ValidationError(f"{self.edge_scheme.value} scheme requires p_b1 > p_b2, "
                                  f"got p_b1={self.p_b1}, p_b2={self.p_b2}")
        if self.edge_scheme is EdgeScheme.TRIANGLE and not self.alpha > 1:
            raise ValidationError(f"triangle scheme requires alpha > 1, got {self.alpha}")
        if self.degree_aware and self.edge_scheme is None:
            raise ValidationError("degree_aware needs an edge deletion scheme")
        return True

    def describe(self) -> str:
        parts = []
        if self.feature_masking:
            parts.append('fm')
        if self.edge_scheme is not None:
            parts.append(self.edge_scheme.value)
            if self.degree_aware and self.edge_scheme is not EdgeScheme.DEGREE:
                parts.append('deg')
        name = '+'.join(parts) or 'none'
        return f"uniform:{name}" if self.uniform else name

    def to_dict(self) -> Dict:
        d = asdict(self)
        d['method'] = self.method.value
        d['edge_scheme'] = self.edge_scheme.value if self.edge_scheme else None
        d['p_max_caps'] = list(self.p_max_caps)
        return d


@dataclass(frozen=True)
class AugmentationConfig:
    view1: ViewSettings = field(default_factory=ViewSettings)
    view2: ViewSettings = field(default_factory=ViewSettings)
    counterfactual_reading: CounterfactualReading = CounterfactualReading.RETENTION

    def view(self, view_id: int) -> ViewSettings:
        if view_id == 1:
            return self.view1
        if view_id == 2:
            return self.view2
        raise ValidationError(f"view_id must be 1 or 2, got {view_id}")

    def validate(self):
        self.view1.validate()
        self.view2.validate()
        return True

    @property
    def name(self) -> str:
        return self.view1.describe()

    def to_dict(self) -> Dict:
        return {'view1': self.view1.to_dict(), 'view2': self.view2.to_dict(),
                'counterfactual_reading': self.counterfactual_reading.value}


@dataclass(frozen=True, eq=False)
class GraphView:
    adjacency: sp.csr_matrix
    features: np.ndarray
    feature_mask: np.ndarray
    provenance: Dict

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return self.adjacency.nnz // 2


# =============================================================================
# ENCODER
# =============================================================================

@dataclass(frozen=True)
class EncoderDims:
    n_features: int
    hidden: int
    embedding: int
    proj_hidden: int
    proj_out: int

    def validate(self):
        for name, value in asdict(self).items():
            if int(value) < 1:
                raise ValidationError(f"dimension {name} must be positive, got {value}")
        return True

    def as_tuple(self) -> Tuple[int, int, int, int, int]:
        return (self.n_features, self.hidden, self.embedding, self.proj_hidden, self.proj_out)


PARAM_NAMES = ('gcn_w1', 'gcn_w2', 'proj_w1', 'proj_b1', 'proj_w2', 'proj_b2')


@dataclass(eq=False)
class EncoderParams:
    """GCN weights (no biases) and the two-layer projection head.

    Instances double as gradient containers: a gradient has exactly the shapes
    of the parameters it differentiates.
    """
    gcn_w1: np.ndarray
    gcn_w2: np.ndarray
    proj_w1: np.ndarray
    proj_b1: np.ndarray
    proj_w2: np.ndarray
    proj_b2: np.ndarray

    @property
    def dims(self) -> EncoderDims:
        return EncoderDims(self.gcn_w1.shape[0], self.gcn_w1.shape[1], self.gcn_w2.shape[1],
                           self.proj_w1.shape[1], self.proj_w2.shape[1])

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> 'EncoderParams':
        return EncoderParams(**{k: v.copy() for k, v in self.arrays().items()})

    def zeros_like(self) -> 'EncoderParams':
        return EncoderParams(**{k: np.zeros_like(v) for k, v in self.arrays().items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays().values())

    def validate(self):
        d = self.dims
        expected = {
            'gcn_w1': (d.n_features, d.hidden), 'gcn_w2': (d.hidden, d.embedding),
            'proj_w1': (d.embedding, d.proj_hidden), 'proj_b1': (d.proj_hidden,),
            'proj_w2': (d.proj_hidden, d.proj_out), 'proj_b2': (d.proj_out,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise StructuralError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if not self.is_finite():
            raise NumericError("encoder parameters contain non-finite entries")
        return True

    def save(self, path):
        np.savez(path, dims=np.array(self.dims.as_tuple(), dtype=np.int64), **self.arrays())
        logger.info(f"Encoder checkpoint saved to {path}")

    @classmethod
    def load(cls, path) -> 'EncoderParams':
        with np.load(path) as data:
            missing = [name for name in ('dims',) + PARAM_NAMES if name not in data]
            if missing:
                raise StructuralError(f"checkpoint {path} is missing arrays: {', '.join(missing)}")
            params = cls(**{name: data[name].astype(np.float64) for name in PARAM_NAMES})
            header = tuple(int(v) for v in data['dims'])
        if header != params.dims.as_tuple():
            raise StructuralError(f"checkpoint {path} dims header {header} does not match weights {params.dims.as_tuple()}")
        params.validate()
        return params


@dataclass(frozen=True, eq=False)
class Embeddings:
    h: np.ndarray
    z: np.ndarray


# =============================================================================
# TRAINING
# =============================================================================

@dataclass(frozen=True)
class TrainConfig:
    tau: float = 0.4
    epochs: int = 400
    learning_rate: float = 5e-4
    weight_decay: float = 1e-5
    seed: int = 0
    hidden_dim: int = 256
    embedding_dim: int = 256
    proj_dim: int = 256
    log_every: int = 50
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)

    def validate(self):
        if not self.tau > 0:
            raise ValidationError(f"tau must be positive, got {self.tau}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be at least 1, got {self.epochs}")
        if self.learning_rate < 0:
            raise ValidationError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ValidationError(f"weight_decay must be non-negative, got {self.weight_decay}")
        for name in ('hidden_dim', 'embedding_dim', 'proj_dim'):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        self.augmentation.validate()
        return True

    def encoder_dims(self, n_features: int) -> EncoderDims:
        return EncoderDims(n_features, self.hidden_dim, self.embedding_dim, self.proj_dim, self.proj_dim)


@dataclass
class TrainReport:
    loss_per_epoch: List[float]
    wall_time: float
    peak_rss_mb: float
    final_params_checkpoint: Optional[str] = None
    degenerate_rows: int = 0

    def to_dict(self) -> Dict:
        return {
            'schema_version': REPORT_SCHEMA_VERSION,
            'loss_per_epoch': [float(v) for v in self.loss_per_epoch],
            'final_loss': float(self.loss_per_epoch[-1]) if self.loss_per_epoch else None,
            'wall_time_s': self.wall_time,
            'peak_rss_mb': self.peak_rss_mb,
            'checkpoint': self.final_params_checkpoint,
            'degenerate_rows': self.degenerate_rows,
        }


# =============================================================================
# EVALUATION
# =============================================================================

@dataclass(frozen=True, eq=False)
class Split:
    train_idx: np.ndarray
    test_idx: np.ndarray
    seed: int
    train_fraction: float


@dataclass(frozen=True, eq=False)
class LogisticModel:
    weights: np.ndarray
    bias: float
    n_iter: int = 0
    converged: bool = True
    degenerate: bool = False


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float

    def __str__(self):
        return f"{self.mean:.2f} ± {self.std:.2f}"


@dataclass
class SplitResult:
    index: int
    seed: int
    accuracy: Optional[float] = None
    delta_sp: Optional[float] = None
    delta_eo: Optional[float] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class FairnessReport:
    """Accuracy and group-fairness summaries in percent, aggregated over splits."""
    accuracy: MetricSummary
    delta_sp: MetricSummary
    delta_eo: MetricSummary
    n_splits: int
    splits: List[SplitResult]

    def to_dict(self) -> Dict:
        return {
            'schema_version': REPORT_SCHEMA_VERSION,
            'n_splits': self.n_splits,
            'Accuracy %': asdict(self.accuracy),
            'Delta_SP %': asdict(self.delta_sp),
            'Delta_EO %': asdict(self.delta_eo),
            'splits': [asdict(s) for s in self.splits],
        }


# =============================================================================
# VERIFICATION
# =============================================================================

class RhoLabel(enum.Enum):
    ADAPTIVE = "adaptive"
    UNIFORM = "uniform"


@dataclass(frozen=True, eq=False)
class RhoModel:
    abs_r: np.ndarray
    keep_prob: np.ndarray
    label: RhoLabel = RhoLabel.ADAPTIVE

    def __post_init__(self):
        if self.abs_r.shape != self.keep_prob.shape or self.abs_r.ndim != 1:
            raise ValidationError(f"abs_r and keep_prob must be equal-length vectors, "
                                  f"got {self.abs_r.shape} and {self.keep_prob.shape}")
        if np.any(self.abs_r < 0):
            raise ValidationError("abs_r entries must be non-negative")
        if np.any((self.keep_prob < 0) | (self.keep_prob > 1)):
            raise ValidationError("keep_prob entries must lie in [0, 1]")


@dataclass(frozen=True)
class VerificationReport:
    analytic_adaptive: float
    analytic_uniform: float
    mc_adaptive: Tuple[float, float]
    mc_uniform: Tuple[float, float]
    mc_agrees: bool
    majorization_holds: bool
    inequality_holds: bool
    monotone_pairing: bool
    trials: int

    @property
    def passed(self) -> bool:
        return self.inequality_holds and self.majorization_holds

    def to_dict(self) -> Dict:
        d = asdict(self)
        d['schema_version'] = REPORT_SCHEMA_VERSION
        d['mc_adaptive'] = {'mean': self.mc_adaptive[0], 'stderr': self.mc_adaptive[1]}
        d['mc_uniform'] = {'mean': self.mc_uniform[0], 'stderr': self.mc_uniform[1]}
        d['passed'] = self.passed
        return d
