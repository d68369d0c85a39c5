import os
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

from dotenv import dotenv_values, load_dotenv

from models import (AugmentationConfig, CorrelationMethod, CounterfactualReading, EdgeScheme, SbmSpec,
                    TrainConfig, ValidationError, ViewSettings)

load_dotenv()

logger = logging.getLogger(__name__)


class Config:
    # Logging Configuration (the only settings read from the environment)
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
    LOG_FILE = os.getenv('LOG_FILE', '')

    # Training defaults
    TAU = 0.4
    EPOCHS = 400
    LEARNING_RATE = 5e-4
    WEIGHT_DECAY = 1e-5
    HIDDEN_DIM = 256
    EMBEDDING_DIM = 256
    PROJ_DIM = 256
    LOG_EVERY = 50

    # Evaluation defaults
    N_SPLITS = 3
    TRAIN_FRACTION = 0.9
    L2 = 1.0

    # Proposition checks
    VERIFY_TRIALS = 100_000
    VERIFY_P_F = 0.6

    # Benchmark defaults
    BENCH_SCHEMES = ['uniform:fm+triangle', 'fm', 'fm+triangle', 'fm+degree']
    BENCH_SEEDS = 5

    OUTPUT_DIR = 'runs'
    DEFAULT_PRESET = 'pokec_z'

    @classmethod
    def validate_config(cls):
        """Validate configuration values"""
        if cls.LOG_LEVEL.upper() not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            raise ValidationError(f"LOG_LEVEL must be a standard logging level, got {cls.LOG_LEVEL}")
        return True


# =============================================================================
# HYPERPARAMETER TABLES
# =============================================================================
# One row per augmentation setting, (view 1, view 2) settings per dataset.

def _fm(method: str, p_f: float) -> Dict:
    return {'feature_masking': True, 'method': CorrelationMethod(method), 'p_f': p_f}


def _dyadic(p_kappa, p_max):
    return {'edge_scheme': EdgeScheme.DYADIC, 'p_kappa': p_kappa, 'p_max': p_max}


def _parity(p_kappa, caps):
    return {'edge_scheme': EdgeScheme.PARITY, 'p_kappa': p_kappa, 'p_max_caps': caps}


def _counterfactual(p1, p2, p3, p4):
    return {'edge_scheme': EdgeScheme.COUNTERFACTUAL, 'p1': p1, 'p2': p2, 'p3': p3, 'p4': p4}


def _triangle(alpha, p_b1, p_b2):
    return {'edge_scheme': EdgeScheme.TRIANGLE, 'alpha': alpha, 'p_b1': p_b1, 'p_b2': p_b2}


def _degree(p_b1, p_b2, p_max):
    return {'edge_scheme': EdgeScheme.DEGREE, 'p_b1': p_b1, 'p_b2': p_b2, 'p_max': p_max}


def _same(settings: Dict) -> Tuple[Dict, Dict]:
    return settings, settings


HYPERPARAMETERS: Dict[str, Dict[str, Tuple[Dict, Dict]]] = {
    'pokec_z': {
        'fm': (_fm('spearman', 0.60), _fm('spearman', 0.80)),
        'dyadic': _same(_dyadic(0.85, 0.85)),
        'parity': _same(_parity(0.80, (0.50, 0.80, 0.85))),
        'counterfactual': _same(_counterfactual(0.75, 0.15, 0.30, 0.60)),
        'triangle': _same(_triangle(1.4, 0.60, 0.20)),
        'degree': _same(_degree(0.85, 0.15, 0.90)),
        'fm+dyadic': ({**_dyadic(0.85, 0.85), **_fm('pearson', 0.60)},
                      {**_dyadic(0.85, 0.85), **_fm('pearson', 0.40)}),
        'fm+parity': ({**_parity(0.85, (0.50, 0.80, 0.90)), **_fm('spearman', 0.60)},
                      {**_parity(0.85, (0.50, 0.80, 0.90)), **_fm('spearman', 0.80)}),
        'fm+counterfactual': ({**_counterfactual(0.80, 0.20, 0.30, 0.70), **_fm('spearman', 0.60)},
                              {**_counterfactual(0.80, 0.20, 0.30, 0.70), **_fm('spearman', 0.80)}),
        'fm+triangle': ({**_triangle(1.4, 0.60, 0.20), **_fm('spearman', 0.60)},
                        {**_triangle(1.4, 0.60, 0.20), **_fm('spearman', 0.80)}),
        'fm+degree': ({**_degree(0.85, 0.20, 0.90), **_fm('pearson', 0.60)},
                      {**_degree(0.85, 0.20, 0.90), **_fm('pearson', 0.40)}),
    },
    'pokec_n': {
        'fm': (_fm('pearson', 0.60), _fm('pearson', 0.40)),
        'dyadic': _same(_dyadic(0.85, 0.90)),
        'parity': _same(_parity(0.80, (0.50, 0.91, 0.92))),
        'counterfactual': _same(_counterfactual(0.90, 0.10, 0.15, 0.85)),
        'triangle': _same(_triangle(1.125, 0.85, 0.10)),
        'degree': _same(_degree(0.65, 0.15, 0.90)),
        'fm+dyadic': ({**_dyadic(0.80, 0.70), **_fm('pearson', 0.60)},
                      {**_dyadic(0.80, 0.70), **_fm('pearson', 0.40)}),
        'fm+parity': ({**_parity(0.85, (0.50, 0.70, 0.75)), **_fm('spearman', 0.60)},
                      {**_parity(0.85, (0.50, 0.70, 0.75)), **_fm('spearman', 0.80)}),
        'fm+counterfactual': ({**_counterfactual(0.85, 0.15, 0.15, 0.85), **_fm('pearson', 0.60)},
                              {**_counterfactual(0.85, 0.15, 0.15, 0.85), **_fm('pearson', 0.40)}),
        'fm+triangle': ({**_triangle(1.4, 0.60, 0.20), **_fm('spearman', 0.60)},
                        {**_triangle(1.4, 0.60, 0.20), **_fm('spearman', 0.80)}),
        'fm+degree': ({**_degree(0.70, 0.10, 0.85), **_fm('pearson', 0.60)},
                      {**_degree(0.70, 0.10, 0.85), **_fm('pearson', 0.40)}),
    },
}


def parse_scheme(name: str) -> Tuple[bool, str]:
    """Split 'uniform:<row>' into (uniform, row); 'none' disables augmentation."""
    name = name.strip().lower()
    uniform = name.startswith('uniform:')
    row = name[len('uniform:'):] if uniform else name
    return uniform, row


def augmentation_for(scheme: str, preset: str = Config.DEFAULT_PRESET,
                     overrides: Optional[Dict[int, Dict]] = None,
                     reading: CounterfactualReading = CounterfactualReading.RETENTION) -> AugmentationConfig:
    """Augmentation settings for a named row of a hyperparameter table.

    ``overrides`` maps view id (0 = both views) to ViewSettings field values.
    """
    if preset not in HYPERPARAMETERS:
        raise ValidationError(f"unknown preset '{preset}', expected one of {sorted(HYPERPARAMETERS)}")
    uniform, row = parse_scheme(scheme)
    table = HYPERPARAMETERS[preset]
    if row == 'none':
        rows = ({}, {})
    elif row in table:
        rows = table[row]
    else:
        raise ValidationError(f"unknown augmentation scheme '{scheme}', expected one of "
                              f"{['none'] + sorted(table)} (optionally prefixed with 'uniform:')")
    overrides = overrides or {}
    views = []
    for view_id, base in zip((1, 2), rows):
        values = {**base, **overrides.get(0, {}), **overrides.get(view_id, {}), 'uniform': uniform}
        views.append(ViewSettings(**values))
    cfg = AugmentationConfig(view1=views[0], view2=views[1], counterfactual_reading=reading)
    cfg.validate()
    return cfg


# =============================================================================
# EXPERIMENT FILES
# =============================================================================

def _flag(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    if value in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError("expected true or false")


_VIEW_KEYS = {
    'METHOD': ('method', CorrelationMethod),
    'P_F': ('p_f', float),
    'P_KAPPA': ('p_kappa', float),
    'P_MAX': ('p_max', float),
    'P1': ('p1', float),
    'P2': ('p2', float),
    'P3': ('p3', float),
    'P4': ('p4', float),
    'ALPHA': ('alpha', float),
    'P_B1': ('p_b1', float),
    'P_B2': ('p_b2', float),
    'DEGREE_AWARE': ('degree_aware', _flag),
}
_CAP_KEYS = ('P_MAX1', 'P_MAX2', 'P_MAX3')

_SCALAR_KEYS = {
    'SEED', 'PRESET',
    'DATASET_EDGES', 'DATASET_FEATURES', 'DATASET_SENSITIVE', 'DATASET_LABELS',
    'SBM_BLOCKS', 'SBM_P_WITHIN', 'SBM_P_BETWEEN', 'SBM_FEATURES', 'SBM_BIASED_FEATURES',
    'SBM_NOISE_SCALE', 'SBM_FEATURE_SHIFT', 'SBM_INFORMATIVE_FEATURES', 'SBM_LABEL_BIAS', 'SBM_LABEL_NOISE',
    'AUG_SCHEME', 'AUG_COUNTERFACTUAL_READING',
    'TRAIN_TAU', 'TRAIN_EPOCHS', 'TRAIN_LR', 'TRAIN_WEIGHT_DECAY', 'TRAIN_HIDDEN_DIM',
    'TRAIN_EMBEDDING_DIM', 'TRAIN_PROJ_DIM', 'TRAIN_LOG_EVERY',
    'EVAL_SPLITS', 'EVAL_TRAIN_FRACTION', 'EVAL_L2',
    'VERIFY_TRIALS', 'VERIFY_P_F', 'VERIFY_METHOD',
    'BENCH_SCHEMES', 'BENCH_SEEDS',
    'OUTPUT_DIR', 'OUTPUT_CHECKPOINT',
}


@dataclass(frozen=True)
class DatasetFiles:
    edges: str
    features: str
    sensitive: str
    labels: Optional[str] = None


@dataclass(frozen=True)
class EvalSettings:
    n_splits: int = Config.N_SPLITS
    fraction: float = Config.TRAIN_FRACTION
    l2: float = Config.L2


@dataclass(frozen=True)
class VerifySettings:
    trials: int = Config.VERIFY_TRIALS
    p_f: float = Config.VERIFY_P_F
    method: CorrelationMethod = CorrelationMethod.PEARSON


@dataclass(frozen=True)
class BenchSettings:
    schemes: Tuple[str, ...] = tuple(Config.BENCH_SCHEMES)
    n_seeds: int = Config.BENCH_SEEDS


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one CLI invocation needs: data source, augmentation, training,
    evaluation, verification, benchmark and output settings."""
    seed: int = 0
    preset: str = Config.DEFAULT_PRESET
    dataset: Optional[DatasetFiles] = None
    sbm: Optional[SbmSpec] = None
    scheme: str = 'fm+triangle'
    view_overrides: Dict[int, Dict] = field(default_factory=dict)
    counterfactual_reading: CounterfactualReading = CounterfactualReading.RETENTION
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvalSettings = field(default_factory=EvalSettings)
    verify: VerifySettings = field(default_factory=VerifySettings)
    bench: BenchSettings = field(default_factory=BenchSettings)
    output_dir: str = Config.OUTPUT_DIR
    checkpoint: Optional[str] = None

    @property
    def checkpoint_path(self) -> str:
        return self.checkpoint or str(Path(self.output_dir) / 'encoder.npz')

    def augmentation(self, scheme: Optional[str] = None) -> AugmentationConfig:
        return augmentation_for(scheme or self.scheme, self.preset, self.view_overrides,
                                self.counterfactual_reading)

    def train_config(self, scheme: Optional[str] = None, seed: Optional[int] = None) -> TrainConfig:
        return replace(self.train, augmentation=self.augmentation(scheme),
                       seed=self.seed if seed is None else seed)

    def validate(self):
        if (self.dataset is None) == (self.sbm is None):
            raise ValidationError("exactly one dataset source is required: DATASET_* files or SBM_* settings")
        if self.sbm is not None:
            self.sbm.validate()
        self.train_config().validate()
        for scheme in self.bench.schemes:
            self.augmentation(scheme)
        if not 0.0 < self.evaluation.fraction < 1.0:
            raise ValidationError(f"EVAL_TRAIN_FRACTION must lie in (0, 1), got {self.evaluation.fraction}")
        if self.evaluation.n_splits < 1:
            raise ValidationError(f"EVAL_SPLITS must be at least 1, got {self.evaluation.n_splits}")
        if self.evaluation.l2 < 0:
            raise ValidationError(f"EVAL_L2 must be non-negative, got {self.evaluation.l2}")
        if self.verify.trials < 100:
            raise ValidationError(f"VERIFY_TRIALS must be at least 100, got {self.verify.trials}")
        if not 0.0 <= self.verify.p_f <= 1.0:
            raise ValidationError(f"VERIFY_P_F must lie in [0, 1], got {self.verify.p_f}")
        if self.bench.n_seeds < 1:
            raise ValidationError(f"BENCH_SEEDS must be at least 1, got {self.bench.n_seeds}")
        return True

    @classmethod
    def from_file(cls, path, **overrides) -> 'ExperimentConfig':
        if not os.path.isfile(path):
            raise FileNotFoundError(f"Experiment file not found: {path}")
        values = {k: v for k, v in dotenv_values(path).items() if v is not None}
        base = Path(path).parent
        cfg = cls.from_mapping(values, base_dir=base)
        if overrides:
            cfg = replace(cfg, **overrides)
        cfg.validate()
        source = 'SBM' if cfg.sbm is not None else cfg.dataset.edges
        logger.info(f"Loaded experiment {path}: data={source} preset={cfg.preset} scheme={cfg.scheme} seed={cfg.seed}")
        return cfg

    @classmethod
    def from_mapping(cls, values: Dict[str, str], base_dir: Optional[Path] = None) -> 'ExperimentConfig':
        unknown = [k for k in values if k not in _SCALAR_KEYS and _view_key(k) is None]
        if unknown:
            raise ValidationError(f"unknown experiment keys: {', '.join(sorted(unknown))}")

        def get(key, cast, default):
            if key not in values or values[key] == '':
                return default
            try:
                return cast(values[key])
            except ValueError as e:
                raise ValidationError(f"invalid value for {key}: '{values[key]}' ({e})")

        def path_of(key):
            raw = values.get(key)
            if not raw:
                return None
            p = Path(raw)
            return str(p if p.is_absolute() or base_dir is None else base_dir / p)

        dataset = None
        if any(k.startswith('DATASET_') for k in values):
            missing = [k for k in ('DATASET_EDGES', 'DATASET_FEATURES', 'DATASET_SENSITIVE') if not values.get(k)]
            if missing:
                raise ValidationError(f"dataset section is missing {', '.join(missing)}")
            dataset = DatasetFiles(path_of('DATASET_EDGES'), path_of('DATASET_FEATURES'),
                                   path_of('DATASET_SENSITIVE'), path_of('DATASET_LABELS'))

        sbm = None
        if any(k.startswith('SBM_') for k in values):
            blocks = get('SBM_BLOCKS', _int_pair, (200, 200))
            sbm = SbmSpec(
                nodes_per_block=blocks,
                p_within=get('SBM_P_WITHIN', float, 0.9),
                p_between=get('SBM_P_BETWEEN', float, 0.1),
                n_features=get('SBM_FEATURES', int, 20),
                n_biased_features=get('SBM_BIASED_FEATURES', int, 2),
                noise_scale=get('SBM_NOISE_SCALE', float, 1.0),
                feature_shift=get('SBM_FEATURE_SHIFT', float, 1.0),
                n_informative_features=get('SBM_INFORMATIVE_FEATURES', int, 4),
                label_bias=get('SBM_LABEL_BIAS', float, 0.5),
                label_noise=get('SBM_LABEL_NOISE', float, 1.0),
            )

        overrides: Dict[int, Dict] = {}
        for key, raw in values.items():
            parsed = _view_key(key)
            if parsed is None:
                continue
            view_id, name = parsed
            bucket = overrides.setdefault(view_id, {})
            if name in _CAP_KEYS:
                bucket.setdefault('_caps', {})[name] = get(key, float, None)
            else:
                attr, cast = _VIEW_KEYS[name]
                bucket[attr] = get(key, cast, None)
        for bucket in overrides.values():
            caps = bucket.pop('_caps', None)
            if caps:
                if len(caps) != 3:
                    raise ValidationError("parity caps must set all of P_MAX1, P_MAX2 and P_MAX3")
                bucket['p_max_caps'] = (caps['P_MAX1'], caps['P_MAX2'], caps['P_MAX3'])

        train = TrainConfig(
            tau=get('TRAIN_TAU', float, Config.TAU),
            epochs=get('TRAIN_EPOCHS', int, Config.EPOCHS),
            learning_rate=get('TRAIN_LR', float, Config.LEARNING_RATE),
            weight_decay=get('TRAIN_WEIGHT_DECAY', float, Config.WEIGHT_DECAY),
            hidden_dim=get('TRAIN_HIDDEN_DIM', int, Config.HIDDEN_DIM),
            embedding_dim=get('TRAIN_EMBEDDING_DIM', int, Config.EMBEDDING_DIM),
            proj_dim=get('TRAIN_PROJ_DIM', int, Config.PROJ_DIM),
            log_every=get('TRAIN_LOG_EVERY', int, Config.LOG_EVERY),
        )
        schemes = get('BENCH_SCHEMES', lambda v: tuple(s.strip() for s in v.split(',') if s.strip()),
                      tuple(Config.BENCH_SCHEMES))
        return cls(
            seed=get('SEED', int, 0),
            preset=get('PRESET', str, Config.DEFAULT_PRESET),
            dataset=dataset,
            sbm=sbm,
            scheme=get('AUG_SCHEME', str, 'fm+triangle'),
            view_overrides=overrides,
            counterfactual_reading=get('AUG_COUNTERFACTUAL_READING', CounterfactualReading,
                                       CounterfactualReading.RETENTION),
            train=train,
            evaluation=EvalSettings(
                n_splits=get('EVAL_SPLITS', int, Config.N_SPLITS),
                fraction=get('EVAL_TRAIN_FRACTION', float, Config.TRAIN_FRACTION),
                l2=get('EVAL_L2', float, Config.L2),
            ),
            verify=VerifySettings(
                trials=get('VERIFY_TRIALS', int, Config.VERIFY_TRIALS),
                p_f=get('VERIFY_P_F', float, Config.VERIFY_P_F),
                method=get('VERIFY_METHOD', CorrelationMethod, CorrelationMethod.PEARSON),
            ),
            bench=BenchSettings(schemes=schemes, n_seeds=get('BENCH_SEEDS', int, Config.BENCH_SEEDS)),
            output_dir=path_of('OUTPUT_DIR') or Config.OUTPUT_DIR,
            checkpoint=path_of('OUTPUT_CHECKPOINT'),
        )


def _int_pair(raw: str) -> Tuple[int, int]:
    parts = [p.strip() for p in raw.split(',')]
    if len(parts) != 2:
        raise ValueError("expected two comma-separated block sizes")
    return int(parts[0]), int(parts[1])


def _view_key(key: str) -> Optional[Tuple[int, str]]:
    """'VIEW1_P_F' -> (1, 'P_F'); 'VIEW_P_F' applies to both views -> (0, 'P_F')."""
    for prefix, view_id in (('VIEW1_', 1), ('VIEW2_', 2), ('VIEW_', 0)):
        if key.startswith(prefix):
            name = key[len(prefix):]
            if name in _VIEW_KEYS or name in _CAP_KEYS:
                return view_id, name
    return None
