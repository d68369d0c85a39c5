"""Command-line entry point: dataset statistics, view export, contrastive
training, fairness evaluation, the masking inequality check and benchmarks.

Every command reads one experiment file, writes ``<command>.json`` into the
output directory and prints a table (or the JSON itself with ``--json``).
"""
import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from config import Config, ExperimentConfig
from core.augment import ViewSampler, export_view
from core.contrastive import ContrastiveTrainer
from core.evaluate import evaluate_pipeline
from core.graph_core import degree_stats, edge_group_counts, generate_sbm, load_graph
from core.stats import feature_correlation_report, total_correlation
from core.verify import verify_proposition1
from models import REPORT_SCHEMA_VERSION, CorrelationMethod, EncoderParams, FairAugError, Graph

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_INVALID = 2
EXIT_CHECK_FAILED = 3


def setup_logging():
    Config.validate_config()
    handlers = [logging.StreamHandler(sys.stderr)]
    if Config.LOG_FILE:
        handlers.append(logging.FileHandler(Config.LOG_FILE))
    logging.basicConfig(level=getattr(logging, Config.LOG_LEVEL.upper()),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
                        handlers=handlers)


def load_dataset(cfg: ExperimentConfig, seed: Optional[int] = None) -> Graph:
    if cfg.sbm is not None:
        return generate_sbm(cfg.sbm, cfg.seed if seed is None else seed)
    d = cfg.dataset
    return load_graph(d.edges, d.features, d.sensitive, d.labels)


def write_report(cfg: ExperimentConfig, name: str, payload: Dict) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.json"
    with open(path, 'w') as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    logger.info(f"Report written to {path}")
    return path


# =============================================================================
# COMMANDS
# =============================================================================
# Each command returns (payload, table); payload is the JSON report.

def cmd_stats(cfg: ExperimentConfig):
    g = load_dataset(cfg)
    groups = edge_group_counts(g)
    degrees = degree_stats(g)
    reports = {m: feature_correlation_report(g, m) for m in CorrelationMethod}
    payload = {
        'schema_version': REPORT_SCHEMA_VERSION,
        'n_nodes': g.n_nodes,
        'n_edges': g.n_edges,
        'n_features': g.n_features,
        'sensitive_counts': {str(v): int(np.sum(g.sensitive == v)) for v in (0, 1)},
        'edge_groups': groups.to_dict(),
        'degrees': degrees.to_dict(),
        'total_correlation': total_correlation(g.features, g.sensitive),
        'correlation': {m.value: r.to_dict() for m, r in reports.items()},
    }
    if g.labels is not None:
        payload['label_counts'] = {str(v): int(np.sum(g.labels == v)) for v in (0, 1)}
    table = pd.DataFrame([
        ('nodes', g.n_nodes), ('edges', g.n_edges), ('features', g.n_features),
        ('inter-group edges (same attribute)', groups.same_edges),
        ('intra-group edges (different attribute)', groups.diff_edges),
        ('max degree', degrees.d_max), ('mean degree', round(degrees.d_mean, 4)),
    ], columns=['statistic', 'value'])
    return payload, table


def cmd_augment(cfg: ExperimentConfig):
    g = load_dataset(cfg)
    aug = cfg.augmentation()
    views = ViewSampler(g, aug).sample_pair(cfg.seed)
    payload = {'schema_version': REPORT_SCHEMA_VERSION, 'augmentation': aug.to_dict(), 'views': {}}
    rows = []
    for view_id, view in enumerate(views, start=1):
        paths = export_view(view, g, Path(cfg.output_dir) / f"view{view_id}")
        payload['views'][f"view{view_id}"] = {'paths': paths, 'provenance': view.provenance}
        rows.append({'view': view_id, 'augmentation': view.provenance['augmentation'],
                     'edges': view.n_edges, 'kept_features': int(view.feature_mask.sum())})
    return payload, pd.DataFrame(rows)


def cmd_train(cfg: ExperimentConfig):
    g = load_dataset(cfg)
    trainer = ContrastiveTrainer(g, cfg.train_config())
    report = trainer.fit()
    checkpoint = Path(cfg.checkpoint_path)
    checkpoint.parent.mkdir(parents=True, exist_ok=True)
    trainer.save_checkpoint(checkpoint, report)
    payload = dict(report.to_dict(), augmentation=cfg.augmentation().to_dict())
    table = pd.DataFrame([{
        'augmentation': cfg.augmentation().name,
        'epochs': len(report.loss_per_epoch),
        'first loss': report.loss_per_epoch[0],
        'final loss': report.loss_per_epoch[-1],
        'wall time (s)': round(report.wall_time, 2),
        'peak RSS (MB)': round(report.peak_rss_mb, 1),
    }])
    return payload, table


def _metric_row(label: str, report) -> Dict:
    return {'scheme': label, 'Accuracy %': str(report.accuracy),
            'Delta_SP %': str(report.delta_sp), 'Delta_EO %': str(report.delta_eo)}


def cmd_eval(cfg: ExperimentConfig):
    g = load_dataset(cfg)
    path = cfg.checkpoint_path
    if not Path(path).is_file():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    params = EncoderParams.load(path)
    e = cfg.evaluation
    report = evaluate_pipeline(g, params, e.n_splits, e.fraction, e.l2, cfg.seed)
    payload = dict(report.to_dict(), checkpoint=str(path))
    return payload, pd.DataFrame([_metric_row(cfg.augmentation().name, report)])


def cmd_verify_prop1(cfg: ExperimentConfig):
    g = load_dataset(cfg)
    v = cfg.verify
    corr = feature_correlation_report(g, v.method)
    result = verify_proposition1(corr, v.p_f, v.trials, cfg.seed)
    payload = dict(result.to_dict(), method=v.method.value, p_f=v.p_f)
    table = pd.DataFrame([
        {'masking': 'adaptive', 'analytic E[rho]': result.analytic_adaptive,
         'MC mean': result.mc_adaptive[0], 'MC stderr': result.mc_adaptive[1]},
        {'masking': 'uniform', 'analytic E[rho]': result.analytic_uniform,
         'MC mean': result.mc_uniform[0], 'MC stderr': result.mc_uniform[1]},
    ])
    return payload, table


def _mean_std(values: List[float]) -> Dict:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return {'mean': None, 'std': None}
    return {'mean': float(arr.mean()), 'std': float(arr.std())}


def run_bench_scheme(g: Graph, cfg: ExperimentConfig, scheme: str, seed: int) -> Dict:
    params, _ = _train_for(g, cfg, scheme, seed)
    e = cfg.evaluation
    report = evaluate_pipeline(g, params, e.n_splits, e.fraction, e.l2, seed)
    return {'accuracy': report.accuracy.mean, 'delta_sp': report.delta_sp.mean,
            'delta_eo': report.delta_eo.mean, 'failed_splits': sum(not s.ok for s in report.splits)}


def _train_for(g: Graph, cfg: ExperimentConfig, scheme: str, seed: int):
    trainer = ContrastiveTrainer(g, replace(cfg.train_config(scheme, seed), log_every=0))
    report = trainer.fit()
    return trainer.params, report


def cmd_bench(cfg: ExperimentConfig):
    """Train and evaluate every listed scheme on each benchmark seed.

    Seeds are ``SEED + k``; SBM datasets are regenerated per seed and shared by
    all schemes of that seed.
    """
    results: Dict[str, List[Dict]] = {s: [] for s in cfg.bench.schemes}
    errors: Dict[str, List[str]] = {s: [] for s in cfg.bench.schemes}
    for k in range(cfg.bench.n_seeds):
        seed = cfg.seed + k
        g = load_dataset(cfg, seed)
        for scheme in cfg.bench.schemes:
            logger.info(f"bench seed {seed}: {scheme}")
            try:
                results[scheme].append(dict(run_bench_scheme(g, cfg, scheme, seed), seed=seed))
            except FairAugError as e:
                logger.warning(f"bench scheme {scheme} failed on seed {seed}: {e}")
                errors[scheme].append(f"seed {seed}: {e}")

    rows = []
    for scheme in cfg.bench.schemes:
        runs = results[scheme]
        row = {'scheme': scheme, 'runs': len(runs), 'errors': errors[scheme]}
        for metric in ('accuracy', 'delta_sp', 'delta_eo'):
            row[metric] = _mean_std([r[metric] for r in runs if r[metric] == r[metric]])
        row['per_seed'] = runs
        rows.append(row)
    payload = {'schema_version': REPORT_SCHEMA_VERSION, 'preset': cfg.preset,
               'n_seeds': cfg.bench.n_seeds, 'rows': rows}

    def fmt(summary):
        if summary['mean'] is None:
            return 'n/a'
        return f"{summary['mean']:.2f} ± {summary['std']:.2f}"

    table = pd.DataFrame([{'scheme': r['scheme'], 'runs': r['runs'], 'Accuracy %': fmt(r['accuracy']),
                           'Delta_SP %': fmt(r['delta_sp']), 'Delta_EO %': fmt(r['delta_eo'])}
                          for r in rows])
    return payload, table


COMMANDS: Dict[str, Callable] = {
    'stats': cmd_stats,
    'augment': cmd_augment,
    'train': cmd_train,
    'eval': cmd_eval,
    'verify-prop1': cmd_verify_prop1,
    'bench': cmd_bench,
}

_HELP = {
    'stats': 'node, edge-group, degree and feature-correlation statistics',
    'augment': 'draw one view pair and export it with provenance',
    'train': 'contrastive training; writes a checkpoint and a training report',
    'eval': 'logistic evaluation of a checkpoint: accuracy, Delta_SP, Delta_EO',
    'verify-prop1': 'adaptive vs uniform masking: expected total correlation, analytic and Monte Carlo',
    'bench': 'train and evaluate several augmentation schemes over several seeds',
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='fairaug', description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest='command', required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=_HELP[name])
        p.add_argument('--config', required=True, help='experiment file (dotenv key/value format)')
        p.add_argument('--seed', type=int, help='override SEED')
        p.add_argument('--output-dir', help='override OUTPUT_DIR')
        p.add_argument('--json', action='store_true', help='print the JSON report instead of a table')
        if name in ('train', 'eval'):
            p.add_argument('--checkpoint', help='override OUTPUT_CHECKPOINT')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        setup_logging()
        overrides = {}
        if args.seed is not None:
            overrides['seed'] = args.seed
        if args.output_dir:
            overrides['output_dir'] = args.output_dir
        if getattr(args, 'checkpoint', None):
            overrides['checkpoint'] = args.checkpoint
        cfg = ExperimentConfig.from_file(args.config, **overrides)

        payload, table = COMMANDS[args.command](cfg)
        write_report(cfg, args.command, payload)
        if args.json:
            print(json.dumps(payload, indent=2, sort_keys=True))
        else:
            print(table.to_string(index=False))

        if args.command == 'verify-prop1':
            print(f"Proposition check: {'PASS' if payload['passed'] else 'FAIL'}")
            return EXIT_OK if payload['passed'] else EXIT_CHECK_FAILED
        return EXIT_OK
    except (FairAugError, OSError) as e:
        logger.error(f"❌ {args.command} failed: {e}")
        return EXIT_INVALID
    except Exception as e:
        logger.exception(f"❌ Unexpected error in {args.command}: {e}")
        return EXIT_UNEXPECTED


if __name__ == '__main__':
    sys.exit(main())
