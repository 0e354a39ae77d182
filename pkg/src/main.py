'''
Command line entry point: python src/main.py <command> [options]

  train              train a model from a JSON config
  eval               SNR sweep of a checkpoint, writes a metrics table
  ablation           common-feature-ratio sweep (ratio 0 is the private-only ablation)
  cluster-bench      balanced grouping of a stored feature matrix
  loss-bench         gradient checks and equiangular convergence
  similarity         cosine-similarity report of the group common features
  export-embeddings  common features of every batch as jsonl
  plot               PSNR / perceptual curves of metrics tables
'''
import argparse
import dataclasses
import os
import sys

import numpy as np

from clustering import cluster_users
from config import load_config
from data import load_images
from errors import ConfigurationError, InputError, TrainingError
from evaluation import MetricsTable, evaluate, export_embeddings, plot_tables, ratio_sweep, similarity_report
from experiments import loss_bench
from training import load_checkpoint, train


def _floats(text):
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _ints(text):
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def read_features(path: str) -> np.ndarray:
    '''a .npy array, or whitespace-separated text with one user per row'''
    try:
        P = np.load(path) if path.endswith('.npy') else np.loadtxt(path, ndmin=2)
    except (OSError, ValueError) as e:
        raise InputError(f"cannot read features from {path}: {e}")
    return np.atleast_2d(P)


def cmd_train(args):
    config = load_config(args.config)
    images = load_images(config.data, train=True, seed=config.seed, image_size=config.model.image_size)
    print(f" ==> training on {images.shape[0]} images, L_p={config.model.private_dim}, "
          f"L_c={config.model.common_dim}")
    final, _ = train(config, images, args.out, resume=args.resume)
    print(f" ==> final checkpoint: {final}")


def cmd_eval(args):
    config, _ = load_checkpoint(args.checkpoint)
    data = config.data if args.data_limit is None else dataclasses.replace(config.data, limit=args.data_limit)
    images = load_images(data, train=False, seed=config.seed, image_size=config.model.image_size)
    interference = None if args.interference is None else args.interference == 'on'
    table = evaluate(args.checkpoint, images, args.snr_grid, args.channel, args.seeds,
                     interference=interference, progress=config.logging.progress)
    table.write(args.out)
    for snr, summary in table.by_snr().items():
        print(f" ==> {args.channel} {snr:g} dB: PSNR {summary['psnr_db']:.2f} dB, "
              f"perceptual {summary['perceptual']:.4f}")


def cmd_ablation(args):
    config = load_config(args.config)
    images = load_images(config.data, train=True, seed=config.seed, image_size=config.model.image_size)
    eval_images = load_images(config.data, train=False, seed=config.seed, image_size=config.model.image_size)
    tables = ratio_sweep(config, images, args.out, args.ratios, snr_grid=args.snr_grid, seeds=[config.seed],
                         eval_images=eval_images)
    for ratio, table in tables.items():
        print(f" ==> ratio {ratio:g}: " + ', '.join(f"{snr:g} dB -> {s['psnr_db']:.2f}"
                                                     for snr, s in table.by_snr().items()))


def cmd_cluster_bench(args):
    P = read_features(args.features)
    assignment = cluster_users(P, args.groups, args.seed)
    with open(args.out, 'w') as outfile:
        for user, group in enumerate(assignment.labels):
            outfile.write(f"{user} {group}\n")
        outfile.write(f"# total_cost {assignment.cost}\n")
    print(f" ==> {P.shape[0]} users in {args.groups} groups of {P.shape[0] // args.groups}, "
          f"total cost {assignment.cost:.6f}")


def cmd_loss_bench(args):
    results = loss_bench(steps=args.steps)
    return 0 if all(r.passed for r in results) else 1


def cmd_similarity(args):
    config, _ = load_checkpoint(args.checkpoint)
    images = load_images(config.data, train=False, seed=config.seed, image_size=config.model.image_size)
    report = similarity_report(args.checkpoint, images)
    np.set_printoptions(precision=3, suppress=True)
    print(report.X)
    print(f" ==> max deviation from the equiangular target: {report.deviation:.4f}")
    if args.out:
        np.savetxt(args.out, report.X)


def cmd_export_embeddings(args):
    config, _ = load_checkpoint(args.checkpoint)
    images = load_images(config.data, train=False, seed=config.seed, image_size=config.model.image_size)
    count = export_embeddings(args.checkpoint, images, args.out)
    print(f" ==> wrote {count} common features to {args.out}")


def cmd_plot(args):
    for path in args.tables:
        MetricsTable.read(path)
    labels = [os.path.splitext(os.path.basename(p))[0] for p in args.tables]
    print(f" ==> {plot_tables(args.tables, args.out, labels)}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='group-wise semantic splitting multiple access')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('train')
    p.add_argument('--config', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--resume', default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('eval')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--snr-grid', type=_floats, default=[0.0, 6.0, 12.0, 18.0])
    p.add_argument('--channel', choices=['awgn', 'rician', 'rayleigh'], default='awgn')
    p.add_argument('--seeds', type=_ints, default=[0])
    p.add_argument('--interference', choices=['on', 'off'], default=None)
    p.add_argument('--data-limit', type=int, default=None)
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('ablation')
    p.add_argument('--config', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--ratios', type=_floats, default=[0.0, 0.1, 0.2])
    p.add_argument('--snr-grid', type=_floats, default=[0.0, 6.0, 12.0, 18.0])
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser('cluster-bench')
    p.add_argument('--features', required=True)
    p.add_argument('--groups', type=int, required=True)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_cluster_bench)

    p = sub.add_parser('loss-bench')
    p.add_argument('--steps', type=int, default=2000)
    p.set_defaults(func=cmd_loss_bench)

    p = sub.add_parser('similarity')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--out', default=None)
    p.set_defaults(func=cmd_similarity)

    p = sub.add_parser('export-embeddings')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser('plot')
    p.add_argument('--tables', nargs='+', required=True)
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except (ConfigurationError, InputError, TrainingError) as e:
        print(f" ==> error: {e}", file=sys.stderr)
        return 2


if __name__ == '__main__':
    sys.exit(main())
