'''
Image metrics (PSNR, perceptual loss), SNR-sweep evaluation of checkpoints, the private-only and
common-ratio ablations, and latent diagnostics (cosine-similarity report, common-feature export).
'''
import dataclasses
import math
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np
import torch
from tqdm import tqdm

from channel import make_generator, worker_seed
from clustering import balanced_assign, cosine_cost_matrix
from config import ExperimentConfig
from data import epoch_batches
from errors import ConfigurationError, InputError
from losses import cosine_similarity_matrix, equiangular_deviation
from networks import SemanticSplittingNet
from perceptual import FixedConvFeatures, perceptual_loss
from pipeline import assign_groups, run_pipeline
from training import load_checkpoint, train
from utils import read_jsonl, tensor_to_list, write_jsonl

PSNR_CAP_DB = 100.0
TABLE_SCHEMA = 'gssma-metrics-table'
EMBEDDINGS_SCHEMA = 'gssma-embeddings'
FORMAT_VERSION = 1


def _clamped_squared_error(s, s_hat):
    if s.shape != s_hat.shape:
        raise InputError(f"shape mismatch: {list(s.shape)} vs {list(s_hat.shape)}")
    s = s.detach().double().clamp(0.0, 1.0)
    s_hat = s_hat.detach().double().clamp(0.0, 1.0)
    return (s - s_hat) ** 2


def _psnr_from_mse(mse: float) -> float:
    if mse <= 0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


def psnr(s, s_hat) -> float:
    '''PSNR in dB with peak 1 over all given pixels; both inputs are clamped to [0, 1] first'''
    return _psnr_from_mse(float(_clamped_squared_error(s, s_hat).mean()))


def psnr_per_image(s, s_hat) -> List[float]:
    errors = _clamped_squared_error(s, s_hat)
    return [_psnr_from_mse(float(e.mean())) for e in errors]


@dataclass
class MetricsRow:
    channel_model: str
    snr_db: float
    psnr_db: float
    perceptual: float
    n_images: int
    seed: int


@dataclass
class MetricsTable:
    rows: List[MetricsRow]

    def write(self, path: str):
        with open(path, 'w') as outfile:
            write_jsonl(outfile, {'schema': TABLE_SCHEMA, 'version': FORMAT_VERSION})
            for row in self.rows:
                write_jsonl(outfile, dataclasses.asdict(row))

    @staticmethod
    def read(path: str) -> 'MetricsTable':
        header, *records = read_jsonl(path)
        if header.get('schema') != TABLE_SCHEMA:
            raise InputError(f"{path} is not a metrics table (schema {header.get('schema')})")
        return MetricsTable(rows=[MetricsRow(**r) for r in records])

    def mean_psnr(self, snr_db: float) -> float:
        values = [r.psnr_db for r in self.rows if r.snr_db == snr_db]
        return float(np.mean(values))

    def by_snr(self) -> Dict[float, Dict[str, float]]:
        summary = {}
        for snr in sorted({r.snr_db for r in self.rows}):
            rows = [r for r in self.rows if r.snr_db == snr]
            summary[snr] = {'psnr_db': float(np.mean([r.psnr_db for r in rows])),
                            'perceptual': float(np.mean([r.perceptual for r in rows]))}
        return summary


@dataclass
class SimilarityReport:
    X: np.ndarray  # G x G cosine similarities of the mean common features
    deviation: float


def _eval_config(config: ExperimentConfig, channel_model: str = None, interference: bool = None,
                 rician_r: float = None) -> ExperimentConfig:
    channel = config.channel
    channel = dataclasses.replace(
        channel,
        model=channel.model if channel_model is None else channel_model,
        interference=channel.interference if interference is None else interference,
        rician_r=channel.rician_r if rician_r is None else rician_r)
    return dataclasses.replace(config, channel=channel.validate())


def eval_cluster_seed(seed: int, batch_index: int) -> int:
    return (seed * 7919 + batch_index) % (2 ** 32)


@torch.no_grad()
def evaluate_model(model: SemanticSplittingNet, config: ExperimentConfig, images, snr_grid: Sequence[float],
                   seeds: Sequence[int], feature_net=None, noiseless: bool = False,
                   progress: bool = False) -> MetricsTable:
    if len(snr_grid) == 0 or len(seeds) == 0:
        raise InputError("evaluation needs a non-empty snr grid and at least one seed")
    feature_net = FixedConvFeatures() if feature_net is None else feature_net
    model.eval()
    K = config.train.batch_size
    if images.shape[0] < K:
        raise InputError(f"{images.shape[0]} images cannot fill a batch of {K}")

    rows = []
    points = [(snr, i, seed) for i, snr in enumerate(snr_grid) for seed in seeds]
    for snr, snr_index, seed in tqdm(points, desc='eval', disable=not progress):
        generator = make_generator(worker_seed(seed, snr_index))
        psnrs, perceptual_sum = [], 0.0
        batches = epoch_batches(images, K, seed, 0, shuffle=False)
        for batch_index, batch in enumerate(batches):
            out = run_pipeline(model, batch, config, float(snr), generator, eval_cluster_seed(seed, batch_index),
                               noiseless=noiseless)
            s_hat = out.reconstruction.clamp(0.0, 1.0)
            psnrs.extend(psnr_per_image(batch, s_hat))
            perceptual_sum += float(perceptual_loss(batch, s_hat, feature_net)) * batch.shape[0]
        rows.append(MetricsRow(channel_model=config.channel.model, snr_db=float(snr),
                               psnr_db=float(np.mean(psnrs)), perceptual=perceptual_sum / len(psnrs),
                               n_images=len(psnrs), seed=int(seed)))
    rows.sort(key=lambda r: (r.snr_db, r.seed))
    return MetricsTable(rows=rows)


def evaluate(checkpoint: str, images, snr_grid: Sequence[float], channel_model: str, seeds: Sequence[int],
             interference: bool = None, rician_r: float = None, feature_net=None, config: ExperimentConfig = None,
             noiseless: bool = False, progress: bool = False) -> MetricsTable:
    '''
    full pipeline per (snr, seed), averaged over the images; the checkpoint file is only read.
    '''
    stored, state = load_checkpoint(checkpoint, config)
    config = _eval_config(config or stored, channel_model, interference, rician_r)
    return evaluate_model(state.model, config, images, snr_grid, seeds, feature_net=feature_net,
                          noiseless=noiseless, progress=progress)


def train_and_evaluate(config: ExperimentConfig, images, out_dir: str, snr_grid=(18.0,), seeds=(0,),
                       eval_images=None, feature_net=None) -> MetricsTable:
    final, _ = train(config, images, out_dir)
    eval_images = images if eval_images is None else eval_images
    return evaluate(final, eval_images, snr_grid, config.channel.model, seeds, feature_net=feature_net)


def private_only_ablation(config: ExperimentConfig, images, out_dir: str, snr_grid=(18.0,), seeds=(0,),
                          eval_images=None, feature_net=None) -> MetricsTable:
    '''same protocol with L_c = 0: the whole symbol budget goes to the private features'''
    ablated = config.with_common_ratio(0.0)
    return train_and_evaluate(ablated, images, out_dir, snr_grid, seeds, eval_images, feature_net)


def ratio_sweep(config: ExperimentConfig, images, out_dir: str, ratios: Sequence[float], snr_grid=(18.0,),
                seeds=(0,), eval_images=None, feature_net=None) -> Dict[float, MetricsTable]:
    tables = {}
    for ratio in ratios:
        print(f" ==> common feature ratio {ratio}")
        run_dir = f"{out_dir}/ratio_{ratio:g}"
        tables[ratio] = train_and_evaluate(config.with_common_ratio(ratio), images, run_dir, snr_grid, seeds,
                                           eval_images, feature_net)
        tables[ratio].write(f"{run_dir}/metrics_table.jsonl")
    return tables


@torch.no_grad()
def collect_common_features(model: SemanticSplittingNet, config: ExperimentConfig, images, seed: int = 0):
    '''transmitter-side [G x L_c] common features of every batch, in batch order'''
    if model.config.private_only:
        raise InputError("private-only model has no common features")
    model.eval()
    features = []
    for batch_index, batch in enumerate(epoch_batches(images, config.train.batch_size, seed, 0, shuffle=False)):
        z = model.semantic_encode(batch)
        p = model.private_encode(z)
        assignment = assign_groups(p, config.train.groups, config, eval_cluster_seed(seed, batch_index))
        features.append(model.common_encode_groups(z, assignment.groups))
    if not features:
        raise InputError(f"{images.shape[0]} images cannot fill a batch of {config.train.batch_size}")
    return features


def similarity_from_features(C) -> SimilarityReport:
    C = torch.as_tensor(C)
    X = cosine_similarity_matrix(C)
    return SimilarityReport(X=X.detach().cpu().numpy(), deviation=equiangular_deviation(C))


def align_groups(per_batch) -> List[torch.Tensor]:
    '''
    group indices come from per-batch clustering and carry no meaning across batches; each batch's
    groups are reordered by a one-to-one minimum cosine-cost matching against the first batch
    '''
    reference = per_batch[0].detach().cpu().double().numpy()
    aligned = [per_batch[0]]
    for C in per_batch[1:]:
        D = cosine_cost_matrix(C.detach().cpu().double().numpy(), reference)
        slots = balanced_assign(D, capacity=1).labels
        order = np.argsort(slots)
        aligned.append(C[torch.as_tensor(order, dtype=torch.long)])
    return aligned


def similarity_report(checkpoint: str, images) -> SimilarityReport:
    '''cosine similarities of the per-group common features averaged over batches (after alignment)'''
    config, state = load_checkpoint(checkpoint)
    per_batch = align_groups(collect_common_features(state.model, config, images))
    mean_features = torch.stack(per_batch).mean(dim=0)
    if mean_features.shape[0] < 2:
        raise ConfigurationError("a similarity report needs at least 2 groups")
    return similarity_from_features(mean_features)


def export_embeddings(checkpoint: str, images, out_file: str) -> int:
    '''
    one record per (batch, group): {group_id, epoch, batch, feature}; returns the record count.
    group_id is the cluster index within its batch.
    '''
    config, state = load_checkpoint(checkpoint)
    per_batch = collect_common_features(state.model, config, images)
    count = 0
    with open(out_file, 'w') as outfile:
        write_jsonl(outfile, {'schema': EMBEDDINGS_SCHEMA, 'version': FORMAT_VERSION,
                              'dim': state.model.config.common_dim})
        for batch_index, C in enumerate(per_batch):
            for group_id, feature in enumerate(C):
                write_jsonl(outfile, {'group_id': group_id, 'epoch': state.epoch, 'batch': batch_index,
                                      'feature': tensor_to_list(feature)})
                count += 1
    return count


def read_embeddings(path: str):
    header, *records = read_jsonl(path)
    if header.get('schema') != EMBEDDINGS_SCHEMA:
        raise InputError(f"{path} is not an embedding export (schema {header.get('schema')})")
    for record in records:
        if len(record['feature']) != header['dim']:
            raise InputError(f"record of group {record['group_id']} has length {len(record['feature'])}")
    return header, records


def plot_tables(paths: Sequence[str], out_file: str, labels: Sequence[str] = None):
    '''PSNR and perceptual loss against SNR, one curve per metrics table'''
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    labels = labels or list(paths)
    fig, (ax_psnr, ax_perc) = plt.subplots(1, 2, figsize=(10, 4))
    for path, label in zip(paths, labels):
        summary = MetricsTable.read(path).by_snr()
        snrs = list(summary)
        ax_psnr.plot(snrs, [summary[s]['psnr_db'] for s in snrs], marker='o', label=label)
        ax_perc.plot(snrs, [summary[s]['perceptual'] for s in snrs], marker='o', label=label)
    ax_psnr.set_xlabel('SNR (dB)')
    ax_psnr.set_ylabel('PSNR (dB)')
    ax_perc.set_xlabel('SNR (dB)')
    ax_perc.set_ylabel('Perceptual loss')
    ax_psnr.legend()
    fig.tight_layout()
    fig.savefig(out_file)
    plt.close(fig)
    return out_file
