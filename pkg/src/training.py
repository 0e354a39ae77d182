'''
Joint end-to-end training: each step encodes the batch, clusters users on their private features,
builds the group common features, sends everything through the channel, decodes, and takes one
gradient step on L_recon + lambda * L_repul.
'''
import json
import os
from dataclasses import dataclass, field
from typing import List, Optional

import torch
from tqdm import tqdm

from channel import make_generator
from config import ExperimentConfig, TrainConfig, save_config
from data import SourceBatch, epoch_batches, num_batches
from errors import ConfigurationError, InputError, TrainingError
from losses import reconstruction_loss, repulsion_loss, total_loss
from networks import CHECKPOINT_FORMAT, SemanticSplittingNet, build_model, model_from_payload
from pipeline import PipelineOutput, run_pipeline
from utils import avg_grad_norm, deterministic_mode, init_wandb, read_jsonl, write_jsonl

METRICS_SCHEMA = 'gssma-metrics'
METRICS_VERSION = 1


@dataclass
class TrainState:
    model: SemanticSplittingNet
    optimizer: torch.optim.Optimizer
    generator: torch.Generator
    epoch: int = 0
    step: int = 0
    out_dir: Optional[str] = None


@dataclass
class LossTerms:
    recon: torch.Tensor
    repul: torch.Tensor
    total: torch.Tensor


@dataclass
class StepMetrics:
    step: int
    epoch: int
    recon: float
    repul: float
    total: float
    snr_db: float
    group_sizes: List[int] = field(default_factory=list)
    grad_norm: float = 0.0
    groups: List[List[int]] = field(default_factory=list)

    def to_record(self) -> dict:
        return {'step': self.step, 'epoch': self.epoch, 'recon': self.recon, 'repul': self.repul,
                'total': self.total, 'snr_db': self.snr_db, 'group_sizes': self.group_sizes,
                'grad_norm': self.grad_norm}


def sample_training_snr(generator: torch.Generator, snr_range, size: int = None):
    '''uniform draw(s) in [low, high] dB; one float, or a tensor of `size` draws'''
    low, high = snr_range
    if low > high:
        raise ConfigurationError(f"snr range low {low} > high {high}")
    u = torch.rand(1 if size is None else size, generator=generator, dtype=torch.float64)
    draws = low + (high - low) * u
    return float(draws[0]) if size is None else draws


def make_optimizer(model: SemanticSplittingNet, train: TrainConfig) -> torch.optim.Optimizer:
    if train.optimizer == 'adam':
        return torch.optim.Adam(model.parameters(), lr=train.learning_rate)
    if train.optimizer == 'sgd':
        return torch.optim.SGD(model.parameters(), lr=train.learning_rate)
    raise ConfigurationError(f"unknown optimizer '{train.optimizer}'")


def init_state(config: ExperimentConfig, out_dir: str = None) -> TrainState:
    config.validate()
    model = build_model(config.model, config.seed)
    return TrainState(model=model, optimizer=make_optimizer(model, config.train),
                      generator=make_generator(config.seed), out_dir=out_dir)


def cluster_seed(config: ExperimentConfig, step: int) -> int:
    return (config.seed * 1000003 + step) % (2 ** 32)


def forward_losses(model: SemanticSplittingNet, images, config: ExperimentConfig, snr_db,
                   generator: torch.Generator, seed: int, user_ids=None):
    out = run_pipeline(model, images, config, snr_db, generator, seed, user_ids=user_ids)
    recon = reconstruction_loss(images, out.reconstruction, config.loss)
    if out.common is not None and out.common.shape[0] >= 2:
        # repulsion acts on the transmitter-side common features
        repul = repulsion_loss(out.common, config.loss)
    else:
        repul = torch.zeros((), dtype=recon.dtype)
    return LossTerms(recon=recon, repul=repul, total=total_loss(recon, repul, config.loss.lambda_repul)), out


def _dump_nonfinite(state: TrainState, terms: LossTerms, snr_db, out: PipelineOutput) -> str:
    diagnostic = {
        'step': state.step, 'epoch': state.epoch,
        'recon': float(terms.recon), 'repul': float(terms.repul), 'total': float(terms.total),
        'snr_db': snr_db if isinstance(snr_db, float) else [float(s) for s in snr_db],
        'group_sizes': out.assignment.group_sizes,
        'param_norms': {name: float(sum(p.detach().norm() ** 2 for p in params) ** 0.5) if params else 0.0
                        for name, params in state.model.parameter_groups().items()},
    }
    if state.out_dir is None:
        return json.dumps(diagnostic)
    path = os.path.join(state.out_dir, f"nonfinite_step{state.step}.json")
    with open(path, 'w') as outfile:
        json.dump(diagnostic, outfile, indent=2)
    return path


def train_step(batch: SourceBatch, state: TrainState, config: ExperimentConfig):
    train = config.train
    batch.validate(train.groups)
    if batch.K != train.batch_size:
        raise InputError(f"batch holds {batch.K} users, config expects K={train.batch_size}")

    state.model.train()
    snr_db = sample_training_snr(state.generator, train.snr_range_db,
                                 size=batch.K if config.channel.per_user_snr else None)
    terms, out = forward_losses(state.model, batch.images, config, snr_db, state.generator,
                                cluster_seed(config, state.step), user_ids=batch.user_ids)
    if not torch.isfinite(terms.total):
        where = _dump_nonfinite(state, terms, snr_db, out)
        raise TrainingError(f"non-finite loss at step {state.step} (diagnostics: {where})")

    state.optimizer.zero_grad()
    terms.total.backward()
    if train.grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(state.model.parameters(), train.grad_clip)
    grad_norm = avg_grad_norm(state.model.parameters())
    state.optimizer.step()

    recon, repul = float(terms.recon), float(terms.repul)
    metrics = StepMetrics(
        step=state.step, epoch=state.epoch, recon=recon, repul=repul,
        total=recon + config.loss.lambda_repul * repul,
        snr_db=snr_db if isinstance(snr_db, float) else float(snr_db.mean()),
        group_sizes=out.assignment.group_sizes, grad_norm=grad_norm, groups=out.assignment.groups)
    state.step += 1
    return state, metrics


def save_checkpoint(state: TrainState, config: ExperimentConfig, path: str):
    torch.save({
        'format_version': CHECKPOINT_FORMAT,
        'config': config.to_dict(),
        'model_config': config.to_dict()['model'],
        'seed': config.seed,
        'model_state': state.model.state_dict(),
        'optimizer_state': state.optimizer.state_dict(),
        'epoch': state.epoch,
        'step': state.step,
        'generator_state': state.generator.get_state(),
    }, path)
    return path


def load_checkpoint(path: str, config: ExperimentConfig = None):
    '''(config, state) restored from a training checkpoint; a conflicting `config` is rejected'''
    payload = torch.load(path, map_location='cpu', weights_only=False)
    stored = ExperimentConfig.from_dict(payload['config'])
    if config is not None and config.model != stored.model:
        raise ConfigurationError(f"checkpoint {path} was trained with a different model config")
    config = config or stored
    model = model_from_payload(payload)
    optimizer = make_optimizer(model, config.train)
    optimizer.load_state_dict(payload['optimizer_state'])
    generator = torch.Generator()
    generator.set_state(payload['generator_state'])
    state = TrainState(model=model, optimizer=optimizer, generator=generator,
                       epoch=payload['epoch'], step=payload['step'])
    return config, state


def checkpoint_path(out_dir: str, epoch: int) -> str:
    return os.path.join(out_dir, f"checkpoint_epoch{epoch:04d}.pt")


def _open_metrics_log(path: str, config: ExperimentConfig, resumed_epoch: Optional[int]):
    kept = []
    if resumed_epoch is not None and os.path.exists(path):
        kept = [r for r in read_jsonl(path)[1:] if r['epoch'] <= resumed_epoch]
    outfile = open(path, 'w')
    write_jsonl(outfile, {'schema': METRICS_SCHEMA, 'version': METRICS_VERSION, 'config': config.to_dict()})
    for record in kept:
        write_jsonl(outfile, record)
    return outfile


def train(config: ExperimentConfig, images, out_dir: str, resume: str = None):
    '''
    runs epochs [start + 1 .. config.train.epochs]; returns (final checkpoint path, step records).
    epoch numbering starts at 1, the epoch-0 checkpoint is the untrained model.
    '''
    config.validate()
    deterministic_mode(config.train.deterministic)
    os.makedirs(out_dir, exist_ok=True)
    save_config(config, os.path.join(out_dir, 'config.json'))

    if resume is None:
        state = init_state(config, out_dir)
        final = save_checkpoint(state, config, checkpoint_path(out_dir, 0))
    else:
        print(f" ==> Resuming from {resume} . . . ")
        config, state = load_checkpoint(resume, config)
        state.out_dir = out_dir
        final = resume

    run = init_wandb(config, 'train')
    train_cfg = config.train
    records = []
    n_batches = num_batches(images.shape[0], train_cfg.batch_size)
    if n_batches == 0 and train_cfg.epochs > state.epoch:
        raise InputError(f"{images.shape[0]} images cannot fill a single batch of {train_cfg.batch_size}")

    with _open_metrics_log(os.path.join(out_dir, 'metrics.jsonl'), config,
                           state.epoch if resume is not None else None) as log:
        for epoch in range(state.epoch + 1, train_cfg.epochs + 1):
            state.epoch = epoch
            batches = epoch_batches(images, train_cfg.batch_size, config.seed, epoch)
            for batch_images in tqdm(batches, total=n_batches, desc=f"epoch {epoch}",
                                     disable=not config.logging.progress):
                state, metrics = train_step(SourceBatch(batch_images), state, config)
                record = metrics.to_record()
                write_jsonl(log, record)
                run.log(record)
                records.append(record)
            log.flush()

            if epoch % train_cfg.checkpoint_interval == 0 or epoch == train_cfg.epochs:
                final = save_checkpoint(state, config, checkpoint_path(out_dir, epoch))
                print(f" ==> epoch {epoch}: checkpoint {final}")

    run.finish()
    return final, records
