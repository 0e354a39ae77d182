import json

import torch
import wandb

from config import ExperimentConfig


def init_wandb(config: ExperimentConfig, job_type: str):
    '''
    wandb run for an experiment; mode "disabled" (the default) keeps everything offline and makes
    run.log a no-op.
    '''
    return wandb.init(project=config.logging.wandb_project, mode=config.logging.wandb_mode,
                      job_type=job_type, config=config.to_dict())


def avg_grad_norm(parameters) -> float:
    grad_norms = [p.grad.data.norm(2).tolist() for p in list(filter(lambda p: p.grad is not None, parameters))]
    return sum(grad_norms) / len(grad_norms) if len(grad_norms) > 0 else 0.0


def deterministic_mode(enabled: bool = True):
    '''single-threaded, deterministic kernels: identical config + seed gives identical numbers'''
    if enabled:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True, warn_only=True)


def write_jsonl(outfile, record: dict):
    outfile.write(json.dumps(record) + "\n")


def read_jsonl(path):
    with open(path) as infile:
        return [json.loads(line) for line in infile if line.strip()]


def tensor_to_list(tensor):
    '''float64 python values; float32 entries survive the json round trip exactly'''
    return tensor.detach().cpu().double().tolist()
