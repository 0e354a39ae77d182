'''
One pass of the downlink: encode -> private features -> grouping -> group common features ->
multicast / unicast over the channel -> per-user decode. Shared by training and evaluation.
'''
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from channel import sample_channel, transmit_common, transmit_private
from clustering import GroupAssignment, cluster_users, sequential_groups
from config import ExperimentConfig
from networks import SemanticSplittingNet


@dataclass
class PipelineOutput:
    reconstruction: torch.Tensor  # K x C x H x W
    semantic: torch.Tensor  # K x C' x h x w
    private: torch.Tensor  # K x L_p, transmitter side
    common: Optional[torch.Tensor]  # G x L_c, transmitter side (None for private-only)
    assignment: GroupAssignment


def assign_groups(private_features, num_groups: int, config: ExperimentConfig, seed: int) -> GroupAssignment:
    '''
    the assignment is a constant of the step: it is computed from detached features and no
    gradient flows through it. Non-finite features cannot be clustered; they get sequential groups
    so the pass completes and the non-finite values reach the loss.
    '''
    K = private_features.shape[0]
    if config.train.grouping == 'sequential':
        return sequential_groups(K, num_groups)
    if not torch.isfinite(private_features).all():
        print(" ==> non-finite private features, falling back to sequential groups")
        return sequential_groups(K, num_groups)
    P = private_features.detach().cpu().double().numpy()
    return cluster_users(P, num_groups, seed, max_iters=config.train.kmeans_max_iters,
                         normalized=config.train.normalize_for_clustering)


def run_pipeline(model: SemanticSplittingNet, images, config: ExperimentConfig, snr_db,
                 generator: torch.Generator, cluster_seed: int, user_ids: Sequence[int] = None,
                 num_groups: int = None, noiseless: bool = False) -> PipelineOutput:
    K = images.shape[0]
    num_groups = config.train.groups if num_groups is None else num_groups
    user_ids = list(range(K)) if user_ids is None else user_ids
    channel = config.channel

    z = model.semantic_encode(images)
    p = model.private_encode(z)
    ch = sample_channel(channel.model, K, channel.rician_r, generator, snr_db=snr_db, dtype=p.dtype)

    if model.config.private_only:
        # no grouping: every user forms part of a single nominal group
        assignment = GroupAssignment.from_labels(np.zeros(K, dtype=int), 1)
        c, received_c = None, None
    else:
        assignment = assign_groups(p, num_groups, config, cluster_seed)
        c = model.common_encode_groups(z, assignment.groups)
        received_c = transmit_common(c, assignment.groups, ch, interference=channel.interference,
                                     generator=generator, noiseless=noiseless)
    received_p = transmit_private(p, ch, interference=channel.interference, generator=generator,
                                  noiseless=noiseless)
    s_hat = model.decode(received_c, received_p, user_ids)
    return PipelineOutput(reconstruction=s_hat, semantic=z, private=p, common=c, assignment=assignment)
