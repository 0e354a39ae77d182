'''
Acceptance experiments: equiangular convergence of the repulsion loss, gradient checks of the
losses and the channel, the smoke training run and the private-only ablation ordering.
'''
import dataclasses
import os
from dataclasses import dataclass
from typing import List

import torch
from tqdm import tqdm

from channel import make_generator, sample_channel, transmit_common, transmit_private
from config import ExperimentConfig, LossWeights
from data import load_images
from evaluation import evaluate, private_only_ablation, similarity_from_features
from losses import (angular_repulsion, center_regularization, charbonnier, euclidean_repulsion, repulsion_loss,
                    simplex_configuration)
from training import checkpoint_path, train


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ''

    def __str__(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name} {self.detail}"


def equiangular_convergence(G: int = 5, dim: int = 64, steps: int = 2000, lr: float = 1e-2,
                            lambda_center: float = 0.01, seed: int = 0, progress: bool = False):
    '''
    optimizes G free vectors under the repulsion loss alone; they should settle on a centered
    simplex with all pairwise cosines at -1/(G-1). returns (vectors, similarity report, mean norm).
    '''
    generator = make_generator(seed)
    C = (0.1 * torch.randn(G, dim, generator=generator, dtype=torch.float64)).requires_grad_(True)
    optimizer = torch.optim.Adam([C], lr=lr)
    weights = LossWeights(lambda_center=lambda_center)
    for _ in tqdm(range(steps), desc='equiangular', disable=not progress):
        optimizer.zero_grad()
        loss = repulsion_loss(C, weights)
        loss.backward()
        optimizer.step()
    C = C.detach()
    return C, similarity_from_features(C), float(C.mean(dim=0).norm())


def check_equiangular_convergence(steps: int = 2000, G: int = 5) -> CheckResult:
    _, report, mean_norm = equiangular_convergence(G=G, steps=steps)
    passed = report.deviation <= 0.02 and mean_norm < 0.05
    return CheckResult('equiangular convergence', passed,
                       f"(max |cos - T| = {report.deviation:.4f}, mean norm = {mean_norm:.4f})")


def _gradcheck(name, fn, *inputs) -> CheckResult:
    try:
        passed = torch.autograd.gradcheck(fn, inputs, eps=1e-6, atol=1e-6, rtol=1e-4)
        return CheckResult(name, passed)
    except RuntimeError as e:
        return CheckResult(name, False, str(e).splitlines()[0])


def gradient_checks(seed: int = 0) -> List[CheckResult]:
    '''finite-difference checks in double precision of every loss term and of both channel paths'''
    generator = make_generator(seed)

    def rand(*shape):
        return torch.randn(*shape, generator=generator, dtype=torch.float64).requires_grad_(True)

    s = torch.rand(3, 2, 4, 4, generator=generator, dtype=torch.float64)
    s_hat = rand(3, 2, 4, 4)
    C = rand(4, 6)
    P = rand(4, 6)
    ch = sample_channel('rayleigh', 4, generator=generator, snr_db=10.0, dtype=torch.float64)
    groups = [[0, 1], [2, 3]]

    def common_path(C):
        # fresh noise stream per call: every evaluation sees the same realization
        return transmit_common(C[:2], groups, ch, generator=make_generator(seed + 1))

    def private_path(P):
        return transmit_private(P, ch, generator=make_generator(seed + 2))

    results = [
        _gradcheck('charbonnier', lambda x: charbonnier(s, x, 1e-3), s_hat),
        _gradcheck('euclidean repulsion', euclidean_repulsion, C),
        _gradcheck('center regularization', lambda x: center_regularization(x, 0.01), C),
        _gradcheck('angular repulsion', angular_repulsion, C),
        _gradcheck('repulsion loss', lambda x: repulsion_loss(x, LossWeights()), C),
        _gradcheck('multicast channel', common_path, C),
        _gradcheck('unicast channel', private_path, P),
    ]

    simplex = simplex_configuration(5, 8).requires_grad_(True)
    angular_repulsion(simplex).backward()
    grad_norm = float(simplex.grad.norm())
    results.append(CheckResult('simplex fixed point', grad_norm < 1e-6, f"(|grad| = {grad_norm:.2e})"))
    return results


def loss_bench(steps: int = 2000) -> List[CheckResult]:
    results = gradient_checks() + [check_equiangular_convergence(steps=steps)]
    for result in results:
        print(result)
    return results


def smoke_training(config: ExperimentConfig, out_dir: str, snr_grid=(0.0, 6.0, 12.0, 18.0), seeds=(0,),
                   eval_limit: int = 500):
    '''
    trains the desk-scale model and compares the untrained (epoch 0) and final checkpoints on held-out
    images. returns (untrained table, trained table, passed).
    '''
    images = load_images(config.data, train=True, seed=config.seed, image_size=config.model.image_size)
    held_out_config = dataclasses.replace(config.data, limit=eval_limit)
    eval_images = load_images(held_out_config, train=False, seed=config.seed, image_size=config.model.image_size)
    final, _ = train(config, images, out_dir)
    untrained = evaluate(checkpoint_path(out_dir, 0), eval_images, snr_grid, config.channel.model, seeds)
    trained = evaluate(final, eval_images, snr_grid, config.channel.model, seeds)
    untrained.write(os.path.join(out_dir, 'metrics_untrained.jsonl'))
    trained.write(os.path.join(out_dir, 'metrics_trained.jsonl'))

    top = max(snr_grid)
    gain = trained.mean_psnr(top) - untrained.mean_psnr(top)
    curve = [trained.mean_psnr(snr) for snr in sorted(snr_grid)]
    monotone = all(b >= a - 0.3 for a, b in zip(curve, curve[1:]))
    print(f" ==> PSNR gain at {top} dB: {gain:.2f} dB, curve {['%.2f' % v for v in curve]}")
    return untrained, trained, gain >= 3.0 and monotone


def ablation_ordering(config: ExperimentConfig, out_dir: str, seeds=(0, 1, 2), snr_db: float = 18.0,
                      eval_limit: int = 500):
    '''
    paired full / private-only runs per seed; returns (per-seed PSNR differences, passed) where
    passing means the mean difference at `snr_db` is non-negative.
    '''
    differences = []
    for seed in seeds:
        seeded = dataclasses.replace(config, seed=seed)
        images = load_images(seeded.data, train=True, seed=seed, image_size=config.model.image_size)
        held_out_config = dataclasses.replace(config.data, limit=eval_limit)
        eval_images = load_images(held_out_config, train=False, seed=seed, image_size=config.model.image_size)
        run_dir = os.path.join(out_dir, f"seed{seed}")
        final, _ = train(seeded, images, os.path.join(run_dir, 'full'))
        full = evaluate(final, eval_images, (snr_db,), config.channel.model, (seed,))
        ablated = private_only_ablation(seeded, images, os.path.join(run_dir, 'private_only'), (snr_db,), (seed,),
                                        eval_images=eval_images)
        differences.append(full.mean_psnr(snr_db) - ablated.mean_psnr(snr_db))
        print(f" ==> seed {seed}: full - private-only = {differences[-1]:.2f} dB")
    return differences, sum(differences) / len(differences) >= 0.0
