import json
import os

import pytest
import torch

from channel import make_generator
from config import ExperimentConfig
from data import SourceBatch
from errors import ConfigurationError, InputError, TrainingError
from losses import total_loss
from pipeline import run_pipeline
from training import (checkpoint_path, forward_losses, init_state, load_checkpoint, sample_training_snr, train,
                      train_step)
from utils import read_jsonl


def test_pipeline_output(make_config, images):
    config = make_config()
    state = init_state(config)
    out = run_pipeline(state.model, images[:4], config, 18.0, make_generator(0), cluster_seed=0)
    assert out.reconstruction.shape == (4, 3, 32, 32)
    assert out.common.shape == (2, 8)
    assert out.assignment.group_sizes == [2, 2]


def test_private_only_pipeline_has_one_nominal_group(make_config, images):
    config = make_config().with_common_ratio(0.0)
    state = init_state(config)
    out = run_pipeline(state.model, images[:4], config, 18.0, make_generator(0), cluster_seed=0)
    assert out.common is None
    assert out.assignment.groups == [[0, 1, 2, 3]]


def test_snr_draws_stay_in_range():
    generator = make_generator(0)
    draws = [sample_training_snr(generator, (12.0, 18.0)) for _ in range(100)]
    assert all(12.0 <= d <= 18.0 for d in draws)
    assert sample_training_snr(generator, (6.0, 6.0)) == 6.0
    per_user = sample_training_snr(generator, (0.0, 1.0), size=5)
    assert per_user.shape == (5,)


def test_train_step(make_config, images):
    config = make_config()
    state = init_state(config)
    state, metrics = train_step(SourceBatch(images[:4]), state, config)
    assert state.step == 1
    assert metrics.group_sizes == [2, 2]
    assert 12.0 <= metrics.snr_db <= 18.0
    assert metrics.total == pytest.approx(metrics.recon + 0.1 * metrics.repul)
    assert metrics.grad_norm > 0
    assert sorted(sum(metrics.groups, [])) == [0, 1, 2, 3]


@pytest.mark.parametrize('channel', [{'model': 'rayleigh', 'per_user_snr': True}, {'model': 'rician'},
                                     {'interference': False}])
def test_train_step_on_other_channels(make_config, images, channel):
    config = make_config(channel=channel)
    state, metrics = train_step(SourceBatch(images[:4]), init_state(config), config)
    assert torch.isfinite(torch.tensor(metrics.total))


def test_zero_learning_rate_keeps_parameters(make_config, images):
    config = make_config(train={'learning_rate': 0.0})
    state = init_state(config)
    before = {k: v.clone() for k, v in state.model.state_dict().items()}
    state, _ = train_step(SourceBatch(images[:4]), state, config)
    for name, value in state.model.state_dict().items():
        assert torch.equal(before[name], value), name


def test_private_only_step_has_no_repulsion(make_config, images):
    config = make_config().with_common_ratio(0.0)
    _, metrics = train_step(SourceBatch(images[:4]), init_state(config), config)
    assert metrics.repul == 0.0
    assert metrics.total == metrics.recon


def test_batch_size_mismatch(make_config, images):
    config = make_config()
    with pytest.raises(InputError):
        train_step(SourceBatch(images[:6]), init_state(config), config)


def test_non_finite_loss_dumps_diagnostics(tmp_path, make_config, images):
    config = make_config(train={'grouping': 'sequential'})
    state = init_state(config, out_dir=str(tmp_path))
    broken = images[:4].clone()
    broken[0, 0, 0, 0] = float('nan')
    with pytest.raises(TrainingError, match='non-finite'):
        train_step(SourceBatch(broken), state, config)
    assert os.path.exists(tmp_path / 'nonfinite_step0.json')


def test_diverged_weights_are_reported_with_balanced_grouping(tmp_path, make_config, images):
    config = make_config()
    assert config.train.grouping == 'balanced'
    state = init_state(config, out_dir=str(tmp_path))
    with torch.no_grad():
        state.model.private_encoder.dense.weight[0, 0] = float('nan')
    with pytest.raises(TrainingError, match='non-finite'):
        train_step(SourceBatch(images[:4]), state, config)
    with open(tmp_path / 'nonfinite_step0.json') as infile:
        dump = json.load(infile)
    assert dump['step'] == 0
    assert dump['group_sizes'] == [2, 2]


def test_training_run_layout(tmp_path, make_config, images):
    config = make_config()
    final, records = train(config, images, str(tmp_path))
    assert final == checkpoint_path(str(tmp_path), 2)
    for epoch in (0, 1, 2):
        assert os.path.exists(checkpoint_path(str(tmp_path), epoch))
    assert os.path.exists(tmp_path / 'config.json')

    header, *logged = read_jsonl(tmp_path / 'metrics.jsonl')
    assert header['schema'] == 'gssma-metrics'
    assert ExperimentConfig.from_dict(header['config']) == config
    assert [r['step'] for r in logged] == [0, 1, 2, 3]
    assert [r['epoch'] for r in logged] == [1, 1, 2, 2]
    assert logged == records


def test_same_config_same_run(tmp_path, make_config, images):
    config = make_config()
    _, first = train(config, images, str(tmp_path / 'a'))
    _, second = train(config, images, str(tmp_path / 'b'))
    assert first == second


def test_resume_matches_uninterrupted_run(tmp_path, make_config, images):
    config = make_config()
    straight, straight_records = train(config, images, str(tmp_path / 'straight'))

    half = make_config(train={'epochs': 1})
    train(half, images, str(tmp_path / 'resumed'))
    resumed, resumed_records = train(config, images, str(tmp_path / 'resumed'),
                                     resume=checkpoint_path(str(tmp_path / 'resumed'), 1))

    assert resumed_records == straight_records[2:]
    _, a = load_checkpoint(straight)
    _, b = load_checkpoint(resumed)
    for (name, x), y in zip(a.model.state_dict().items(), b.model.state_dict().values()):
        assert torch.equal(x, y), name
    logged = read_jsonl(tmp_path / 'resumed' / 'metrics.jsonl')[1:]
    assert [r['step'] for r in logged] == [0, 1, 2, 3]


def test_checkpoint_restores_state(tmp_path, make_config, images):
    config = make_config(train={'epochs': 1})
    final, _ = train(config, images, str(tmp_path))
    restored_config, state = load_checkpoint(final)
    assert restored_config == config
    assert (state.epoch, state.step) == (1, 2)


def test_checkpoint_rejects_other_model_config(tmp_path, make_config, images):
    final, _ = train(make_config(train={'epochs': 0}), images, str(tmp_path))
    with pytest.raises(ConfigurationError):
        load_checkpoint(final, make_config(model={'transformer_layers': 2}))


def test_too_few_images(tmp_path, make_config, images):
    with pytest.raises(InputError):
        train(make_config(), images[:3], str(tmp_path))


def test_training_snr_mean():
    draws = sample_training_snr(make_generator(3), (12.0, 18.0), size=100000)
    assert float(draws.mean()) == pytest.approx(15.0, abs=0.05)


def test_zero_epochs_writes_only_the_untrained_checkpoint(tmp_path, make_config, images):
    final, records = train(make_config(train={'epochs': 0}), images, str(tmp_path))
    assert final == checkpoint_path(str(tmp_path), 0)
    assert records == []
    assert sorted(f for f in os.listdir(tmp_path) if f.endswith('.pt')) == ['checkpoint_epoch0000.pt']


def test_common_encoder_learns_without_repulsion(make_config, images):
    config = make_config(loss={'lambda_repul': 0.0})
    state = init_state(config)
    terms, _ = forward_losses(state.model, images[:4], config, 18.0, make_generator(0), seed=0)
    terms.total.backward()
    common = state.model.parameter_groups()['theta_c']
    assert sum(float(p.grad.abs().sum()) for p in common if p.grad is not None) > 0


@pytest.mark.slow
def test_reconstruction_loss_decreases(tmp_path, make_config, images):
    config = make_config(train={'epochs': 100, 'checkpoint_interval': 100, 'snr_range_db': (18.0, 18.0)},
                         channel={'model': 'awgn'})
    _, records = train(config, images, str(tmp_path))
    assert len(records) == 200
    first = sum(r['recon'] for r in records[:10]) / 10
    last = sum(r['recon'] for r in records[-10:]) / 10
    assert last < first


def test_detached_reconstruction_leaves_only_repulsion_gradients(make_config, images):
    config = make_config()
    state = init_state(config)
    terms, _ = forward_losses(state.model, images[:4], config, 18.0, make_generator(0), seed=0)
    groups = state.model.parameter_groups()
    lam = config.loss.lambda_repul

    params = groups['theta_c'] + groups['theta_p'] + groups['phi']
    total = total_loss(terms.recon.detach(), terms.repul, lam)
    grads = torch.autograd.grad(total, params, retain_graph=True, allow_unused=True)
    repul_grads = torch.autograd.grad(terms.repul, groups['theta_c'], retain_graph=True, allow_unused=True)

    n_common = len(groups['theta_c'])
    for grad, expected in zip(grads[:n_common], repul_grads):
        if expected is None:
            assert grad is None
        else:
            assert torch.allclose(grad, lam * expected, atol=1e-7)
    assert any(g is not None and g.abs().sum() > 0 for g in grads[:n_common])
    # grouping is a constant of the step, so the private encoder and decoder see no repulsion
    assert all(g is None or not g.any() for g in grads[n_common:])
