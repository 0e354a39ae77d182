import math

import pytest
import torch

from channel import (complex_to_real, make_generator, power_normalize, real_to_complex, sample_channel,
                     snr_to_noise_var, transmit_common, transmit_private, worker_seed)
from errors import ConfigurationError, InputError


def test_power_normalize_gives_unit_mean_square():
    x = torch.randn(4, 10, generator=make_generator(0)) * 5
    assert torch.allclose((power_normalize(x) ** 2).mean(dim=1), torch.ones(4))
    with pytest.raises(InputError):
        power_normalize(torch.zeros(2, 4))


def test_real_complex_pairing():
    z = real_to_complex(torch.tensor([1.0, 2.0, 3.0, 4.0]))
    assert torch.equal(z, torch.tensor([1 + 2j, 3 + 4j], dtype=torch.complex64))
    assert torch.equal(complex_to_real(z), torch.tensor([1.0, 2.0, 3.0, 4.0]))
    with pytest.raises(InputError):
        real_to_complex(torch.ones(3))


def test_snr_to_noise_var():
    assert snr_to_noise_var(0) == pytest.approx(1.0)
    assert snr_to_noise_var(10) == pytest.approx(0.1)
    assert torch.allclose(snr_to_noise_var(torch.tensor([20.0])), torch.tensor([0.01]))


def test_worker_seed():
    assert worker_seed(5, 3) == 6
    assert worker_seed(5, 0) == 5


def test_awgn_has_unit_gain():
    ch = sample_channel('awgn', 3, snr_db=18.0)
    assert torch.equal(ch.h, torch.ones(3, dtype=torch.complex64))
    assert torch.allclose(ch.noise_var, torch.full((3,), 10 ** -1.8))


def test_rayleigh_statistics():
    h = sample_channel('rayleigh', 100000, generator=make_generator(0), dtype=torch.float64).h
    assert float((h.abs() ** 2).mean()) == pytest.approx(1.0, rel=0.01)
    assert abs(complex(h.mean())) < 0.01


def test_rician_statistics():
    h = sample_channel('rician', 100000, rician_r=1.0, generator=make_generator(1), dtype=torch.float64).h
    mean = complex(h.mean())
    assert mean.real == pytest.approx(math.sqrt(0.5), rel=0.01)
    assert abs(mean.imag) < 0.01
    assert float((h.abs() ** 2).mean()) == pytest.approx(1.0, rel=0.01)


def test_unknown_channel_model():
    with pytest.raises(ConfigurationError):
        sample_channel('nakagami', 2)
    with pytest.raises(ConfigurationError):
        sample_channel('rician', 2, rician_r=0.0)


@pytest.mark.parametrize('model', ['awgn', 'rayleigh', 'rician'])
def test_noiseless_private_path_recovers_normalized_features(model):
    generator = make_generator(1)
    P = torch.randn(4, 6, generator=generator)
    ch = sample_channel(model, 4, generator=generator, snr_db=10.0)
    received = transmit_private(P, ch, interference=False, noiseless=True)
    assert torch.allclose(received, power_normalize(P), atol=1e-5)


def test_private_interference_superposes_all_users():
    P = torch.randn(3, 4, generator=make_generator(2))
    ch = sample_channel('awgn', 3)
    received = transmit_private(P, ch, interference=True, noiseless=True)
    total = power_normalize(P).sum(dim=0)
    assert torch.allclose(received, total.expand(3, 4), atol=1e-5)


def test_common_path_delivers_the_group_feature():
    generator = make_generator(3)
    C = torch.randn(2, 4, generator=generator)
    groups = [[0, 2], [1, 3]]
    ch = sample_channel('rayleigh', 4, generator=generator)
    received = transmit_common(C, groups, ch, interference=False, noiseless=True)
    expected = power_normalize(C)[[0, 1, 0, 1]]
    assert torch.allclose(received, expected, atol=1e-5)

    with_interference = transmit_common(C, groups, ch, interference=True, noiseless=True)
    assert torch.allclose(with_interference, power_normalize(C).sum(dim=0).expand(4, 4), atol=1e-5)


def test_awgn_noise_variance():
    generator = make_generator(4)
    P = torch.randn(1, 200000, generator=generator, dtype=torch.float64)
    ch = sample_channel('awgn', 1, snr_db=10.0, dtype=torch.float64)
    received = transmit_private(P, ch, interference=False, generator=generator)
    noise = real_to_complex(received - power_normalize(P))
    assert noise.shape == (1, 100000)
    assert float((noise.abs() ** 2).mean()) == pytest.approx(0.1, rel=0.01)
    # each real component carries half of sigma^2
    assert float((received - power_normalize(P)).var()) == pytest.approx(0.05, rel=0.01)


def test_same_seed_same_transmission():
    P = torch.randn(4, 6, generator=make_generator(5))
    outputs = []
    for _ in range(2):
        generator = make_generator(9)
        ch = sample_channel('rayleigh', 4, generator=generator, snr_db=5.0)
        outputs.append(transmit_private(P, ch, generator=generator))
    assert torch.equal(outputs[0], outputs[1])


def test_gradients_reach_the_features():
    P = torch.randn(2, 4, requires_grad=True)
    ch = sample_channel('rayleigh', 2, generator=make_generator(6), snr_db=10.0)
    transmit_private(P, ch, generator=make_generator(7)).sum().backward()
    assert P.grad is not None and torch.isfinite(P.grad).all()


def test_shape_mismatches():
    ch = sample_channel('awgn', 4)
    with pytest.raises(InputError):
        transmit_private(torch.randn(3, 4), ch)
    with pytest.raises(InputError):
        transmit_common(torch.randn(2, 4), [[0, 1, 2, 3]], ch)
    with pytest.raises(InputError):
        transmit_common(torch.randn(2, 4), [[0], [1]], ch)


def test_power_normalize_closed_form():
    x = torch.tensor([3.0, 4.0], dtype=torch.float64)
    expected = x * math.sqrt(2 / 25)
    assert torch.allclose(power_normalize(x), expected, atol=1e-12)
    assert torch.allclose(power_normalize(expected), expected, atol=1e-12)


def test_empirical_snr():
    generator = make_generator(8)
    P = torch.randn(1, 100000, generator=generator, dtype=torch.float64)
    ch = sample_channel('awgn', 1, snr_db=12.0, generator=generator, dtype=torch.float64)
    sent = power_normalize(P)
    received = transmit_private(P, ch, interference=False, generator=generator)
    noise_power = float(((received - sent) ** 2).mean())
    # unit mean square per real element against sigma^2 per complex symbol
    measured = 10 * math.log10(1.0 / (2 * noise_power))
    assert measured == pytest.approx(12.0, abs=0.2)
