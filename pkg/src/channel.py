'''
Downlink channel: power normalization, real <-> complex symbol mapping, AWGN / Rician / Rayleigh
block fading, multicast of group common features and unicast of private features with optional
superposition interference, perfect-CSI equalization at the receiver.

Everything is differentiable w.r.t. the transmitted features; noise is drawn from an explicit
torch.Generator once per call and is a constant for backprop.
'''
from dataclasses import dataclass

import torch

from errors import ConfigurationError, InputError


@dataclass
class ChannelRealization:
    h: torch.Tensor  # complex, one coefficient per user
    noise_var: torch.Tensor  # real, sigma_k^2 per user
    model: str

    @property
    def num_users(self) -> int:
        return self.h.shape[0]


def worker_seed(base_seed: int, worker_index: int) -> int:
    '''independent stream per parallel worker'''
    return base_seed ^ worker_index


def make_generator(seed: int) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator


def power_normalize(x):
    '''scales each row (last dim, length L) to mean square value 1: x * sqrt(L / ||x||^2)'''
    energy = (x ** 2).sum(dim=-1, keepdim=True)
    if torch.any(energy == 0):
        raise InputError("cannot power-normalize a zero vector")
    return x * torch.sqrt(x.shape[-1] / energy)


def real_to_complex(x):
    '''consecutive pairs (I, Q) -> I + jQ along the last dimension'''
    if x.shape[-1] % 2 != 0:
        raise InputError(f"need an even number of real values, got {x.shape[-1]}")
    pairs = x.reshape(*x.shape[:-1], x.shape[-1] // 2, 2)
    return torch.complex(pairs[..., 0], pairs[..., 1])


def complex_to_real(z):
    return torch.view_as_real(z).reshape(*z.shape[:-1], 2 * z.shape[-1])


def snr_to_noise_var(snr_db):
    '''signal power is 1 after normalization, so sigma^2 = 10^(-snr/10)'''
    if torch.is_tensor(snr_db):
        return torch.pow(10.0, -snr_db / 10.0)
    return 10.0 ** (-float(snr_db) / 10.0)


def sample_channel(model: str, K: int, rician_r: float = 1.0, generator: torch.Generator = None,
                   snr_db=None, dtype=torch.float32) -> ChannelRealization:
    '''
    i.i.d. per-user coefficients:
      awgn     -> h = 1
      rayleigh -> h ~ CN(0, 1)
      rician   -> h ~ CN(mu, sigma^2), mu = sqrt(r / (r + 1)), sigma = sqrt(1 / (r + 1))
    `snr_db` (scalar or one value per user) sets the noise variance; None leaves it at 1.
    '''
    if K < 1:
        raise InputError(f"need at least one user, got K={K}")
    complex_dtype = torch.complex128 if dtype == torch.float64 else torch.complex64
    if model == 'awgn':
        h = torch.ones(K, dtype=complex_dtype)
    elif model in ('rayleigh', 'rician'):
        if model == 'rician' and not rician_r > 0:
            raise ConfigurationError(f"rician factor must be > 0, got {rician_r}")
        # CN(0, 1): real and imaginary parts each carry variance 1/2
        scatter = torch.randn(K, 2, generator=generator, dtype=dtype) / (2 ** 0.5)
        scatter = torch.complex(scatter[:, 0], scatter[:, 1])
        if model == 'rayleigh':
            h = scatter
        else:
            mu = (rician_r / (rician_r + 1)) ** 0.5
            sigma = (1 / (rician_r + 1)) ** 0.5
            h = mu + sigma * scatter
    else:
        raise ConfigurationError(f"unknown channel model '{model}'")

    if snr_db is None:
        noise_var = torch.ones(K, dtype=dtype)
    else:
        noise_var = snr_to_noise_var(torch.as_tensor(snr_db, dtype=dtype)).expand(K).clone()
    if torch.any(noise_var <= 0):
        raise InputError("noise variance must be positive")
    return ChannelRealization(h=h, noise_var=noise_var, model=model)


def complex_noise(shape, noise_var, generator, dtype=torch.float32):
    '''CN(0, sigma_k^2) samples; noise_var broadcasts over the leading (user) dimension'''
    parts = torch.randn(*shape, 2, generator=generator, dtype=dtype)
    scale = torch.sqrt(noise_var / 2).to(dtype).view(-1, *([1] * len(shape[1:])))
    return torch.complex(parts[..., 0] * scale, parts[..., 1] * scale)


def _receive(symbols, interference_sum, ch: ChannelRealization, noiseless: bool, generator):
    '''y = h (x + interference) + n, then y / h; all inputs are per user [K x N] complex'''
    h = ch.h.to(symbols.dtype).unsqueeze(1)
    y = h * (symbols + interference_sum)
    if not noiseless:
        y = y + complex_noise(tuple(symbols.shape), ch.noise_var, generator, dtype=symbols.real.dtype)
    return complex_to_real(y / h)


def transmit_common(C, groups, ch: ChannelRealization, interference: bool = True,
                    generator: torch.Generator = None, noiseless: bool = False):
    '''
    Multicast of the G common features. User k in group g receives
      h_k c_g + [interference] sum_{g' != g} h_k c_g' + n_k
    and equalizes by h_k. Returns per-user received real vectors [K x L_c] (normalized scale).
    '''
    if C.dim() != 2:
        raise InputError(f"common features must be [G x L_c], got {list(C.shape)}")
    if len(groups) != C.shape[0]:
        raise InputError(f"{len(groups)} groups but {C.shape[0]} common features")
    K = sum(len(g) for g in groups)
    if K != ch.num_users:
        raise InputError(f"assignment covers {K} users but the channel has {ch.num_users}")

    symbols = real_to_complex(power_normalize(C))
    group_of_user = torch.empty(K, dtype=torch.long)
    for g, members in enumerate(groups):
        group_of_user[list(members)] = g
    own = symbols[group_of_user]
    others = symbols.sum(dim=0, keepdim=True) - own if interference else torch.zeros_like(own)
    return _receive(own, others, ch, noiseless, generator)


def transmit_private(P, ch: ChannelRealization, interference: bool = True,
                     generator: torch.Generator = None, noiseless: bool = False):
    '''
    Unicast of the K private features. User k receives
      h_k p_k + [interference] sum_{k' != k} h_k p_k' + n_k
    and equalizes by h_k. Returns [K x L_p] real vectors (normalized scale).
    '''
    if P.dim() != 2:
        raise InputError(f"private features must be [K x L_p], got {list(P.shape)}")
    if P.shape[0] != ch.num_users:
        raise InputError(f"{P.shape[0]} private features but the channel has {ch.num_users} users")
    symbols = real_to_complex(power_normalize(P))
    others = symbols.sum(dim=0, keepdim=True) - symbols if interference else torch.zeros_like(symbols)
    return _receive(symbols, others, ch, noiseless, generator)
