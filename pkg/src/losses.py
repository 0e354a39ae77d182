'''
Composite objective: Charbonnier reconstruction loss + lambda * repulsion loss, where the repulsion
loss sums a Euclidean repulsion term, a center regularization term and an angular term that pulls
pairwise cosine similarities of the G common features toward -1/(G-1).
'''

import torch
import torch.nn.functional as F

from config import LossWeights
from errors import InputError


def charbonnier(s, s_hat, epsilon: float):
    '''
    (1/K) sum_k mean_pixels sqrt((s - s_hat)^2 + eps^2); the first dimension indexes users.
    '''
    if s.shape != s_hat.shape:
        raise InputError(f"shape mismatch: {list(s.shape)} vs {list(s_hat.shape)}")
    if not epsilon > 0:
        raise InputError(f"epsilon must be > 0, got {epsilon}")
    if s.dim() == 0:
        s, s_hat = s.view(1), s_hat.view(1)
    per_pixel = torch.sqrt((s - s_hat) ** 2 + epsilon ** 2)
    return per_pixel.reshape(s.shape[0], -1).mean(dim=1).mean()


def target_similarity_matrix(G: int, dtype=torch.float32, device=None):
    if G < 2:
        raise InputError(f"target similarity needs G >= 2, got {G}")
    T = torch.full((G, G), -1.0 / (G - 1), dtype=dtype, device=device)
    T.fill_diagonal_(1.0)
    return T


def _stack(C):
    if isinstance(C, (list, tuple)):
        if len(C) == 0:
            raise InputError("no common features given")
        C = torch.stack(list(C))
    if C.dim() != 2 or C.shape[0] == 0:
        raise InputError(f"common features must be a non-empty [G x L_c] matrix, got {list(C.shape)}")
    return C


def _off_diagonal_mean(values):
    G = values.shape[0]
    mask = ~torch.eye(G, dtype=torch.bool, device=values.device)
    return values[mask].sum() / (G * (G - 1))


def euclidean_repulsion(C):
    C = _stack(C)
    if C.shape[0] < 2:
        raise InputError("euclidean repulsion needs at least 2 common features")
    diff = C.unsqueeze(0) - C.unsqueeze(1)
    squared = (diff ** 2).sum(dim=-1)
    return _off_diagonal_mean(torch.exp(-squared))


def center_regularization(C, lambda_center: float):
    C = _stack(C)
    return lambda_center * (C.mean(dim=0) ** 2).sum()


def cosine_similarity_matrix(C):
    C = _stack(C)
    norms = torch.linalg.vector_norm(C, dim=1)
    if torch.any(norms == 0):
        raise InputError("zero-norm common feature has no direction")
    unit = C / norms.unsqueeze(1)
    return unit @ unit.T


def angular_repulsion(C):
    C = _stack(C)
    G = C.shape[0]
    if G < 2:
        raise InputError("angular repulsion needs at least 2 common features")
    X = cosine_similarity_matrix(C)
    T = target_similarity_matrix(G, dtype=C.dtype, device=C.device)
    return _off_diagonal_mean((X - T) ** 2)


def repulsion_loss(C, weights: LossWeights):
    C = _stack(C)
    return euclidean_repulsion(C) + center_regularization(C, weights.lambda_center) + angular_repulsion(C)


def total_loss(recon, repul, lambda_repul: float):
    return recon + lambda_repul * repul


RECONSTRUCTION_LOSSES = {
    'charbonnier': charbonnier,
}


def reconstruction_loss(s, s_hat, weights: LossWeights):
    return RECONSTRUCTION_LOSSES[weights.reconstruction](s, s_hat, weights.epsilon)


def simplex_configuration(G: int, dim: int, dtype=torch.float64):
    '''G unit vectors in R^dim, centered, with all pairwise cosines equal to -1/(G-1)'''
    if dim < G - 1:
        raise InputError(f"a {G}-point simplex needs at least {G - 1} dimensions")
    centered = torch.eye(G, dtype=dtype) - 1.0 / G
    # rows of the centered identity span a (G-1)-dim subspace; rotate it into R^dim
    basis, _, _ = torch.linalg.svd(centered)
    coords = centered @ basis[:, :G - 1]
    vectors = torch.zeros(G, dim, dtype=dtype)
    vectors[:, :G - 1] = coords
    return F.normalize(vectors, dim=1)


def equiangular_deviation(C) -> float:
    '''max |X_ij - T_ij| over the off-diagonal entries'''
    C = _stack(C)
    X = cosine_similarity_matrix(C)
    T = target_similarity_matrix(C.shape[0], dtype=C.dtype, device=C.device)
    mask = ~torch.eye(C.shape[0], dtype=torch.bool, device=C.device)
    return float((X - T).abs()[mask].max())
