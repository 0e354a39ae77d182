'''
Balanced, label-agnostic grouping of users by private-feature similarity:
k-means centroids -> cosine cost matrix -> capacity-constrained Hungarian assignment.

The assignment is solved exactly by replicating each group column `capacity` times and handing the
square K x K problem to scipy's linear assignment solver. Replicas of group g occupy columns
[g * capacity, (g + 1) * capacity), so on exact ties the solver's lowest-column preference sends
users to the lowest group index first.
'''
import warnings
from dataclasses import dataclass
from typing import List

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning
from sklearn.preprocessing import normalize

from errors import InputError


@dataclass
class GroupAssignment:
    M: np.ndarray  # K x G binary
    groups: List[List[int]]
    cost: float

    @property
    def labels(self) -> np.ndarray:
        return self.M.argmax(axis=1)

    @property
    def group_sizes(self) -> List[int]:
        return [len(g) for g in self.groups]

    @staticmethod
    def from_labels(labels, num_groups: int, cost: float = 0.0) -> 'GroupAssignment':
        labels = np.asarray(labels, dtype=int)
        M = np.zeros((len(labels), num_groups), dtype=np.int64)
        M[np.arange(len(labels)), labels] = 1
        groups = [np.flatnonzero(labels == g).tolist() for g in range(num_groups)]
        return GroupAssignment(M=M, groups=groups, cost=float(cost))


def _as_feature_matrix(P, name='P') -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] == 0:
        raise InputError(f"{name} must be a non-empty 2-D matrix, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise InputError(f"{name} contains non-finite values")
    zero_rows = np.flatnonzero(np.linalg.norm(P, axis=1) == 0)
    if len(zero_rows) > 0:
        raise InputError(f"{name} has zero-norm rows {zero_rows.tolist()}")
    return P


def kmeans_centroids(P, G: int, seed: int, max_iters: int = 100, normalized: bool = False) -> np.ndarray:
    '''
    G centroids from k-means++ seeding and Lloyd iterations, stopping after `max_iters`. The
    convergence tolerance is sklearn's: 1e-6 scaled by the mean per-feature variance of P, so the
    centroid shift threshold is relative to the spread of the features, not absolute.
    Empty clusters are reseeded from the farthest point.
    '''
    P = _as_feature_matrix(P)
    K = P.shape[0]
    if not 1 <= G <= K:
        raise InputError(f"need 1 <= G <= K, got G={G}, K={K}")
    if normalized:
        P = normalize(P, norm='l2')
    kmeans = KMeans(n_clusters=G, init='k-means++', n_init=1, max_iter=max_iters, tol=1e-6,
                    algorithm='lloyd', random_state=seed)
    with warnings.catch_warnings():
        # duplicated feature rows give fewer distinct points than clusters
        warnings.simplefilter('ignore', ConvergenceWarning)
        kmeans.fit(P)
    return kmeans.cluster_centers_


def cosine_cost_matrix(P, C) -> np.ndarray:
    '''d[k, g] = 1 - cos(p_k, c_g), clipped to [0, 2]'''
    P = _as_feature_matrix(P, 'P')
    C = _as_feature_matrix(C, 'C')
    if P.shape[1] != C.shape[1]:
        raise InputError(f"feature length mismatch: P has {P.shape[1]}, C has {C.shape[1]}")
    cosine = normalize(P) @ normalize(C).T
    return np.clip(1.0 - cosine, 0.0, 2.0)


def balanced_assign(D, capacity: int) -> GroupAssignment:
    '''exact minimum-cost assignment with every group holding exactly `capacity` users'''
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2:
        raise InputError(f"cost matrix must be 2-D, got shape {D.shape}")
    K, G = D.shape
    if capacity < 1 or K != G * capacity:
        raise InputError(f"K={K} users cannot fill G={G} groups of exactly {capacity}")
    if not np.all(np.isfinite(D)):
        raise InputError("cost matrix contains non-finite values")

    replicated = np.repeat(D, capacity, axis=1)
    rows, cols = linear_sum_assignment(replicated)
    labels = np.empty(K, dtype=int)
    labels[rows] = cols // capacity
    cost = D[np.arange(K), labels].sum()
    return GroupAssignment.from_labels(labels, G, cost)


def cluster_users(P, G: int, seed: int, max_iters: int = 100, normalized: bool = False) -> GroupAssignment:
    P = _as_feature_matrix(P)
    K = P.shape[0]
    if G < 1 or K % G != 0:
        raise InputError(f"K={K} users are not divisible into G={G} groups")
    centroids = kmeans_centroids(P, G, seed, max_iters=max_iters, normalized=normalized)
    return balanced_assign(cosine_cost_matrix(P, centroids), K // G)


def sequential_groups(K: int, G: int) -> GroupAssignment:
    '''consecutive users share a group (grouping without clustering)'''
    if G < 1 or K % G != 0:
        raise InputError(f"K={K} users are not divisible into G={G} groups")
    return GroupAssignment.from_labels(np.arange(K) // (K // G), G)
