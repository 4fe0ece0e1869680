"""Per-frame scene graphs and the graph convolution input embedding.

Two agents are connected when both are valid, their Euclidean distance is
at most `NEIGHBOR_RADIUS_M` meters, and their lanes differ by at most one.
Adjacency is symmetric with self-loops and normalized as
D^{-1/2} A D^{-1/2} (Kipf-Welling form); padding agents keep all-zero
rows and columns.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T

NEIGHBOR_RADIUS_M = 30.0


@dataclass
class SceneGraph:
    adjacency: np.ndarray       # [n, n] 0/1 with self-loops
    norm_adjacency: np.ndarray  # [n, n] symmetrically degree-normalized


def neighbor_rule(pos_i, pos_j, lane_i, lane_j, radius_m=NEIGHBOR_RADIUS_M):
    """True when two agents are within radius and within one lane."""
    dist = float(np.hypot(pos_i[0] - pos_j[0], pos_i[1] - pos_j[1]))
    return dist <= radius_m and abs(int(lane_i) - int(lane_j)) <= 1


def build_scene_graph(positions, lanes, mask=None, radius_m=NEIGHBOR_RADIUS_M):
    """Adjacency over `positions` [n, 2] in meters and integer `lanes` [n]."""
    positions = np.asarray(positions, dtype=np.float64)
    lanes = np.asarray(lanes, dtype=np.int64)
    n = positions.shape[0]
    if mask is None:
        mask = np.ones(n)
    valid = np.asarray(mask, dtype=np.float64) > 0

    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=-1))
    lane_ok = np.abs(lanes[:, None] - lanes[None, :]) <= 1
    adj = ((dist <= radius_m) & lane_ok).astype(np.float64)
    np.fill_diagonal(adj, 1.0)
    adj *= valid[:, None] * valid[None, :]

    deg = adj.sum(axis=1)
    inv_sqrt = np.zeros(n)
    inv_sqrt[deg > 0] = deg[deg > 0] ** -0.5
    norm = inv_sqrt[:, None] * adj * inv_sqrt[None, :]
    return SceneGraph(adjacency=adj, norm_adjacency=norm)


def init_gcn_params(rng, f_in, width, layers=1, prefix="gcn"):
    """Glorot-initialized weights for a stack of graph convolution layers."""
    params = {}
    d_in = f_in
    for i in range(layers):
        bound = np.sqrt(6.0 / (d_in + width))
        params[f"{prefix}.w{i}"] = T.Tensor(
            rng.uniform(-bound, bound, size=(d_in, width)), requires_grad=True)
        params[f"{prefix}.b{i}"] = T.Tensor(np.zeros(width), requires_grad=True)
        d_in = width
    return params


def gcn_forward(features, norm_adjacency, params, layers=1, prefix="gcn", mask=None):
    """Graph convolution H' = relu(A_norm H W + b), applied layer by layer.

    `features` may carry leading batch/frame axes: [..., n, f_in] with a
    matching `norm_adjacency` [..., n, n]. Padding rows are re-zeroed after
    the bias so masked agents stay exactly zero.
    """
    h = features if isinstance(features, T.Tensor) else T.Tensor(features)
    adj = norm_adjacency if isinstance(norm_adjacency, T.Tensor) else T.Tensor(norm_adjacency)
    for i in range(layers):
        h = T.relu(T.matmul(adj, h) @ params[f"{prefix}.w{i}"] + params[f"{prefix}.b{i}"])
        if mask is not None:
            h = h * mask
    return h
