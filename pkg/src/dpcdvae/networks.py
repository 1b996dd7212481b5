"""Trainable components: graph encoder, decoder heads, equivariant
denoiser, and the loss terms combining them.

All modules run in float64 on CPU.  Weights are initialized from a numpy
generator supplied by the caller, so checkpoints are reproducible from a
seed independently of torch's own RNG state.

The denoiser predicts Cartesian noise as gated sums of edge directions
(rotation-equivariant by construction, zero on edgeless graphs) and maps
it to the fractional frame with the inverse of the per-structure lattice
matrix; gradients flow through those matrices into the lattice head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch
from torch import nn

__all__ = [
    "fourier_features",
    "time_embedding",
    "reparameterize",
    "GraphBatch",
    "GraphEncoder",
    "DecodeHeads",
    "Denoiser",
    "lattice_matrices_from_params",
    "loss_simple",
    "type_cross_entropy",
    "kld_normal",
    "comp_cross_entropy",
    "count_cross_entropy",
    "lattice_mse",
    "loss_diff",
    "loss_total",
]

# Fraction of the c length used as the floor for the out-of-plane cell
# height when decoded angle triples are jointly unrealizable.
_CELL_HEIGHT_FLOOR = 0.05


def fourier_features(r: np.ndarray, n_min: int = 3, n_max: int = 8) -> np.ndarray:
    """Per-component sin/cos features at dyadic frequencies.

    Concatenates sin(2^n pi r) and cos(2^n pi r) for n = n_min..n_max over
    the three components, giving ``2 * 3 * (n_max - n_min + 1)`` features
    per atom (36 with the defaults).  Periodic in every component with
    period 1 for n >= 1, so wrapped and unwrapped coordinates give
    identical features.
    """
    r = np.asarray(r, dtype=np.float64)
    if not np.all(np.isfinite(r)):
        raise ValueError("fourier_features: input must be finite")
    parts = []
    for n in range(int(n_min), int(n_max) + 1):
        arg = (2.0 ** n) * np.pi * r
        parts.append(np.sin(arg))
        parts.append(np.cos(arg))
    return np.concatenate(parts, axis=-1)


def time_embedding(t: int, t_steps: int, dim: int = 8) -> np.ndarray:
    """Sinusoidal embedding of the normalized step t/T (``dim`` features)."""
    if dim % 2 != 0:
        raise ValueError("time embedding dimension must be even")
    tau = float(t) / float(t_steps)
    freqs = np.pi * (2.0 ** np.arange(dim // 2))
    return np.concatenate([np.sin(freqs * tau), np.cos(freqs * tau)])


def reparameterize(mu, logvar, eps):
    """Latent draw ``z = mu + exp(logvar) * eps`` (elementwise).

    Note the scale is ``exp(logvar)``, not ``exp(logvar / 2)``; the KLD
    term in :func:`kld_normal` uses the same convention so the prior
    matching stays coherent.
    """
    if torch.is_tensor(mu):
        return mu + torch.exp(logvar) * eps
    return np.asarray(mu) + np.exp(np.asarray(logvar)) * np.asarray(eps)


@dataclass
class GraphBatch:
    """Several periodic graphs packed into one disjoint union.

    Node/edge index arrays are torch long tensors; ``edge_shift`` is the
    integer image translation as float64.  ``node_struct``/``edge_struct``
    map nodes/edges back to their structure index.
    """

    n_structs: int
    n_nodes: int
    node_struct: torch.Tensor
    edge_src: torch.Tensor
    edge_dst: torch.Tensor
    edge_shift: torch.Tensor
    edge_struct: torch.Tensor

    @classmethod
    def from_graphs(cls, graphs) -> "GraphBatch":
        node_struct, srcs, dsts, shifts, estructs = [], [], [], [], []
        offset = 0
        for i, g in enumerate(graphs):
            node_struct.append(np.full(g.n_nodes, i, dtype=np.int64))
            srcs.append(g.edge_src + offset)
            dsts.append(g.edge_dst + offset)
            shifts.append(g.edge_shift)
            estructs.append(np.full(g.n_edges, i, dtype=np.int64))
            offset += g.n_nodes
        cat = np.concatenate
        return cls(
            n_structs=len(graphs),
            n_nodes=offset,
            node_struct=torch.from_numpy(cat(node_struct)),
            edge_src=torch.from_numpy(cat(srcs)),
            edge_dst=torch.from_numpy(cat(dsts)),
            edge_shift=torch.from_numpy(np.ascontiguousarray(cat(shifts), dtype=np.float64)),
            edge_struct=torch.from_numpy(cat(estructs)),
        )


def _mlp(dims: list[int]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i in range(len(dims) - 1):
        layers.append(nn.Linear(dims[i], dims[i + 1], dtype=torch.float64))
        if i < len(dims) - 2:
            layers.append(nn.SiLU())
    return nn.Sequential(*layers)


def _init_linear(linear: nn.Linear, rng: np.random.Generator):
    fan_in = linear.weight.shape[1]
    w = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=tuple(linear.weight.shape))
    with torch.no_grad():
        linear.weight.copy_(torch.from_numpy(w))
        if linear.bias is not None:
            linear.bias.zero_()


def _init_module(module: nn.Module, rng: np.random.Generator):
    for sub in module.modules():
        if isinstance(sub, nn.Linear):
            _init_linear(sub, rng)


class GaussianRBF(nn.Module):
    """Gaussian radial basis with a smooth cosine cutoff envelope."""

    def __init__(self, cutoff: float, n_rbf: int):
        super().__init__()
        centers = torch.linspace(0.0, cutoff, n_rbf, dtype=torch.float64)
        self.register_buffer("centers", centers)
        self.width = cutoff / n_rbf
        self.cutoff = cutoff

    def forward(self, d: torch.Tensor) -> torch.Tensor:
        gauss = torch.exp(-((d[:, None] - self.centers) ** 2) / (2.0 * self.width ** 2))
        envelope = 0.5 * (torch.cos(math.pi * torch.clamp(d / self.cutoff, max=1.0)) + 1.0)
        return gauss * envelope[:, None]


class InteractionLayer(nn.Module):
    """One round of distance-gated message passing with residual update."""

    def __init__(self, hidden: int, n_rbf: int):
        super().__init__()
        self.message = _mlp([2 * hidden + n_rbf, hidden, hidden])
        self.update = _mlp([hidden, hidden])

    def forward(self, h, src, dst, rbf):
        msg = self.message(torch.cat([h[src], h[dst], rbf], dim=1))
        agg = torch.zeros_like(h).index_add_(0, src, msg)
        counts = torch.zeros(h.shape[0], 1, dtype=h.dtype).index_add_(
            0, src, torch.ones(src.shape[0], 1, dtype=h.dtype))
        return h + self.update(agg / counts.clamp(min=1.0))


def _edge_geometry(batch: GraphBatch, frac: torch.Tensor,
                   lattices: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Cartesian edge vectors and lengths from fractional state and
    per-structure lattice matrices (differentiable in both)."""
    d_frac = frac[batch.edge_src] - frac[batch.edge_dst] + batch.edge_shift
    lat_e = lattices[batch.edge_struct]
    d_cart = torch.bmm(d_frac.unsqueeze(1), lat_e).squeeze(1)
    d_len = torch.linalg.norm(d_cart, dim=1)
    return d_cart, d_len


def _scatter_mean(h: torch.Tensor, index: torch.Tensor, n: int) -> torch.Tensor:
    out = torch.zeros(n, h.shape[1], dtype=h.dtype).index_add_(0, index, h)
    counts = torch.zeros(n, 1, dtype=h.dtype).index_add_(
        0, index, torch.ones(index.shape[0], 1, dtype=h.dtype))
    return out / counts.clamp(min=1.0)


class GraphEncoder(nn.Module):
    """Permutation- and rotation-invariant structure encoder producing the
    posterior parameters (mu, logvar)."""

    def __init__(self, n_types: int, latent_dim: int, hidden_dim: int,
                 num_layers: int, num_rbf: int, cutoff: float,
                 encode_n_a: bool = False, n_max: int = 20):
        super().__init__()
        self.embed = nn.Linear(n_types, hidden_dim, dtype=torch.float64)
        self.rbf = GaussianRBF(cutoff, num_rbf)
        self.layers = nn.ModuleList(
            InteractionLayer(hidden_dim, num_rbf) for _ in range(num_layers))
        self.encode_n_a = encode_n_a
        self.n_max = n_max
        if encode_n_a:
            self.na_embed = _mlp([1, hidden_dim])
            self.fuse = _mlp([2 * hidden_dim, hidden_dim])
        self.mu_head = nn.Linear(hidden_dim, latent_dim, dtype=torch.float64)
        self.logvar_head = nn.Linear(hidden_dim, latent_dim, dtype=torch.float64)

    def forward(self, batch: GraphBatch, edge_len: torch.Tensor,
                node_feats: torch.Tensor,
                n_atoms: torch.Tensor | None = None):
        rbf = self.rbf(edge_len)
        h = self.embed(node_feats)
        for layer in self.layers:
            h = layer(h, batch.edge_src, batch.edge_dst, rbf)
        pooled = _scatter_mean(h, batch.node_struct, batch.n_structs)
        if self.encode_n_a:
            if n_atoms is None:
                raise ValueError("encoder configured with the atom-count side "
                                 "input; pass n_atoms")
            side = torch.nn.functional.silu(
                self.na_embed(n_atoms[:, None].to(torch.float64) / self.n_max))
            pooled = torch.nn.functional.silu(
                self.fuse(torch.cat([pooled, side], dim=1)))
        return self.mu_head(pooled), self.logvar_head(pooled)

    def reset_parameters_from(self, rng: np.random.Generator):
        _init_module(self, rng)


def lattice_matrices_from_params(params: torch.Tensor) -> torch.Tensor:
    """Batched canonical-orientation lattice matrices from (B, 6) cell
    parameters (lengths in Angstrom, angles in degrees).

    The out-of-plane height is floored at a fraction of ``c`` so jointly
    unrealizable angle triples emitted mid-training still yield an
    invertible cell.
    """
    a, b, c = params[:, 0], params[:, 1], params[:, 2]
    angles = torch.deg2rad(params[:, 3:])
    cos_al, cos_be, cos_ga = angles.cos().unbind(dim=1)
    sin_ga = angles[:, 2].sin()
    zeros = torch.zeros_like(a)
    cx = c * cos_be
    cy = c * (cos_al - cos_be * cos_ga) / sin_ga
    cz = torch.sqrt(torch.maximum(c ** 2 - cx ** 2 - cy ** 2,
                                  (_CELL_HEIGHT_FLOOR * c) ** 2))
    rows = torch.stack([
        torch.stack([a, zeros, zeros], dim=1),
        torch.stack([b * cos_ga, b * sin_ga, zeros], dim=1),
        torch.stack([cx, cy, cz], dim=1),
    ], dim=1)
    return rows


class DecodeHeads(nn.Module):
    """Decoder heads mapping a latent code to cell parameters, an atom
    count distribution, and a composition simplex."""

    def __init__(self, latent_dim: int, hidden_dim: int, n_types: int, n_max: int):
        super().__init__()
        self.n_max = n_max
        self.lattice_mlp = _mlp([latent_dim, hidden_dim, 6])
        self.count_mlp = _mlp([latent_dim, hidden_dim, n_max])
        self.comp_mlp = _mlp([latent_dim, hidden_dim, n_types])

    def forward(self, z: torch.Tensor):
        raw = self.lattice_mlp(z)
        lengths = torch.nn.functional.softplus(raw[:, :3])
        angles = 30.0 + 120.0 * torch.sigmoid(raw[:, 3:])
        lattice_params = torch.cat([lengths, angles], dim=1)
        return lattice_params, self.count_mlp(z), self.comp_mlp(z)

    def reset_parameters_from(self, rng: np.random.Generator):
        _init_module(self, rng)
        # Start from a neutral 4 Angstrom, 90 degree cell.
        final = self.lattice_mlp[-1]
        with torch.no_grad():
            final.weight.zero_()
            final.bias.copy_(torch.tensor(
                [math.log(math.expm1(4.0))] * 3 + [0.0] * 3, dtype=torch.float64))


class DenoiserOutput(NamedTuple):
    eps_frac: torch.Tensor
    type_logits: torch.Tensor
    eps_cart: torch.Tensor


class Denoiser(nn.Module):
    """Noise-and-type predictor over the periodic graph of the noisy
    structure.

    Cartesian noise is a per-atom sum of gate(h_m, h_n, d) * (dr / d)
    over incident edges, then mapped to the fractional frame with the
    inverse lattice matrix.  Edgeless nodes therefore predict exactly
    zero noise.
    """

    def __init__(self, feat_dim: int, n_types: int, hidden_dim: int,
                 num_layers: int, num_rbf: int, cutoff: float):
        super().__init__()
        self.embed = nn.Linear(feat_dim, hidden_dim, dtype=torch.float64)
        self.rbf = GaussianRBF(cutoff, num_rbf)
        self.layers = nn.ModuleList(
            InteractionLayer(hidden_dim, num_rbf) for _ in range(num_layers))
        self.gate_mlp = _mlp([2 * hidden_dim + num_rbf, hidden_dim, 1])
        self.type_mlp = _mlp([hidden_dim, hidden_dim, n_types])

    def forward(self, batch: GraphBatch, frac: torch.Tensor,
                lattices: torch.Tensor, node_feats: torch.Tensor) -> DenoiserOutput:
        d_cart, d_len = _edge_geometry(batch, frac, lattices)
        rbf = self.rbf(d_len)
        h = self.embed(node_feats)
        for layer in self.layers:
            h = layer(h, batch.edge_src, batch.edge_dst, rbf)
        gate = self.gate_mlp(torch.cat([h[batch.edge_src], h[batch.edge_dst], rbf], dim=1))
        unit = d_cart / d_len.clamp(min=1e-8)[:, None]
        eps_cart = torch.zeros(batch.n_nodes, 3, dtype=frac.dtype).index_add_(
            0, batch.edge_src, gate * unit)
        inv = torch.linalg.inv(lattices)
        eps_frac = torch.bmm(eps_cart.unsqueeze(1), inv[batch.node_struct]).squeeze(1)
        return DenoiserOutput(eps_frac, self.type_mlp(h), eps_cart)

    def reset_parameters_from(self, rng: np.random.Generator):
        _init_module(self, rng)
        with torch.no_grad():
            self.gate_mlp[-1].weight.zero_()
            self.gate_mlp[-1].bias.zero_()


def loss_simple(eps, eps_theta) -> torch.Tensor:
    """Mean squared noise-prediction error over atoms and components."""
    eps = torch.as_tensor(eps, dtype=torch.float64)
    eps_theta = torch.as_tensor(eps_theta, dtype=torch.float64)
    return torch.mean((eps - eps_theta) ** 2)


def type_cross_entropy(onehot, logits) -> torch.Tensor:
    """Cross entropy between true one-hot types and predicted logits,
    averaged over atoms."""
    onehot = torch.as_tensor(onehot, dtype=torch.float64)
    logits = torch.as_tensor(logits, dtype=torch.float64)
    return -(onehot * torch.log_softmax(logits, dim=1)).sum(dim=1).mean()


def kld_normal(mu, logvar) -> torch.Tensor:
    """KL divergence of N(mu, exp(logvar)^2) from N(0, I), summed over the
    latent dimensions and averaged over the batch (matching the
    exp(logvar) scale convention of :func:`reparameterize`)."""
    mu = torch.as_tensor(mu, dtype=torch.float64)
    logvar = torch.as_tensor(logvar, dtype=torch.float64)
    per_dim = 0.5 * (mu ** 2 + torch.exp(2.0 * logvar) - 1.0 - 2.0 * logvar)
    return per_dim.sum(dim=-1).mean()


def comp_cross_entropy(target_fracs, logits) -> torch.Tensor:
    """Cross entropy between target composition fractions and the
    composition head's logits."""
    target = torch.as_tensor(target_fracs, dtype=torch.float64)
    logits = torch.as_tensor(logits, dtype=torch.float64)
    return -(target * torch.log_softmax(logits, dim=-1)).sum(dim=-1).mean()


def count_cross_entropy(n_atoms, logits) -> torch.Tensor:
    """Cross entropy for the atom-count head; class k encodes N = k + 1."""
    n_atoms = torch.as_tensor(np.asarray(n_atoms), dtype=torch.int64)
    logits = torch.as_tensor(logits, dtype=torch.float64)
    logp = torch.log_softmax(logits, dim=-1)
    return -logp[torch.arange(len(n_atoms)), n_atoms - 1].mean()


def lattice_mse(pred_params, target_params) -> torch.Tensor:
    pred = torch.as_tensor(pred_params, dtype=torch.float64)
    target = torch.as_tensor(target_params, dtype=torch.float64)
    return torch.mean((pred - target) ** 2)


def loss_diff(eps, eps_theta, onehot, type_logits, lambda_type) -> torch.Tensor:
    """Diffusion-network loss: noise MSE plus weighted type cross entropy."""
    return loss_simple(eps, eps_theta) \
        + float(lambda_type) * type_cross_entropy(onehot, type_logits)


def loss_total(parts, lambda_kld, lambda_lattice, lambda_comp, lambda_na) -> torch.Tensor:
    """Total training loss from parts (diff, kld, lattice, comp, count)."""
    diff, kld, latt, comp, count = (torch.as_tensor(p, dtype=torch.float64)
                                    for p in parts)
    return diff + float(lambda_kld) * kld + float(lambda_lattice) * latt \
        + float(lambda_comp) * comp + float(lambda_na) * count
