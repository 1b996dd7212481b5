"""The DPCDVAE estimator: a scikit-learn style wrapper tying together the
encoder, decoder heads, denoiser, noise schedule, and reverse samplers.

``fit`` trains on a list of :class:`~dpcdvae.lattice.CrystalStructure`;
``reconstruct`` encodes structures and re-samples them through the
configured reverse variant; ``sample`` draws novel structures from the
latent prior.  All randomness derives from the ``seed`` parameter through
tagged numpy seed sequences, so repeated calls (and repeated processes)
produce identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from torch import nn

from .diffusion import sample_trajectories, type_perturbation_probs
from .errors import ConfigError, DataError, DivergenceError
from .lattice import CrystalStructure, Lattice, build_periodic_graph, wrap_pi
from .networks import (
    DecodeHeads,
    Denoiser,
    GraphBatch,
    GraphEncoder,
    comp_cross_entropy,
    count_cross_entropy,
    fourier_features,
    kld_normal,
    lattice_matrices_from_params,
    lattice_mse,
    loss_simple,
    time_embedding,
    type_cross_entropy,
)

__all__ = ["DPCDVAE", "check_structures"]

# Tags separating the purpose-specific random streams derived from `seed`.
_INIT_TAG, _TRAIN_TAG, _RECON_TAG, _GENERATE_TAG = 11, 13, 17, 19

# Abort threshold on the number of periodic images a decoded cell requires;
# past this the lattice head has collapsed and sampling cannot proceed.
_MAX_IMAGES = 20_000


def check_structures(X) -> list[CrystalStructure]:
    """Validate an iterable of structures, returning it as a list."""
    X = list(X)
    if not X:
        raise ValueError("expected at least one structure")
    for i, s in enumerate(X):
        if not isinstance(s, CrystalStructure):
            raise TypeError(f"item {i} is {type(s).__name__}, expected CrystalStructure")
    return X


class _Networks(nn.Module):
    def __init__(self, n_types, latent_dim, hidden_dim, num_layers, num_rbf,
                 cutoff, n_max, encode_n_a, feat_dim):
        super().__init__()
        self.encoder = GraphEncoder(n_types, latent_dim, hidden_dim, num_layers,
                                    num_rbf, cutoff, encode_n_a, n_max)
        self.heads = DecodeHeads(latent_dim, hidden_dim, n_types, n_max)
        self.denoiser = Denoiser(feat_dim, n_types, hidden_dim, num_layers,
                                 num_rbf, cutoff)

    def reset_parameters_from(self, rng):
        self.encoder.reset_parameters_from(rng)
        self.heads.reset_parameters_from(rng)
        self.denoiser.reset_parameters_from(rng)


@dataclass
class _BatchDraws:
    """Pre-drawn randomness for one training batch, so a loss evaluation is
    a pure function of the parameters (used by the gradient checks)."""

    t: np.ndarray
    coord_noise: list[np.ndarray]
    latent_noise: np.ndarray
    type_uniforms: list[np.ndarray]


class DPCDVAE(BaseEstimator):
    """Crystal-structure generative model with diffusion-based coordinates.

    Parameters mirror the run configuration; see the README for the full
    table.  Follows scikit-learn conventions: construction stores
    parameters verbatim, ``fit`` validates and learns, fitted state lives
    in trailing-underscore attributes.
    """

    def __init__(self, *, latent_dim=64, hidden_dim=128, num_layers=3,
                 num_rbf=32, fourier_min=3, fourier_max=8, time_dim=8,
                 cutoff=7.0, max_neighbors=12, n_max=20, timesteps=1000,
                 gamma_min=-10.0, gamma_max=10.0, lambda_type=1.0,
                 lambda_kld=0.01, lambda_lattice=1.0, lambda_comp=1.0,
                 lambda_na=1.0, learning_rate=1e-3, batch_size=32, epochs=100,
                 seed=0, reverse_variant="periodic", type_init="categorical",
                 encode_n_a=False, save_interval=0):
        self.latent_dim = latent_dim
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.num_rbf = num_rbf
        self.fourier_min = fourier_min
        self.fourier_max = fourier_max
        self.time_dim = time_dim
        self.cutoff = cutoff
        self.max_neighbors = max_neighbors
        self.n_max = n_max
        self.timesteps = timesteps
        self.gamma_min = gamma_min
        self.gamma_max = gamma_max
        self.lambda_type = lambda_type
        self.lambda_kld = lambda_kld
        self.lambda_lattice = lambda_lattice
        self.lambda_comp = lambda_comp
        self.lambda_na = lambda_na
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.reverse_variant = reverse_variant
        self.type_init = type_init
        self.encode_n_a = encode_n_a
        self.save_interval = save_interval

    # ------------------------------------------------------------------
    # construction / fitted-state helpers

    @property
    def _fourier_dim(self) -> int:
        return 6 * (int(self.fourier_max) - int(self.fourier_min) + 1)

    def _validate_params(self):
        if self.reverse_variant not in ("standard", "periodic"):
            raise ConfigError(f"reverse_variant must be 'standard' or 'periodic', "
                              f"got {self.reverse_variant!r}")
        if self.type_init not in ("categorical", "argmax"):
            raise ConfigError(f"type_init must be 'categorical' or 'argmax', "
                              f"got {self.type_init!r}")
        for name in ("lambda_type", "lambda_kld", "lambda_lattice",
                     "lambda_comp", "lambda_na"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if int(self.epochs) < 0:
            raise ConfigError("epochs must be non-negative")
        if int(self.batch_size) < 1 or int(self.n_max) < 1:
            raise ConfigError("batch_size and n_max must be positive")
        if int(self.fourier_min) < 1 or int(self.fourier_max) < int(self.fourier_min):
            raise ConfigError("need 1 <= fourier_min <= fourier_max")

    def _rng(self, tag: int) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([int(self.seed), tag])))

    def _spawned_rngs(self, tag: int, n: int) -> list[np.random.Generator]:
        children = np.random.SeedSequence([int(self.seed), tag]).spawn(n)
        return [np.random.Generator(np.random.PCG64(c)) for c in children]

    def _check_fitted(self):
        if not hasattr(self, "networks_"):
            raise NotFittedError("this DPCDVAE instance is not fitted yet")

    def _build_networks(self, n_types: int) -> _Networks:
        feat_dim = n_types + self._fourier_dim + int(self.latent_dim) + int(self.time_dim)
        return _Networks(n_types, int(self.latent_dim), int(self.hidden_dim),
                         int(self.num_layers), int(self.num_rbf),
                         float(self.cutoff), int(self.n_max),
                         bool(self.encode_n_a), feat_dim)

    def _make_schedule(self):
        from .schedule import make_sigmoid_schedule
        return make_sigmoid_schedule(int(self.timesteps), float(self.gamma_min),
                                     float(self.gamma_max))

    # ------------------------------------------------------------------
    # encoding side

    def _vocab_index(self, numbers: np.ndarray) -> np.ndarray:
        lookup = {z: i for i, z in enumerate(self.elements_)}
        try:
            return np.array([lookup[int(z)] for z in numbers], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"element Z={exc.args[0]} not in the fitted "
                            f"vocabulary {self.elements_}") from None

    def _encoder_inputs(self, structures, graphs):
        batch = GraphBatch.from_graphs(graphs)
        edge_len = torch.from_numpy(np.concatenate(
            [g.edge_len for g in graphs]) if graphs else np.zeros(0))
        onehot = np.zeros((batch.n_nodes, len(self.elements_)))
        offset = 0
        n_atoms = []
        for s in structures:
            idx = self._vocab_index(s.atomic_numbers)
            onehot[offset + np.arange(s.n_atoms), idx] = 1.0
            offset += s.n_atoms
            n_atoms.append(s.n_atoms)
        return batch, edge_len, torch.from_numpy(onehot), torch.tensor(n_atoms)

    def _encode_batch(self, structures):
        graphs = [build_periodic_graph(s, float(self.cutoff), int(self.max_neighbors))
                  for s in structures]
        batch, edge_len, onehot, n_atoms = self._encoder_inputs(structures, graphs)
        return self.networks_.encoder(
            batch, edge_len, onehot, n_atoms if self.encode_n_a else None)

    def encode(self, structure: CrystalStructure):
        """Posterior parameters (mu, logvar) for one structure, as numpy."""
        self._check_fitted()
        with torch.no_grad():
            mu, logvar = self._encode_batch([structure])
        return mu[0].numpy(), logvar[0].numpy()

    # ------------------------------------------------------------------
    # decoding side

    def _decode_tensors(self, z: torch.Tensor):
        lattice_params, count_logits, comp_logits = self.networks_.heads(z)
        return lattice_params, count_logits, comp_logits

    def decode_heads(self, z: np.ndarray):
        """Decode a latent vector into (Lattice, atom count, composition
        probabilities)."""
        self._check_fitted()
        z_t = torch.as_tensor(np.asarray(z, dtype=np.float64)).reshape(1, -1)
        with torch.no_grad():
            lattice_params, count_logits, comp_logits = self._decode_tensors(z_t)
            matrix = lattice_matrices_from_params(lattice_params)[0].numpy()
            n_z = int(torch.argmax(count_logits[0]).item()) + 1
            comp = torch.softmax(comp_logits[0], dim=0).numpy()
        return Lattice.from_matrix(matrix), n_z, comp

    # ------------------------------------------------------------------
    # denoiser plumbing

    def _guard_cell(self, lattice: Lattice, t):
        n_img = np.ceil(float(self.cutoff) / lattice.plane_heights()) + 1
        if np.prod(2 * n_img + 1) > _MAX_IMAGES:
            step = int(np.atleast_1d(t)[0])
            raise DivergenceError(
                "decoded lattice collapsed (too many periodic images within "
                f"the cutoff) at step t={step}", step=step)

    def _denoiser_forward(self, lattices_t: torch.Tensor, z_t: torch.Tensor,
                          frac_list, types_list, t_per_struct):
        """Shared training/sampling forward pass of the denoiser.

        Graph topology comes from the detached lattices; edge geometry is
        recomputed inside the network so gradients reach the lattice head.
        """
        t_arr = np.broadcast_to(np.asarray(t_per_struct), (len(frac_list),))
        lat_np = lattices_t.detach().numpy()
        if not np.all(np.isfinite(lat_np)):
            step = int(t_arr[0])
            raise DivergenceError(
                f"non-finite decoded lattice at step t={step}", step=step)
        graphs = []
        feats_const = []
        for i, frac in enumerate(frac_list):
            lattice = Lattice.from_matrix(lat_np[i])
            self._guard_cell(lattice, t_arr[i])
            numbers = np.asarray(self.elements_)[types_list[i]]
            struct = CrystalStructure(lattice, frac, numbers)
            graphs.append(build_periodic_graph(struct, float(self.cutoff),
                                               int(self.max_neighbors)))
            onehot = np.zeros((len(frac), len(self.elements_)))
            onehot[np.arange(len(frac)), types_list[i]] = 1.0
            temb = np.broadcast_to(
                time_embedding(int(t_arr[i]), int(self.timesteps), int(self.time_dim)),
                (len(frac), int(self.time_dim)))
            feats_const.append((
                np.concatenate([onehot, fourier_features(
                    frac, int(self.fourier_min), int(self.fourier_max))], axis=1),
                temb))

        batch = GraphBatch.from_graphs(graphs)
        frac_t = torch.from_numpy(np.concatenate(frac_list))
        pre = torch.from_numpy(np.concatenate([f[0] for f in feats_const]))
        post = torch.from_numpy(np.ascontiguousarray(
            np.concatenate([f[1] for f in feats_const])))
        feats = torch.cat([pre, z_t[batch.node_struct], post], dim=1)
        out = self.networks_.denoiser(batch, frac_t, lattices_t, feats)
        return out, batch

    def denoise(self, z, lattice: Lattice, frac_coords, type_indices, t):
        """Single-structure denoiser call: (eps_frac, type_logits) as numpy.

        Matches the callable protocol of
        :func:`dpcdvae.diffusion.sample_trajectory`.
        """
        self._check_fitted()
        z_t = torch.as_tensor(np.asarray(z, dtype=np.float64)).reshape(1, -1)
        lat_t = torch.from_numpy(lattice.matrix.copy()).reshape(1, 3, 3)
        with torch.no_grad():
            out, _ = self._denoiser_forward(
                lat_t, z_t, [np.asarray(frac_coords, dtype=np.float64)],
                [np.asarray(type_indices, dtype=np.int64)], int(t))
        return out.eps_frac.numpy(), out.type_logits.numpy()

    def _denoiser_batch_fn(self):
        def run(zs, lattices, frac_list, types_list, t):
            z_t = torch.from_numpy(np.ascontiguousarray(np.stack(zs)))
            lat_t = torch.from_numpy(np.ascontiguousarray(
                np.stack([lat.matrix for lat in lattices])))
            with torch.no_grad():
                out, batch = self._denoiser_forward(lat_t, z_t, frac_list,
                                                    types_list, int(t))
            eps = out.eps_frac.numpy()
            logits = out.type_logits.numpy()
            sizes = [len(f) for f in frac_list]
            bounds = np.cumsum([0] + sizes)
            return [(eps[bounds[i]:bounds[i + 1]], logits[bounds[i]:bounds[i + 1]])
                    for i in range(len(sizes))]
        return run

    # ------------------------------------------------------------------
    # training

    def fit(self, X, y=None, checkpoint_dir=None):
        """Train on a list of structures.

        ``checkpoint_dir``, when given, receives ``model.dpcv`` plus
        ``checkpoint-{epoch:05d}.dpcv`` every ``save_interval`` epochs.
        """
        self._validate_params()
        X = check_structures(X)
        self.elements_ = sorted({int(z) for s in X for z in s.atomic_numbers})
        too_big = max(s.n_atoms for s in X)
        if too_big > int(self.n_max):
            raise ConfigError(f"dataset contains {too_big} atoms per cell but "
                              f"n_max={self.n_max}")

        self.schedule_ = self._make_schedule()
        self.networks_ = self._build_networks(len(self.elements_))
        self.networks_.reset_parameters_from(self._rng(_INIT_TAG))
        self.loss_history_ = []

        self._cache_training_targets(X)
        if int(self.epochs) == 0:
            return self

        optimizer = torch.optim.Adam(self.networks_.parameters(),
                                     lr=float(self.learning_rate))
        train_rng = self._rng(_TRAIN_TAG)
        n_data = len(X)
        step = 0
        for epoch in range(1, int(self.epochs) + 1):
            order = train_rng.permutation(n_data)
            sums = dict.fromkeys(
                ("L_total", "L_simple", "CE", "KLD", "latt", "comp", "N_a"), 0.0)
            n_batches = 0
            for start in range(0, n_data, int(self.batch_size)):
                idx = order[start:start + int(self.batch_size)]
                draws = self._draw_batch(train_rng, idx)
                losses = self._batch_loss(idx, draws)
                optimizer.zero_grad()
                losses["L_total"].backward()
                step += 1
                self._abort_on_divergence(losses["L_total"], step)
                optimizer.step()
                for key in sums:
                    sums[key] += float(losses[key].detach())
                n_batches += 1
            row = {"epoch": epoch}
            row.update({k: v / n_batches for k, v in sums.items()})
            self.loss_history_.append(row)
            if (checkpoint_dir is not None and int(self.save_interval) > 0
                    and epoch % int(self.save_interval) == 0):
                self.save_checkpoint(
                    f"{checkpoint_dir}/checkpoint-{epoch:05d}.dpcv")
        if checkpoint_dir is not None:
            self.save_checkpoint(f"{checkpoint_dir}/model.dpcv")
        return self

    def _abort_on_divergence(self, total: torch.Tensor, step: int):
        grad_sq = 0.0
        for p in self.networks_.parameters():
            if p.grad is not None:
                grad_sq += float((p.grad ** 2).sum())
        grad_norm = math.sqrt(grad_sq)
        if not (math.isfinite(float(total.detach())) and math.isfinite(grad_norm)):
            raise DivergenceError(
                f"non-finite training loss or gradient at step {step} "
                f"(lr={self.learning_rate}, grad_norm={grad_norm})", step=step)

    def _cache_training_targets(self, X):
        graphs = [build_periodic_graph(s, float(self.cutoff), int(self.max_neighbors))
                  for s in X]
        n_types = len(self.elements_)
        onehots, comps = [], []
        for s in X:
            idx = self._vocab_index(s.atomic_numbers)
            onehot = np.zeros((s.n_atoms, n_types))
            onehot[np.arange(s.n_atoms), idx] = 1.0
            onehots.append(onehot)
            comps.append(onehot.mean(axis=0))
        self._train_structures = X
        self._train_graphs = graphs
        self._train_onehots = onehots
        self._train_comps = np.array(comps)
        self._train_lattice_params = np.array(
            [s.lattice.parameters for s in X])
        self._train_counts = np.array([s.n_atoms for s in X])

    def _draw_batch(self, rng: np.random.Generator, idx) -> _BatchDraws:
        t = rng.integers(1, int(self.timesteps) + 1, size=len(idx))
        coord_noise = [rng.standard_normal((self._train_counts[i], 3)) for i in idx]
        latent_noise = rng.standard_normal((len(idx), int(self.latent_dim)))
        type_uniforms = [rng.random((self._train_counts[i], 1)) for i in idx]
        return _BatchDraws(t, coord_noise, latent_noise, type_uniforms)

    def _batch_loss(self, idx, draws: _BatchDraws) -> dict[str, torch.Tensor]:
        """Forward pass and all loss terms for one batch (pure in the
        parameters given fixed draws)."""
        structures = [self._train_structures[i] for i in idx]
        graphs = [self._train_graphs[i] for i in idx]
        batch, edge_len, enc_onehot, n_atoms = self._encoder_inputs(structures, graphs)
        mu, logvar = self.networks_.encoder(
            batch, edge_len, enc_onehot, n_atoms if self.encode_n_a else None)
        z = mu + torch.exp(logvar) * torch.from_numpy(draws.latent_noise)

        lattice_params, count_logits, comp_logits = self._decode_tensors(z)
        lattices_t = lattice_matrices_from_params(lattice_params)
        comp_probs = torch.softmax(comp_logits, dim=1).detach().numpy()

        frac_list, types_list = [], []
        for k, i in enumerate(idx):
            s = self._train_structures[i]
            sigma_prime = self.schedule_.sigma_prime_at(int(draws.t[k]))
            probs = type_perturbation_probs(self._train_onehots[i],
                                            comp_probs[k], sigma_prime)
            cum = np.cumsum(probs, axis=1)
            types_list.append(np.minimum((draws.type_uniforms[k] > cum).sum(axis=1),
                                         probs.shape[1] - 1).astype(np.int64))
            ab = self.schedule_.alpha_bar_at(int(draws.t[k]))
            r_t = np.sqrt(ab) * s.frac_coords + np.sqrt(1 - ab) * draws.coord_noise[k]
            frac_list.append(wrap_pi(r_t))

        out, _ = self._denoiser_forward(lattices_t, z, frac_list, types_list, draws.t)

        eps_target = torch.from_numpy(np.concatenate(draws.coord_noise))
        true_onehot = torch.from_numpy(np.concatenate(
            [self._train_onehots[i] for i in idx]))
        l_simple = loss_simple(eps_target, out.eps_frac)
        l_ce = type_cross_entropy(true_onehot, out.type_logits)
        l_kld = kld_normal(mu, logvar)
        l_latt = lattice_mse(lattice_params, torch.from_numpy(
            self._train_lattice_params[idx]))
        l_comp = comp_cross_entropy(torch.from_numpy(self._train_comps[idx]),
                                    comp_logits)
        l_na = count_cross_entropy(self._train_counts[idx], count_logits)
        l_diff = l_simple + float(self.lambda_type) * l_ce
        total = (l_diff + float(self.lambda_kld) * l_kld
                 + float(self.lambda_lattice) * l_latt
                 + float(self.lambda_comp) * l_comp
                 + float(self.lambda_na) * l_na)
        return {"L_total": total, "L_simple": l_simple, "CE": l_ce,
                "KLD": l_kld, "latt": l_latt, "comp": l_comp, "N_a": l_na}

    # ------------------------------------------------------------------
    # sampling

    def _sample_from_latents(self, z: np.ndarray, rngs,
                             variant: str) -> list[CrystalStructure]:
        z_t = torch.from_numpy(np.ascontiguousarray(z))
        with torch.no_grad():
            lattice_params, count_logits, comp_logits = self._decode_tensors(z_t)
            matrices = lattice_matrices_from_params(lattice_params).numpy()
            counts = (torch.argmax(count_logits, dim=1) + 1).numpy()
            comp_probs = torch.softmax(comp_logits, dim=1).numpy()

        lattices = [Lattice.from_matrix(m) for m in matrices]
        types_init = []
        for i in range(len(lattices)):
            if self.type_init == "argmax":
                types_init.append(np.full(counts[i], int(np.argmax(comp_probs[i])),
                                          dtype=np.int64))
            else:
                cum = np.cumsum(comp_probs[i])
                u = rngs[i].random(counts[i])
                types_init.append(np.minimum(
                    np.searchsorted(cum, u, side="right"),
                    len(self.elements_) - 1).astype(np.int64))
        return sample_trajectories(
            self._denoiser_batch_fn(), list(z), lattices, types_init,
            counts.tolist(), self.schedule_, rngs,
            variant=variant, elements=self.elements_)

    def _resolve_variant(self, variant: str | None) -> str:
        if variant is None:
            return self.reverse_variant
        if variant not in ("standard", "periodic"):
            raise ConfigError(f"unknown reverse variant {variant!r}")
        return variant

    def reconstruct(self, X, variant: str | None = None) -> list[CrystalStructure]:
        """Encode each structure (stochastic latent draw) and re-sample it
        through the reverse diffusion chain.

        ``variant`` overrides the configured reverse variant, so both
        samplers can be compared from one fitted model.
        """
        self._check_fitted()
        variant = self._resolve_variant(variant)
        X = check_structures(X)
        for s in X:
            self._vocab_index(s.atomic_numbers)
        with torch.no_grad():
            mu, logvar = self._encode_batch(X)
        master = self._rng(_RECON_TAG)
        eps_z = master.standard_normal((len(X), int(self.latent_dim)))
        z = mu.numpy() + np.exp(logvar.numpy()) * eps_z
        rngs = self._spawned_rngs(_RECON_TAG, len(X))
        return self._sample_from_latents(z, rngs, variant)

    def sample(self, n_samples: int, variant: str | None = None) -> list[CrystalStructure]:
        """Draw structures from the latent prior z ~ N(0, I)."""
        self._check_fitted()
        variant = self._resolve_variant(variant)
        if int(n_samples) < 1:
            raise ValueError("n_samples must be positive")
        master = self._rng(_GENERATE_TAG)
        z = master.standard_normal((int(n_samples), int(self.latent_dim)))
        rngs = self._spawned_rngs(_GENERATE_TAG, int(n_samples))
        return self._sample_from_latents(z, rngs, variant)

    # ------------------------------------------------------------------
    # persistence

    def save_checkpoint(self, path):
        from .io import save_checkpoint
        self._check_fitted()
        params = {name: tensor.detach().numpy()
                  for name, tensor in self.networks_.state_dict().items()}
        config = dict(self.get_params())
        config["elements"] = list(self.elements_)
        save_checkpoint(path, params, config)

    @classmethod
    def load(cls, path) -> "DPCDVAE":
        from .io import load_checkpoint
        params, config = load_checkpoint(path)
        elements = config.pop("elements")
        est = cls(**config)
        est._validate_params()
        est.elements_ = [int(z) for z in elements]
        est.schedule_ = est._make_schedule()
        est.networks_ = est._build_networks(len(est.elements_))
        est.networks_.load_state_dict(
            {name: torch.from_numpy(np.ascontiguousarray(arr))
             for name, arr in params.items()})
        est.loss_history_ = []
        return est
