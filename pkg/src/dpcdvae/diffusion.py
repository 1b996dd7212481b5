"""Forward perturbation and reverse sampling kernels for fractional
coordinates, plus multinomial atom-type perturbation.

Two reverse samplers are provided: the standard update, which evolves an
unwrapped coordinate ``r_t``

    r_{t-1} = (r_t - (1 - a_t) / sqrt(1 - ab_t) * eps) / sqrt(a_t) + s_t * n

and the periodic update, which consumes the wrapped coordinate and uses
the cumulative retention ``ab_t`` in the leading factor

    r_{t-1} = (r_f_t - sqrt(1 - ab_t) * eps) / sqrt(ab_t) + s_t * n

re-wrapping after every step.  The periodic form inverts the forward
reparameterization exactly when ``eps`` is the oracle noise, so a
trajectory driven by a teacher-forced denoiser recovers its target.

All randomness is injected through explicit numpy generators; kernels are
pure functions of (state, inputs, rng) and trajectories for different
structures can run in parallel on independent rng streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError
from .lattice import CrystalStructure, Lattice, wrap_pi
from .schedule import NoiseSchedule

__all__ = [
    "DiffusionState",
    "forward_perturb",
    "reverse_step_standard",
    "reverse_step_periodic",
    "type_perturbation_probs",
    "perturb_types",
    "sample_trajectory",
    "sample_trajectories",
]

# denoiser(z, lattice, frac_coords, type_indices, t) -> (eps (N,3), logits (N,K))
Denoiser = Callable[[np.ndarray, Lattice, np.ndarray, np.ndarray, int],
                    tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class DiffusionState:
    """Perturbed coordinates at step ``t``: unwrapped ``r``, their wrap
    ``r_frac``, and optionally the perturbed type indices."""

    t: int
    r: np.ndarray = field(repr=False)
    r_frac: np.ndarray = field(repr=False)
    types: np.ndarray | None = field(default=None, repr=False)


def forward_perturb(r0: np.ndarray, t: int, schedule: NoiseSchedule,
                    noise: np.ndarray) -> DiffusionState:
    """One-shot forward perturbation ``r_t = sqrt(ab_t) r_0 + sqrt(1-ab_t) eps``.

    ``r0`` rows must lie in [0, 1); ``noise`` is caller-supplied (draw it
    from a seeded generator for reproducibility).
    """
    r0 = np.asarray(r0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != r0.shape:
        raise ValueError("noise shape must match r0")
    if np.any(r0 < 0.0) or np.any(r0 >= 1.0):
        raise ValueError("r0 must be wrapped into [0, 1)")
    ab = schedule.alpha_bar_at(int(t))
    r_t = np.sqrt(ab) * r0 + np.sqrt(1.0 - ab) * noise
    return DiffusionState(t=int(t), r=r_t, r_frac=wrap_pi(r_t))


def reverse_step_standard(r_t: np.ndarray, eps_theta: np.ndarray, t: int,
                          schedule: NoiseSchedule, noise: np.ndarray) -> np.ndarray:
    """Standard reverse update on the unwrapped coordinate."""
    r_t = np.asarray(r_t, dtype=np.float64)
    eps_theta = np.asarray(eps_theta, dtype=np.float64)
    a = schedule.alpha_at(int(t))
    ab = schedule.alpha_bar_at(int(t))
    s = schedule.sigma_at(int(t))
    return (r_t - (1.0 - a) / np.sqrt(1.0 - ab) * eps_theta) / np.sqrt(a) \
        + s * np.asarray(noise, dtype=np.float64)


def reverse_step_periodic(r_f_t: np.ndarray, eps_theta: np.ndarray, t: int,
                          schedule: NoiseSchedule,
                          noise: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Periodic reverse update; returns ``(r_{t-1}, wrap(r_{t-1}))``."""
    r_f_t = np.asarray(r_f_t, dtype=np.float64)
    if np.any(r_f_t < 0.0) or np.any(r_f_t >= 1.0):
        raise ValueError("r_f_t must be wrapped into [0, 1)")
    eps_theta = np.asarray(eps_theta, dtype=np.float64)
    ab = schedule.alpha_bar_at(int(t))
    s = schedule.sigma_at(int(t))
    r_prev = (r_f_t - np.sqrt(1.0 - ab) * eps_theta) / np.sqrt(ab) \
        + s * np.asarray(noise, dtype=np.float64)
    return r_prev, wrap_pi(r_prev)


def type_perturbation_probs(onehot: np.ndarray, comp_probs: np.ndarray,
                            sigma_prime: float) -> np.ndarray:
    """Row-wise ``softmax(A + sigma' * A_z)`` over the type vocabulary."""
    onehot = np.asarray(onehot, dtype=np.float64)
    comp_probs = np.asarray(comp_probs, dtype=np.float64)
    if onehot.ndim != 2 or comp_probs.ndim != 1 or onehot.shape[1] != comp_probs.shape[0]:
        raise ValueError(
            f"vocabulary mismatch: onehot {onehot.shape} vs comp_probs {comp_probs.shape}")
    logits = onehot + float(sigma_prime) * comp_probs[None, :]
    logits = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(logits)
    return expl / expl.sum(axis=1, keepdims=True)


def _sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(probs, axis=1)
    u = rng.random((probs.shape[0], 1))
    return np.minimum((u > cum).sum(axis=1), probs.shape[1] - 1).astype(np.int64)


def perturb_types(onehot: np.ndarray, comp_probs: np.ndarray, t: int,
                  schedule: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    """Draw perturbed type indices for every atom at step ``t``."""
    probs = type_perturbation_probs(onehot, comp_probs,
                                    schedule.sigma_prime_at(int(t)))
    return _sample_rows(probs, rng)


def _check_finite(arr: np.ndarray, what: str, t: int):
    if not np.all(np.isfinite(arr)):
        raise DivergenceError(
            f"non-finite {what} during reverse sampling at step t={t}", step=t)


def sample_trajectory(denoiser: Denoiser, z: np.ndarray, lattice: Lattice,
                      types_init: np.ndarray, n_atoms: int,
                      schedule: NoiseSchedule, rng: np.random.Generator,
                      variant: str = "periodic",
                      elements: Sequence[int] | None = None,
                      langevin_noise: bool = True) -> CrystalStructure:
    """Run the full reverse chain t = T..1 for one structure.

    ``types_init`` holds vocabulary indices for the t = T types;
    ``elements`` maps those indices to atomic numbers (identity when
    omitted).  Types are re-predicted each step as the argmax of the
    denoiser's type logits.  ``langevin_noise=False`` suppresses the
    per-step noise term, which makes the chain deterministic given the
    denoiser (and exact for a teacher-forced oracle denoiser).
    """
    structures = sample_trajectories(
        lambda zs, lats, fracs, types, t: [denoiser(zs[0], lats[0], fracs[0], types[0], t)],
        [np.asarray(z, dtype=np.float64)], [lattice],
        [np.asarray(types_init, dtype=np.int64)], [int(n_atoms)],
        schedule, [rng], variant=variant, elements=elements,
        langevin_noise=langevin_noise)
    return structures[0]


def sample_trajectories(denoiser_batch, zs, lattices, types_init, n_atoms,
                        schedule: NoiseSchedule, rngs,
                        variant: str = "periodic",
                        elements: Sequence[int] | None = None,
                        langevin_noise: bool = True) -> list[CrystalStructure]:
    """Vectorized reverse chains for several structures at once.

    ``denoiser_batch(zs, lattices, frac_list, type_list, t)`` must return
    one ``(eps, logits)`` pair per structure.  Each structure consumes its
    own generator from ``rngs``, so results are bit-identical to running
    :func:`sample_trajectory` per structure with the same generators.
    """
    if variant not in ("standard", "periodic"):
        raise ValueError(f"unknown reverse variant {variant!r}")
    n_struct = len(zs)
    if not (len(lattices) == len(types_init) == len(n_atoms) == len(rngs) == n_struct):
        raise ValueError("batched inputs must all have the same length")

    r_list = [rngs[i].standard_normal((int(n_atoms[i]), 3)) for i in range(n_struct)]
    type_list = [np.asarray(t, dtype=np.int64).copy() for t in types_init]

    for t in range(schedule.t_steps, 0, -1):
        frac_list = [wrap_pi(r) for r in r_list]
        outputs = denoiser_batch(zs, lattices, frac_list, type_list, t)
        for i in range(n_struct):
            eps, logits = outputs[i]
            _check_finite(eps, "noise prediction", t)
            if langevin_noise:
                noise = rngs[i].standard_normal(r_list[i].shape)
            else:
                noise = np.zeros_like(r_list[i])
            if variant == "standard":
                r_list[i] = reverse_step_standard(r_list[i], eps, t, schedule, noise)
            else:
                r_list[i], _ = reverse_step_periodic(frac_list[i], eps, t,
                                                     schedule, noise)
            _check_finite(r_list[i], "coordinates", t)
            type_list[i] = np.argmax(logits, axis=1).astype(np.int64)

    out = []
    for i in range(n_struct):
        if elements is not None:
            numbers = np.asarray(elements, dtype=np.int64)[type_list[i]]
        else:
            numbers = type_list[i]
        out.append(CrystalStructure.with_wrapped_coords(
            lattices[i], r_list[i], numbers))
    return out
