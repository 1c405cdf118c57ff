"""Reproducible noise streams built on the counter-based Philox generator.

Each particle owns an independent stream keyed by (root_seed, particle_id).
Increment step k is, by definition, row k of the stream's normal table, so
the same values come back no matter how many particles are simulated, in
what order, or on how many workers.
"""
from __future__ import annotations

import hashlib
import math

import numpy as np

_MASK = (1 << 64) - 1


def _label_to_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & _MASK
    digest = hashlib.blake2s(str(label).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def split_seed(root_seed, label) -> int:
    """Derive an independent child seed from (root_seed, label).

    Adding new labels never perturbs the streams of existing ones.
    """
    ss = np.random.SeedSequence([int(root_seed) & _MASK, _label_to_int(label)])
    return int(ss.generate_state(1, np.uint64)[0])


def make_generator(root_seed, label=0) -> np.random.Generator:
    """Philox generator keyed by (root_seed, label)."""
    key = np.array([int(root_seed) & _MASK, _label_to_int(label)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def particle_noise(root_seed, particle_id, n_steps, dt, dim) -> np.ndarray:
    """All Brownian increments of one particle: (n_steps, dim), N(0, dt I) rows."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    gen = make_generator(root_seed, particle_id)
    return gen.standard_normal((n_steps, dim)) * math.sqrt(dt)


def brownian_increments(root_seed, particle_id, step_index, dt, dim) -> np.ndarray:
    """Increment of particle `particle_id` over step `step_index`.

    Deterministic in (root_seed, particle_id, step_index); row `step_index`
    of the particle's stream, so it matches bulk simulation exactly.
    """
    return particle_noise(root_seed, particle_id, step_index + 1, dt, dim)[-1]


def noise_table(root_seed, particle_ids, n_steps, dt, dim) -> np.ndarray:
    """Stacked increments for many particles: (N, n_steps, dim)."""
    out = np.empty((len(particle_ids), n_steps, dim))
    for row, pid in enumerate(particle_ids):
        out[row] = particle_noise(root_seed, pid, n_steps, dt, dim)
    return out
