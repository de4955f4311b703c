"""RBF kernel math and the particle-repulsion update directions.

The curriculum expands its task set by pushing new candidates away from
already-solved tasks.  The update direction is the kernelized functional
gradient of the curriculum objective: the full form weights every particle by
its value estimate; the runtime uses the simplified form that averages kernel
gradients over the solved set only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class KernelConfig:
    h: float = 1.0  # RBF bandwidth

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("kernel bandwidth h must be positive")


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def rbf_kernel(a, b, cfg: KernelConfig) -> float:
    """k(a, b) = exp(-||a - b||^2 / h)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_dims(a, b)
    d = a - b
    return float(np.exp(-np.dot(d, d) / cfg.h))


def rbf_kernel_grad_first(a, b, cfg: KernelConfig) -> np.ndarray:
    """Gradient of ``rbf_kernel`` with respect to the first argument."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_dims(a, b)
    d = a - b
    return (-2.0 / cfg.h) * d * np.exp(-np.dot(d, d) / cfg.h)


def svgd_full_update(query, particles, log_p_grad, cfg: KernelConfig) -> np.ndarray:
    """Value-weighted kernelized gradient over a particle set.

    particles is a sequence of (position vector, value in [0, 1]); the result
    is the mean over particles of
    ``v * (k(p, query) * log_p_grad(p) + grad_p k(p, query))``.
    """
    if len(particles) == 0:
        raise ValueError("svgd_full_update requires a non-empty particle set")
    query = np.asarray(query, dtype=np.float64)
    total = np.zeros_like(query)
    for p, v in particles:
        p = np.asarray(p, dtype=np.float64)
        _check_dims(p, query)
        total += v * (rbf_kernel(p, query, cfg) * np.asarray(log_p_grad(p), dtype=np.float64)
                      + rbf_kernel_grad_first(p, query, cfg))
    return total / len(particles)


def svgd_simplified_update(query, solved_particles, cfg: KernelConfig) -> np.ndarray:
    """Mean kernel gradient over solved particles; empty set gives zero.

    Equivalent to the full update with uniform target density (zero log
    gradient) restricted to unit-value particles.  Vectorized: solved
    particles may be a (m, d) array.
    """
    query = np.asarray(query, dtype=np.float64)
    particles = np.asarray(solved_particles, dtype=np.float64)
    if particles.size == 0:
        return np.zeros_like(query)
    particles = particles.reshape(len(particles), -1)
    _check_dims(particles, query)
    d = particles - query[None, :]
    k = np.exp(-np.einsum("ij,ij->i", d, d) / cfg.h)
    grads = (-2.0 / cfg.h) * d * k[:, None]
    return grads.mean(axis=0)
