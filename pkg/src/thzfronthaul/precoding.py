"""Regularized zero-forcing and maximum-ratio precoders.

Fronthaul precoders are normalized per column.  The access precoder stacks
all serving APs of a cluster into one tall channel matrix, normalizes each
column by the *stacked* norm and then slices per-AP blocks, so the blocks of
one column keep their relative scale and their squared norms sum to one.
"""

from __future__ import annotations

import numpy as np


def mrt(h: np.ndarray) -> np.ndarray:
    """Maximum-ratio column h / ||h||."""
    n = np.linalg.norm(h)
    if n == 0:
        raise ValueError("zero channel vector")
    return np.asarray(h) / n


def rzf(channel_matrix: np.ndarray, epsilon: float) -> np.ndarray:
    """RZF precoder H (H^H H + eps I)^-1 with unit-norm columns.

    ``channel_matrix`` is (antennas x targets); the regularizer keeps the
    Gram matrix invertible for any epsilon > 0.
    """
    h = np.asarray(channel_matrix)
    if not np.all(np.isfinite(h.real)) or not np.all(np.isfinite(h.imag)):
        raise ValueError("channel matrix must be finite")
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    gram = h.conj().T @ h
    v = h @ np.linalg.inv(gram + epsilon * np.eye(h.shape[1]))
    norms = np.linalg.norm(v, axis=0)
    if np.any(norms == 0):
        raise ValueError("RZF produced a zero column")
    return v / norms


def stacked_rzf_blocks(stacked_channels: np.ndarray, n_nodes: int, epsilon: float) -> np.ndarray:
    """Cluster-wide access RZF, returned as per-node blocks (n_nodes, N, targets).

    Columns are scaled by the full stacked norm, not per block, so
    sum_q ||v_q,u||^2 = 1 for every target u.
    """
    h = np.asarray(stacked_channels)
    gram = h.conj().T @ h
    v = h @ np.linalg.inv(gram + epsilon * np.eye(h.shape[1]))
    norms = np.linalg.norm(v, axis=0)
    if np.any(norms == 0):
        raise ValueError("RZF produced a zero column")
    v = v / norms
    n = h.shape[0] // n_nodes
    return v.reshape(n_nodes, n, h.shape[1])
