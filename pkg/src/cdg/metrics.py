"""Discrete inner products on the tangent space of (O, I, H, W) tensors.

These are used to check the defining gradient relation
``<grad_m, k>_m == <grad_H0, k>_H0`` rather than to compute gradients.

Conventions (unit measure per index, periodic along O):

* ``ip_h0(a, b) = sum(a * b)``
* ``ip_h0_lambda(a, b) = ip_h0(abar, bbar) + lam * ip_h0(a - abar, b - bbar)``
* ``ip_tilde_h1(a, b) = ip_h0(abar, bbar) + lam * O**2 * ip_h0(Da, Db)``

where ``abar`` is the channel mean broadcast over O and ``D`` is the periodic
forward difference along O.  Summation by parts is exact for periodic
differences, so the gradient of ``ip_tilde_h1`` solves
``f = gbar - lam * O**2 * D2 g`` with no discretization error.
"""

from __future__ import annotations

import numpy as np

from cdg.errors import InvalidArgument
from cdg.tensor import as_tensor4, channel_mean


def _pair(k1, k2):
    k1 = as_tensor4(k1, "k1")
    k2 = as_tensor4(k2, "k2")
    if k1.shape != k2.shape:
        raise InvalidArgument(f"dimension mismatch: {k1.shape} vs {k2.shape}")
    return k1, k2


def _check_lambda(lam):
    if not lam > 0:
        raise InvalidArgument(f"lambda must be positive, got {lam}")


def forward_difference(k):
    """Periodic forward difference along axis 0: k[o+1] - k[o]."""
    return np.roll(k, -1, axis=0) - k


def ip_h0(k1, k2):
    k1, k2 = _pair(k1, k2)
    return float(np.sum(k1 * k2))


def ip_h0_lambda(k1, k2, lam):
    _check_lambda(lam)
    k1, k2 = _pair(k1, k2)
    m1, m2 = channel_mean(k1), channel_mean(k2)
    return ip_h0(m1, m2) + lam * ip_h0(k1 - m1, k2 - m2)


def ip_tilde_h1(k1, k2, lam):
    _check_lambda(lam)
    k1, k2 = _pair(k1, k2)
    n_out = k1.shape[0]
    if n_out < 2:
        raise InvalidArgument(f"tilde-H1 metric needs O >= 2, got O={n_out}")
    mean_term = ip_h0(channel_mean(k1), channel_mean(k2))
    d1, d2 = forward_difference(k1), forward_difference(k2)
    return mean_term + lam * n_out**2 * float(np.sum(d1 * d2))


def ip_h1(k1, k2, lam):
    """``ip_h0(a, b) + lam * O**2 * ip_h0(Da, Db)``; gradient solves (Id - lam O^2 D2) g = f."""
    _check_lambda(lam)
    k1, k2 = _pair(k1, k2)
    n_out = k1.shape[0]
    d1, d2 = forward_difference(k1), forward_difference(k2)
    return ip_h0(k1, k2) + lam * n_out**2 * float(np.sum(d1 * d2))
