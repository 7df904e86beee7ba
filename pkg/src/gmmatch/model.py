"""Trainable GMM parameterization.

The model is a K-component mixture with fixed equal weights; the flat
parameter vector holds all component means followed by the free entries of
the lower-triangular scale factors.  Diagonal scale entries pass through a
softplus-with-floor map so every parameter vector materializes to a valid
mixture (covariances cannot collapse below the floor during mode-seeking
optimization).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gmm import Gmm

__all__ = ["ThetaModel", "SCALE_FLOOR"]

SCALE_FLOOR = 1e-4


def _softplus(x):
    return np.logaddexp(0.0, x)


def _softplus_inv(y):
    # inverse of log(1+exp(x)); y must be > 0
    y = np.asarray(y, dtype=np.float64)
    return y + np.log1p(-np.exp(-y))


def diag_forward(raw):
    """Positivity map for diagonal scale entries."""
    return SCALE_FLOOR + _softplus(raw)


def diag_inverse(value):
    value = np.asarray(value, dtype=np.float64)
    if np.any(value <= SCALE_FLOOR):
        raise ValueError(f"diagonal scale entries must exceed the floor {SCALE_FLOOR}")
    return _softplus_inv(value - SCALE_FLOOR)


def diag_derivative(raw):
    """d diag_forward / d raw (the logistic sigmoid)."""
    return 1.0 / (1.0 + np.exp(-np.asarray(raw, dtype=np.float64)))


@dataclass
class ThetaModel:
    """Flat-vector parameterization of an equal-weight GMM.

    ``params`` has length K*D + K*D*(D+1)/2: all means (row-major), then per
    component the lower-triangular scale entries in ``np.tril_indices`` order
    with diagonal entries stored through the inverse positivity map.
    """

    n_components: int
    dim: int
    params: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.params is None:
            self.params = np.zeros(self.n_params)
        self.params = np.asarray(self.params, dtype=np.float64).copy()
        if self.params.shape != (self.n_params,):
            raise ValueError(f"expected parameter vector of length {self.n_params}")

    @property
    def n_params(self) -> int:
        k, d = self.n_components, self.dim
        return k * d + k * (d * (d + 1)) // 2

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n_components, 1.0 / self.n_components)

    def _split(self, params=None):
        p = self.params if params is None else np.asarray(params, dtype=np.float64)
        k, d = self.n_components, self.dim
        means = p[: k * d].reshape(k, d)
        tril = p[k * d :].reshape(k, (d * (d + 1)) // 2)
        return means, tril

    def materialize(self, params=None):
        """Decode (means, scales) from the flat vector."""
        k, d = self.n_components, self.dim
        means, tril = self._split(params)
        r, c = np.tril_indices(d)
        scales = np.zeros((k, d, d))
        scales[:, r, c] = tril
        diag = np.arange(d)
        scales[:, diag, diag] = diag_forward(scales[:, diag, diag])
        return means.copy(), scales

    def diag_raw(self, params=None) -> np.ndarray:
        """(K, D) raw values feeding the diagonal positivity map."""
        _, tril = self._split(params)
        d = self.dim
        r, c = np.tril_indices(d)
        pos = np.flatnonzero(r == c)
        return tril[:, pos]

    def to_gmm(self, params=None) -> Gmm:
        means, scales = self.materialize(params)
        return Gmm(self.weights, means, scales)

    @classmethod
    def from_means_scales(cls, means: np.ndarray, scales: np.ndarray) -> "ThetaModel":
        """Encode explicit means and lower-triangular scales."""
        means = np.asarray(means, dtype=np.float64)
        scales = np.asarray(scales, dtype=np.float64)
        k, d = means.shape
        r, c = np.tril_indices(d)
        tril = scales[:, r, c].copy()
        pos = np.flatnonzero(r == c)
        tril[:, pos] = diag_inverse(tril[:, pos])
        params = np.concatenate([means.reshape(-1), tril.reshape(-1)])
        return cls(n_components=k, dim=d, params=params)

    def flatten_grad(self, grad_means: np.ndarray, grad_scales: np.ndarray, params=None) -> np.ndarray:
        """Map (K,D) mean and (K,D,D) lower-triangular scale gradients into the
        flat parameter space, chaining through the diagonal positivity map."""
        k, d = self.n_components, self.dim
        r, c = np.tril_indices(d)
        tril_grad = grad_scales[:, r, c].copy()
        pos = np.flatnonzero(r == c)
        tril_grad[:, pos] *= diag_derivative(self.diag_raw(params))
        return np.concatenate([grad_means.reshape(-1), tril_grad.reshape(-1)])
