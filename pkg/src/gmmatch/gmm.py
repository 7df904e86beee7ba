"""Exact algebra on Gaussian mixture models with full covariances.

Covariances are carried as lower-triangular Cholesky factors so positive
definiteness is an invariant of the representation.  All operations return
new immutable :class:`Gmm` values; densities are evaluated in log space
throughout (log-sum-exp over components).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

__all__ = [
    "Gmm",
    "check_index_set",
    "complement",
    "log_density",
    "sample",
    "marginalize",
    "condition",
    "linear_transform",
    "convolve_gaussian",
    "gmm_to_dict",
    "gmm_from_dict",
    "gmm_to_json",
    "gmm_from_json",
]

_WEIGHT_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Gmm:
    """Weighted mixture of full-covariance Gaussians.

    Parameters
    ----------
    weights : (K,) nonnegative, summing to 1
    means : (K, D)
    scales : (K, D, D) lower-triangular Cholesky factors; the covariance of
        component i is ``scales[i] @ scales[i].T``.
    """

    weights: np.ndarray
    means: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights))
        object.__setattr__(self, "means", _frozen(self.means))
        object.__setattr__(self, "scales", _frozen(self.scales))
        w, m, s = self.weights, self.means, self.scales
        if w.ndim != 1 or m.ndim != 2 or s.ndim != 3:
            raise ValueError("weights must be (K,), means (K, D), scales (K, D, D)")
        k, d = m.shape
        if w.shape[0] != k or s.shape != (k, d, d):
            raise ValueError("inconsistent component count or dimension")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1 within {_WEIGHT_TOL}")
        if np.any(np.triu(s, k=1) != 0.0):
            raise ValueError("scales must be lower-triangular")
        if np.any(s[:, range(d), range(d)] <= 0.0):
            raise ValueError("scale diagonals must be strictly positive")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def covariances(self) -> np.ndarray:
        """(K, D, D) covariance matrices ``L @ L.T``."""
        return self.scales @ np.transpose(self.scales, (0, 2, 1))


def check_index_set(indices, dim: int, name: str = "index set") -> tuple[int, ...]:
    """Validate an ordered, duplicate-free subset of {0, ..., dim-1}."""
    idx = tuple(int(i) for i in indices)
    if list(idx) != sorted(set(idx)):
        raise ValueError(f"{name} must be sorted ascending without duplicates: {idx}")
    if idx and (idx[0] < 0 or idx[-1] >= dim):
        raise ValueError(f"{name} {idx} out of range for dimension {dim}")
    return idx


def complement(indices, dim: int) -> tuple[int, ...]:
    idx = set(check_index_set(indices, dim))
    return tuple(i for i in range(dim) if i not in idx)


def _refactor(cov: np.ndarray) -> np.ndarray:
    """Cholesky-factor a stack of covariance matrices."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"covariance lost positive definiteness: {exc}") from exc


def component_log_densities(g: Gmm, x: np.ndarray) -> np.ndarray:
    """Per-component Gaussian log densities.

    ``x`` has shape (..., D); the result has shape (..., K).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != g.dim:
        raise ValueError(f"point dimension {x.shape[-1]} != mixture dimension {g.dim}")
    d = g.dim
    out = np.empty(x.shape[:-1] + (g.n_components,))
    for i in range(g.n_components):
        li = g.scales[i]
        diff = x - g.means[i]
        # solve L z = diff^T for the Mahalanobis part
        z = solve_triangular(li, diff.reshape(-1, d).T, lower=True)
        quad = np.sum(z * z, axis=0).reshape(x.shape[:-1])
        logdet = np.sum(np.log(np.diag(li)))
        out[..., i] = -0.5 * quad - logdet - 0.5 * d * np.log(2.0 * np.pi)
    return out


def log_density(g: Gmm, x: np.ndarray) -> np.ndarray:
    """log sum_i w_i N(x | mu_i, L_i L_i^T), via log-sum-exp.

    Accepts a single point of shape (D,) or a batch (..., D).
    """
    comp = component_log_densities(g, x)
    with np.errstate(divide="ignore"):
        logw = np.log(g.weights)
    return logsumexp(comp + logw, axis=-1)


def sample(g: Gmm, n: int, rng: np.random.Generator):
    """Draw n points; also return component indices and the standard-normal
    noises so pathwise (common-random-number) gradients can reuse them.

    Returns ``(points, components, noises)`` with ``points[j] =
    means[c_j] + scales[c_j] @ noises[j]``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    components = rng.choice(g.n_components, size=n, p=g.weights)
    noises = rng.standard_normal((n, g.dim))
    points = g.means[components] + np.einsum("nij,nj->ni", g.scales[components], noises)
    return points, components, noises


def marginalize(g: Gmm, s) -> Gmm:
    """Marginal of the coordinates in ``s`` (weights unchanged)."""
    idx = check_index_set(s, g.dim, "marginal index set")
    if not idx:
        raise ValueError("marginal index set must be nonempty")
    ii = np.asarray(idx)
    cov = g.covariances[:, ii[:, None], ii[None, :]]
    return Gmm(g.weights, g.means[:, ii], _refactor(cov))


def condition(g: Gmm, s, x_s, t) -> Gmm:
    """Conditional distribution over ``t`` given the ``s`` coordinates at x_s.

    Component weights are reweighted by each component's marginal density at
    x_s; the reweighting is normalized in the log domain so conditioning far
    in the tails stays finite.
    """
    si = check_index_set(s, g.dim, "conditioning set")
    ti = check_index_set(t, g.dim, "target set")
    if not si or not ti:
        raise ValueError("s and t must be nonempty")
    if set(si) & set(ti):
        raise ValueError("s and t must be disjoint")
    x_s = np.asarray(x_s, dtype=np.float64).reshape(-1)
    if x_s.shape[0] != len(si):
        raise ValueError("x_s length must match |s|")

    sa, ta = np.asarray(si), np.asarray(ti)
    cov = g.covariances
    c_ss = cov[:, sa[:, None], sa[None, :]]
    c_ts = cov[:, ta[:, None], sa[None, :]]
    c_tt = cov[:, ta[:, None], ta[None, :]]

    k = g.n_components
    cond_means = np.empty((k, len(ti)))
    cond_covs = np.empty((k, len(ti), len(ti)))
    log_resp = np.empty(k)
    marg_s = marginalize(g, si)
    comp_logpdf_s = component_log_densities(marg_s, x_s)
    for i in range(k):
        try:
            l_ss = np.linalg.cholesky(c_ss[i])
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("singular conditioning covariance") from exc
        # gain = C_ts C_ss^{-1} via two triangular solves
        half = solve_triangular(l_ss, c_ts[i].T, lower=True)  # L^{-1} C_st
        gain = solve_triangular(l_ss.T, half, lower=False).T  # C_ts C_ss^{-1}
        cond_means[i] = g.means[i][ta] + gain @ (x_s - g.means[i][sa])
        cond_covs[i] = c_tt[i] - half.T @ half
        with np.errstate(divide="ignore"):
            log_resp[i] = np.log(g.weights[i]) + comp_logpdf_s[i]

    log_resp -= np.max(log_resp)
    w = np.exp(log_resp)
    w /= w.sum()
    # symmetrize before refactoring; c_tt - half^T half is symmetric up to
    # roundoff only
    cond_covs = 0.5 * (cond_covs + np.transpose(cond_covs, (0, 2, 1)))
    return Gmm(w, cond_means, _refactor(cond_covs))


def linear_transform(g: Gmm, a: np.ndarray) -> Gmm:
    """Push the mixture through x -> a @ x; a must have full row rank."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != g.dim:
        raise ValueError(f"matrix shape {a.shape} incompatible with dimension {g.dim}")
    sv = np.linalg.svd(a, compute_uv=False)
    if a.shape[0] > a.shape[1] or sv[-1] <= 1e-12 * max(sv[0], 1.0):
        raise ValueError("transform matrix must have full row rank")
    means = g.means @ a.T
    cov = np.einsum("ij,kjl,ml->kim", a, g.covariances, a)
    cov = 0.5 * (cov + np.transpose(cov, (0, 2, 1)))
    return Gmm(g.weights, means, _refactor(cov))


def convolve_gaussian(g: Gmm, noise_var: float) -> Gmm:
    """Convolve with N(0, noise_var * I): adds noise_var to every covariance."""
    if noise_var < 0:
        raise ValueError("noise_var must be nonnegative")
    if noise_var == 0.0:
        return g
    cov = g.covariances + noise_var * np.eye(g.dim)
    return Gmm(g.weights, g.means, _refactor(cov))


# ---------------------------------------------------------------------------
# serialization: dim, weights, means, scales (row-major lower triangles)
# ---------------------------------------------------------------------------

def _fmt(x: float) -> float:
    # floats survive json round trips bit-faithfully (repr is shortest exact)
    return float(x)


def gmm_to_dict(g: Gmm) -> dict:
    d = g.dim
    r, c = np.tril_indices(d)
    return {
        "dim": d,
        "weights": [float(w) for w in g.weights],
        "means": [[float(v) for v in m] for m in g.means],
        "scales": [[float(v) for v in sc[r, c]] for sc in g.scales],
    }


def gmm_from_dict(rec: dict) -> Gmm:
    d = int(rec["dim"])
    weights = np.asarray(rec["weights"], dtype=np.float64)
    means = np.asarray(rec["means"], dtype=np.float64)
    r, c = np.tril_indices(d)
    scales = np.zeros((len(weights), d, d))
    for i, flat in enumerate(rec["scales"]):
        scales[i][r, c] = np.asarray(flat, dtype=np.float64)
    return Gmm(weights, means, scales)


def gmm_to_json(g: Gmm) -> str:
    return json.dumps(gmm_to_dict(g), indent=None, separators=(",", ":"))


def gmm_from_json(text: str) -> Gmm:
    return gmm_from_dict(json.loads(text))
