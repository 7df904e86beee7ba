"""Pathwise (reparameterized) gradients of the reverse-KL matching loss.

A task pipeline is a sequence of theta-differentiable stages applied to both
the model and the target: linear maps, coordinate selection, and Gaussian
noising.  Samples are generated as x = stages(mu_c + L_c eps) plus injected
noise, with the component index and all noises held fixed, so the gradient is
the exact total derivative of the Monte-Carlo loss -- finite differences with
common random numbers must reproduce it.

Conditioning is deliberately not a stage: conditional mixture weights depend
on theta, which breaks the fixed-component pathwise argument.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import logsumexp

from .gmm import Gmm, convolve_gaussian, linear_transform, marginalize
from .model import ThetaModel

__all__ = [
    "LinearStage",
    "NoisingStage",
    "MarginalStage",
    "apply_stages",
    "PathwiseDraws",
    "draw_pathwise",
    "pathwise_loss",
    "reverse_kl_pathwise_grad",
]


@dataclass(frozen=True)
class LinearStage:
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.asarray(self.matrix, dtype=np.float64))


@dataclass(frozen=True)
class NoisingStage:
    var: float

    def __post_init__(self):
        if self.var < 0:
            raise ValueError("noising variance must be nonnegative")


@dataclass(frozen=True)
class MarginalStage:
    indices: tuple

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))


def apply_stages(g: Gmm, stages) -> Gmm:
    """Apply a pipeline to a mixture using the exact closed-form algebra."""
    for st in stages:
        if isinstance(st, LinearStage):
            g = linear_transform(g, st.matrix)
        elif isinstance(st, NoisingStage):
            g = convolve_gaussian(g, st.var)
        elif isinstance(st, MarginalStage):
            g = marginalize(g, st.indices)
        else:
            raise TypeError(f"unsupported pipeline stage: {st!r}")
    return g


def _compile(stages, dim: int):
    """Collapse a pipeline into (M, noise_terms, V).

    M is the total linear map applied to the base sample; noise_terms is a
    list of (std, M_after) for each noising stage; V is the theta-independent
    covariance contribution sum std^2 M_after M_after^T.
    """
    m = np.eye(dim)
    noise_terms = []
    cur = dim
    for st in stages:
        if isinstance(st, LinearStage):
            a = st.matrix
            if a.shape[1] != cur:
                raise ValueError("linear stage dimension mismatch")
            m = a @ m
            noise_terms = [(s, a @ ma) for s, ma in noise_terms]
            cur = a.shape[0]
        elif isinstance(st, MarginalStage):
            sel = np.eye(cur)[list(st.indices)]
            m = sel @ m
            noise_terms = [(s, sel @ ma) for s, ma in noise_terms]
            cur = sel.shape[0]
        elif isinstance(st, NoisingStage):
            noise_terms.append((np.sqrt(st.var), np.eye(cur)))
        else:
            raise TypeError(f"pipeline stage not gradient-capable: {st!r}")
    v = np.zeros((cur, cur))
    for s, ma in noise_terms:
        v += (s * s) * (ma @ ma.T)
    return m, noise_terms, v, cur


@dataclass
class PathwiseDraws:
    """Fixed randomness for a pathwise estimate: component indices, base
    standard-normal noises, and one noise block per noising stage."""

    components: np.ndarray
    eps: np.ndarray
    etas: list


def draw_pathwise(model: ThetaModel, stages, n: int, rng: np.random.Generator) -> PathwiseDraws:
    if n < 1:
        raise ValueError("n must be >= 1")
    _, noise_terms, _, _ = _compile(stages, model.dim)
    components = rng.choice(model.n_components, size=n, p=model.weights)
    eps = rng.standard_normal((n, model.dim))
    etas = [rng.standard_normal((n, ma.shape[1])) for _, ma in noise_terms]
    return PathwiseDraws(components, eps, etas)


def _mixture_terms(weights, means, chols, y):
    """Shared mixture quantities at points y (n, d).

    Returns (logpdf (n,), resp (n, K), sol (K, n, d)) with
    sol[i] = C_i^{-1} (y - m_i).
    """
    n, d = y.shape
    chols = np.asarray(chols)
    u = y[None, :, :] - means[:, None, :]  # (K, n, d)
    z = np.linalg.solve(chols, np.transpose(u, (0, 2, 1)))  # (K, d, n)
    quad = np.sum(z * z, axis=1)  # (K, n)
    logdet = np.sum(np.log(np.einsum("kii->ki", chols)), axis=1)  # (K,)
    log_n = (-0.5 * quad - logdet[:, None] - 0.5 * d * np.log(2.0 * np.pi)).T
    sol = np.transpose(np.linalg.solve(np.transpose(chols, (0, 2, 1)), z), (0, 2, 1))
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    logpdf = logsumexp(log_n + logw, axis=1)
    resp = np.exp(log_n + logw - logpdf[:, None])
    return logpdf, resp, sol


def _push_samples(model_means, model_scales, m, noise_terms, draws):
    x = model_means[draws.components] + np.einsum(
        "nij,nj->ni", model_scales[draws.components], draws.eps
    )
    y = x @ m.T
    for (s, ma), eta in zip(noise_terms, draws.etas):
        y = y + (s * eta) @ ma.T
    return y


def _pipelined_params(model: ThetaModel, stages, params=None):
    means, scales = model.materialize(params)
    m, noise_terms, v, _ = _compile(stages, model.dim)
    pm = means @ m.T
    sigma = scales @ np.transpose(scales, (0, 2, 1))
    pc = np.einsum("ij,kjl,ml->kim", m, sigma, m) + v
    pc = 0.5 * (pc + np.transpose(pc, (0, 2, 1)))
    return means, scales, m, noise_terms, pm, pc


def pathwise_loss(model: ThetaModel, target: Gmm, stages, draws: PathwiseDraws, params=None) -> float:
    """Monte-Carlo reverse-KL loss under fixed draws (used by the
    finite-difference oracle)."""
    means, scales, m, noise_terms, pm, pc = _pipelined_params(model, stages, params)
    y = _push_samples(means, scales, m, noise_terms, draws)
    chols = np.linalg.cholesky(pc)
    logp, _, _ = _mixture_terms(model.weights, pm, chols, y)
    q_pipe = apply_stages(target, stages)
    logq, _, _ = _mixture_terms(q_pipe.weights, q_pipe.means, np.asarray(q_pipe.scales), y)
    return float(np.mean(logp - logq))


def pathwise_loss_and_grad(model: ThetaModel, target: Gmm, stages, draws: PathwiseDraws,
                           target_pipe: Gmm | None = None):
    """Loss and its total derivative w.r.t. the flat parameter vector.

    ``target_pipe`` may carry a precomputed apply_stages(target, stages) when
    the same task is evaluated repeatedly (inner SGD steps)."""
    k, d = model.n_components, model.dim
    n = draws.eps.shape[0]
    means, scales, m, noise_terms, pm, pc = _pipelined_params(model, stages)
    y = _push_samples(means, scales, m, noise_terms, draws)

    chols = np.linalg.cholesky(pc)
    logp, resp_p, sol_p = _mixture_terms(model.weights, pm, chols, y)
    q_pipe = target_pipe if target_pipe is not None else apply_stages(target, stages)
    logq, resp_q, sol_q = _mixture_terms(q_pipe.weights, q_pipe.means, np.asarray(q_pipe.scales), y)
    loss = float(np.mean(logp - logq))

    # d(logp - logq)/dy at each sample
    grad_y = -np.einsum("nk,nkd->nd", resp_p, np.transpose(sol_p, (1, 0, 2)))
    grad_y += np.einsum("nk,nkd->nd", resp_q, np.transpose(sol_q, (1, 0, 2)))

    grad_means = np.zeros((k, d))
    grad_scales = np.zeros((k, d, d))

    # path terms: y depends on theta only through the sampled component
    path_mu = grad_y @ m  # (n, d); contribution to the drawn component's mean
    np.add.at(grad_means, draws.components, path_mu / n)
    path_l = np.einsum("nd,ne->nde", path_mu, draws.eps)  # outer(M^T g, eps)
    np.add.at(grad_scales, draws.components, path_l / n)

    # direct terms through the pipelined density parameters
    a = np.einsum("nk,knd->kd", resp_p, sol_p) / n  # (K, d_out)
    grad_means += a @ m
    inv_c = np.linalg.inv(pc)  # (K, d_out, d_out); d_out is small
    outer = np.einsum("nk,knd,kne->kde", resp_p, sol_p, sol_p) / n
    g_c = 0.5 * (outer - resp_p.mean(axis=0)[:, None, None] * inv_c)
    g_sigma = np.einsum("ab,kbc,cd->kad", m.T, g_c, m)
    grad_scales += 2.0 * np.einsum("kab,kbc->kac", g_sigma, scales)

    grad_scales *= np.tril(np.ones((d, d)))
    return loss, model.flatten_grad(grad_means, grad_scales)


def reverse_kl_pathwise_grad(model: ThetaModel, target: Gmm, stages, n: int, rng: np.random.Generator,
                             target_pipe: Gmm | None = None):
    """Sample fresh draws and return (loss, gradient)."""
    draws = draw_pathwise(model, stages, n, rng)
    return pathwise_loss_and_grad(model, target, stages, draws, target_pipe=target_pipe)
