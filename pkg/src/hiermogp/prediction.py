"""Predictive distributions, including for entirely missing replicas.

Conditioned on fixed latent coordinates, the predictive moments are exact
Gaussian algebra through the inducing posterior. Marginalising the latent
posterior is intractable, so the mixture moments are estimated by seeded
Monte Carlo over the latent coordinate of the requested output; the mixture
mean also has a closed form through the expected latent kernel row, which
the tests hold against the Monte Carlo estimate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .kernels import RBF, hier_block_cov, hier_cross_cov, latent_cov
from .kron import cholesky_jitter
from .latent import LatentPosterior, UnsupportedKernelError, psi_stats_closed_form
from .model import ModelState

log = logging.getLogger(__name__)

_NEGATIVE_VARIANCE_TOL = -1e-10


@dataclass(frozen=True)
class PredictiveMoments:
    mean: np.ndarray
    variance: np.ndarray


@dataclass(frozen=True)
class _InputSideOperators:
    """Everything about the test inputs that does not depend on the latent draw."""

    mean_base: np.ndarray  # (n, m_h): cross cov times Kx^-1 M Kh^-1
    nystrom_diag: np.ndarray  # (n,)
    smoothed_diag: np.ndarray  # (n,)
    prior_diag: np.ndarray  # (n,)
    kh_chol: np.ndarray
    cov_latent: np.ndarray


def _input_side(state: ModelState, xstar: np.ndarray, replica_tags) -> _InputSideOperators:
    ind = state.inducing
    kuu_x = hier_block_cov(state.hier_kernel, ind.z_input, ind.z_input)
    kuu_h = latent_cov(state.latent_kernel, ind.z_latent, ind.z_latent)
    factor_x = cholesky_jitter(kuu_x)
    factor_h = cholesky_jitter(kuu_h)
    cross = hier_cross_cov(state.hier_kernel, xstar, replica_tags, ind.z_input)
    kh_inv = solve_triangular(
        factor_h.lower,
        solve_triangular(factor_h.lower, np.eye(ind.m_h), lower=True),
        lower=True,
        trans="T",
    )
    w = solve_triangular(
        factor_x.lower,
        solve_triangular(factor_x.lower, ind.mean, lower=True),
        lower=True,
        trans="T",
    ) @ kh_inv  # Kx^-1 M Kh^-1
    half = solve_triangular(factor_x.lower, cross.T, lower=True)
    b = solve_triangular(factor_x.lower, half, lower=True, trans="T").T  # cross Kx^-1
    nystrom_diag = np.sum(b * cross, axis=1)
    smoothed_diag = np.sum((b @ ind.cov_input) * b, axis=1)
    prior_diag = np.full(cross.shape[0], state.hier_kernel.diag_value)
    return _InputSideOperators(
        mean_base=cross @ w,
        nystrom_diag=nystrom_diag,
        smoothed_diag=smoothed_diag,
        prior_diag=prior_diag,
        kh_chol=factor_h.lower,
        cov_latent=ind.cov_latent,
    )


def _latent_row_terms(ops: _InputSideOperators, state: ModelState, latents: np.ndarray):
    """Latent-side scalars per latent row: kernel row, Nystrom and smoothing weights."""
    rows = latent_cov(state.latent_kernel, latents, state.inducing.z_latent)  # (s, m_h)
    half = solve_triangular(ops.kh_chol, rows.T, lower=True)
    rows_inv = solve_triangular(ops.kh_chol, half, lower=True, trans="T").T  # rows @ Kh^-1
    nystrom = np.sum(rows_inv * rows, axis=1)
    smoothed = np.sum((rows_inv @ ops.cov_latent) * rows_inv, axis=1)
    return rows, nystrom, smoothed


def _clip_variance(variance: np.ndarray) -> np.ndarray:
    low = variance.min(initial=0.0)
    if low < 0.0:
        if low < _NEGATIVE_VARIANCE_TOL:
            log.warning("predictive variance dipped to %g; clipping at zero", low)
        variance = np.maximum(variance, 0.0)
    return variance


def predict_conditional(
    state: ModelState,
    xstar: np.ndarray,
    replica_tags,
    latent_point: np.ndarray,
    output: int | None = None,
    include_noise: bool = False,
    full_cov: bool = False,
):
    """Exact predictive moments for one output at a fixed latent coordinate.

    ``xstar`` rows carry replica tags that route the replica-level kernel;
    ``output`` selects the noise variance when it is per output. With
    ``full_cov`` the full covariance matrix is returned in place of the
    marginal variances.
    """
    xstar = np.atleast_2d(np.asarray(xstar, float))
    latent_point = np.asarray(latent_point, float).reshape(1, -1)
    ops = _input_side(state, xstar, replica_tags)
    rows, nystrom_h, smoothed_h = _latent_row_terms(ops, state, latent_point)
    mean = (ops.mean_base @ rows[0]).ravel()
    prior_h = state.latent_kernel.variance
    if full_cov:
        tags = np.asarray(replica_tags, int)
        kxx = _tagged_pair_cov(state, xstar, tags)
        cross = hier_cross_cov(state.hier_kernel, xstar, tags, state.inducing.z_input)
        factor_x = cholesky_jitter(hier_block_cov(state.hier_kernel, state.inducing.z_input, state.inducing.z_input))
        half = solve_triangular(factor_x.lower, cross.T, lower=True)
        b = solve_triangular(factor_x.lower, half, lower=True, trans="T").T
        cov = (
            prior_h * kxx
            - nystrom_h[0] * (b @ cross.T)
            + smoothed_h[0] * (b @ state.inducing.cov_input @ b.T)
        )
        if include_noise:
            cov = cov + state.noise_for(output if output is not None else 0) * np.eye(cov.shape[0])
        return PredictiveMoments(mean=mean, variance=cov)
    variance = (
        prior_h * ops.prior_diag
        - nystrom_h[0] * ops.nystrom_diag
        + smoothed_h[0] * ops.smoothed_diag
    )
    variance = _clip_variance(variance)
    if include_noise:
        variance = variance + state.noise_for(output if output is not None else 0)
    return PredictiveMoments(mean=mean, variance=variance)


def _tagged_pair_cov(state: ModelState, points: np.ndarray, tags: np.ndarray) -> np.ndarray:
    """Input-kernel covariance between tagged points, keeping their order."""
    from .kernels import eval_stationary

    hier = state.hier_kernel
    same = tags[:, None] == tags[None, :]
    cov = same * eval_stationary(hier.replica, points, points)
    if hier.shared is not None:
        cov = cov + eval_stationary(hier.shared, points, points)
    return cov


def predict_marginal(
    state: ModelState,
    xstar: np.ndarray,
    replica_tags,
    output: int,
    mc_samples: int = 2000,
    seed: int = 0,
    include_noise: bool = True,
) -> PredictiveMoments:
    """Moments of the latent-posterior mixture for one output.

    The mean averages the conditional mean over draws of the output's latent
    coordinate; the variance adds the spread of the conditional means to the
    average conditional variance.
    """
    if not 0 <= output < state.n_outputs:
        raise ValueError(f"output {output} outside 0..{state.n_outputs - 1}")
    xstar = np.atleast_2d(np.asarray(xstar, float))
    ops = _input_side(state, xstar, replica_tags)
    rng = np.random.default_rng(seed)
    mu = state.latent_posterior.means[output]
    std = np.sqrt(state.latent_posterior.variances[output])
    draws = mu + std * rng.standard_normal((mc_samples, mu.shape[0]))
    rows, nystrom_h, smoothed_h = _latent_row_terms(ops, state, draws)
    means = ops.mean_base @ rows.T  # (n, samples)
    prior_h = state.latent_kernel.variance
    cond_var = (
        prior_h * ops.prior_diag[:, None]
        - ops.nystrom_diag[:, None] * nystrom_h[None, :]
        + ops.smoothed_diag[:, None] * smoothed_h[None, :]
    )
    mean = means.mean(axis=1)
    variance = cond_var.mean(axis=1) + means.var(axis=1)
    variance = _clip_variance(variance)
    if include_noise:
        variance = variance + state.noise_for(output)
    return PredictiveMoments(mean=mean, variance=variance)


def predict_marginal_mean_closed_form(
    state: ModelState, xstar: np.ndarray, replica_tags, output: int
) -> np.ndarray:
    """Mixture mean through the expected latent kernel row (RBF only)."""
    if state.latent_kernel.family != RBF:
        raise UnsupportedKernelError("closed-form mixture mean needs an RBF latent kernel")
    xstar = np.atleast_2d(np.asarray(xstar, float))
    ops = _input_side(state, xstar, replica_tags)
    single = LatentPosterior(
        means=state.latent_posterior.means[output : output + 1],
        variances=state.latent_posterior.variances[output : output + 1],
    )
    psi = psi_stats_closed_form(single, state.latent_kernel, state.inducing.z_latent)
    return (ops.mean_base @ psi.psi1[0]).ravel()


def predict_missing_replica(
    state: ModelState,
    output: int,
    replica: int,
    grid: np.ndarray,
    mc_samples: int = 2000,
    seed: int = 0,
    include_noise: bool = True,
) -> PredictiveMoments:
    """Predict an output over a replica it was never observed in.

    Information reaches the block through the shared-level kernel and the
    inducing variables, which pool every output's view of that replica.
    """
    grid = np.atleast_2d(np.asarray(grid, float))
    if not 0 <= replica < state.n_replicas:
        raise ValueError(f"replica {replica} outside 0..{state.n_replicas - 1}")
    tags = np.full(grid.shape[0], replica, dtype=int)
    return predict_marginal(
        state,
        grid,
        tags,
        output,
        mc_samples=mc_samples,
        seed=seed,
        include_noise=include_noise,
    )
