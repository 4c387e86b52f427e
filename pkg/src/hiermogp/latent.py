"""Variational distributions over latent coordinates and inducing values.

The posterior over latent output coordinates factorises into independent
diagonal Gaussians, one per output. The posterior over inducing values is a
Gaussian whose covariance is the Kronecker product of an output-side and an
input-side factor, which shrinks the variational parameter count from
(m_h * m_x)^2 to m_h^2 + m_x^2.

Expectations of the output kernel under the latent posterior (the psi
statistics) have closed forms for the ARD RBF family; a seeded Monte Carlo
estimator of the same quantities doubles as an independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kron
from .kernels import RBF, StationaryKernel, eval_stationary, validate_replica_blocks


class UnsupportedKernelError(ValueError):
    """Closed-form psi statistics only exist for the RBF family."""


@dataclass
class LatentPosterior:
    """Diagonal Gaussian per output over latent coordinates."""

    means: np.ndarray  # (n_outputs, latent_dim)
    variances: np.ndarray  # (n_outputs, latent_dim), strictly positive

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, float))
        self.variances = np.atleast_2d(np.asarray(self.variances, float))
        if self.means.shape != self.variances.shape:
            raise ValueError("means and variances must share a shape")
        if np.any(self.variances <= 0.0):
            raise ValueError("latent variances must be strictly positive")

    @property
    def n_outputs(self) -> int:
        return self.means.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.means.shape[1]


@dataclass
class InducingState:
    """Inducing locations and the Kronecker-factorised Gaussian over their values.

    ``mean`` is an (m_x, m_h) matrix; its column-stacking vectorisation is the
    mean of the inducing-value vector. The covariance is
    ``(cov_latent_chol @ cov_latent_chol.T) (x) (cov_input_chol @ cov_input_chol.T)``.
    """

    z_input: list  # R blocks of (m_r, v) inducing inputs
    z_latent: np.ndarray  # (m_h, latent_dim)
    mean: np.ndarray  # (m_x, m_h)
    cov_latent_chol: np.ndarray  # (m_h, m_h) lower triangular
    cov_input_chol: np.ndarray  # (m_x, m_x) lower triangular

    def __post_init__(self):
        self.z_input = [np.atleast_2d(np.asarray(b, float)) for b in self.z_input]
        validate_replica_blocks(self.z_input)
        self.z_latent = np.atleast_2d(np.asarray(self.z_latent, float))
        self.mean = np.asarray(self.mean, float)
        self.cov_latent_chol = np.asarray(self.cov_latent_chol, float)
        self.cov_input_chol = np.asarray(self.cov_input_chol, float)
        if self.mean.shape != (self.m_x, self.m_h):
            raise ValueError(f"mean must be {self.m_x}x{self.m_h}, got {self.mean.shape}")
        for name, chol, n in (
            ("cov_latent_chol", self.cov_latent_chol, self.m_h),
            ("cov_input_chol", self.cov_input_chol, self.m_x),
        ):
            if chol.shape != (n, n):
                raise ValueError(f"{name} must be {n}x{n}")
            if np.any(np.diag(chol) <= 0.0):
                raise ValueError(f"{name} needs a strictly positive diagonal")

    @property
    def n_replicas(self) -> int:
        return len(self.z_input)

    @property
    def m_x(self) -> int:
        return sum(b.shape[0] for b in self.z_input)

    @property
    def m_h(self) -> int:
        return self.z_latent.shape[0]

    @property
    def cov_latent(self) -> np.ndarray:
        return self.cov_latent_chol @ self.cov_latent_chol.T

    @property
    def cov_input(self) -> np.ndarray:
        return self.cov_input_chol @ self.cov_input_chol.T


@dataclass
class PsiStats:
    """Expected output-kernel statistics under the latent posterior.

    Everything is kept per output so both the shared-input and the
    per-output bound can be assembled from one object.
    """

    psi0: np.ndarray  # (n_outputs,) expected self covariance per output
    psi1: np.ndarray  # (n_outputs, m_h) expected cross covariance rows
    psi2: np.ndarray  # (n_outputs, m_h, m_h) expected outer products

    @property
    def psi0_total(self) -> float:
        return float(np.sum(self.psi0))

    @property
    def psi2_total(self) -> np.ndarray:
        return np.sum(self.psi2, axis=0)


def psi_stats_closed_form(
    posterior: LatentPosterior, kernel: StationaryKernel, z_latent: np.ndarray
) -> PsiStats:
    """Closed-form psi statistics for an ARD RBF output kernel.

    For each output with posterior N(mu, diag(s)) and inducing coordinates z:

    * psi0 is the kernel variance (stationarity),
    * psi1[m] integrates k(h, z_m) against the Gaussian, lengthening each
      squared lengthscale by s,
    * psi2[m, m'] integrates k(h, z_m) k(h, z_m'), which factorises into a
      fixed term in z_m - z_m' and a Gaussian in the midpoint.
    """
    if kernel.family != RBF:
        raise UnsupportedKernelError(
            f"closed-form psi statistics need an RBF kernel, got {kernel.family!r}; "
            "use psi_stats_mc instead"
        )
    z = np.atleast_2d(np.asarray(z_latent, float))
    if z.shape[1] != kernel.input_dim or posterior.latent_dim != kernel.input_dim:
        raise ValueError("latent dimension mismatch between posterior, kernel and z_latent")
    mu = posterior.means  # (d, q)
    s = posterior.variances  # (d, q)
    l2 = kernel.lengthscales**2  # (q,)
    variance = kernel.variance

    psi0 = np.full(posterior.n_outputs, variance)

    # psi1: (d, m)
    dmu = mu[:, None, :] - z[None, :, :]  # (d, m, q)
    expo1 = np.sum(dmu**2 / (l2 + s)[:, None, :], axis=2)
    norm1 = 0.5 * np.sum(np.log1p(s / l2), axis=1)  # (d,)
    psi1 = variance * np.exp(-0.5 * expo1 - norm1[:, None])

    # psi2: (d, m, m)
    zd = z[:, None, :] - z[None, :, :]  # (m, m, q)
    fixed = np.sum(zd**2 / (4.0 * l2), axis=2)  # (m, m)
    zbar = 0.5 * (z[:, None, :] + z[None, :, :])  # (m, m, q)
    dmb = mu[:, None, None, :] - zbar[None, :, :, :]  # (d, m, m, q)
    expo2 = np.sum(dmb**2 / (l2 + 2.0 * s)[:, None, None, :], axis=3)
    norm2 = 0.5 * np.sum(np.log1p(2.0 * s / l2), axis=1)  # (d,)
    psi2 = variance**2 * np.exp(-fixed[None, :, :] - expo2 - norm2[:, None, None])
    return PsiStats(psi0=psi0, psi1=psi1, psi2=psi2)


def psi_stats_mc(
    posterior: LatentPosterior,
    kernel: StationaryKernel,
    z_latent: np.ndarray,
    samples: int,
    seed: int,
) -> PsiStats:
    """Monte Carlo psi statistics; unbiased and deterministic under the seed."""
    if samples < 1:
        raise ValueError("samples must be at least 1")
    z = np.atleast_2d(np.asarray(z_latent, float))
    rng = np.random.default_rng(seed)
    d, q = posterior.means.shape
    m = z.shape[0]
    psi0 = np.zeros(d)
    psi1 = np.zeros((d, m))
    psi2 = np.zeros((d, m, m))
    std = np.sqrt(posterior.variances)
    for i in range(d):
        draws = posterior.means[i] + std[i] * rng.standard_normal((samples, q))
        rows = eval_stationary(kernel, draws, z)  # (samples, m)
        psi0[i] = kernel.variance
        psi1[i] = rows.mean(axis=0)
        psi2[i] = rows.T @ rows / samples
    return PsiStats(psi0=psi0, psi1=psi1, psi2=psi2)


def kl_latent(posterior: LatentPosterior) -> float:
    """KL divergence of the latent posterior from its standard normal prior."""
    s = posterior.variances
    mu = posterior.means
    return float(0.5 * np.sum(s + mu**2 - 1.0 - np.log(s)))


def kl_inducing_kron(state: InducingState, kuu_h: np.ndarray, kuu_x: np.ndarray) -> float:
    """KL divergence of the Kronecker inducing posterior from its prior.

    Both Gaussians factor over the output and input sides, so the divergence
    reduces to per-factor log determinants and traces plus one quadratic form
    in the mean; nothing of size (m_h * m_x)^2 is ever built.
    """
    m_h, m_x = state.m_h, state.m_x
    factor_h = kron.cholesky_jitter(np.asarray(kuu_h, float))
    factor_x = kron.cholesky_jitter(np.asarray(kuu_x, float))
    logdet_kh = kron.logdet(factor_h)
    logdet_kx = kron.logdet(factor_x)
    logdet_sh = float(2.0 * np.sum(np.log(np.diag(state.cov_latent_chol))))
    logdet_sx = float(2.0 * np.sum(np.log(np.diag(state.cov_input_chol))))
    quad = float(np.trace(state.mean.T @ kron.tri_solve(factor_x, state.mean) @ kron.tri_solve(factor_h, np.eye(m_h))))
    trace_h = float(np.trace(kron.tri_solve(factor_h, state.cov_latent)))
    trace_x = float(np.trace(kron.tri_solve(factor_x, state.cov_input)))
    return 0.5 * (
        m_x * (logdet_kh - logdet_sh)
        + m_h * (logdet_kx - logdet_sx)
        + quad
        + trace_h * trace_x
        - m_h * m_x
    )
