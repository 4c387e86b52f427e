"""Builders for random tiny model states and datasets used across tests."""

import numpy as np

from hiermogp.kernels import MATERN32, RBF, HierarchicalKernel, StationaryKernel
from hiermogp.latent import InducingState, LatentPosterior
from hiermogp.model import ModelState


def random_chol(rng, n, scale=0.5):
    b = rng.standard_normal((n, n)) * scale
    return np.linalg.cholesky(b @ b.T + np.eye(n))


def random_state(
    rng,
    n_outputs=2,
    n_replicas=2,
    m_per_replica=2,
    m_latent=2,
    latent_dim=2,
    input_dim=1,
    flat=False,
    per_output_noise=True,
    input_family=MATERN32,
    latent_var_scale=1.0,
    mean_scale=0.5,
):
    shared = None
    if not flat:
        shared = StationaryKernel(
            input_family, rng.uniform(0.1, 0.5), rng.uniform(0.6, 1.5, size=input_dim)
        )
    replica = StationaryKernel(
        input_family, rng.uniform(0.5, 1.5), rng.uniform(0.6, 1.5, size=input_dim)
    )
    latent_kernel = StationaryKernel(
        RBF, rng.uniform(0.5, 1.5), rng.uniform(0.6, 1.5, size=latent_dim)
    )
    posterior = LatentPosterior(
        means=rng.standard_normal((n_outputs, latent_dim)),
        variances=rng.uniform(0.05, 0.5, size=(n_outputs, latent_dim)) * latent_var_scale,
    )
    m_x = m_per_replica * n_replicas
    inducing = InducingState(
        z_input=[rng.uniform(size=(m_per_replica, input_dim)) for _ in range(n_replicas)],
        z_latent=rng.standard_normal((m_latent, latent_dim)),
        mean=mean_scale * rng.standard_normal((m_x, m_latent)),
        cov_latent_chol=random_chol(rng, m_latent),
        cov_input_chol=random_chol(rng, m_x),
    )
    if per_output_noise:
        noise = rng.uniform(0.05, 0.3, size=n_outputs)
    else:
        noise = np.asarray(rng.uniform(0.05, 0.3))
    return ModelState(
        hier_kernel=HierarchicalKernel(shared=shared, replica=replica),
        latent_kernel=latent_kernel,
        latent_posterior=posterior,
        inducing=inducing,
        noise_variance=noise,
    )


def random_shared_data(rng, state, n_per_replica=3):
    blocks = [
        rng.uniform(size=(n_per_replica, state.input_dim)) for _ in range(state.n_replicas)
    ]
    n_points = n_per_replica * state.n_replicas
    y = rng.standard_normal(state.n_outputs * n_points)
    return blocks, y


def random_per_output_data(rng, state, n_per_replica=3, ragged=False):
    x = []
    y = []
    for _ in range(state.n_outputs):
        counts = [
            int(rng.integers(1, n_per_replica + 1)) if ragged else n_per_replica
            for _ in range(state.n_replicas)
        ]
        blocks = [rng.uniform(size=(c, state.input_dim)) for c in counts]
        x.append(blocks)
        y.append(rng.standard_normal(sum(counts)))
    return x, y
