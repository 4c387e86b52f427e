"""Flat, unconstrained parameterisation of the model state.

Every constrained quantity maps through a smooth bijection: variances,
lengthscales and noise through ``log``, covariance factors through their
lower triangle with a log diagonal. Locations and means pass through
unchanged. The layout is an ordered list of named spans so gradients and
diagnostics can always be attributed to a parameter group.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import HierarchicalKernel, StationaryKernel
from .latent import InducingState, LatentPosterior
from .model import ModelState


@dataclass(frozen=True)
class Span:
    name: str
    shape: tuple
    start: int
    stop: int

    @property
    def size(self) -> int:
        return self.stop - self.start


class ParamLayout:
    """Named spans of one flat vector, derived from a template state."""

    def __init__(self, template: ModelState):
        self._flat = template.is_flat
        self._per_output_noise = template.noise_variance.ndim == 1
        shapes: list[tuple[str, tuple]] = []
        hk = template.hier_kernel
        v = hk.input_dim
        q = template.latent_dim
        d = template.n_outputs
        ind = template.inducing
        if not self._flat:
            shapes.append(("log_shared_variance", (1,)))
            shapes.append(("log_shared_lengthscales", (v,)))
        shapes.append(("log_replica_variance", (1,)))
        shapes.append(("log_replica_lengthscales", (v,)))
        shapes.append(("log_latent_kernel_variance", (1,)))
        shapes.append(("log_latent_kernel_lengthscales", (q,)))
        shapes.append(("latent_mean", (d, q)))
        shapes.append(("latent_log_variance", (d, q)))
        for r, block in enumerate(ind.z_input):
            shapes.append((f"inducing_inputs_{r}", block.shape))
        shapes.append(("inducing_latents", (ind.m_h, q)))
        shapes.append(("inducing_mean", (ind.m_x, ind.m_h)))
        shapes.append(("cov_latent_offdiag", (ind.m_h * (ind.m_h - 1) // 2,)))
        shapes.append(("cov_latent_log_diag", (ind.m_h,)))
        shapes.append(("cov_input_offdiag", (ind.m_x * (ind.m_x - 1) // 2,)))
        shapes.append(("cov_input_log_diag", (ind.m_x,)))
        shapes.append(("log_noise_variance", (d,) if self._per_output_noise else (1,)))

        spans = []
        offset = 0
        for name, shape in shapes:
            size = int(np.prod(shape, dtype=int))
            spans.append(Span(name=name, shape=shape, start=offset, stop=offset + size))
            offset += size
        self.spans: tuple[Span, ...] = tuple(spans)
        self.size = offset
        self._by_name = {s.name: s for s in self.spans}

    def span(self, name: str) -> Span:
        return self._by_name[name]

    def span_of_index(self, index: int) -> str:
        for s in self.spans:
            if s.start <= index < s.stop:
                return s.name
        raise IndexError(index)

    def split(self, theta: np.ndarray) -> dict[str, np.ndarray]:
        if theta.shape != (self.size,):
            raise ValueError(f"expected a vector of length {self.size}, got {theta.shape}")
        return {s.name: theta[s.start : s.stop].reshape(s.shape) for s in self.spans}

    def join(self, arrays: dict[str, np.ndarray]) -> np.ndarray:
        theta = np.empty(self.size)
        for s in self.spans:
            theta[s.start : s.stop] = np.reshape(arrays[s.name], -1)
        return theta

    def mask_for(self, names) -> np.ndarray:
        """0/1 mask selecting the given spans (prefix match on inducing inputs)."""
        mask = np.zeros(self.size)
        for name in names:
            matched = [s for s in self.spans if s.name == name or s.name.startswith(name)]
            if not matched:
                raise KeyError(f"no parameter span named {name!r}")
            for s in matched:
                mask[s.start : s.stop] = 1.0
        return mask

    # -- state <-> vector ---------------------------------------------------

    def pack(self, state: ModelState) -> np.ndarray:
        arrays: dict[str, np.ndarray] = {}
        hk = state.hier_kernel
        if not self._flat:
            arrays["log_shared_variance"] = np.log([hk.shared.variance])
            arrays["log_shared_lengthscales"] = np.log(hk.shared.lengthscales)
        arrays["log_replica_variance"] = np.log([hk.replica.variance])
        arrays["log_replica_lengthscales"] = np.log(hk.replica.lengthscales)
        arrays["log_latent_kernel_variance"] = np.log([state.latent_kernel.variance])
        arrays["log_latent_kernel_lengthscales"] = np.log(state.latent_kernel.lengthscales)
        arrays["latent_mean"] = state.latent_posterior.means
        arrays["latent_log_variance"] = np.log(state.latent_posterior.variances)
        for r, block in enumerate(state.inducing.z_input):
            arrays[f"inducing_inputs_{r}"] = block
        arrays["inducing_latents"] = state.inducing.z_latent
        arrays["inducing_mean"] = state.inducing.mean
        for side, chol in (("latent", state.inducing.cov_latent_chol), ("input", state.inducing.cov_input_chol)):
            n = chol.shape[0]
            rows, cols = np.tril_indices(n, k=-1)
            arrays[f"cov_{side}_offdiag"] = chol[rows, cols]
            arrays[f"cov_{side}_log_diag"] = np.log(np.diag(chol))
        arrays["log_noise_variance"] = np.log(np.atleast_1d(state.noise_variance))
        return self.join(arrays)

    def unpack(self, theta: np.ndarray, template: ModelState) -> ModelState:
        arrays = self.split(np.asarray(theta, float))
        hk = template.hier_kernel
        shared = None
        if not self._flat:
            shared = StationaryKernel(
                family=hk.shared.family,
                variance=float(np.exp(arrays["log_shared_variance"][0])),
                lengthscales=np.exp(arrays["log_shared_lengthscales"]),
            )
        replica = StationaryKernel(
            family=hk.replica.family,
            variance=float(np.exp(arrays["log_replica_variance"][0])),
            lengthscales=np.exp(arrays["log_replica_lengthscales"]),
        )
        latent_kernel = StationaryKernel(
            family=template.latent_kernel.family,
            variance=float(np.exp(arrays["log_latent_kernel_variance"][0])),
            lengthscales=np.exp(arrays["log_latent_kernel_lengthscales"]),
        )
        posterior = LatentPosterior(
            means=arrays["latent_mean"].copy(),
            variances=np.exp(arrays["latent_log_variance"]),
        )

        def build_chol(side: str, n: int) -> np.ndarray:
            chol = np.zeros((n, n))
            rows, cols = np.tril_indices(n, k=-1)
            chol[rows, cols] = arrays[f"cov_{side}_offdiag"]
            chol[np.diag_indices(n)] = np.exp(arrays[f"cov_{side}_log_diag"])
            return chol

        ind = template.inducing
        inducing = InducingState(
            z_input=[arrays[f"inducing_inputs_{r}"].copy() for r in range(ind.n_replicas)],
            z_latent=arrays["inducing_latents"].copy(),
            mean=arrays["inducing_mean"].copy(),
            cov_latent_chol=build_chol("latent", ind.m_h),
            cov_input_chol=build_chol("input", ind.m_x),
        )
        noise = np.exp(arrays["log_noise_variance"])
        if not self._per_output_noise:
            noise = np.asarray(noise[0])
        return ModelState(
            hier_kernel=HierarchicalKernel(shared=shared, replica=replica),
            latent_kernel=latent_kernel,
            latent_posterior=posterior,
            inducing=inducing,
            noise_variance=noise,
        )
