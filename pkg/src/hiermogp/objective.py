"""Differentiable evidence lower bound.

Builds the bound as an autodiff graph over the flat unconstrained parameter
vector, in the Kronecker-efficient form: every term factors into an
output-side piece (built from psi statistics of the latent posterior) and an
input-side piece (built from the hierarchical kernel), so nothing of size
(m_h * m_x)^2 is ever materialised. The forward value backs the public bound
evaluation; the backward pass supplies analytic gradients for training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .kernels import RBF
from .kron import choose_jitter
from .model import ElboBreakdown, ModelState
from .params import ParamLayout

_LOG_2PI = float(np.log(2.0 * np.pi))
_SQRT3 = np.sqrt(3.0)
_TINY_SQDIST = 1e-36


@dataclass
class GraphPieces:
    data_fit: ad.Node
    kl_inducing: ad.Node
    kl_latent: ad.Node
    total: ad.Node
    jitters: dict


def _gram(family: str, variance: ad.Node, lengthscales: ad.Node, x1, x2) -> ad.Node:
    x1, x2 = ad.as_node(x1), ad.as_node(x2)
    n1, v = x1.shape
    n2 = x2.shape[0]
    diff = (ad.reshape(x1, (n1, 1, v)) - ad.reshape(x2, (1, n2, v))) / lengthscales
    sq = ad.sum(diff * diff, axis=2)
    if family == RBF:
        return variance * ad.exp(-0.5 * sq)
    # Matern 3/2; the clamp keeps sqrt differentiable at coincident points,
    # where the true gradient vanishes anyway
    r = ad.sqrt(ad.maximum(sq, _TINY_SQDIST))
    return variance * ((1.0 + _SQRT3 * r) * ad.exp(-_SQRT3 * r))


def _hier_gram(hier, shared_params, replica_params, a_blocks, b_blocks) -> ad.Node:
    a_blocks = [ad.as_node(b) for b in a_blocks]
    b_blocks = [ad.as_node(b) for b in b_blocks]
    fam_f, vf, lsf = replica_params
    within = ad.block_diag([_gram(fam_f, vf, lsf, ar, br) for ar, br in zip(a_blocks, b_blocks)])
    if hier.shared is None:
        return within
    fam_g, vg, lsg = shared_params
    a_all = a_blocks[0] if len(a_blocks) == 1 else ad.concat(a_blocks, axis=0)
    b_all = b_blocks[0] if len(b_blocks) == 1 else ad.concat(b_blocks, axis=0)
    return _gram(fam_g, vg, lsg, a_all, b_all) + within


def _psi_nodes(variance, lengthscales, mu, log_s, zh):
    """Closed-form psi statistics as graph nodes (RBF output kernel only)."""
    d, q = mu.shape
    m = zh.shape[0]
    s = ad.exp(log_s)
    l2 = lengthscales * lengthscales
    ratio = s / l2  # (d, q)
    log_norm1 = 0.5 * ad.sum(ad.log(1.0 + ratio), axis=1)  # (d,)
    dmu = ad.reshape(mu, (d, 1, q)) - ad.reshape(zh, (1, m, q))
    expo1 = ad.sum(dmu * dmu / ad.reshape(l2 + s, (d, 1, q)), axis=2)
    psi1 = variance * ad.exp(-0.5 * expo1 - ad.reshape(log_norm1, (d, 1)))

    zd = ad.reshape(zh, (m, 1, q)) - ad.reshape(zh, (1, m, q))
    fixed = ad.sum(zd * zd / (4.0 * l2), axis=2)  # (m, m)
    zbar = 0.5 * (ad.reshape(zh, (m, 1, q)) + ad.reshape(zh, (1, m, q)))
    dmb = ad.reshape(mu, (d, 1, 1, q)) - ad.reshape(zbar, (1, m, m, q))
    expo2 = ad.sum(dmb * dmb / ad.reshape(l2 + 2.0 * s, (d, 1, 1, q)), axis=3)
    log_norm2 = 0.5 * ad.sum(ad.log(1.0 + 2.0 * ratio), axis=1)
    psi2 = (variance * variance) * ad.exp(
        -ad.reshape(fixed, (1, m, m)) - expo2 - ad.reshape(log_norm2, (d, 1, 1))
    )
    return psi1, psi2


def _chol_with_jitter(k: ad.Node, base_jitter: float):
    jitter = choose_jitter(k.value, base_jitter)
    if jitter > 0.0:
        k = k + jitter * np.eye(k.shape[0])
    return ad.cholesky(k), jitter


def _inverse_from_chol(lower: ad.Node) -> ad.Node:
    eye = np.eye(lower.shape[0])
    half = ad.solve_triangular(lower, eye, trans="N")
    return ad.transpose(half) @ half


def build_graph(
    theta: np.ndarray,
    layout: ParamLayout,
    template: ModelState,
    x,
    y,
    regime: str,
    base_jitter: float = 1e-6,
):
    """Assemble the bound; returns the graph pieces and leaves in layout order."""
    if regime not in ("shared", "per_output"):
        raise ValueError(f"unknown regime {regime!r}")
    if template.latent_kernel.family != RBF:
        raise ValueError("training requires an RBF kernel over latent coordinates")
    arrays = layout.split(np.asarray(theta, float))
    leaves = {name: ad.Node(value) for name, value in arrays.items()}
    flat = template.is_flat
    n_outputs = template.n_outputs
    n_replicas = template.n_replicas
    m_h = template.inducing.m_h
    m_x = template.inducing.m_x

    def scalar(name):
        return ad.reshape(leaves[name], ())

    shared_params = None
    vg = None
    if not flat:
        vg = ad.exp(scalar("log_shared_variance"))
        shared_params = (
            template.hier_kernel.shared.family,
            vg,
            ad.exp(leaves["log_shared_lengthscales"]),
        )
    vf = ad.exp(scalar("log_replica_variance"))
    replica_params = (template.hier_kernel.replica.family, vf, ad.exp(leaves["log_replica_lengthscales"]))
    vh = ad.exp(scalar("log_latent_kernel_variance"))
    lsh = ad.exp(leaves["log_latent_kernel_lengthscales"])
    mu = leaves["latent_mean"]
    log_s = leaves["latent_log_variance"]
    z_blocks = [leaves[f"inducing_inputs_{r}"] for r in range(n_replicas)]
    zh = leaves["inducing_latents"]
    m_mat = leaves["inducing_mean"]

    def cov_factor(side: str, n: int) -> ad.Node:
        strict = ad.strict_lower_embed(leaves[f"cov_{side}_offdiag"], n)
        return strict + ad.diag_embed(ad.exp(leaves[f"cov_{side}_log_diag"]))

    l_sig_h = cov_factor("latent", m_h)
    l_sig_x = cov_factor("input", m_x)
    sigma_h = l_sig_h @ ad.transpose(l_sig_h)
    sigma_x = l_sig_x @ ad.transpose(l_sig_x)
    logdet_sh = 2.0 * ad.sum(leaves["cov_latent_log_diag"])
    logdet_sx = 2.0 * ad.sum(leaves["cov_input_log_diag"])

    kuu_h = _gram(RBF, vh, lsh, zh, zh)
    kuu_x = _hier_gram(template.hier_kernel, shared_params, replica_params, z_blocks, z_blocks)
    l_h, jitter_h = _chol_with_jitter(kuu_h, base_jitter)
    l_x, jitter_x = _chol_with_jitter(kuu_x, base_jitter)
    a_h = _inverse_from_chol(l_h)
    a_x = _inverse_from_chol(l_x)
    logdet_kh = 2.0 * ad.sum(ad.log(ad.diagonal(l_h)))
    logdet_kx = 2.0 * ad.sum(ad.log(ad.diagonal(l_x)))

    # KL terms
    quad_mean = ad.trace(ad.transpose(m_mat) @ (a_x @ m_mat) @ a_h)
    kl_inducing = 0.5 * (
        m_x * (logdet_kh - logdet_sh)
        + m_h * (logdet_kx - logdet_sx)
        + quad_mean
        + ad.trace(a_h @ sigma_h) * ad.trace(a_x @ sigma_x)
        - float(m_h * m_x)
    )
    s_lat = ad.exp(log_s)
    kl_latent = 0.5 * ad.sum(s_lat + mu * mu - 1.0 - log_s)

    psi1, psi2 = _psi_nodes(vh, lsh, mu, log_s, zh)

    # shared pieces of the data-fit term
    ax_m = a_x @ m_mat
    w = ax_m @ a_h  # Kx^-1 M Kh^-1
    g_h = a_h @ sigma_h @ a_h
    g_x = a_x @ sigma_x @ a_x
    diag_amplitude = vf if flat else vf + vg  # self covariance of the input kernel

    if regime == "shared":
        blocks = [np.atleast_2d(np.asarray(b, float)) for b in x]
        if len(blocks) != n_replicas:
            raise ValueError(f"expected {n_replicas} replica blocks, got {len(blocks)}")
        y = np.asarray(y, float).ravel()
        n_points = sum(b.shape[0] for b in blocks)
        if y.size != n_outputs * n_points:
            raise ValueError(f"target vector has {y.size} entries, expected {n_outputs * n_points}")
        sigma2 = ad.exp(scalar("log_noise_variance"))
        kfu = _hier_gram(template.hier_kernel, shared_params, replica_params, blocks, z_blocks)
        phi_x = ad.transpose(kfu) @ kfu
        phi_h = ad.sum(psi2, axis=0)
        mean_grid = (kfu @ w) @ ad.transpose(psi1)  # (n_points, n_outputs)
        data_dot = ad.sum(ad.reshape(ad.transpose(mean_grid), (n_points * n_outputs,)) * y)
        quad_m = ad.trace((ad.transpose(ax_m) @ phi_x @ ax_m) @ (a_h @ phi_h @ a_h))
        quad_s = ad.trace(phi_h @ g_h) * ad.trace(phi_x @ g_x)
        corr = ad.trace(phi_h @ a_h) * ad.trace(phi_x @ a_x)
        psi0_total = vh * (float(n_outputs * n_points) * diag_amplitude)
        n_total = float(n_outputs * n_points)
        data_fit = (
            -0.5 * n_total * (_LOG_2PI + ad.log(sigma2))
            - 0.5 * float(y @ y) / sigma2
            + data_dot / sigma2
            - 0.5 * (psi0_total - corr) / sigma2
            - 0.5 * (quad_m + quad_s) / sigma2
        )
    else:
        if len(x) != n_outputs or len(y) != n_outputs:
            raise ValueError(f"per-output data must have {n_outputs} entries")
        per_output_noise = layout.span("log_noise_variance").size == n_outputs
        data_fit = None
        for d in range(n_outputs):
            blocks = [np.atleast_2d(np.asarray(b, float)) for b in x[d]]
            if len(blocks) != n_replicas:
                raise ValueError(f"output {d}: expected {n_replicas} replica blocks")
            y_d = np.asarray(y[d], float).ravel()
            n_d = sum(b.shape[0] for b in blocks)
            if y_d.size != n_d:
                raise ValueError(f"output {d}: {y_d.size} targets for {n_d} points")
            if per_output_noise:
                sigma2 = ad.exp(ad.take0(leaves["log_noise_variance"], d))
            else:
                sigma2 = ad.exp(scalar("log_noise_variance"))
            kfu_d = _hier_gram(template.hier_kernel, shared_params, replica_params, blocks, z_blocks)
            phi_x_d = ad.transpose(kfu_d) @ kfu_d
            phi_h_d = ad.take0(psi2, d)
            psi1_d = ad.reshape(ad.take0(psi1, d), (1, m_h))
            mean_d = (kfu_d @ w) @ ad.transpose(psi1_d)  # (n_d, 1)
            data_dot = ad.sum(ad.reshape(mean_d, (n_d,)) * y_d)
            quad_m = ad.trace((ad.transpose(ax_m) @ phi_x_d @ ax_m) @ (a_h @ phi_h_d @ a_h))
            quad_s = ad.trace(phi_h_d @ g_h) * ad.trace(phi_x_d @ g_x)
            corr = ad.trace(phi_h_d @ a_h) * ad.trace(phi_x_d @ a_x)
            psi0_d = vh * (float(n_d) * diag_amplitude)
            f_d = (
                -0.5 * float(n_d) * (_LOG_2PI + ad.log(sigma2))
                - 0.5 * float(y_d @ y_d) / sigma2
                + data_dot / sigma2
                - 0.5 * (psi0_d - corr) / sigma2
                - 0.5 * (quad_m + quad_s) / sigma2
            )
            data_fit = f_d if data_fit is None else data_fit + f_d

    total = data_fit - kl_inducing - kl_latent
    pieces = GraphPieces(
        data_fit=data_fit,
        kl_inducing=kl_inducing,
        kl_latent=kl_latent,
        total=total,
        jitters={"kuu_h": jitter_h, "kuu_x": jitter_x},
    )
    ordered_leaves = [leaves[s.name] for s in layout.spans]
    return pieces, ordered_leaves


def evaluate(theta, layout, template, x, y, regime, base_jitter=1e-6):
    pieces, _ = build_graph(theta, layout, template, x, y, regime, base_jitter)
    breakdown = ElboBreakdown(
        data_fit=float(pieces.data_fit.value),
        kl_inducing=float(pieces.kl_inducing.value),
        kl_latent=float(pieces.kl_latent.value),
    )
    return breakdown, pieces.jitters


def evaluate_with_grad(theta, layout, template, x, y, regime, base_jitter=1e-6):
    pieces, leaves = build_graph(theta, layout, template, x, y, regime, base_jitter)
    grads = ad.grad(pieces.total, leaves)
    flat_grad = np.concatenate([g.ravel() for g in grads]) if grads else np.zeros(0)
    breakdown = ElboBreakdown(
        data_fit=float(pieces.data_fit.value),
        kl_inducing=float(pieces.kl_inducing.value),
        kl_latent=float(pieces.kl_latent.value),
    )
    return breakdown, flat_grad, pieces.jitters
