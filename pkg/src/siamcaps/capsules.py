"""Capsule primitives: squash, routing-by-agreement, capsule layers,
concrete dropout.

A capsule's output is a pose vector; routing decides how much each lower
capsule's prediction contributes to each parent by iterating softmaxed log
priors updated with prediction/output dot products.
"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .layers import Conv2dParams, conv2d_init, conv2d_forward
from .rng import derive_seed

log = logging.getLogger(__name__)

EPS_SQ = 1e-9


def squash(s: Tensor, axis: int = -1) -> Tensor:
    """Shrink s along axis to norm ||s||^2/(1+||s||^2), direction preserved.

    Written as s * sqrt(n2 + eps^2)/(1 + n2) so the zero vector maps to zero
    exactly and the output norm matches the analytic value to ~1e-16 even at
    small norms (a naive ||s||/(||s||+eps) guard costs ~1e-10 at ||s||=0.1).
    """
    n2 = ad.sum_(ad.square(s), axis=axis, keepdims=True)
    norm = ad.sqrt(ad.add_scalar(n2, EPS_SQ * EPS_SQ))
    return ad.mul(s, ad.div(norm, ad.add_scalar(n2, 1.0)))


class RoutingState:
    """Final log priors and couplings of one routing pass.

    c_history holds the coupling array after each softmax (detached), so
    invariants like row-sums and agreement monotonicity can be audited.
    """

    def __init__(self, b: np.ndarray, c: np.ndarray, iterations: int,
                 c_history: list):
        self.b = b
        self.c = c
        self.iterations = iterations
        self.c_history = c_history


def _route_activation(kind: str, s: Tensor) -> Tensor:
    if kind == "squash":
        return squash(s, axis=-1)
    if kind == "tanh":
        return ad.tanh(s)
    raise ValueError(f"unknown activation kind {kind!r}")


def dynamic_route(u_hat: Tensor, iterations: int, activation_kind: str,
                  detach_routing: bool = False):
    """Route predictions u_hat [N, n_lower, n_upper, d] to parent capsules.

    Log priors start at zero; each iteration softmaxes them over the parent
    axis, forms the coupled sum s_j, activates it, and (except after the
    last iteration) adds the agreement dot product v_j . u_hat_ij back onto
    the priors.  Returns (v [N, n_upper, d], RoutingState).

    With detach_routing the couplings are treated as constants: gradients
    flow only through the coupled sum, not through the softmax chain.
    """
    if iterations < 1:
        raise ValueError(f"routing iterations must be >= 1, got {iterations}")
    if u_hat.data.ndim != 4:
        raise ShapeError(f"u_hat must be rank 4 [N, lower, upper, d], got "
                         f"{list(u_hat.shape)}")
    n, n_lower, n_upper, d = u_hat.shape
    c_history: list[np.ndarray] = []

    if detach_routing:
        b = np.zeros((n, n_lower, n_upper))
        uh = u_hat.data
        c_np = None
        v = None
        for it in range(iterations):
            bs = b - b.max(axis=2, keepdims=True)
            e = np.exp(bs)
            c_np = e / e.sum(axis=2, keepdims=True)
            c_history.append(c_np.copy())
            c = Tensor(c_np.reshape(n, n_lower, n_upper, 1))
            s = ad.sum_(ad.mul(c, u_hat), axis=1)
            v = _route_activation(activation_kind, s)
            if it < iterations - 1:
                b = b + (v.data[:, None, :, :] * uh).sum(axis=3)
        return v, RoutingState(b, c_np, iterations, c_history)

    b = ad.zeros([n, n_lower, n_upper])
    c = None
    v = None
    for it in range(iterations):
        c = ad.softmax(b, axis=2)
        c_history.append(c.data.copy())
        cc = ad.reshape(c, [n, n_lower, n_upper, 1])
        s = ad.sum_(ad.mul(cc, u_hat), axis=1)
        v = _route_activation(activation_kind, s)
        if it < iterations - 1:
            vv = ad.reshape(v, [n, 1, n_upper, d])
            agree = ad.sum_(ad.mul(vv, u_hat), axis=3)
            b = ad.add(b, agree)
    return v, RoutingState(b.data, c.data, iterations, c_history)


class CapsuleGrid:
    """Lower-capsule poses [N, n_caps, d] with their spatial layout."""

    def __init__(self, poses: Tensor, grid_h: int, grid_w: int, n_types: int):
        if poses.data.ndim != 3:
            raise ShapeError(f"poses must be rank 3, got {list(poses.shape)}")
        if poses.shape[1] != grid_h * grid_w * n_types:
            raise ShapeError(
                f"pose count {poses.shape[1]} != grid "
                f"{grid_h}x{grid_w}x{n_types}")
        self.poses = poses
        self.meta = (grid_h, grid_w, n_types)

    @property
    def n_caps(self) -> int:
        return self.poses.shape[1]

    @property
    def d(self) -> int:
        return self.poses.shape[2]


class PrimaryCapsuleParams:
    """One convolution per pose dimension, run in parallel and stacked.

    Full width is d=8 parallel 9x9 stride-3 convolutions of 256 -> 32
    channels (663,552 weights + 32 biases each, 5,308,672 parameters total);
    in_ch and n_types are configurable so tests can shrink the stack.
    """

    def __init__(self, in_ch: int = 256, n_types: int = 32, d: int = 8,
                 ksize: int = 9, stride: int = 3, seed: int = 0):
        self.in_ch = in_ch
        self.n_types = n_types
        self.d = d
        self.convs = [
            conv2d_init(in_ch, n_types, ksize, stride, 0,
                        derive_seed(seed, dim), name=f"primary/{dim}")
            for dim in range(d)
        ]

    def parameter_count(self) -> int:
        return sum(c.parameter_count() for c in self.convs)

    def named_parameters(self, prefix: str) -> list:
        out = []
        for dim, c in enumerate(self.convs):
            out.extend(c.named_parameters(f"{prefix}/{dim}"))
        return out


def primary_capsules_forward(features: Tensor,
                             params: PrimaryCapsuleParams) -> CapsuleGrid:
    """Stack per-dimension conv maps into pose vectors and squash them."""
    if features.data.ndim != 4:
        raise ShapeError(f"features must be rank 4, got "
                         f"{list(features.shape)}")
    if features.shape[1] != params.in_ch:
        raise ShapeError(f"primary capsules expect {params.in_ch} input "
                         f"channels, got {features.shape[1]}")
    n = features.shape[0]
    planes = []
    grid_h = grid_w = None
    for conv in params.convs:
        m = conv2d_forward(features, conv)  # [N, n_types, gh, gw]
        grid_h, grid_w = m.shape[2], m.shape[3]
        m = ad.transpose(m, (0, 2, 3, 1))  # [N, gh, gw, n_types]
        planes.append(ad.reshape(m, [n, grid_h * grid_w * params.n_types, 1]))
    poses = ad.concat(planes, axis=2)  # [N, n_caps, d]
    poses = squash(poses, axis=2)
    return CapsuleGrid(poses, grid_h, grid_w, params.n_types)


class CapsuleLayerParams:
    """Per-pair transformation matrices W_ij of shape [lower, upper, d_in, d_out]."""

    def __init__(self, n_lower: int, n_upper: int, d_in: int, d_out: int,
                 activation_kind: str = "tanh", seed: int = 0):
        if activation_kind not in ("squash", "tanh"):
            raise ValueError(f"unknown activation kind {activation_kind!r}")
        self.W = ad.uniform(
            [n_lower, n_upper, d_in, d_out],
            -float(np.sqrt(6.0 / (d_in + d_out))),
            float(np.sqrt(6.0 / (d_in + d_out))),
            derive_seed(seed, 3), requires_grad=True, name="face/W")
        self.activation_kind = activation_kind
        log.info("capsule layer W %s: %d parameters",
                 list(self.W.shape), self.parameter_count())

    def parameter_count(self) -> int:
        return self.W.size

    def named_parameters(self, prefix: str) -> list:
        return [(prefix + "/W", self.W)]


def capsule_layer_forward(grid: CapsuleGrid, p: CapsuleLayerParams,
                          iterations: int, detach_routing: bool = False,
                          return_state: bool = False):
    """u_hat_ij = W_ij u_i for every pair, then dynamic routing."""
    n_lower, n_upper, d_in, d_out = p.W.shape
    if grid.d != d_in:
        raise ShapeError(f"capsule layer expects pose dim {d_in}, got "
                         f"{grid.d}")
    if grid.n_caps != n_lower:
        raise ShapeError(f"capsule layer expects {n_lower} lower capsules, "
                         f"got {grid.n_caps}")
    n = grid.poses.shape[0]
    # one batched GEMM over lower capsules: [L,N,i] @ [L,i,U*o] -> [L,N,U*o]
    u_t = ad.transpose(grid.poses, (1, 0, 2))
    w_t = ad.reshape(ad.transpose(p.W, (0, 2, 1, 3)),
                     [n_lower, d_in, n_upper * d_out])
    prod = ad.reshape(ad.matmul(u_t, w_t), [n_lower, n, n_upper, d_out])
    u_hat = ad.transpose(prod, (1, 0, 2, 3))
    v, state = dynamic_route(u_hat, iterations, p.activation_kind,
                             detach_routing)
    if return_state:
        return v, state
    return v


def concrete_dropout_mask(p_caps: Tensor, u: Tensor, t: float,
                          standard_concrete: bool = False) -> Tensor:
    """Continuous dropout mask from keep probabilities p_caps and noise u.

    z = sigmoid((1/t) (log p - log(1-p)) + log u - log(1-u)); the 1/t factor
    scales only the probability logit.  standard_concrete instead divides
    the whole sum of logits by t.  p_caps is learnable; u must be clamped
    strictly inside (0, 1) by the caller.
    """
    if t <= 0:
        raise ValueError(f"temperature must be positive, got {t}")
    for nm, v in (("p", p_caps.data), ("u", u.data)):
        if np.any(v <= 0.0) or np.any(v >= 1.0):
            raise ValueError(f"{nm} must lie strictly inside (0, 1)")
    logit_p = ad.sub(ad.log(p_caps), ad.log(ad.add_scalar(ad.negate(p_caps),
                                                          1.0)))
    logit_u = np.log(u.data) - np.log1p(-u.data)
    if standard_concrete:
        z = ad.mul_scalar(ad.add(logit_p, Tensor(logit_u)), 1.0 / t)
    else:
        z = ad.add(ad.mul_scalar(logit_p, 1.0 / t), Tensor(logit_u))
    return ad.sigmoid(z)
