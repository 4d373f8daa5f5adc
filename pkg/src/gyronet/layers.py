"""Poincare neural layers: FC, beta-concatenation, convolution, ReLU, batch norm, residual block.

All functions take arrays or :class:`~gyronet.engine.Tensor` objects and return
Tensors, recording fused nodes when a tape is active.  Feature maps are laid out
``(batch, height, width, channels)`` with every pixel a point of the
``channels``-dimensional ball.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as E
from . import gyro, ops
from .errors import ContractError, ConvergenceError

#: Below this batch variance the rescale step of batch norm is skipped.
MIN_VARIANCE = 1e-12


@dataclass
class FcParams:
    """Euclidean parameters of a Poincare FC layer: ``Z`` is ``(fan_in, fan_out)``."""

    Z: object
    r: object

    @property
    def fan_in(self) -> int:
        return E.data(self.Z).shape[0]

    @property
    def fan_out(self) -> int:
        return E.data(self.Z).shape[1]


@dataclass(frozen=True)
class ConvSpec:
    kernel: int
    c_in: int
    c_out: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ContractError(f"kernel size must be odd, got {self.kernel}")
        if self.stride < 1 or self.padding < 0:
            raise ContractError("stride must be >= 1 and padding >= 0")

    @property
    def fan_in(self) -> int:
        return self.kernel * self.kernel * self.c_in

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        k, s, p = self.kernel, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1


@dataclass
class BnState:
    """Learnable pair plus the statistics of the last normalized batch.

    ``bias`` lives in the tangent space at the origin and is mapped onto the
    ball with ``exp0`` before use.  ``gamma`` is a scalar or one value per
    channel.  With ``frozen`` set, ``last_mu``/``last_var`` are used instead of
    fresh batch statistics.
    """

    bias: object
    gamma: object = 1.0
    last_mu: np.ndarray | None = None
    last_var: float | None = None
    frozen: bool = False

    @classmethod
    def create(cls, channels: int, per_channel_gamma: bool = True) -> BnState:
        gamma = np.ones(channels) if per_channel_gamma else np.array(1.0)
        return cls(bias=np.zeros(channels), gamma=gamma)


def mlr_scores(x, params: FcParams, c: float):
    return ops.mlr_scores(x, params.Z, params.r, c)


def fc_forward(x, params: FcParams, c: float):
    return ops.fc(x, params.Z, params.r, c)


def beta_concat(parts, c: float):
    if not parts:
        raise ContractError("beta_concat needs at least one part")
    dims = [E.data(p).shape[-1] for p in parts]
    bn = gyro.beta_n(sum(dims))
    logs = [ops.log0(p, c) * (bn / gyro.beta_n(k)) for p, k in zip(parts, dims)]
    return ops.exp0(logs[0] if len(logs) == 1 else E.concat(logs, axis=-1), c)


def conv2d(x, spec: ConvSpec, params: FcParams, c: float):
    """Each output pixel is the FC layer applied to the beta-concatenated receptive field."""
    shape = E.data(x).shape
    if len(shape) != 4 or shape[-1] != spec.c_in:
        raise ContractError(f"expected (B, H, W, {spec.c_in}) input, got {shape}")
    if (params.fan_in, params.fan_out) != (spec.fan_in, spec.c_out):
        raise ContractError(
            f"params {params.fan_in}x{params.fan_out} do not match conv fan-in "
            f"{spec.fan_in} -> {spec.c_out}"
        )
    scale = gyro.beta_n(spec.fan_in) / gyro.beta_n(spec.c_in)
    t = ops.log0(x, c)
    patches = ops.unfold(t, spec.kernel, spec.stride, spec.padding, scale)
    return ops.fc(ops.exp0(patches, c), params.Z, params.r, c)


def relu_p(x, c: float):
    return ops.relu_p(x, c)


def poincare_midpoint(batch, c: float):
    """Midpoint of the points along axis -2."""
    if E.data(batch).shape[-2] < 1:
        raise ContractError("midpoint of an empty batch")
    return ops.midpoint(batch, c)


def frechet_mean(batch, c: float, step: float = 0.5, tol: float = 1e-6,
                 max_iter: int = 200, strict: bool = True, info: dict | None = None):
    """Riemannian gradient descent on the mean squared distance.

    Starts at the first point and iterates
    ``mu <- exp_mu(step * mean_i log_mu(x_i))`` until the Euclidean norm of the
    update falls below ``tol``.  Works on Tensors, in which case the tape
    records every iteration.  With ``strict`` a run that hits ``max_iter``
    raises :class:`ConvergenceError`; otherwise the last iterate is returned.
    ``info``, if given, receives ``iterations`` and ``converged``.
    """
    xd = E.data(batch)
    if xd.ndim != 2 or xd.shape[0] < 1:
        raise ContractError(f"frechet_mean expects a non-empty (N, n) batch, got {xd.shape}")
    mu = batch[0] if isinstance(batch, E.Tensor) else E.Tensor(xd[0])
    for it in range(1, max_iter + 1):
        update = E.mean(ops.log_at(mu, batch, c), axis=0) * step
        size = float(np.linalg.norm(update.data))
        if size < tol:
            if info is not None:
                info.update(iterations=it, converged=True)
            return mu
        mu = ops.exp_at(mu, update, c)
    if info is not None:
        info.update(iterations=max_iter, converged=False)
    if strict:
        raise ConvergenceError(
            f"Frechet mean did not converge in {max_iter} iterations (last step {size:.3g})",
            last_iterate=mu.data, iterations=max_iter,
        )
    return mu


def batchnorm(x, state: BnState, c: float, mode: str = "midpoint", **frechet_kwargs):
    """Center on the batch mean, rescale the spread to ``gamma``, move to ``exp0(bias)``.

    Every leading axis is pooled into the normalization population, so for a
    ``(B, H, W, C)`` feature map the population is all ``B*H*W`` pixels.
    """
    shape = E.data(x).shape
    C = shape[-1]
    flat = E.reshape(x, (-1, C))
    if flat.shape[0] < 2 and not state.frozen:
        raise ContractError("batch norm needs at least two points")
    if state.frozen:
        if state.last_mu is None:
            raise ContractError("frozen batch norm has no stored statistics")
        mu, var = state.last_mu, state.last_var
        var_t = var
    else:
        if mode == "midpoint":
            mu = ops.midpoint(flat, c)
        elif mode == "frechet":
            frechet_kwargs.setdefault("strict", False)
            mu = frechet_mean(flat, c, **frechet_kwargs)
        else:
            raise ContractError(f"unknown batch-norm mode {mode!r}")
        var_t = E.mean(E.square(ops.distance(flat, mu, c)))
        var = float(var_t.data)
        state.last_mu = E.data(mu).copy()
        state.last_var = var
    beta = ops.exp0(state.bias, c)
    t = ops.parallel_transport(mu, beta, ops.log_at(mu, flat, c), c)
    if var >= MIN_VARIANCE:
        t = t * E.sqrt(E.as_tensor(state.gamma) / var_t)
    return E.reshape(ops.exp_at(beta, t, c), shape)


def residual_block(x, p1: FcParams, p2: FcParams, bn1: BnState, bn2: BnState,
                   spec: ConvSpec, c: float, downsample: FcParams | None = None,
                   mode: str = "midpoint"):
    """``relu_p(shortcut(x) (+) G(x))`` with ``G = conv, bn, relu_p, conv, bn``.

    ``spec`` describes the first convolution; the second keeps the width and
    uses stride 1.  The shortcut is the identity, or a strided 1x1 Poincare
    convolution when the shape changes.
    """
    reshaping = spec.stride != 1 or spec.c_in != spec.c_out
    if reshaping and downsample is None:
        raise ContractError("a shape-changing residual block needs a downsample shortcut")
    spec2 = ConvSpec(spec.kernel, spec.c_out, spec.c_out, 1, spec.padding)
    h = conv2d(x, spec, p1, c)
    h = relu_p(batchnorm(h, bn1, c, mode), c)
    h = batchnorm(conv2d(h, spec2, p2, c), bn2, c, mode)
    if downsample is not None:
        shortcut = conv2d(x, ConvSpec(1, spec.c_in, spec.c_out, spec.stride, 0), downsample, c)
    else:
        shortcut = x
    return relu_p(ops.mobius_add(shortcut, h, c), c)


def ball_check(x, c: float, where: str = "") -> None:
    """Raise if any point of ``x`` is not strictly inside the ball."""
    xd = E.data(x)
    n2 = np.sum(xd * xd, axis=-1)
    if not np.all(np.isfinite(xd)) or np.any(c * n2 >= 1.0):
        raise FloatingPointError(f"points outside the ball {where}".strip())
