"""Tape-aware hyperbolic operations.

Each function records exactly one fused node whose backward rule is the
hand-derived one from :mod:`gyronet.gyro`; manifold-valued results are
projected inside the same node.  Under :func:`gyronet.engine.naive_mode` the
same call is instead composed from elementary nodes (see :mod:`gyronet.naive`),
which is only useful for measuring how much the fusion saves.

Arguments may be :class:`~gyronet.engine.Tensor` objects or plain arrays; the
result is always a Tensor.
"""

from __future__ import annotations

import numpy as np

from . import gyro, naive
from .engine import apply, data, is_naive


def project(x, c):
    if is_naive():
        return naive.project(x, c)
    xd = data(x)
    return apply(
        "project", (x,), gyro.project(xd, c), (xd,),
        lambda g, x_: (gyro.project_backward(g, x_, c),),
    )


def mobius_add(x, y, c):
    if is_naive():
        return naive.mobius_add(x, y, c)
    xd, yd = data(x), data(y)
    raw, a, b, d = gyro.mobius_add_parts(xd, yd, c)

    def vjp(g, x_, y_, a_, b_, d_, raw_):
        g = gyro.project_backward(g, raw_, c)
        return gyro.mobius_add_backward(g, x_, y_, c, saved=(a_, b_, d_))

    return apply("mobius_add", (x, y), gyro.project(raw, c), (xd, yd, a, b, d, raw), vjp)


def mobius_scalar_mul(r: float, x, c):
    if is_naive():
        return naive.mobius_scalar_mul(r, x, c)
    xd = data(x)
    raw = gyro.mobius_scalar_mul(r, xd, c)

    def vjp(g, x_, raw_):
        g = gyro.project_backward(g, raw_, c)
        return (gyro.mobius_scalar_mul_backward(g, r, x_, c)[1],)

    return apply("mobius_scalar_mul", (x,), gyro.project(raw, c), (xd, raw), vjp)


def conformal_factor(x, c):
    if is_naive():
        return naive.conformal_factor(x, c)
    xd = data(x)
    return apply(
        "conformal_factor", (x,), gyro.conformal_factor(xd, c), (xd,),
        lambda g, x_: (gyro.conformal_factor_backward(g, x_, c),),
    )


def exp0(v, c):
    if is_naive():
        return naive.exp0(v, c)
    vd = data(v)
    raw = gyro.exp0(vd, c)

    def vjp(g, v_, raw_):
        return (gyro.exp0_backward(gyro.project_backward(g, raw_, c), v_, c),)

    return apply("exp0", (v,), gyro.project(raw, c), (vd, raw), vjp)


def log0(y, c):
    if is_naive():
        return naive.log0(y, c)
    yd = data(y)
    return apply(
        "log0", (y,), gyro.log0(yd, c), (yd,),
        lambda g, y_: (gyro.log0_backward(g, y_, c),),
    )


def exp_at(x, v, c):
    if is_naive():
        return naive.exp_at(x, v, c)
    xd, vd = data(x), data(v)
    raw = gyro.exp_at(xd, vd, c)

    def vjp(g, x_, v_, raw_):
        return gyro.exp_at_backward(gyro.project_backward(g, raw_, c), x_, v_, c)

    return apply("exp_at", (x, v), gyro.project(raw, c), (xd, vd, raw), vjp)


def log_at(x, y, c):
    if is_naive():
        return naive.log_at(x, y, c)
    xd, yd = data(x), data(y)
    return apply(
        "log_at", (x, y), gyro.log_at(xd, yd, c), (xd, yd),
        lambda g, x_, y_: gyro.log_at_backward(g, x_, y_, c),
    )


def distance(x, y, c):
    if is_naive():
        return naive.distance(x, y, c)
    xd, yd = data(x), data(y)
    return apply(
        "distance", (x, y), gyro.distance(xd, yd, c), (xd, yd),
        lambda g, x_, y_: gyro.distance_backward(g, x_, y_, c),
    )


def gyration(x, y, z, c):
    if is_naive():
        return naive.gyration(x, y, z, c)
    xd, yd, zd = data(x), data(y), data(z)
    return apply(
        "gyration", (x, y, z), gyro.gyration(xd, yd, zd, c), (xd, yd, zd),
        lambda g, *s: gyro.gyration_backward(g, *s, c),
    )


def parallel_transport(x, y, v, c):
    if is_naive():
        return naive.parallel_transport(x, y, v, c)
    xd, yd, vd = data(x), data(y), data(v)
    return apply(
        "parallel_transport", (x, y, v), gyro.parallel_transport(xd, yd, vd, c), (xd, yd, vd),
        lambda g, *s: gyro.parallel_transport_backward(g, *s, c),
    )


def mlr_scores(x, Z, r, c):
    if is_naive():
        return naive.mlr_scores(x, Z, r, c)
    xd, Zd, rd = data(x), data(Z), data(r)
    v, parts = gyro._mlr_parts(xd, Zd, rd, c)
    keys = tuple(parts)

    def vjp(g, x_, Z_, r_, *held):
        return gyro.mlr_scores_backward(g, x_, Z_, r_, c, dict(zip(keys, held)))

    return apply("mlr_scores", (x, Z, r), v, (xd, Zd, rd, *parts.values()), vjp)


def fc(x, Z, r, c):
    """Poincare fully connected layer as a single node."""
    if is_naive():
        return naive.fc(x, Z, r, c)
    xd, Zd, rd = data(x), data(Z), data(r)
    v, parts = gyro._mlr_parts(xd, Zd, rd, c)
    raw, w, s = gyro._fc_tail(v, c)
    sc = np.sqrt(c)
    keys = tuple(parts)

    def vjp(g, x_, Z_, r_, raw_, v_, w_, s_, *held):
        g = gyro.project_backward(g, raw_, c)
        den = 1.0 + s_
        gw = g / den - c * np.sum(g * w_, axis=-1, keepdims=True) * w_ / (s_ * den * den)
        gv = gw * np.cosh(sc * v_)
        return gyro.mlr_scores_backward(gv, x_, Z_, r_, c, dict(zip(keys, held)))

    saved = (xd, Zd, rd, raw, v, w, s, *parts.values())
    return apply("fc", (x, Z, r), gyro.project(raw, c), saved, vjp)


def midpoint(x, c):
    """Midpoint over axis -2 (the point axis)."""
    if is_naive():
        return naive.midpoint(x, c)
    xd = data(x)
    return apply(
        "midpoint", (x,), gyro.midpoint(xd, c), (xd,),
        lambda g, x_: (gyro.midpoint_backward(g, x_, c),),
    )


def relu_p(x, c):
    """ReLU applied in the tangent space at the origin."""
    if is_naive():
        return naive.relu_p(x, c)
    xd = data(x)
    t = gyro.log0(xd, c)
    t_pos = np.maximum(t, 0.0)
    raw = gyro.exp0(t_pos, c)

    def vjp(g, x_, t_, t_pos_, raw_):
        g = gyro.exp0_backward(gyro.project_backward(g, raw_, c), t_pos_, c)
        return (gyro.log0_backward(np.where(t_ > 0, g, 0.0), x_, c),)

    return apply("relu_p", (x,), gyro.project(raw, c), (xd, t, t_pos, raw), vjp)


def unfold(x, kernel: int, stride: int = 1, padding: int = 0, scale: float = 1.0):
    """Gather ``kernel x kernel`` patches of a ``(B, H, W, C)`` array into the last axis.

    Taps are laid out row-major with channels innermost; padding is zeros,
    which is the image of the ball origin under ``log0``.  The result is
    multiplied by ``scale``.
    """
    xd = data(x)
    B, H, W, C = xd.shape
    Ho = (H + 2 * padding - kernel) // stride + 1
    Wo = (W + 2 * padding - kernel) // stride + 1
    xp = np.pad(xd, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    out = np.empty((B, Ho, Wo, kernel * kernel * C))
    for i in range(kernel):
        for j in range(kernel):
            k = (i * kernel + j) * C
            out[..., k:k + C] = xp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :]
    if scale != 1.0:
        out *= scale

    def vjp(g):
        gp = np.zeros((B, H + 2 * padding, W + 2 * padding, C))
        for i in range(kernel):
            for j in range(kernel):
                k = (i * kernel + j) * C
                gp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :] += g[..., k:k + C]
        gp = gp[:, padding:padding + H, padding:padding + W, :]
        return (gp * scale if scale != 1.0 else gp,)

    return apply("unfold", (x,), out, (), vjp)
