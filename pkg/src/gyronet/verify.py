"""Reproducibility harness: gradient certification, norm sweep, benchmarks.

Every entry point returns a list of row dicts; :func:`write_csv` renders them.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import engine as E
from . import gyro, ops
from .layers import BnState, ConvSpec, FcParams, batchnorm, beta_concat, conv2d, frechet_mean
from .layers import relu_p, residual_block
from .models import InitScheme, identity_init, normal_init

CURVATURES = (1.0, 0.1, 0.01)
TOL_PRIMITIVE = 1e-5
TOL_LAYER = 1e-4
#: Sampled points stay within this fraction of the ball radius.
INTERIOR = 0.7


@dataclass
class GradRow:
    op: str
    slot: str
    c: float
    dim: int
    max_rel_err: float
    tol: float
    passed: bool
    samples: int


def rel_inf_error(manual, reference) -> float:
    """``||manual - reference||_inf / max(1, ||reference||_inf)``."""
    manual, reference = np.asarray(manual), np.asarray(reference)
    diff = np.max(np.abs(manual - reference), initial=0.0)
    return float(diff / max(1.0, np.max(np.abs(reference), initial=0.0)))


def ball_points(rng, shape, c, radius=INTERIOR):
    """Points with norm uniform in ``[0, radius / sqrt(c)]`` and uniform direction."""
    d = rng.normal(size=shape)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    r = rng.uniform(0.0, radius, size=shape[:-1] + (1,)) / math.sqrt(c)
    return d * r


def tangent_vectors(rng, shape, c, scale=1.0):
    return rng.normal(size=shape) * scale / math.sqrt(c)


def _fd_vjp(f: Callable, args: dict, slot: str, u: np.ndarray, h: float) -> np.ndarray:
    def g(v):
        return f({**args, slot: v})

    jac = E.finite_difference_jacobian(g, args[slot], h)
    return (u.ravel() @ jac).reshape(np.shape(args[slot]))


# --------------------------------------------------------------------------
# cases: (name, sampler(rng, c, dim) -> args, forward(args), manual(u, args) -> grads)


def _primitive_cases():
    P = ball_points
    T = tangent_vectors

    def exterior(rng, shape, c):
        d = rng.normal(size=shape)
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        return d * rng.uniform(1.05, 2.0) / math.sqrt(c)

    return [
        ("mobius_add", lambda r, c, n: {"x": P(r, (n,), c), "y": P(r, (n,), c)},
         lambda a, c: gyro.mobius_add(a["x"], a["y"], c),
         lambda u, a, c: dict(zip("xy", gyro.mobius_add_backward(u, a["x"], a["y"], c)))),
        ("exp0", lambda r, c, n: {"v": T(r, (n,), c)},
         lambda a, c: gyro.exp0(a["v"], c),
         lambda u, a, c: {"v": gyro.exp0_backward(u, a["v"], c)}),
        ("log0", lambda r, c, n: {"y": P(r, (n,), c)},
         lambda a, c: gyro.log0(a["y"], c),
         lambda u, a, c: {"y": gyro.log0_backward(u, a["y"], c)}),
        ("exp_at", lambda r, c, n: {"x": P(r, (n,), c), "v": T(r, (n,), c, 0.5)},
         lambda a, c: gyro.exp_at(a["x"], a["v"], c),
         lambda u, a, c: dict(zip("xv", gyro.exp_at_backward(u, a["x"], a["v"], c)))),
        ("log_at", lambda r, c, n: {"x": P(r, (n,), c), "y": P(r, (n,), c)},
         lambda a, c: gyro.log_at(a["x"], a["y"], c),
         lambda u, a, c: dict(zip("xy", gyro.log_at_backward(u, a["x"], a["y"], c)))),
        ("conformal_factor", lambda r, c, n: {"x": P(r, (n,), c)},
         lambda a, c: gyro.conformal_factor(a["x"], c),
         lambda u, a, c: {"x": gyro.conformal_factor_backward(u, a["x"], c)}),
        ("project", lambda r, c, n: {"x": P(r, (n,), c)},
         lambda a, c: gyro.project(a["x"], c),
         lambda u, a, c: {"x": gyro.project_backward(u, a["x"], c)}),
        ("project_exterior", lambda r, c, n: {"x": exterior(r, (n,), c)},
         lambda a, c: gyro.project(a["x"], c),
         lambda u, a, c: {"x": gyro.project_backward(u, a["x"], c)}),
        ("mobius_scalar_mul",
         lambda r, c, n: {"r": np.array(r.uniform(-2.0, 2.0)), "x": P(r, (n,), c, 0.5)},
         lambda a, c: gyro.mobius_scalar_mul(a["r"], a["x"], c),
         lambda u, a, c: dict(zip("rx", gyro.mobius_scalar_mul_backward(u, a["r"], a["x"], c)))),
        ("distance", lambda r, c, n: {"x": P(r, (n,), c), "y": P(r, (n,), c)},
         lambda a, c: gyro.distance(a["x"], a["y"], c),
         lambda u, a, c: dict(zip("xy", gyro.distance_backward(u, a["x"], a["y"], c)))),
        ("gyration",
         lambda r, c, n: {"x": P(r, (n,), c), "y": P(r, (n,), c), "z": T(r, (n,), c)},
         lambda a, c: gyro.gyration(a["x"], a["y"], a["z"], c),
         lambda u, a, c: dict(zip("xyz", gyro.gyration_backward(u, a["x"], a["y"], a["z"], c)))),
        ("parallel_transport",
         lambda r, c, n: {"x": P(r, (n,), c), "y": P(r, (n,), c), "v": T(r, (n,), c)},
         lambda a, c: gyro.parallel_transport(a["x"], a["y"], a["v"], c),
         lambda u, a, c: dict(zip(
             "xyv", gyro.parallel_transport_backward(u, a["x"], a["y"], a["v"], c)))),
        ("mlr_scores",
         lambda r, c, n: {"x": P(r, (3, n), c), "Z": r.normal(size=(n, 3)),
                          "r": r.normal(size=3) * 0.3},
         lambda a, c: gyro.mlr_scores(a["x"], a["Z"], a["r"], c),
         lambda u, a, c: dict(zip(("x", "Z", "r"),
                                  gyro.mlr_scores_backward(u, a["x"], a["Z"], a["r"], c)))),
        ("fc",
         lambda r, c, n: {"x": P(r, (3, n), c), "Z": r.normal(size=(n, 4)) * 0.5,
                          "r": r.normal(size=4) * 0.3},
         lambda a, c: gyro.fc_forward(a["x"], a["Z"], a["r"], c),
         lambda u, a, c: dict(zip(("x", "Z", "r"),
                                  gyro.fc_backward(u, a["x"], a["Z"], a["r"], c)))),
        ("midpoint", lambda r, c, n: {"x": P(r, (5, n), c)},
         lambda a, c: gyro.midpoint(a["x"], c),
         lambda u, a, c: {"x": gyro.midpoint_backward(u, a["x"], c)}),
    ]


def _tape_manual(forward):
    """Gradients of a tape-recorded function, as a ``manual(u, args, c)`` callable."""

    def manual(u, args, c):
        tensors = {k: E.Tensor(v, requires_grad=True) for k, v in args.items()}
        with E.Tape() as tape:
            out = forward(tensors, c)
        grads = tape.gradient(out, list(tensors.values()), seed=u)
        return dict(zip(tensors, grads))

    return manual


def _layer_cases():
    P = ball_points

    def concat_fwd(a, c):
        return beta_concat([a["a"], a["b"]], c)

    def conv_fwd(a, c):
        spec = ConvSpec(3, a["x"].shape[-1], 3, 2, 1)
        return conv2d(a["x"], spec, FcParams(a["Z"], a["r"]), c)

    def bn_fwd(a, c):
        return batchnorm(a["x"], BnState(a["bias"], a["gamma"]), c, "midpoint")

    def block_fwd(a, c):
        C = a["x"].shape[-1]
        spec = ConvSpec(3, C, C, 1, 1)
        return residual_block(
            a["x"], FcParams(a["Z1"], a["r1"]), FcParams(a["Z2"], a["r2"]),
            BnState(np.zeros(C)), BnState(np.zeros(C)), spec, c,
        )

    def roundtrip_fwd(a, c):
        return ops.exp_at(a["x"], ops.log_at(a["x"], a["y"], c), c)

    def relu_fwd(a, c):
        return relu_p(a["x"], c)

    def tape_fwd(fn):
        return lambda a, c: E.data(fn({k: E.Tensor(v) for k, v in a.items()}, c))

    def small(r, shape):
        return r.normal(size=shape) / math.sqrt(2 * np.prod(shape))

    cases = [
        ("beta_concat", lambda r, c, n: {"a": P(r, (2, n), c), "b": P(r, (2, 2), c)}, concat_fwd),
        ("conv2d", lambda r, c, n: {"x": P(r, (1, 4, 4, 2), c, 0.5), "Z": small(r, (18, 3)),
                                    "r": r.normal(size=3) * 0.1}, conv_fwd),
        ("batchnorm_midpoint", lambda r, c, n: {"x": P(r, (6, n), c), "bias": r.normal(size=n) * 0.3,
                                                "gamma": r.uniform(0.5, 2.0, size=n)}, bn_fwd),
        ("residual_block", lambda r, c, n: {"x": P(r, (1, 3, 3, 2), c, 0.5),
                                            "Z1": small(r, (18, 2)), "r1": r.normal(size=2) * 0.1,
                                            "Z2": small(r, (18, 2)), "r2": r.normal(size=2) * 0.1},
         block_fwd),
        ("exp_at_log_at", lambda r, c, n: {"x": P(r, (n,), c), "y": P(r, (n,), c)}, roundtrip_fwd),
        ("relu_p", lambda r, c, n: {"x": P(r, (3, n), c)}, relu_fwd),
    ]
    return [(name, sampler, tape_fwd(fwd), _tape_manual(fwd)) for name, sampler, fwd in cases]


def _run_cases(cases, rng, curvatures, points, tol, dims, h):
    rows = []
    for name, sampler, forward, manual in cases:
        for c in curvatures:
            worst: dict[tuple, float] = {}
            for _ in range(points):
                n = int(rng.choice(dims))
                args = sampler(rng, c, n)
                out = np.asarray(forward(args, c))
                u = rng.normal(size=out.shape)
                grads = manual(u, args, c)
                for slot, value in args.items():
                    ref = _fd_vjp(lambda a: forward(a, c), args, slot, u, h)
                    got = np.broadcast_to(grads[slot], np.shape(value)) if np.ndim(
                        grads[slot]) <= np.ndim(value) else np.sum(grads[slot])
                    err = rel_inf_error(got, ref)
                    key = (slot, np.shape(value)[-1] if np.ndim(value) else 1)
                    worst[key] = max(worst.get(key, 0.0), err)
            by_slot: dict[str, list] = {}
            for (slot, dim), err in worst.items():
                by_slot.setdefault(slot, []).append((err, dim))
            for slot, errs in by_slot.items():
                err, dim = max(errs)
                rows.append(GradRow(name, slot, c, dim, err, tol, err <= tol, points))
    return rows


def gradcheck_primitives(seed=0, tol=TOL_PRIMITIVE, points=100, curvatures=CURVATURES,
                         dims=(2, 3, 5, 8), h=1e-6, ops_filter=None) -> list[GradRow]:
    rng = np.random.default_rng(seed)
    cases = [c for c in _primitive_cases() if ops_filter is None or c[0] in ops_filter]
    return _run_cases(cases, rng, curvatures, points, tol, dims, h)


def gradcheck_layers(seed=0, tol=TOL_LAYER, points=5, curvatures=CURVATURES,
                     dims=(2, 3), h=1e-6) -> list[GradRow]:
    rng = np.random.default_rng(seed + 1)
    return _run_cases(_layer_cases(), rng, curvatures, points, tol, dims, h)


def gradcheck_all(seed=0, tol=TOL_PRIMITIVE, layer_tol=TOL_LAYER, points=100,
                  layer_points=5) -> list[GradRow]:
    """Manual backward vs central differences for every primitive and composed layer.

    The reported error for an (op, slot, curvature) is the worst over all
    sampled configurations; ``dim`` is the dimension where it occurred.
    """
    return (gradcheck_primitives(seed, tol, points)
            + gradcheck_layers(seed, layer_tol, layer_points))


# --------------------------------------------------------------------------
# norm sweep


def norm_sweep(depth=10, dim=20, init_scheme=InitScheme.IDENTITY, seed=0, c=1.0,
               batch=16) -> list[dict]:
    """Mean output norm after each layer of a stack of Poincare FC layers.

    Inputs are ``exp0`` of tangent samples from ``N(0, I / 10)``; row 0 is the
    input itself.
    """
    if depth < 1:
        raise ValueError("depth must be at least 1")
    scheme = InitScheme(init_scheme)
    rng = np.random.default_rng(seed)
    x = gyro.project(gyro.exp0(rng.normal(0.0, math.sqrt(0.1), size=(batch, dim)), c), c)
    rows = []
    for layer in range(depth + 1):
        if layer:
            p = identity_init(dim, dim) if scheme is InitScheme.IDENTITY else normal_init(dim, dim, rng)
            x = gyro.project(gyro.fc_forward(x, p.Z, p.r, c), c)
        mean = float(np.mean(np.linalg.norm(x, axis=-1)))
        rows.append({"init": scheme.value, "layer": layer, "mean_norm": mean,
                     "log_mean_norm": math.log(mean)})
    return rows


# --------------------------------------------------------------------------
# batch-norm benchmark


def median_time(fn, iters=10, warmup=2) -> float:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(iters):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _bn_step(x, bias, gamma, c, mode):
    xt, bt, gt = (E.Tensor(a, requires_grad=True) for a in (x, bias, gamma))
    with E.Tape() as tape:
        y = batchnorm(xt, BnState(bt, gt), c, mode)
        loss = E.esum(E.square(ops.log0(y, c)))
    tape.gradient(loss, [xt, bt, gt])


def bn_bench(batch_sizes=(32, 128), dims=(4, 16), iters=10, warmup=2, c=0.1,
             seed=0, spread=1.0) -> list[dict]:
    """Median timings of midpoint vs Frechet mean, alone and inside a full BN step.

    A BN step is forward plus backward through the tape.  Each config uses
    the same random batch for every method.  Points are ``exp0`` of Gaussian
    tangent vectors with expected norm about ``spread / sqrt(c)``.
    """
    if iters < 1:
        raise ValueError("iters must be positive")
    rng = np.random.default_rng(seed)
    rows = []
    for batch in batch_sizes:
        for dim in dims:
            x = gyro.exp0(rng.normal(0.0, spread / math.sqrt(c * dim), size=(batch, dim)), c)
            x = gyro.project(x, c)
            bias = rng.normal(0.0, 0.1, size=dim)
            gamma = np.ones(dim)
            info: dict = {}
            mid = gyro.midpoint(x, c)
            fre = E.data(frechet_mean(x, c, strict=False, info=info))
            dist = float(gyro.distance(mid, fre, c))
            its, ok = info["iterations"], info["converged"]
            timings = {
                "midpoint": median_time(lambda: gyro.midpoint(x, c), iters, warmup),
                "frechet": median_time(lambda: frechet_mean(x, c, strict=False), iters, warmup),
                "bn_midpoint": median_time(lambda: _bn_step(x, bias, gamma, c, "midpoint"),
                                           iters, warmup),
                "bn_frechet": median_time(lambda: _bn_step(x, bias, gamma, c, "frechet"),
                                          iters, warmup),
            }
            for method, seconds in timings.items():
                rows.append({
                    "method": method, "batch": batch, "dim": dim,
                    "iterations": 1 if "midpoint" in method else its,
                    "median_seconds": seconds, "repetitions": iters,
                    "distance_midpoint_frechet": dist,
                    "converged": True if "midpoint" in method else ok,
                })
    return rows


# --------------------------------------------------------------------------
# tape size


def residual_block_tape(naive: bool, batch=4, size=8, channels=4, c=0.1, seed=0):
    """Record one forward+backward of a residual block; return the tape."""
    rng = np.random.default_rng(seed)
    spec = ConvSpec(3, channels, channels, 1, 1)
    x = E.Tensor(ball_points(rng, (batch, size, size, channels), c, 0.5), requires_grad=True)
    p1 = normal_init(spec.fan_in, channels, rng)
    p2 = normal_init(spec.fan_in, channels, rng)
    params = [E.Tensor(a, requires_grad=True) for a in (p1.Z, p1.r, p2.Z, p2.r)]
    bns = [BnState(E.Tensor(np.zeros(channels), requires_grad=True),
                   E.Tensor(np.ones(channels), requires_grad=True)) for _ in range(2)]
    with E.naive_mode(naive), E.Tape() as tape:
        y = residual_block(x, FcParams(*params[:2]), FcParams(*params[2:]), bns[0], bns[1],
                           spec, c)
        loss = E.esum(E.square(y))
    tape.gradient(loss, [x, *params])
    return tape


def tape_size_bench(batch=4, size=8, channels=4, c=0.1, seed=0) -> list[dict]:
    rows = []
    for mode in ("fused", "naive"):
        tape = residual_block_tape(mode == "naive", batch, size, channels, c, seed)
        rows.append({"mode": mode, "nodes": len(tape), "saved_bytes": tape.saved_bytes()})
    fused, naive = rows
    for row in rows:
        row["node_ratio"] = row["nodes"] / naive["nodes"]
        row["byte_ratio"] = row["saved_bytes"] / naive["saved_bytes"]
    return rows


# --------------------------------------------------------------------------


def write_csv(rows, out=None) -> str:
    """Render rows (dicts or dataclasses) as CSV; also write to ``out`` if given."""
    rows = [asdict(r) if not isinstance(r, dict) else r for r in rows]
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    text = buf.getvalue()
    if out is not None:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    return text
