"""Initialization schemes and Poincare ResNet assembly."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field

import numpy as np

from . import engine as E
from . import gyro, ops
from .engine import debug_checks_enabled
from .errors import ContractError, NonFiniteError
from .layers import (
    BnState, ConvSpec, FcParams, ball_check, batchnorm, conv2d, relu_p, residual_block,
)


class InitScheme(str, enum.Enum):
    IDENTITY = "identity"
    NORMAL_BASELINE = "normal"


def identity_init(m: int, n: int) -> FcParams:
    """``Z = 1/2 [I_m | 0]``, ``r = 0``: the layer maps ``x`` to ``(x, 0)``."""
    if m > n:
        raise ContractError(f"identity init needs fan_in <= fan_out, got {m} > {n}")
    Z = np.zeros((m, n))
    Z[:, :m] = 0.5 * np.eye(m)
    return FcParams(Z, np.zeros(n))


def normal_init(m: int, n: int, rng: np.random.Generator) -> FcParams:
    """Entries i.i.d. ``N(0, 1 / (2 m n))``, zero offsets."""
    if m < 1 or n < 1:
        raise ContractError("layer dimensions must be positive")
    return FcParams(rng.normal(0.0, np.sqrt(1.0 / (2.0 * m * n)), size=(m, n)), np.zeros(n))


def conv_identity_init(spec: ConvSpec) -> FcParams:
    """Identity on the centre tap of the receptive field.

    The centre tap's rows hold ``1/2 [I | 0]`` rescaled by the inverse of the
    beta-concatenation factor, so small inputs pass through unchanged to first
    order.  With a 1x1 kernel this is exactly :func:`identity_init`.
    """
    if spec.c_in > spec.c_out:
        raise ContractError("centre-tap identity init needs c_in <= c_out")
    if spec.kernel == 1:
        return identity_init(spec.c_in, spec.c_out)
    gain = gyro.beta_n(spec.c_in) / gyro.beta_n(spec.fan_in)
    Z = np.zeros((spec.fan_in, spec.c_out))
    centre = (spec.kernel * spec.kernel) // 2
    rows = slice(centre * spec.c_in, (centre + 1) * spec.c_in)
    Z[rows, : spec.c_in] = 0.5 * gain * np.eye(spec.c_in)
    return FcParams(Z, np.zeros(spec.c_out))


@dataclass
class ArchSpec:
    depth: int = 20
    widths: tuple = (4, 8, 16)
    c: float = 0.1
    num_classes: int = 10
    init_scheme: InitScheme = InitScheme.IDENTITY
    blocks: tuple | None = None  # blocks per stage; overrides depth
    in_channels: int = 3
    per_channel_gamma: bool = True

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.init_scheme = InitScheme(self.init_scheme)
        if not self.c > 0:
            raise ContractError("curvature must be positive")
        if any(b >= a for b, a in zip(self.widths, self.widths[1:])) or not self.widths:
            raise ContractError(f"widths must be strictly increasing, got {self.widths}")
        if self.blocks is None:
            if (self.depth - 2) % 6 or self.depth < 8 or len(self.widths) != 3:
                raise ContractError(
                    f"depth must be 6k + 2 with three widths, got depth {self.depth}"
                )
            self.blocks = ((self.depth - 2) // 6,) * 3
        else:
            self.blocks = tuple(int(b) for b in self.blocks)
            if len(self.blocks) != len(self.widths) or min(self.blocks) < 1:
                raise ContractError("need one positive block count per width")
            self.depth = 2 * sum(self.blocks) + 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["init_scheme"] = self.init_scheme.value
        d["widths"] = list(self.widths)
        d["blocks"] = list(self.blocks)
        return d


@dataclass
class BlockPlan:
    prefix: str
    spec: ConvSpec
    downsample: bool


@dataclass
class Model:
    """Flat parameter store plus the structure it belongs to.

    Parameters are Euclidean arrays keyed by dotted names.  Batch-norm layers
    keep ``bias`` and ``log_gamma`` (gamma is optimized in log space so it stays
    positive); their last batch statistics live in ``stats``.
    """

    spec: ArchSpec
    params: dict
    stats: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def plan(self) -> list[BlockPlan]:
        return block_plan(self.spec)

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))


def block_plan(spec: ArchSpec) -> list[BlockPlan]:
    plans = []
    c_in = spec.widths[0]
    for s, (width, count) in enumerate(zip(spec.widths, spec.blocks)):
        for b in range(count):
            stride = 2 if s > 0 and b == 0 else 1
            conv = ConvSpec(3, c_in, width, stride, 1)
            plans.append(BlockPlan(f"stage{s + 1}.block{b}", conv, stride != 1 or c_in != width))
            c_in = width
    return plans


def _init_conv(spec: ConvSpec, scheme: InitScheme, rng) -> FcParams:
    if scheme is InitScheme.IDENTITY and spec.c_in <= spec.c_out:
        return conv_identity_init(spec)
    return normal_init(spec.fan_in, spec.c_out, rng)


def build_model(spec: ArchSpec, rng: np.random.Generator) -> Model:
    params: dict[str, np.ndarray] = {}
    metadata = {"pooling": "poincare_midpoint", "head_init": InitScheme.NORMAL_BASELINE.value}

    def put_fc(prefix, fc: FcParams):
        params[f"{prefix}.Z"] = fc.Z
        params[f"{prefix}.r"] = fc.r

    def put_bn(prefix, channels):
        params[f"{prefix}.bias"] = np.zeros(channels)
        params[f"{prefix}.log_gamma"] = np.zeros(channels if spec.per_channel_gamma else ())

    stem = ConvSpec(3, spec.in_channels, spec.widths[0], 1, 1)
    if spec.init_scheme is InitScheme.IDENTITY and stem.fan_in <= stem.c_out:
        put_fc("stem.conv", identity_init(stem.fan_in, stem.c_out))
        metadata["stem_init"] = InitScheme.IDENTITY.value
    else:
        put_fc("stem.conv", normal_init(stem.fan_in, stem.c_out, rng))
        metadata["stem_init"] = InitScheme.NORMAL_BASELINE.value
    put_bn("stem.bn", spec.widths[0])
    for plan in block_plan(spec):
        conv2 = ConvSpec(3, plan.spec.c_out, plan.spec.c_out, 1, 1)
        put_fc(f"{plan.prefix}.conv1", _init_conv(plan.spec, spec.init_scheme, rng))
        put_bn(f"{plan.prefix}.bn1", plan.spec.c_out)
        put_fc(f"{plan.prefix}.conv2", _init_conv(conv2, spec.init_scheme, rng))
        put_bn(f"{plan.prefix}.bn2", plan.spec.c_out)
        if plan.downsample:
            short = ConvSpec(1, plan.spec.c_in, plan.spec.c_out, plan.spec.stride, 0)
            put_fc(f"{plan.prefix}.down", _init_conv(short, spec.init_scheme, rng))
    put_fc("head", normal_init(spec.widths[-1], spec.num_classes, rng))
    return Model(spec, params, metadata=metadata)


def pixel_embed(images, c: float):
    """Treat normalized ``(B, H, W, 3)`` pixels as tangent vectors at the origin and map them in."""
    images = np.asarray(images, dtype=np.float64)
    if not np.all(np.isfinite(images)):
        raise NonFiniteError("non-finite pixel values")
    return ops.exp0(images, c)


def forward(model: Model, images, mode: str = "midpoint", params=None,
            frozen: bool = False, trace: list | None = None):
    """MLR scores ``(batch, num_classes)`` for normalized images ``(B, H, W, C)``.

    ``params`` overrides ``model.params`` (pass Tensors to record a tape).
    With ``frozen`` the batch norms reuse the statistics of the previous
    forward pass.  ``trace`` collects the mean pixel norm after each layer.
    """
    spec = model.spec
    c = spec.c
    P = model.params if params is None else params
    debug = debug_checks_enabled()
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[-1] != spec.in_channels:
        raise ContractError(f"expected (B, H, W, {spec.in_channels}) images, got {images.shape}")

    def fc(prefix):
        return FcParams(P[f"{prefix}.Z"], P[f"{prefix}.r"])

    def bn_state(prefix):
        state = model.stats.setdefault(prefix, BnState(bias=None))
        state.bias = P[f"{prefix}.bias"]
        state.gamma = E.exp(P[f"{prefix}.log_gamma"])
        state.frozen = frozen
        return state

    def note(h, where):
        if debug:
            ball_check(h, c, where)
        if trace is not None:
            trace.append(float(np.mean(np.linalg.norm(E.data(h), axis=-1))))
        return h

    x = note(pixel_embed(images, c), "embed")
    stem = ConvSpec(3, spec.in_channels, spec.widths[0], 1, 1)
    h = conv2d(x, stem, fc("stem.conv"), c)
    x = note(relu_p(batchnorm(h, bn_state("stem.bn"), c, mode), c), "stem")
    for plan in block_plan(spec):
        pre = plan.prefix
        x = residual_block(
            x, fc(f"{pre}.conv1"), fc(f"{pre}.conv2"), bn_state(f"{pre}.bn1"),
            bn_state(f"{pre}.bn2"), plan.spec, c,
            downsample=fc(f"{pre}.down") if plan.downsample else None, mode=mode,
        )
        x = note(x, pre)
    B, H, W, C = E.data(x).shape
    pooled = note(ops.midpoint(E.reshape(x, (B, H * W, C)), c), "pool")
    return ops.mlr_scores(pooled, P["head.Z"], P["head.r"], c)
