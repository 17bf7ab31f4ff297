"""RB-NetC, RB-NetS and the stacked two-stage disparity network.

Both sub-networks are encoder/decoder stacks built from a declarative layer
plan (:func:`layer_plan`). The encoder is a chain of Dual-ResBlock stages
(a stride-1 residual block followed by a stride-2 one); the decoder upsamples
with 4x4 transposed convolutions, concatenates encoder skips and the
upsampled coarser prediction, and emits one disparity map per scale.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import ops
from .exceptions import ConfigError, FormatError, ShapeError
from .ops import ConvSpec, CorrelationSpec, conv2d, leaky_relu, transposed_conv2d
from .tensor import Tensor, add, concat, scale, slice_

DEFAULT_ENCODER_CHANNELS = (4, 8, 16, 32, 32, 32, 32)
RGB = 3
# He gain for the leaky rectifier
ACT_GAIN = float(np.sqrt(2.0 / (1.0 + ops.LEAKY_SLOPE ** 2)))
RESIDUAL_GAIN = 0.5
VARIANT_RATIOS = {"fadnet++": (16, 16), "m": (8, 8), "s": (4, 4), "t": (2, 1), "tiny": (1, 1)}


@dataclass
class NetworkConfig:
    """Channel plan and structure of one FADNet++ variant.

    Effective widths are ``encoder_channels[i] * e_ratio`` and
    ``decoder_channels[s] * d_ratio``. ``decoder_channels`` is indexed by
    scale (0 = full resolution) and mirrors the encoder when omitted.
    """

    encoder_channels: tuple = DEFAULT_ENCODER_CHANNELS
    decoder_channels: tuple | None = None
    e_ratio: int = 1
    d_ratio: int = 1
    search_range: int = 20
    encoder_stages: int = 7
    scales: int = 7
    corr_stage: int = 3
    seed: int = 0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        if self.decoder_channels is None:
            self.decoder_channels = self.mirrored_decoder()
        self.decoder_channels = tuple(int(c) for c in self.decoder_channels)
        self.validate()

    def mirrored_decoder(self) -> tuple:
        enc = self.encoder_channels
        out = []
        for s in range(self.scales):
            if s == 0:
                out.append(enc[0])
            else:
                # widest encoder stage that lives at scale s
                at_scale = [enc[i - 1] for i in range(1, len(enc) + 1)
                            if min(i, self.scales - 1) == s]
                out.append(at_scale[-1] if at_scale else enc[min(s, len(enc)) - 1])
        return tuple(out)

    def validate(self) -> None:
        problems = []
        if len(self.encoder_channels) != self.encoder_stages:
            problems.append(f"encoder_channels has {len(self.encoder_channels)} entries, "
                            f"encoder_stages is {self.encoder_stages}")
        if len(self.decoder_channels) != self.scales:
            problems.append(f"decoder_channels has {len(self.decoder_channels)} entries, "
                            f"scales is {self.scales}")
        if any(c < 1 for c in self.encoder_channels + self.decoder_channels):
            problems.append("every base channel count must be >= 1")
        if int(self.e_ratio) != self.e_ratio or self.e_ratio < 1:
            problems.append(f"e_ratio must be a positive integer, got {self.e_ratio}")
        if int(self.d_ratio) != self.d_ratio or self.d_ratio < 1:
            problems.append(f"d_ratio must be a positive integer, got {self.d_ratio}")
        if self.search_range < 1:
            problems.append("search_range must be >= 1")
        if not 2 <= self.scales <= self.encoder_stages:
            problems.append(f"scales ({self.scales}) must lie in [2, encoder_stages]")
        if not 0 <= self.corr_stage < self.scales:
            problems.append(f"corr_stage ({self.corr_stage}) must lie in [0, scales)")
        if problems:
            raise ConfigError("invalid network config: " + "; ".join(problems))

    @property
    def divisor(self) -> int:
        return 2 ** (self.scales - 1)

    def encoder_widths(self) -> list[int]:
        return [c * int(self.e_ratio) for c in self.encoder_channels]

    def decoder_widths(self) -> list[int]:
        return [c * int(self.d_ratio) for c in self.decoder_channels]

    def stage_stride(self, stage: int) -> int:
        return 2 if stage <= self.scales - 1 else 1

    # -- flat key/value text form -------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "name" and not value:
                continue
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NetworkConfig":
        kwargs = {}
        known = {f.name for f in fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "base_channels":
                key = "encoder_channels"
            if key == "variant":
                if value.lower().replace("fadnet-", "") not in VARIANT_RATIOS:
                    raise ConfigError(f"line {lineno}: unknown variant {value!r}")
                e, d = VARIANT_RATIOS[value.lower().replace("fadnet-", "")]
                kwargs.setdefault("e_ratio", e)
                kwargs.setdefault("d_ratio", d)
                kwargs.setdefault("name", value)
                continue
            if key not in known:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            try:
                if key in ("encoder_channels", "decoder_channels"):
                    kwargs[key] = tuple(int(v) for v in value.replace(" ", "").split(",") if v)
                elif key == "name":
                    kwargs[key] = value
                else:
                    kwargs[key] = int(value)
            except ValueError:
                raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from None
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "NetworkConfig":
        return cls.from_text(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


def variant(name: str, **overrides) -> NetworkConfig:
    """Named ratio presets: fadnet++ (16,16), m (8,8), s (4,4), t (2,1), tiny (1,1).

    Explicit ``e_ratio`` / ``d_ratio`` overrides win over the preset.
    """
    key = name.lower().replace("fadnet-", "")
    if key not in VARIANT_RATIOS:
        raise ConfigError(f"unknown variant {name!r}; choose from {sorted(VARIANT_RATIOS)}")
    e, d = VARIANT_RATIOS[key]
    overrides.setdefault("e_ratio", e)
    overrides.setdefault("d_ratio", d)
    overrides.setdefault("name", name)
    return NetworkConfig(**overrides)


# ---------------------------------------------------------------------------
# layer plan and parameter counting

class LayerShape(NamedTuple):
    name: str
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    transposed: bool = False

    @property
    def parameter_count(self) -> int:
        return self.in_channels * self.out_channels * self.kernel ** 2 + self.out_channels


def layer_plan(cfg: NetworkConfig, kind: str) -> list[LayerShape]:
    """Every convolution of RB-Net``kind`` (``"C"`` or ``"S"``) in construction order."""
    if kind not in ("C", "S"):
        raise ConfigError(f"network kind must be 'C' or 'S', got {kind!r}")
    enc, dec = cfg.encoder_widths(), cfg.decoder_widths()
    plan: list[LayerShape] = []
    cin = RGB if kind == "C" else 3 * RGB + 1

    def resblock(prefix, c_in, c_out, stride):
        plan.append(LayerShape(f"{prefix}.conv1", c_in, c_out, 3, stride))
        plan.append(LayerShape(f"{prefix}.conv2", c_out, c_out, 3))
        if c_in != c_out or stride != 1:
            plan.append(LayerShape(f"{prefix}.short", c_in, c_out, 1, stride))

    if kind == "C" and cfg.corr_stage == 0:
        plan.append(LayerShape("pre_conv", RGB, RGB, 3))
        cin += cfg.search_range
    for i in range(1, cfg.encoder_stages + 1):
        width = enc[i - 1]
        resblock(f"enc{i}.a", cin, width, 1)
        resblock(f"enc{i}.b", width, width, cfg.stage_stride(i))
        cin = width
        if kind == "C" and i == cfg.corr_stage:
            plan.append(LayerShape("pre_conv", width, width, 3))
            cin += cfg.search_range

    top = cfg.scales - 1
    plan.append(LayerShape(f"dec{top}.iconv", enc[-1], dec[top], 3))
    plan.append(LayerShape(f"pred{top}", dec[top], 1, 3))
    for s in range(top - 1, -1, -1):
        skip = enc[s - 1] if s >= 1 else enc[0]
        plan.append(LayerShape(f"dec{s}.up", dec[s + 1], dec[s], 4, 2, True))
        plan.append(LayerShape(f"dec{s}.iconv", dec[s] + 1 + skip, dec[s], 3))
        plan.append(LayerShape(f"pred{s}", dec[s], 1, 3))
    return plan


def count_parameters(cfg: NetworkConfig, include_refinement: bool = True):
    """Exact parameter count of RB-NetC (+ RB-NetS) and a per-layer breakdown."""
    breakdown = {}
    kinds = ("C", "S") if include_refinement else ("C",)
    for kind in kinds:
        for layer in layer_plan(cfg, kind):
            breakdown[f"net{kind}.{layer.name}"] = layer.parameter_count
    return sum(breakdown.values()), breakdown


# ---------------------------------------------------------------------------
# networks

@dataclass
class DisparityPyramid:
    """Per-scale outputs of a forward pass; index s is resolution 1/2^s."""

    c: list
    r: list
    d_hat: list

    def __len__(self):
        return len(self.d_hat)


class RBNet:
    """One encoder/decoder sub-network, with correlation (``"C"``) or without (``"S"``)."""

    def __init__(self, cfg: NetworkConfig, kind: str, seed: int = 0, zero_heads: bool = False):
        self.cfg = cfg
        self.kind = kind
        self.plan = layer_plan(cfg, kind)
        rng = np.random.default_rng(seed)
        self.layers: dict[str, ConvSpec] = {}
        for layer in self.plan:
            is_head = layer.name.startswith("pred")
            if is_head:
                gain = 1.0
            elif layer.name.endswith(".conv2"):
                gain = RESIDUAL_GAIN * ACT_GAIN
            elif layer.name.endswith(".short") or layer.name == "pre_conv":
                gain = 1.0
            else:
                gain = ACT_GAIN
            pad = 1 if layer.transposed else (layer.kernel - 1) // 2
            self.layers[layer.name] = ConvSpec.create(
                layer.in_channels, layer.out_channels, layer.kernel, layer.stride, pad,
                transposed=layer.transposed, rng=rng, zero=is_head and zero_heads,
                gain=gain, name=layer.name)
        self.corr = CorrelationSpec(cfg.search_range) if kind == "C" else None

    @property
    def input_channels(self) -> int:
        return 2 * RGB if self.kind == "C" else 3 * RGB + 1

    # -- parameters ----------------------------------------------------
    def named_parameters(self):
        for name, spec in self.layers.items():
            yield f"{name}.weight", spec.weight
            if spec.bias is not None:
                yield f"{name}.bias", spec.bias

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise FormatError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {value.shape} != {p.shape}")
            p.data = value.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    # -- forward -------------------------------------------------------
    def _conv(self, name, x):
        return conv2d(x, self.layers[name])

    def _resblock(self, prefix, x):
        y = leaky_relu(self._conv(f"{prefix}.conv1", x))
        y = self._conv(f"{prefix}.conv2", y)
        short = f"{prefix}.short"
        s = self._conv(short, x) if short in self.layers else x
        return leaky_relu(add(y, s))

    def _stage(self, i, x):
        a = self._resblock(f"enc{i}.a", x)
        return a, self._resblock(f"enc{i}.b", a)

    def _correlate(self, left, right):
        channels = left.shape[1]
        cost = ops.correlation_pointwise(left, right, self.corr, self.layers["pre_conv"])
        # mean over feature channels keeps the cost volume O(1) for any width
        return scale(cost, 1.0 / channels)

    def __call__(self, x: Tensor) -> list[Tensor]:
        return self.forward(x)

    def forward(self, x: Tensor) -> list[Tensor]:
        """Return the per-scale predictions, finest first."""
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1] != self.input_channels:
            raise ShapeError(f"RB-Net{self.kind} expects (b,{self.input_channels},h,w), got {x.shape}")
        h, w = x.shape[2:]
        if h % cfg.divisor or w % cfg.divisor:
            raise ShapeError(f"input extent {(h, w)} must be divisible by {cfg.divisor}")
        skips = {}
        first = 1
        if self.kind == "C":
            b = x.shape[0]
            left, right = slice_(x, (slice(None), slice(0, RGB))), slice_(x, (slice(None), slice(RGB, 2 * RGB)))
            # siamese trunk: both views share weights, stacked along the batch axis
            pair = concat([left, right], axis=0)
            for i in range(1, cfg.corr_stage + 1):
                a, pair = self._stage(i, pair)
                if i == 1:
                    skips[0] = slice_(a, slice(0, b))
                skips[i] = slice_(pair, slice(0, b))
            fl, fr = slice_(pair, slice(0, b)), slice_(pair, slice(b, 2 * b))
            h_feat = concat([fl, self._correlate(fl, fr)], axis=1)
            first = cfg.corr_stage + 1
        else:
            h_feat = x
        for i in range(first, cfg.encoder_stages + 1):
            a, h_feat = self._stage(i, h_feat)
            if i == 1:
                skips[0] = a
            skips[min(i, cfg.scales - 1)] = h_feat

        top = cfg.scales - 1
        feat = leaky_relu(self._conv(f"dec{top}.iconv", h_feat))
        preds = {top: self._conv(f"pred{top}", feat)}
        for s in range(top - 1, -1, -1):
            up = leaky_relu(transposed_conv2d(feat, self.layers[f"dec{s}.up"]))
            up_pred = ops.resample(preds[s + 1], 2, "up-bilinear", value_scale=2.0)
            feat = leaky_relu(self._conv(f"dec{s}.iconv", concat([up, up_pred, skips[s]], axis=1)))
            preds[s] = self._conv(f"pred{s}", feat)
        return [preds[s] for s in range(cfg.scales)]


def build_rbnetc(cfg: NetworkConfig, seed: int = 0) -> RBNet:
    return RBNet(cfg, "C", seed)


def build_rbnets(cfg: NetworkConfig, seed: int = 0, zero_heads: bool = True) -> RBNet:
    """Refinement network; heads start at zero so the first forward yields d_hat == c."""
    return RBNet(cfg, "S", seed, zero_heads=zero_heads)


def build_fadnet(cfg: NetworkConfig, seed: int | None = None) -> tuple[RBNet, RBNet]:
    seed = cfg.seed if seed is None else seed
    return build_rbnetc(cfg, seed), build_rbnets(cfg, seed + 1)


def forward_fadnet(left: Tensor, right: Tensor, net_c: RBNet, net_s: RBNet | None) -> DisparityPyramid:
    """Run RB-NetC, warp the right view with c_0, run RB-NetS and add residuals per scale.

    With ``net_s=None`` the residuals are zero and ``d_hat`` is ``c``.
    """
    if left.shape != right.shape or left.ndim != 4 or left.shape[1] != RGB:
        raise ShapeError(f"left/right must be equal (b,3,h,w) tensors, got {left.shape} and {right.shape}")
    divisor = net_c.cfg.divisor
    if left.shape[2] % divisor or left.shape[3] % divisor:
        raise ShapeError(f"image extent {left.shape[2:]} must be divisible by {divisor}")
    c = net_c(concat([left, right], axis=1))
    if net_s is None:
        r = [Tensor(np.zeros(cs.shape)) for cs in c]
        return DisparityPyramid(c, r, [add(cs, rs) for cs, rs in zip(c, r)])
    warped = ops.warp_right_to_left(right, c[0])
    r = net_s(concat([left, right, warped, c[0]], axis=1))
    return DisparityPyramid(c, r, [add(cs, rs) for cs, rs in zip(c, r)])


# ---------------------------------------------------------------------------
# checkpoint files

MAGIC = b"FADW"
VERSION = 1


def write_checkpoint(params: dict[str, np.ndarray]) -> bytes:
    """Serialise named float64 arrays: magic, u32 version, then one record per array."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    for name, value in params.items():
        value = np.asarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", value.ndim))
        buf.write(struct.pack(f"<{value.ndim}I", *value.shape))
        buf.write(np.ascontiguousarray(value).tobytes())
    return buf.getvalue()


def read_checkpoint(payload: bytes) -> dict[str, np.ndarray]:
    if payload[:4] != MAGIC:
        raise FormatError("bad checkpoint magic", offset=0)
    if len(payload) < 8:
        raise FormatError("truncated checkpoint header", offset=len(payload))
    (version,) = struct.unpack_from("<I", payload, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    pos, out = 8, {}

    def take(n):
        nonlocal pos
        if pos + n > len(payload):
            raise FormatError("truncated checkpoint record", offset=pos)
        chunk = payload[pos:pos + n]
        pos += n
        return chunk

    while pos < len(payload):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        out[name] = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    return out


def save_networks(path, net_c: RBNet, net_s: RBNet | None = None) -> None:
    params = {f"netC.{k}": v for k, v in net_c.state_dict().items()}
    if net_s is not None:
        params.update({f"netS.{k}": v for k, v in net_s.state_dict().items()})
    Path(path).write_bytes(write_checkpoint(params))


def load_networks(path, cfg: NetworkConfig) -> tuple[RBNet, RBNet | None]:
    params = read_checkpoint(Path(path).read_bytes())
    net_c = build_rbnetc(cfg)
    net_c.load_state_dict({k[5:]: v for k, v in params.items() if k.startswith("netC.")})
    net_s = None
    if any(k.startswith("netS.") for k in params):
        net_s = build_rbnets(cfg)
        net_s.load_state_dict({k[5:]: v for k, v in params.items() if k.startswith("netS.")})
    return net_c, net_s
