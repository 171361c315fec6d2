"""CRN model family: FCRN15 baseline, ablation stages and gGCRN16.

Topology (strides ``[1, 2, 1, 2, 1, 2]``, L = 264)::

    enc1 264 -> enc2 132 -> enc3 132 -> enc4 66 -> enc5 66 -> enc6 33
    bottleneck at 33 bins (two ConvLSTMs, or conv -> grouped GRU(s) -> conv)
    dec1 deconv 33->66  (+ depthwise skip from enc5)
    dec2 conv 66
    dec3 deconv 66->132 (+ depthwise skip from enc3)
    dec4 conv 132
    dec5 deconv 132->264 (+ depthwise skip from enc1)
    out  conv 264 -> 2 channels (Re M, Im M), linear

Encoder/decoder layers above the bottleneck resolution carry
``round(width_scale * F)`` kernels; the layer feeding the bottleneck carries
``F``. ``width_scale`` is the calibration constant for the complexity targets.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import dsp
from .autodiff import Tensor, constant, conv_freq, convlstm_sequence, deconv_freq, depthwise_conv, gru_sequence, ops
from .autodiff.tensor import parameter
from .errors import ConfigError

BOTTLENECKS = ("convlstm2", "ggru2", "ggru1")


@dataclass(frozen=True)
class CrnConfig:
    kernel_count: int = 40
    kernel_size: int = 3
    bottleneck: str = "ggru1"
    groups_layer1: int = 10
    groups_layer2: int = 6
    input_compression: bool = True
    feature_len: int = 264
    in_channels: int = 4
    strides: tuple[int, ...] = (1, 2, 1, 2, 1, 2)
    width_scale: float = 0.625
    gru_hidden_ratio: float = 1.0
    bottleneck_kernel: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strides", tuple(self.strides))
        if self.bottleneck not in BOTTLENECKS:
            raise ConfigError(f"unknown bottleneck {self.bottleneck!r}; expected one of {BOTTLENECKS}")
        if any(s not in (1, 2) for s in self.strides):
            raise ConfigError("encoder strides must be 1 or 2")
        if self.feature_len % self.stride_product:
            raise ConfigError(
                f"stride product {self.stride_product} does not divide feature length {self.feature_len}"
            )
        if self.strides[-1] != 2:
            raise ConfigError("the last encoder layer must downsample into the bottleneck")
        if self.kernel_count < 1 or self.kernel_size < 1:
            raise ConfigError("kernel count and size must be positive")

    @property
    def stride_product(self) -> int:
        return int(np.prod(self.strides))

    @property
    def bottleneck_bins(self) -> int:
        return self.feature_len // self.stride_product

    @property
    def outer_width(self) -> int:
        return max(1, round(self.width_scale * self.kernel_count))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strides"] = list(self.strides)
        return d


STAGES = ("fcrn15", "m1", "m2", "m3", "m4", "m5")
STAGE_LABELS = {
    "fcrn15": "FCRN15",
    "m1": "+1 (gGRU for ConvLSTM)",
    "m2": "+2 (F = 40)",
    "m3": "+3 (N = 3)",
    "m4": "+4 (input compression)",
    "m5": "+5 (= gGCRN16)",
}


def apply_ablation(stage: str) -> CrnConfig:
    """Configuration of one rung of the FCRN15 -> gGCRN16 ladder."""
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}; expected one of {STAGES}")
    cfg = CrnConfig(
        kernel_count=32, kernel_size=12, bottleneck="convlstm2", groups_layer1=8, groups_layer2=6,
        input_compression=False,
    )
    steps = {
        "m1": dict(bottleneck="ggru2"),
        "m2": dict(kernel_count=40, groups_layer1=10),
        "m3": dict(kernel_size=3),
        "m4": dict(input_compression=True),
        "m5": dict(bottleneck="ggru1"),
    }
    for name in STAGES[1 : STAGES.index(stage) + 1]:
        cfg = replace(cfg, **steps[name])
    return cfg


def ggcrn16(**overrides) -> CrnConfig:
    return replace(apply_ablation("m5"), **overrides)


# ---------------------------------------------------------------- layer plan


@dataclass(frozen=True)
class ConvSpec:
    name: str
    kind: str  # conv | deconv | depthwise
    taps: int
    cin: int
    cout: int
    stride: int
    in_len: int
    out_len: int
    activation: bool = True


@dataclass(frozen=True)
class GruSpec:
    name: str
    groups: int
    din: int
    hidden: int


@dataclass(frozen=True)
class LstmSpec:
    name: str
    taps: int
    cin: int
    kernels: int
    bins: int


@dataclass
class Plan:
    encoder: list[ConvSpec] = field(default_factory=list)
    bottleneck: list = field(default_factory=list)
    decoder: list[ConvSpec] = field(default_factory=list)
    skips: dict[int, ConvSpec] = field(default_factory=dict)  # decoder index -> skip spec
    skip_source: dict[int, int] = field(default_factory=dict)  # decoder index -> encoder index
    bottleneck_channels: int = 0


def _plan(cfg: CrnConfig) -> Plan:
    plan = Plan()
    F, N = cfg.kernel_count, cfg.kernel_size
    outer = cfg.outer_width
    length, cin = cfg.feature_len, cfg.in_channels
    n_enc = len(cfg.strides)
    for i, s in enumerate(cfg.strides):
        cout = F if i == n_enc - 1 else outer
        out_len = length // s
        plan.encoder.append(ConvSpec(f"enc{i + 1}", "conv", N, cin, cout, s, length, out_len))
        length, cin = out_len, cout

    bins = length
    if cfg.bottleneck == "convlstm2":
        for j in (1, 2):
            plan.bottleneck.append(LstmSpec(f"bn.lstm{j}", N, cin, F, bins))
            cin = F
        plan.bottleneck_channels = F
    else:
        K = cfg.bottleneck_kernel
        plan.bottleneck.append(ConvSpec("bn.conv_in", "conv", K, cin, F, 1, bins, bins))
        width = bins * F
        groups = [cfg.groups_layer1] + ([cfg.groups_layer2] if cfg.bottleneck == "ggru2" else [])
        for j, g in enumerate(groups, start=1):
            if width % g:
                raise ConfigError(f"bottleneck width {width} is not divisible into {g} groups")
            chunk = width // g
            hidden = round(chunk * cfg.gru_hidden_ratio)
            plan.bottleneck.append(GruSpec(f"bn.gru{j}", g, chunk, hidden))
            width = g * hidden
        if width % bins:
            raise ConfigError(f"grouped GRU output width {width} is not a multiple of {bins} bins")
        plan.bottleneck.append(ConvSpec("bn.conv_out", "conv", K, width // bins, 3 * F, 1, bins, bins))
        plan.bottleneck_channels = 3 * F

    cin = plan.bottleneck_channels
    for k, i in enumerate(reversed(range(n_enc))):
        enc = plan.encoder[i]
        name = f"dec{k + 1}"
        if i == 0:
            spec = ConvSpec("out", "conv", N, cin, 2, 1, enc.in_len, enc.in_len, activation=False)
        elif enc.stride == 2:
            spec = ConvSpec(name, "deconv", N, cin, enc.cin, 2, enc.out_len, enc.in_len)
            src = i - 1
            plan.skips[k] = ConvSpec(
                f"skip{enc.in_len}", "depthwise", N, enc.cin, enc.cin, 1, enc.in_len, enc.in_len, activation=False
            )
            plan.skip_source[k] = src
        else:
            spec = ConvSpec(name, "conv", N, cin, enc.cin, 1, enc.in_len, enc.in_len)
        plan.decoder.append(spec)
        cin = spec.cout
    return plan


# ---------------------------------------------------------------- init


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _orthogonal(rng, rows, cols):
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


def _init_params(plan: Plan, seed: int) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}

    def add(name, value):
        params[name] = parameter(value, name=name)

    def conv(spec: ConvSpec):
        if spec.kind == "depthwise":
            add(f"{spec.name}.k", _glorot(rng, (spec.taps, spec.cin), spec.taps, spec.taps))
        else:
            shape = (spec.taps, spec.cin, spec.cout)
            add(f"{spec.name}.w", _glorot(rng, shape, spec.taps * spec.cin, spec.taps * spec.cout))
        add(f"{spec.name}.b", np.zeros(spec.cout))

    for spec in plan.encoder:
        conv(spec)
    for spec in plan.bottleneck:
        if isinstance(spec, ConvSpec):
            conv(spec)
        elif isinstance(spec, GruSpec):
            G, D, H = spec.groups, spec.din, spec.hidden
            w = np.concatenate([_glorot(rng, (G, D, H), D, H) for _ in range(3)], axis=-1)
            u = np.stack([np.concatenate([_orthogonal(rng, H, H) for _ in range(3)], axis=-1) for _ in range(G)])
            add(f"{spec.name}.w", w)
            add(f"{spec.name}.u", u)
            add(f"{spec.name}.b", np.zeros((G, 3 * H)))
        else:
            N, C, F = spec.taps, spec.cin, spec.kernels
            wx = _glorot(rng, (N, C, 4 * F), N * C, N * 4 * F)
            wh = np.concatenate([_orthogonal(rng, N * F, F).reshape(N, F, F) for _ in range(4)], axis=-1)
            b = np.zeros(4 * F)
            b[F : 2 * F] = 1.0
            add(f"{spec.name}.wx", wx)
            add(f"{spec.name}.wh", wh)
            add(f"{spec.name}.b", b)
    for k, spec in enumerate(plan.decoder):
        conv(spec)
        if k in plan.skips:
            conv(plan.skips[k])
    return params


# ---------------------------------------------------------------- model


class CrnModel:
    """A built CRN variant: parameter registry plus a stateless forward.

    Recurrent state is owned by the caller and passed through ``forward``.
    """

    def __init__(self, config: CrnConfig, params: dict[str, Tensor] | None = None):
        self.config = config
        self.plan = _plan(config)
        fresh = _init_params(self.plan, config.seed)
        if params is not None:
            if set(params) != set(fresh):
                missing = sorted(set(fresh) ^ set(params))
                raise ConfigError(f"parameter names do not match the configuration: {missing[:5]}")
            for name, p in params.items():
                value = p.data if isinstance(p, Tensor) else np.asarray(p, dtype=float)
                if value.shape != fresh[name].shape:
                    raise ConfigError(f"{name}: shape {value.shape} != {fresh[name].shape}")
                fresh[name] = parameter(value.copy(), name=name)
        self.params = fresh

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def _conv(self, spec: ConvSpec, x: Tensor) -> Tensor:
        p = self.params
        if spec.kind == "conv":
            y = conv_freq(x, p[f"{spec.name}.w"], p[f"{spec.name}.b"], stride=spec.stride)
        elif spec.kind == "deconv":
            y = deconv_freq(x, p[f"{spec.name}.w"], p[f"{spec.name}.b"], stride=spec.stride)
        else:
            y = depthwise_conv(x, p[f"{spec.name}.k"], p[f"{spec.name}.b"])
        return ops.elu(y) if spec.activation else y

    def forward(self, features, state: dict | None = None) -> tuple[Tensor, dict]:
        """Map features ``(B, T, L, 4)`` to mask channels ``(B, T, L, 2)``."""
        x = constant(features) if not isinstance(features, Tensor) else features
        cfg = self.config
        if x.ndim != 4 or x.shape[2] != cfg.feature_len or x.shape[3] != cfg.in_channels:
            raise ValueError(f"expected features (B, T, {cfg.feature_len}, {cfg.in_channels}), got {x.shape}")
        state = dict(state or {})
        new_state = {}
        enc_out = []
        for spec in self.plan.encoder:
            x = self._conv(spec, x)
            enc_out.append(x)

        batch, steps, bins = x.shape[0], x.shape[1], x.shape[2]
        p = self.params
        for spec in self.plan.bottleneck:
            if isinstance(spec, ConvSpec):
                if spec.name == "bn.conv_out":
                    x = ops.reshape(x, (batch, steps, bins, spec.cin))
                x = self._conv(spec, x)
            elif isinstance(spec, GruSpec):
                if spec.name == "bn.gru1":
                    x = ops.reshape(x, (batch, steps, spec.groups, spec.din))
                else:
                    # representation rearrangement: interleave the previous groups' channels
                    x = ops.transpose(x, (0, 1, 3, 2))
                    x = ops.reshape(x, (batch, steps, spec.groups, spec.din))
                x, new_state[spec.name] = gru_sequence(
                    x, p[f"{spec.name}.w"], p[f"{spec.name}.u"], p[f"{spec.name}.b"], state.get(spec.name)
                )
            else:
                x, new_state[spec.name] = convlstm_sequence(
                    x, p[f"{spec.name}.wx"], p[f"{spec.name}.wh"], p[f"{spec.name}.b"], state.get(spec.name)
                )

        for k, spec in enumerate(self.plan.decoder):
            x = self._conv(spec, x)
            if k in self.plan.skips:
                x = x + self._conv(self.plan.skips[k], enc_out[self.plan.skip_source[k]])
        return x, new_state

    # -- complexity

    def complexity(self, frame_rate: float = dsp.DEFAULT_PARAMS.frame_rate) -> "ComplexityReport":
        return count_flops(self, frame_rate)


def build_model(config: CrnConfig) -> CrnModel:
    return CrnModel(config)


# ---------------------------------------------------------------- complexity


@dataclass(frozen=True)
class LayerCost:
    name: str
    kind: str
    params: int
    macs: int
    flops: int


@dataclass
class ComplexityReport:
    parameter_count: int
    flops_per_frame: int
    flops_per_second: int
    layers: list[LayerCost]

    def to_dict(self) -> dict:
        return {
            "parameter_count": self.parameter_count,
            "flops_per_frame": self.flops_per_frame,
            "flops_per_second": self.flops_per_second,
            "layers": [asdict(layer) for layer in self.layers],
        }


def _conv_costs(spec: ConvSpec) -> list[LayerCost]:
    if spec.kind == "depthwise":
        params = spec.taps * spec.cin + spec.cin
        macs = spec.out_len * spec.taps * spec.cin
    else:
        params = spec.taps * spec.cin * spec.cout + spec.cout
        positions = spec.in_len if spec.kind == "deconv" else spec.out_len
        macs = positions * spec.taps * spec.cin * spec.cout
    # 1 MAC = 2 FLOPs; the bias replaces the first addition
    costs = [LayerCost(spec.name, spec.kind, params, macs, 2 * macs)]
    if spec.activation:
        n = spec.out_len * spec.cout
        costs.append(LayerCost(f"{spec.name}.elu", "activation", 0, 0, n))
    return costs


def _layer_costs(plan: Plan) -> list[LayerCost]:
    costs: list[LayerCost] = []
    for spec in plan.encoder:
        costs += _conv_costs(spec)
    for spec in plan.bottleneck:
        if isinstance(spec, ConvSpec):
            costs += _conv_costs(spec)
        elif isinstance(spec, GruSpec):
            G, D, H = spec.groups, spec.din, spec.hidden
            macs = G * 3 * (D * H + H * H)
            # 3H gate nonlinearities + 7H elementwise (gate sums, reset product, state blend)
            costs.append(LayerCost(spec.name, "gru", G * 3 * (D * H + H * H + H), macs, 2 * macs + G * 10 * H))
        else:
            N, C, F, bins = spec.taps, spec.cin, spec.kernels, spec.bins
            macs = bins * N * (C + F) * 4 * F
            # 5F nonlinearities + 8F elementwise per bin
            costs.append(LayerCost(spec.name, "convlstm", N * (C + F) * 4 * F + 4 * F, macs, 2 * macs + bins * 13 * F))
    for k, spec in enumerate(plan.decoder):
        costs += _conv_costs(spec)
        if k in plan.skips:
            skip = plan.skips[k]
            costs += _conv_costs(skip)
            costs.append(LayerCost(f"{skip.name}.add", "elementwise", 0, 0, skip.out_len * skip.cout))
    return costs


def count_params(model: CrnModel) -> int:
    return int(sum(p.data.size for p in model.params.values()))


def count_flops(model: CrnModel, frame_rate: float = dsp.DEFAULT_PARAMS.frame_rate) -> ComplexityReport:
    layers = _layer_costs(model.plan)
    per_frame = sum(layer.flops for layer in layers)
    return ComplexityReport(
        parameter_count=sum(layer.params for layer in layers),
        flops_per_frame=per_frame,
        flops_per_second=int(round(per_frame * frame_rate)),
        layers=layers,
    )


# ---------------------------------------------------------------- reference rows

REFERENCE_ROWS = {
    # reference figures for systems that are not implemented here
    "FCRN": (3.7e6, 12_840e6),
    "CRUSE": (1.9e6, 685e6),
}
TARGET_STAGE_ROWS = {
    "fcrn15": (1.0e6, 2_011e6),
    "m1": (2.3e6, 772e6),
    "m2": (3.4e6, 1_180e6),
    "m3": (3.1e6, 641e6),
    "m4": (3.1e6, 641e6),
    "m5": (1.3e6, 583e6),
}


def complexity_table(stages: Sequence[str] = STAGES) -> list[dict]:
    """Rows in ladder order, followed by the fixed reference rows."""
    rows = []
    base = None
    for stage in stages:
        report = count_flops(build_model(apply_ablation(stage)))
        if stage == "fcrn15":
            base = report.flops_per_second
        target_params, target_flops = TARGET_STAGE_ROWS[stage]
        rows.append(
            {
                "model": STAGE_LABELS[stage],
                "stage": stage,
                "params": report.parameter_count,
                "flops": report.flops_per_second,
                "flops_vs_fcrn15": None if base is None else report.flops_per_second / base,
                "target_params": target_params,
                "target_flops": target_flops,
            }
        )
    for name, (params, flops) in REFERENCE_ROWS.items():
        rows.append(
            {
                "model": f"{name} (reference)",
                "stage": None,
                "params": int(params),
                "flops": int(flops),
                "flops_vs_fcrn15": None if base is None else flops / base,
                "target_params": params,
                "target_flops": flops,
            }
        )
    return rows


def format_table(rows: list[dict]) -> str:
    lines = [f"{'Model':<28} {'# Parameters':>13} {'#FLOPS':>11} {'vs FCRN15':>10}"]
    lines.append("-" * len(lines[0]))
    for r in rows:
        ratio = "" if r["flops_vs_fcrn15"] is None else f"{r['flops_vs_fcrn15']:.3f}"
        lines.append(f"{r['model']:<28} {r['params'] / 1e6:>11.2f} M {r['flops'] / 1e6:>9.0f} M {ratio:>10}")
    return "\n".join(lines)
