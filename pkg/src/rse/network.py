"""Model assembly: switch layers, shuffle wiring, Beneš blocks, frontends, heads.

A model owns 2*blocks + 1 switch-unit parameter sets (one per block half
plus a final switch layer) regardless of sequence length; the layer
schedule for a length n = 2^k instantiation is derived on the fly, which
is what lets one parameter store run at any power-of-two length.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import units
from .autodiff import Tensor, ValidationError
from .shuffle import MAX_BITS, shuffle_permutation
from .units import AblationFlags, RSUParams


@dataclass
class ModelConfig:
    """Architecture description; see presets below for the shapes evaluated."""

    m: int = 96
    blocks: int = 1
    n_max: int = 64
    vocab: int = 4
    classes: int = 4
    conv_layers: int = 0
    conv_channels: tuple = ()  # per-layer output channels; default geometric ramp to m
    kernel_width: int = 4
    input_dim: int = 0  # > 0: dense vector input lifted by a linear map
    head: str = "per_symbol"  # per_symbol | center_element | position_scalar
    hidden: int = 0  # 0 means the default 4m
    r: float = 0.9
    unit: str = "rsu"  # rsu | gated
    flags: AblationFlags = field(default_factory=AblationFlags)

    def __post_init__(self):
        if self.n_max < 4 or (self.n_max & (self.n_max - 1)) != 0:
            raise ValidationError(f"n_max must be a power of two >= 4, got {self.n_max}")
        if self.n_max > (1 << MAX_BITS):
            raise ValidationError(f"n_max exceeds the 2**{MAX_BITS} ceiling")
        if self.blocks < 1:
            raise ValidationError("blocks must be >= 1")
        if self.head not in ("per_symbol", "center_element", "position_scalar"):
            raise ValidationError(f"unknown head mode {self.head!r}")
        if self.unit not in ("rsu", "gated"):
            raise ValidationError(f"unknown unit {self.unit!r}")
        if self.conv_layers and not self.conv_channels:
            ramp = [max(1, self.m >> (self.conv_layers - 1 - i)) for i in range(self.conv_layers)]
            self.conv_channels = tuple(ramp)
        if self.conv_layers and len(self.conv_channels) != self.conv_layers:
            raise ValidationError("conv_channels must list one width per conv layer")

    @property
    def hidden_size(self):
        return self.hidden if self.hidden else 4 * self.m


@dataclass
class ModelParams:
    """Instantiated parameter store with block-level weight sharing."""

    config: ModelConfig
    units: list  # [block0 fwd, block0 rev, ..., final]
    embedding: Tensor = None
    input_proj: tuple = None  # (weight, bias)
    convs: list = None  # [(kernel, bias), ...]
    lift: tuple = None  # post-conv linear (weight, bias)
    head_w: Tensor = None
    head_b: Tensor = None

    def named_parameters(self):
        """Stable (name, Tensor) iteration over every learnable parameter."""
        out = []
        if self.embedding is not None:
            out.append(("embedding.table", self.embedding))
        if self.input_proj is not None:
            out.append(("input_proj.weight", self.input_proj[0]))
            out.append(("input_proj.bias", self.input_proj[1]))
        if self.convs:
            for i, (k, b) in enumerate(self.convs):
                out.append((f"conv{i}.kernel", k))
                out.append((f"conv{i}.bias", b))
        if self.lift is not None:
            out.append(("lift.weight", self.lift[0]))
            out.append(("lift.bias", self.lift[1]))
        blocks = self.config.blocks
        for i, unit in enumerate(self.units):
            if i == 2 * blocks:
                prefix = "final"
            else:
                prefix = f"block{i // 2}.{'fwd' if i % 2 == 0 else 'rev'}"
            for name, t in unit.named_tensors():
                out.append((f"{prefix}.{name}", t))
        if self.head_w is not None:
            out.append(("head.weight", self.head_w))
            out.append(("head.bias", self.head_b))
        return out

    def parameter_count(self):
        return sum(t.size for _, t in self.named_parameters())

    def count_breakdown(self):
        """Per-component parameter totals, for the counting checks."""
        groups = {}
        for name, t in self.named_parameters():
            key = name.split(".")[0]
            if key.startswith("block") or key == "final":
                key = "switch_units"
            elif key.startswith("conv") or key == "lift":
                key = "conv_frontend"
            groups[key] = groups.get(key, 0) + t.size
        return groups

    def zero_grads(self):
        for _, t in self.named_parameters():
            t.zero_grad()


def build_model(config, seed=0, dtype=np.float32):
    """Initialize every parameter set; deterministic given the seed."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
    m = config.m
    sets = []
    for _ in range(2 * config.blocks + 1):
        if config.unit == "rsu":
            sets.append(
                units.rsu_init(m, hidden=config.hidden_size, r=config.r, rng=rng, dtype=dtype)
            )
        else:
            sets.append(units.gated_su_init(m, rng=rng, dtype=dtype))
    params = ModelParams(config=config, units=sets)
    if config.conv_layers:
        params.convs = []
        cin = 1
        for cout in config.conv_channels:
            kern = units.uniform_init(
                rng, (config.kernel_width, cin, cout), fan_in=config.kernel_width * cin, dtype=dtype
            )
            bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
            params.convs.append((kern, bias))
            cin = cout
        # linear map into the blocks, scaled to emit the 0.25 design amplitude
        w = units.uniform_init(
            rng, (cin, m), fan_in=cin, gain=0.25 / units.GELU_UNIT_RMS, dtype=dtype
        )
        b = Tensor(np.zeros(m, dtype=dtype), requires_grad=True)
        params.lift = (w, b)
    elif config.input_dim:
        w = units.uniform_init(rng, (config.input_dim, m), fan_in=config.input_dim, gain=0.25, dtype=dtype)
        b = Tensor(np.zeros(m, dtype=dtype), requires_grad=True)
        params.input_proj = (w, b)
    else:
        table = rng.uniform(-0.25 * np.sqrt(3.0), 0.25 * np.sqrt(3.0), (config.vocab, m))
        params.embedding = Tensor(table.astype(dtype), requires_grad=True)
    head_out = 1 if config.head == "position_scalar" else config.classes
    params.head_w = units.uniform_init(rng, (m, head_out), fan_in=m, dtype=dtype)
    params.head_b = Tensor(np.zeros(head_out, dtype=dtype), requires_grad=True)
    return params


def switch_layer(unit_params, seq, flags=None):
    """Process non-overlapping pairs of adjacent sequence elements in place order."""
    n = seq.shape[-2]
    if n % 2 != 0:
        raise ValidationError(f"switch layer needs an even sequence length, got {n}")
    m = seq.shape[-1]
    pairs = ad.reshape(seq, seq.shape[:-2] + (n // 2, 2 * m))
    out = units.unit_forward(unit_params, pairs, flags)
    return ad.reshape(out, seq.shape)


def _bits(n):
    k = int(n).bit_length() - 1
    if n < 4 or (1 << k) != n:
        raise ValidationError(f"sequence length {n} must be a power of two >= 4")
    return k


def layer_schedule(n, blocks):
    """Per-length switch/shuffle schedule.

    Yields (unit_index, perm or None) pairs: each block half runs
    log2(n) - 1 switch layers, each followed by its half's shuffle; the
    run ends with the final switch layer.
    """
    k = _bits(n)
    fwd = shuffle_permutation(k)
    inv = shuffle_permutation(k, inverse=True)
    for b in range(blocks):
        for _ in range(k - 1):
            yield 2 * b, fwd
        for _ in range(k - 1):
            yield 2 * b + 1, inv
    yield 2 * blocks, None


def switch_layer_count(n, blocks):
    return blocks * 2 * (_bits(n) - 1) + 1


def forward_features(model, seq, tap=None):
    """Run a feature sequence [..., n, m] through the blocks and final layer.

    `tap(layer_index, array)` is called with each switch layer's output
    values (before the shuffle); used by the amplitude checks.
    """
    cfg = model.config
    i = 0
    for unit_idx, perm in layer_schedule(seq.shape[-2], cfg.blocks):
        seq = switch_layer(model.units[unit_idx], seq, cfg.flags)
        if tap is not None:
            tap(i, seq.data)
        if perm is not None:
            seq = ad.permute_seq(seq, perm)
        i += 1
    return seq


def benes_block(unit_pair, seq, flags=None):
    """One Beneš block: a shuffle-wired half followed by its inverse-wired mirror."""
    n = seq.shape[-2]
    k = _bits(n)
    fwd = shuffle_permutation(k)
    inv = shuffle_permutation(k, inverse=True)
    for _ in range(k - 1):
        seq = switch_layer(unit_pair[0], seq, flags)
        seq = ad.permute_seq(seq, fwd)
    for _ in range(k - 1):
        seq = switch_layer(unit_pair[1], seq, flags)
        seq = ad.permute_seq(seq, inv)
    return seq


def conv_frontend(model, x):
    """Strided-conv downsampling of a waveform [..., n, 1] into [..., n/2^c, m]."""
    cfg = model.config
    n = x.shape[-2]
    if n % (1 << cfg.conv_layers) != 0:
        raise ValidationError(f"2^{cfg.conv_layers} must divide the input length {n}")
    for kern, bias in model.convs or ():
        x = ad.conv1d_strided(x, kern, stride=2, bias=bias)
        x = ad.layernorm_nogain(x)
        x = ad.gelu(x)
    w, b = model.lift
    return ad.affine(x, w, b)


def output_head(model, seq):
    """Map block output to logits per the configured head mode."""
    cfg = model.config
    n = seq.shape[-2]
    if cfg.head == "per_symbol":
        return ad.affine(seq, model.head_w, model.head_b)
    if cfg.head == "center_element":
        mid = ad.slice_axis(seq, -2, n // 2, n // 2 + 1)
        logits = ad.affine(mid, model.head_w, model.head_b)
        return ad.reshape(logits, logits.shape[:-2] + (cfg.classes,))
    # position_scalar: one score per sequence position
    logits = ad.affine(seq, model.head_w, model.head_b)
    return ad.reshape(logits, logits.shape[:-1])


def rse_forward(model, x):
    """Full forward pass: input stage, Beneš blocks, final layer, head.

    `x` is an integer token array [..., n] (embedding models), a waveform
    [..., n, 1] (conv frontend), or a dense feature sequence
    [..., n, input_dim] (projection models). n must be a power of two no
    longer than the padded maximum.
    """
    cfg = model.config
    if model.embedding is not None:
        tokens = np.asarray(x)
        n = tokens.shape[-1]
        _check_length(n, cfg)
        seq = ad.embedding_lookup(model.embedding, tokens)
    elif model.convs is not None:
        x = ad.as_tensor(x)
        n = x.shape[-2]
        _check_length(n, cfg)
        seq = conv_frontend(model, x)
    else:
        x = ad.as_tensor(x)
        n = x.shape[-2]
        _check_length(n, cfg)
        w, b = model.input_proj
        seq = ad.affine(x, w, b)
    seq = forward_features(model, seq)
    return output_head(model, seq)


def _check_length(n, cfg):
    if n > cfg.n_max:
        raise ValidationError(f"input length {n} exceeds the configured maximum {cfg.n_max}")
    post = n >> cfg.conv_layers
    _bits(post)


def identity_override(unit):
    """Configure an RSU so its forward pass is exactly the identity.

    sigmoid(inf) is exactly 1.0 in IEEE arithmetic and h = 0 kills the
    branch, so out = i bit-for-bit. Used by structural tests.
    """
    if not isinstance(unit, RSUParams):
        raise TypeError("identity override applies to RSUParams")
    unit.S.data[:] = np.inf
    return replace_h(unit, 0.0)


def replace_h(unit, h):
    unit.h = float(h)
    return unit


def switch_layer_stds(model, x, seed=0):
    """Elementwise std of every switch layer's output for a given input.

    x may be None, in which case an i.i.d. std-0.25 feature sequence of
    length n_max is drawn.
    """
    cfg = model.config
    if x is None:
        rng = np.random.default_rng(seed)
        dtype = model.units[0].Z.dtype
        x = Tensor(rng.normal(0.0, 0.25, (cfg.n_max, cfg.m)).astype(dtype))
    stds = []
    forward_features(model, ad.as_tensor(x), tap=lambda i, a: stds.append(float(a.std())))
    return stds


# --- Model-shape presets -------------------------------------------------

def algorithmic_preset(m=192, blocks=2, vocab=4, classes=4):
    """Token-sequence model for the arithmetic and sorting benchmarks."""
    return ModelConfig(m=m, blocks=blocks, n_max=4096, vocab=vocab, classes=classes)


def musicnet_shape_preset():
    """Waveform model shape: two strided convs into two blocks, 128-way head."""
    return ModelConfig(
        m=192, blocks=2, n_max=8192, vocab=0, classes=128,
        conv_layers=2, head="center_element",
    )


def lambada_shape_preset():
    """Word-vector model shape: 300-wide pretrained vectors, position-scalar head."""
    return ModelConfig(
        m=384, blocks=2, n_max=256, vocab=0, classes=1,
        input_dim=300, head="position_scalar",
    )


PRESETS = {
    "algorithmic": algorithmic_preset,
    "musicnet_shape": musicnet_shape_preset,
    "lambada_shape": lambada_shape_preset,
}
