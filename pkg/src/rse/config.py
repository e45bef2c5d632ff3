"""Run configuration: a flat key=value text format with CLI overrides.

Unknown keys are rejected so typos fail loudly; parse -> serialize ->
parse is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .autodiff import ValidationError
from .network import ModelConfig
from .units import AblationFlags


@dataclass
class RunConfig:
    # task
    task: str = "addition"
    sort_alphabet: int = 12
    # model
    m: int = 96
    blocks: int = 1
    n_max: int = 4096
    vocab: int = 4
    classes: int = 4
    hidden: int = 0  # 0 selects the 4m default
    r: float = 0.9
    unit: str = "rsu"
    use_layernorm: bool = True
    activation: str = "gelu"
    residual: str = "scaled"
    # training
    steps: int = 30000
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float = 5.0
    optimizer: str = "radam"
    max_train_len: int = 64
    eval_every: int = 500
    eval_lengths: str = "64,128,256"
    eval_examples: int = 128
    early_stop_acc: float = 0.0  # 0 disables
    early_stop_length: int = 0  # 0 means the last eval length
    seed: int = 0
    outdir: str = "runs/default"
    timing: bool = False  # real wallclock_s in the CSV; breaks byte reproducibility

    def model_config(self):
        return ModelConfig(
            m=self.m,
            blocks=self.blocks,
            n_max=self.n_max,
            vocab=self.vocab if self.task != "sorting" else self.sort_alphabet + 1,
            classes=self.classes if self.task != "sorting" else self.sort_alphabet + 1,
            hidden=self.hidden,
            r=self.r,
            unit=self.unit,
            flags=AblationFlags(
                use_layernorm=self.use_layernorm,
                activation=self.activation,
                residual=self.residual,
            ),
        )

    def buckets(self):
        out = []
        b = 8
        while b <= self.max_train_len:
            out.append(b)
            b *= 2
        if not out:
            raise ValidationError("max_train_len must be >= 8")
        return tuple(out)

    def eval_length_list(self):
        return tuple(int(x) for x in str(self.eval_lengths).split(",") if x.strip())


_FIELDS = {f.name: f.type for f in fields(RunConfig)}
_BOOL_FIELDS = {f.name for f in fields(RunConfig) if f.type in (bool, "bool")}


def _coerce(name, raw, default):
    if isinstance(default, bool) or name in _BOOL_FIELDS:
        low = str(raw).strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValidationError(f"cannot parse boolean {name}={raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return str(raw)


def parse_config_text(text, base=None):
    """Parse key=value lines (comments with #, blank lines allowed)."""
    cfg = base if base is not None else RunConfig()
    defaults = RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValidationError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELDS:
            raise ValidationError(f"line {lineno}: unknown key {key!r}")
        setattr(cfg, key, _coerce(key, raw, getattr(defaults, key)))
    return cfg


def load_config(path, base=None):
    with open(path) as fh:
        return parse_config_text(fh.read(), base)


def serialize_config(cfg):
    lines = [f"{name} = {_format(getattr(cfg, name))}" for name in _FIELDS]
    return "\n".join(lines) + "\n"


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def save_config(cfg, path):
    with open(path, "w") as fh:
        fh.write(serialize_config(cfg))


def apply_overrides(cfg, overrides):
    """Apply (key, value) string pairs; last writer wins; unknown keys rejected."""
    defaults = RunConfig()
    for key, raw in overrides:
        key = key.replace("-", "_")
        if key not in _FIELDS:
            raise ValidationError(f"unknown config key {key!r}")
        setattr(cfg, key, _coerce(key, raw, getattr(defaults, key)))
    return cfg
