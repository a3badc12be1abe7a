"""Run configuration: one flat record of every dimension and knob.

Config files are plain ``key = value`` text (one pair per line, ``#``
comments); command-line overrides win over file values.  All derived
dimensions are computed through properties so they can never drift out of
sync with the primary fields.
"""

from __future__ import annotations

import dataclasses

from .errors import ConfigurationError, ParseError

GUIDANCE_DIM = 5


@dataclasses.dataclass
class RunConfig:
    n: int = 8
    m: int = 4
    p: int = 5
    k_zone: int = 6
    k_config: int = 4
    zone_hidden: tuple = (64, 64)
    config_hidden: tuple = (64, 64)
    heads: int = 1
    stem_channels: int = 8
    n_cx: int = 3
    drop_path: float = 0.0
    lr: float = 1e-3
    zone_lr_scale: float = 0.1
    lambda_zone: float = 0.1
    batch_size: int = 32
    steps_zone: int = 1500
    steps_config: int = 1500
    seed: int = 0
    use_attention: bool = True
    use_geo: bool = True
    use_condition_projection: bool = True
    use_uncond_ar: bool = True
    use_sampled_u: bool = True

    @property
    def d1(self):
        return 2 * (self.p + 2)

    @property
    def d2(self):
        return GUIDANCE_DIM

    @property
    def info_dim(self):
        return self.d1 + self.d2

    @property
    def d_zone(self):
        return self.n * self.n

    @property
    def d_config(self):
        return self.n * self.n * self.p

    def validate(self):
        if self.n < 4:
            raise ConfigurationError("n must be >= 4")
        if self.n % 2:
            raise ConfigurationError("n must be even (coupling splits N^2 in half)")
        if self.m < 2:
            raise ConfigurationError("m must be >= 2")
        if not 2 <= self.p <= 20:
            raise ConfigurationError("p must be in [2, 20]")
        if self.k_zone < 1 or self.k_config < 1:
            raise ConfigurationError("block counts must be >= 1")
        if self.heads < 1 or self.info_dim % self.heads:
            raise ConfigurationError(
                f"D={self.info_dim} must be divisible by heads={self.heads}"
            )
        if self.n_cx < 1:
            raise ConfigurationError("n_cx must be >= 1")
        down = 1 << (self.n_cx - 1)
        if self.n % down or self.n // down < 1:
            raise ConfigurationError(
                f"n={self.n} incompatible with {self.n_cx - 1} stride-2 down-samples"
            )
        if self.batch_size < 2:
            raise ConfigurationError("batch size must be >= 2 (batch-norm)")
        if self.lr <= 0:
            raise ConfigurationError("lr must be positive")
        if self.lambda_zone < 0 or self.zone_lr_scale < 0:
            raise ConfigurationError("stage-2 weights must be nonnegative")
        if self.steps_zone < 0 or self.steps_config < 0:
            raise ConfigurationError("step budgets must be nonnegative")
        if not 0.0 <= self.drop_path < 1.0:
            raise ConfigurationError("drop_path must be in [0, 1)")
        return self

    def as_dict(self):
        out = dataclasses.asdict(self)
        out["zone_hidden"] = list(self.zone_hidden)
        out["config_hidden"] = list(self.config_hidden)
        return out

    @classmethod
    def from_sources(cls, file_path=None, overrides=None):
        values = {}
        if file_path is not None:
            values.update(parse_config_file(file_path))
        for key, raw in (overrides or {}).items():
            values[key] = raw
        kwargs = {}
        fields = {f.name: f for f in dataclasses.fields(cls)}
        for key, raw in values.items():
            if key not in fields:
                raise ConfigurationError(f"unknown config key: {key}")
            kwargs[key] = _coerce(raw, getattr(cls, key), key)
        return cls(**kwargs).validate()


def _coerce(raw, default, key):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigurationError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigurationError(f"{key}: expected an integer, got {raw!r}") from exc
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigurationError(f"{key}: expected a float, got {raw!r}") from exc
    if isinstance(default, tuple):
        try:
            return tuple(int(tok) for tok in raw.split(",") if tok.strip())
        except ValueError as exc:
            raise ConfigurationError(f"{key}: expected ints like '64,64'") from exc
    return raw


def parse_config_file(path):
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ParseError(f"expected 'key = value': {stripped!r}",
                                 line_number=lineno)
            key, _, val = stripped.partition("=")
            values[key.strip()] = val.strip()
    return values