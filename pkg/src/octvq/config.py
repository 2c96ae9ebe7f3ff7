"""Codec configuration and its plain ``key = value`` text format."""

from dataclasses import dataclass, fields, replace

from octvq.errors import ConfigError


@dataclass(frozen=True)
class CodecConfig:
    # octree
    coarsest_side: int = 32
    max_level: int = 3
    # lambda_n = lambda_multipliers[n] * lambda, indexed by split level n = 0..max_level
    lambda_multipliers: tuple = (8.0, 4.6, 2.5, 1.0)
    thickness: int = 1
    target_bits: int = 9
    # image codec: one codebook size per pyramid level (0 = coarsest 4x4 content);
    # residual grids get few codewords so coarse leaves really are cheaper
    codebook_sizes: tuple = (256, 16, 1, 1)
    patch: int = 4
    # training
    seed: int = 0
    max_train_leaves: int = 4000
    max_train_vectors: int = 20000
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-4
    # evaluation
    normal_neighbors: int = 9
    max_parameters: int = 660_000

    def __post_init__(self):
        object.__setattr__(self, "lambda_multipliers", tuple(float(m) for m in self.lambda_multipliers))
        object.__setattr__(self, "codebook_sizes", tuple(int(c) for c in self.codebook_sizes))
        self.validate()

    def validate(self):
        side = self.coarsest_side
        if self.patch != 4:
            raise ConfigError("only 4x4 patches are supported")
        if side < 1 or side & (side - 1):
            raise ConfigError(f"coarsest_side must be a power of two, got {side}")
        if self.max_level < 0 or side >> self.max_level < self.patch:
            raise ConfigError(
                f"coarsest_side / 2**max_level must be >= {self.patch}, "
                f"got {side} / 2**{self.max_level}")
        if len(self.lambda_multipliers) != self.max_level + 1:
            raise ConfigError("need one lambda multiplier per split level")
        m = self.lambda_multipliers
        if any(a <= b for a, b in zip(m, m[1:])):
            raise ConfigError("lambda multipliers must strictly decrease with level")
        if any(x <= 0 or abs(x * 100 - round(x * 100)) > 1e-9 or x * 100 > 0xFFFF for x in m):
            raise ConfigError("lambda multipliers must be positive multiples of 0.01 below 655.36")
        if len(self.codebook_sizes) < self.pyramid_levels(side):
            raise ConfigError(
                f"need {self.pyramid_levels(side)} codebook sizes for side {side}")
        for c in self.codebook_sizes:
            if c < 1 or c & (c - 1) or c > 1 << 16:
                raise ConfigError(f"codebook size must be a power of two <= 65536, got {c}")
        if not 0 <= self.thickness < 256:
            raise ConfigError("thickness must fit in a byte")
        if not 1 <= self.target_bits <= 21:
            raise ConfigError("target_bits out of range")
        if self.normal_neighbors < 3:
            raise ConfigError("normal_neighbors must be >= 3")

    def pyramid_levels(self, side):
        """Number of grid levels for a leaf of the given side (4 -> 1, 32 -> 4)."""
        return (side // self.patch).bit_length()

    def leaf_sides(self):
        return [self.coarsest_side >> n for n in range(self.max_level + 1)]

    def level_lambda(self, lam, level):
        return self.lambda_multipliers[level] * lam


def _format(value):
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def dump_config(cfg):
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in fields(cfg))


def parse_config(text, base=None):
    """Parse ``key = value`` lines; unknown keys are an error, missing keys keep defaults."""
    base = base or CodecConfig()
    types = {f.name: type(getattr(base, f.name)) for f in fields(base)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            if types[key] is tuple:
                elem = float if key == "lambda_multipliers" else int
                updates[key] = tuple(elem(v) for v in value.split(",") if v.strip())
            else:
                updates[key] = types[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    return replace(base, **updates)


def load_config(path, base=None):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), base)
