"""Key-value run configuration files.

The format is deliberately plain: one ``key = value`` pair per line,
``#`` comments, blank lines ignored.  ``schema_version`` is required and
must equal 1.  Lists are comma-separated.  Example::

    schema_version = 1
    window = 12
    retrain_every = 6
    alpha = 0.5
    depths = 1,2,4,8
    activation = relu
    sigma_w = 1.0
    sigma_b = 0.05
    kernels = ntk
    ridge_grid = 1e-5,1e-4,1e-3,1e-2,1e-1,1,10,100,1000
    weight_mode = ridge
"""

from .backtest import DEFAULT_RIDGE_GRID, BacktestConfig
from .kernels import ArchitectureSpec

__all__ = [
    "SCHEMA_VERSION",
    "DEFAULT_OPTIONS",
    "parse_config_text",
    "load_config",
    "render_config",
    "build_backtest_config",
]

SCHEMA_VERSION = 1

# key -> (parser, default); None default means required.
def _floats(s):
    return tuple(float(v) for v in s.split(",") if v.strip())


def _ints(s):
    return tuple(int(v) for v in s.split(",") if v.strip())


def _strings(s):
    return tuple(v.strip() for v in s.split(",") if v.strip())


_KEYS = {
    "schema_version": (int, None),
    "window": (int, None),
    "retrain_every": (int, 6),
    "alpha": (float, 0.5),
    "depths": (_ints, (1, 2, 4, 8)),
    "activation": (str, "relu"),
    "sigma_w": (float, 1.0),
    "sigma_b": (float, 0.05),
    "kernels": (_strings, ("ntk",)),
    "ridge_grid": (_floats, DEFAULT_RIDGE_GRID),
    "weight_mode": (str, "ridge"),
    "eta": (float, 1.0),
    "s": (float, 1.0),
}

DEFAULT_OPTIONS = {k: d for k, (_, d) in _KEYS.items() if d is not None}


def parse_config_text(text: str) -> dict:
    """Parse config text into typed options; unknown or duplicate keys raise."""
    options = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        if key in options:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        parser, _ = _KEYS[key]
        try:
            options[key] = parser(value)
        except ValueError:
            raise ValueError(f"line {lineno}: cannot parse {key} value {value!r}") from None
    if "schema_version" not in options:
        raise ValueError("config must declare schema_version")
    if options["schema_version"] != SCHEMA_VERSION:
        raise ValueError(
            f"unsupported schema_version {options['schema_version']}; this build reads {SCHEMA_VERSION}"
        )
    for key, (_, default) in _KEYS.items():
        if key not in options:
            if default is None and key != "schema_version":
                raise ValueError(f"config must set {key}")
            options.setdefault(key, default)
    return options


def load_config(path) -> dict:
    with open(path) as fh:
        return parse_config_text(fh.read())


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_config(options: dict) -> str:
    """Inverse of parse: render options in a stable key order."""
    unknown = set(options) - set(_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    merged = dict(DEFAULT_OPTIONS)
    merged["schema_version"] = SCHEMA_VERSION
    merged.update(options)
    lines = [f"{key} = {_fmt(merged[key])}" for key in _KEYS if key in merged]
    return "\n".join(lines) + "\n"


def build_backtest_config(options: dict, input_dim: int) -> BacktestConfig:
    """Turn parsed options plus the panel's characteristic count into a run config."""
    archs = tuple(
        ArchitectureSpec(
            depth=L,
            sigma_w=(options["sigma_w"],) * (L + 1),
            sigma_b=(options["sigma_b"],) * L,
            activation=options["activation"],
            input_dim=input_dim,
        )
        for L in options["depths"]
    )
    return BacktestConfig(
        window=options["window"],
        architectures=archs,
        ridge_grid=options["ridge_grid"],
        retrain_every=options["retrain_every"],
        alpha=options["alpha"],
        kernels=options["kernels"],
        weight_mode=options["weight_mode"],
        eta=options["eta"],
        s=options["s"],
    )
