"""Experiment configuration files: TOML text checked against a per-kind schema.

Every problem is reported as a :class:`~elastlab.errors.ConfigError` whose
``location`` names the offending field (``model.a``, ``pairs[1].x_prime``).
See ``docs/config.md`` for the full schema.
"""
import math
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError

REQUIRED = object()
KINDS = ("dhom", "relu", "lastlayer", "mlp-regress", "mlp-classify", "verify")


@dataclass(frozen=True)
class Field:
    kind: str
    default: object = REQUIRED
    check: object = None
    doc: str = ""


def positive(v):
    return None if v > 0 else "must be positive"


def nonnegative(v):
    return None if v >= 0 else "must be nonnegative"


def at_least(n):
    return lambda v: None if v >= n else f"must be at least {n}"


def all_positive(v):
    return None if all(x > 0 for x in v) else "entries must be positive"


def nonempty(v):
    return None if len(v) > 0 else "must not be empty"


def one_of(*options):
    return lambda v: None if v in options else f"must be one of {', '.join(map(repr, options))}"


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _coerce(kind, value, loc):
    def bad(what):
        raise ConfigError(loc, f"expected {what}, got {type(value).__name__} {value!r}")

    if kind == "float":
        if not _is_num(value):
            bad("a number")
        if not math.isfinite(value):
            raise ConfigError(loc, "must be finite")
        return float(value)
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            bad("an integer")
        return int(value)
    if kind == "bool":
        if not isinstance(value, bool):
            bad("true or false")
        return value
    if kind == "str":
        if not isinstance(value, str):
            bad("a string")
        return value
    if kind in ("floats", "ints"):
        if not isinstance(value, list):
            bad("a list")
        inner = kind[:-1]
        return [_coerce(inner, v, f"{loc}[{i}]") for i, v in enumerate(value)]
    if kind in ("matrix", "imatrix"):
        if not isinstance(value, list):
            bad("a list of lists")
        inner = "floats" if kind == "matrix" else "ints"
        return [_coerce(inner, v, f"{loc}[{i}]") for i, v in enumerate(value)]
    raise AssertionError(kind)


def _section(spec, raw, loc):
    if not isinstance(raw, dict):
        raise ConfigError(loc, "expected a table")
    unknown = sorted(set(raw) - set(spec))
    if unknown:
        raise ConfigError(f"{loc}.{unknown[0]}" if loc else unknown[0], "unknown field")
    out = {}
    for name, f in spec.items():
        where = f"{loc}.{name}" if loc else name
        if name not in raw:
            if f.default is REQUIRED:
                raise ConfigError(where, "required field is missing")
            out[name] = f.default() if callable(f.default) else f.default
            continue
        val = _coerce(f.kind, raw[name], where)
        if f.check is not None:
            msg = f.check(val)
            if msg:
                raise ConfigError(where, msg)
        out[name] = val
    return out


PAIR = {
    "x": Field("floats", check=nonempty),
    "x_prime": Field("floats", check=nonempty),
    "id": Field("str", None),
}

TRAIN = {
    "optimizer": Field("str", "sgd", one_of("sgd", "adam")),
    "eta": Field("float", 0.05, positive),
    "batch": Field("int", 16, at_least(1)),
    "epochs": Field("int", 60, at_least(1)),
    "records_per_epoch": Field("int", 1, at_least(1)),
    "srel_eta": Field("float", 1e-3, positive),
}

SCHEMAS = {
    "dhom": {
        "model": {
            "a": Field("floats", check=all_positive),
            "b": Field("floats", check=all_positive),
            "w0_sq": Field("floats", check=all_positive),
            "theta": Field("float", 0.001, positive),
            "w_star": Field("floats", None),
        },
        "curve": {
            "t_start": Field("float", 1.0, nonnegative),
            "t_stop": Field("float", 1000.0, nonnegative),
            "t_step": Field("float", 1.0, positive),
        },
        "sgd": {
            "enabled": Field("bool", True),
            "eta": Field("float", 0.001, positive),
            "steps": Field("int", 200000, at_least(1)),
            "record_until": Field("int", 2000, at_least(0)),
            "record_every": Field("int", 1, at_least(1)),
            "tol": Field("float", 1e-6, positive),
        },
        "distance": {
            "enabled": Field("bool", True),
            "x_prime": Field("floats", None),
            "z_max": Field("int", 100, at_least(2)),
            "t": Field("float", 500.0, nonnegative),
        },
    },
    "relu": {
        "model": {
            "w_star": Field("floats", check=nonempty),
            "w0": Field("floats", None),
            "eta": Field("float", 1e-4, positive),
            "steps": Field("int", 100000, at_least(1)),
            "record_every": Field("int", 50, at_least(1)),
            "late_fraction": Field("float", 0.2, lambda v: None if 0 < v <= 1 else "must lie in (0, 1]"),
        },
        "flow": {
            "enabled": Field("bool", True),
            "beta": Field("float", 1.0, positive),
            "n_moment": Field("int", 20000, at_least(1)),
            "t_stop": Field("float", 10.0, positive),
            "points": Field("int", 200, at_least(2)),
            "eta": Field("float", 1e-3, positive),
        },
    },
    "lastlayer": {
        "data": {
            "n_per_class": Field("int", 1000, at_least(1)),
            "means": Field("floats", lambda: [1.0, 9.0], nonempty),
            "variances": Field("floats", lambda: [2.0, 1.0], all_positive),
        },
        "model": {
            "lambda1": Field("float", 1.0, positive),
            "theta": Field("float", 0.001, positive),
            "init_scale": Field("float", 1e-3, nonnegative),
            "steps": Field("int", 12000, at_least(1)),
            "record_every": Field("int", 10, at_least(1)),
            "settings": Field("imatrix", lambda: [[10, 100], [50, 800], [400, 100]], nonempty),
            "final_fraction": Field("float", 0.2, lambda v: None if 0 < v <= 1 else "must lie in (0, 1]"),
        },
        "pair": {
            "sampled": Field("ints", lambda: [0, 0]),
            "test": Field("ints", lambda: [1, 0]),
        },
    },
    "mlp-regress": {
        "data": {
            "dims": Field("int", 10, at_least(1)),
            "n": Field("int", 2000, at_least(1)),
        },
        "net": {"hidden": Field("ints", lambda: [64, 64], all_positive)},
        "train": dict(TRAIN, epochs=Field("int", 10, at_least(1)), eta=Field("float", 0.01, positive),
                      batch=Field("int", 32, at_least(1))),
        "probes": {
            "radii": Field("floats", lambda: [0.25 + i * (5.75 / 15) for i in range(16)], nonempty),
            "near": Field("float", 0.5, positive),
            "far": Field("float", 4.0, positive),
            "warmup_records": Field("int", 1, at_least(0)),
        },
    },
    "mlp-classify": {
        "data": {
            "dims": Field("int", 5, at_least(3)),
            "separation": Field("float", 4.0, positive),
            "variance": Field("float", 0.25, positive),
            "n_per_class": Field("int", 300, at_least(1)),
        },
        "net": {"hidden": Field("ints", lambda: [32, 32, 32], all_positive)},
        "train": dict(TRAIN, k=Field("int", 20, at_least(1))),
    },
    "verify": {
        "verify": {
            "perturb": Field("str", None),
            "slow": Field("bool", False),
        },
    },
}

DEFAULT_SEEDS = {
    "dhom": list(range(20)),
    "relu": list(range(20)),
    "lastlayer": [0, 1, 2],
    "mlp-regress": [0, 1, 2],
    "mlp-classify": [0, 1, 2],
    "verify": [0],
}

LISTS = {"dhom": "pairs", "relu": "pairs"}


@dataclass
class ExperimentConfig:
    kind: str
    seeds: list
    sections: dict
    pairs: list = field(default_factory=list)
    out: str | None = None
    plots: bool = True
    title: str = ""
    source: str | None = None

    def __getitem__(self, name):
        return self.sections[name]


def validate(raw, source=None):
    """Check a parsed TOML mapping and fill defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("", "configuration must be a table")
    kind = raw.get("kind", REQUIRED)
    if kind is REQUIRED:
        raise ConfigError("kind", "required field is missing")
    if kind not in KINDS:
        raise ConfigError("kind", f"must be one of {', '.join(KINDS)}")
    schema = SCHEMAS[kind]
    top = {"kind", "seeds", "out", "plots", "title"} | set(schema) | ({LISTS[kind]} if kind in LISTS else set())
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(unknown[0], f"unknown field for kind {kind!r}")
    seeds = _coerce("ints", raw["seeds"], "seeds") if "seeds" in raw else list(DEFAULT_SEEDS[kind])
    if not seeds:
        raise ConfigError("seeds", "must not be empty")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds", "must not repeat")
    sections = {name: _section(spec, raw.get(name, {}), name) for name, spec in schema.items()}
    pairs = []
    if kind in LISTS:
        key = LISTS[kind]
        items = raw.get(key, [])
        if not isinstance(items, list):
            raise ConfigError(key, "expected an array of tables")
        if not items:
            raise ConfigError(key, "at least one probe pair is required")
        for i, item in enumerate(items):
            p = _section(PAIR, item, f"{key}[{i}]")
            if len(p["x"]) != len(p["x_prime"]):
                raise ConfigError(f"{key}[{i}].x_prime", "must have the same length as x")
            if p["id"] is None:
                p["id"] = f"pair{i}"
            pairs.append(p)
        ids = [p["id"] for p in pairs]
        if len(set(ids)) != len(ids):
            raise ConfigError(key, "pair ids must be unique")
    cfg = ExperimentConfig(
        kind=kind,
        seeds=seeds,
        sections=sections,
        pairs=pairs,
        out=_coerce("str", raw["out"], "out") if "out" in raw else None,
        plots=_coerce("bool", raw["plots"], "plots") if "plots" in raw else True,
        title=_coerce("str", raw["title"], "title") if "title" in raw else "",
        source=source,
    )
    _cross_checks(cfg)
    return cfg


def _same_len(cfg, loc_a, a, loc_b, b):
    if len(a) != len(b):
        raise ConfigError(loc_b, f"length {len(b)} does not match {loc_a} (length {len(a)})")


def _cross_checks(cfg):
    s = cfg.sections
    if cfg.kind == "dhom":
        m = s["model"]
        _same_len(cfg, "model.a", m["a"], "model.b", m["b"])
        _same_len(cfg, "model.a", m["a"], "model.w0_sq", m["w0_sq"])
        for q, (a, b, w) in enumerate(zip(m["a"], m["b"], m["w0_sq"])):
            if not w < a / b:
                raise ConfigError(f"model.w0_sq[{q}]", f"must lie in (0, a/b) = (0, {a / b:g})")
        if s["sgd"]["enabled"]:
            if m["w_star"] is None:
                raise ConfigError("model.w_star", "required when sgd.enabled is true")
            _same_len(cfg, "model.a", m["a"], "model.w_star", m["w_star"])
        for i, p in enumerate(cfg.pairs):
            _same_len(cfg, "model.a", m["a"], f"pairs[{i}].x", p["x"])
        c = s["curve"]
        if c["t_stop"] < c["t_start"]:
            raise ConfigError("curve.t_stop", "must not be below curve.t_start")
        d = s["distance"]
        if d["enabled"]:
            if d["x_prime"] is None:
                raise ConfigError("distance.x_prime", "required when distance.enabled is true")
            _same_len(cfg, "model.a", m["a"], "distance.x_prime", d["x_prime"])
    elif cfg.kind == "relu":
        m = s["model"]
        if m["w0"] is not None:
            _same_len(cfg, "model.w_star", m["w_star"], "model.w0", m["w0"])
        for i, p in enumerate(cfg.pairs):
            _same_len(cfg, "model.w_star", m["w_star"], f"pairs[{i}].x", p["x"])
    elif cfg.kind == "lastlayer":
        d = s["data"]
        _same_len(cfg, "data.means", d["means"], "data.variances", d["variances"])
        K = len(d["means"])
        for i, st in enumerate(s["model"]["settings"]):
            if len(st) != 2 or min(st) < 1:
                raise ConfigError(f"model.settings[{i}]", "expected [p, dims] with positive entries")
        for name in ("sampled", "test"):
            v = s["pair"][name]
            if len(v) != 2 or not 0 <= v[0] < K or not 0 <= v[1] < d["n_per_class"]:
                raise ConfigError(f"pair.{name}", "expected [class, index] inside the dataset")
    elif cfg.kind == "mlp-regress":
        p = s["probes"]
        if not p["near"] < p["far"]:
            raise ConfigError("probes.far", "must exceed probes.near")
    elif cfg.kind == "mlp-classify":
        if s["data"]["n_per_class"] < s["train"]["k"]:
            raise ConfigError("train.k", "must not exceed data.n_per_class")


def loads(text, source=None):
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(source or "<config>", f"not valid TOML: {exc}") from None
    return validate(raw, source)


def load(path):
    """Read and validate a configuration file."""
    try:
        with open(path, "rb") as fh:
            text = fh.read().decode("utf-8")
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read file: {exc.strerror}") from None
    except UnicodeDecodeError:
        raise ConfigError(str(path), "file is not UTF-8") from None
    return loads(text, str(path))
