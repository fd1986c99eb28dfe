"""Experiment configuration: TOML parsing, validation, defaults and hashing.

A config has the sections ``problem``, ``topology``, ``algorithm``,
``oracle``, ``sweep`` (optional) and ``output``.  ``problem``, ``topology``
and ``algorithm`` may also be given as a bare string naming the kind, so
``problem = "quadratic"`` on its own is a complete config.
"""
import copy
import hashlib
import json

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid experiment configuration."""


PROBLEM_KINDS = ("quadratic", "synthetic", "softmax")
TOPOLOGY_KINDS = ("ring", "ladder", "random", "complete")
ALGORITHM_KINDS = ("adasdbo", "const")
SWEEP_PARAMETERS = ("gamma", "eta", "n", "topology", "ring_w", "r")
OUTPUT_FORMATS = ("csv", "jsonl")

# (type, default); REQUIRED marks keys without a default
REQUIRED = object()
_NUM = (int, float)

SCHEMA = {
    "problem": {
        "kind": (str, REQUIRED),
        "seed": (int, 0),
        # quadratic
        "upper_dim": (int, 5),
        "lower_dim": (int, 5),
        "scale": (_NUM, 0.1),
        "heterogeneity": (_NUM, 0.5),
        "coupling": (_NUM, 1.0),
        # synthetic
        "dim": (int, 50),
        "train_total": (int, 2000),
        "val_total": (int, 2000),
        "r": (_NUM, 1.0),
        # softmax (IDX files)
        "train_images": (str, None),
        "train_labels": (str, None),
        "val_images": (str, None),
        "val_labels": (str, None),
        "max_train": (int, 5000),
        "max_val": (int, 5000),
        "num_classes": (int, 10),
        "partition": (str, "equal"),
        "skew_fraction": (_NUM, 0.3),
    },
    "topology": {
        "kind": (str, "ring"),
        "n": (int, 5),
        "ring_w": (_NUM, 0.4),
        "edge_prob": (_NUM, 0.5),
        "seed": (int, 0),
    },
    "algorithm": {
        "kind": (str, "adasdbo"),
        "gamma": (_NUM, 1.0),
        "gamma_x": (_NUM, None),
        "gamma_y": (_NUM, None),
        "gamma_v": (_NUM, None),
        "m0": (_NUM, 10.0),
        "eta": (_NUM, None),
        "eta_x": (_NUM, 0.01),
        "eta_y": (_NUM, 0.02),
        "eta_v": (_NUM, 0.01),
        "projection_radius": ((str, int, float), "auto"),
        "rounds": (int, 1000),
        "mix_accumulators": (str, "squared"),
    },
    "oracle": {
        "inner_tol": (_NUM, 1e-9),
        "cg_tol": (_NUM, 1e-10),
        "max_inner_iters": (int, 10_000),
        "max_cg_iters": (int, 2_000),
        "stride": (int, 1),
    },
    "sweep": {
        "parameter": (str, REQUIRED),
        "values": (list, REQUIRED),
    },
    "output": {
        "dir": (str, "runs"),
        "formats": (list, ["csv"]),
    },
}

SECTION_SHORTHAND = ("problem", "topology", "algorithm")


def _type_ok(value, typ):
    if isinstance(value, bool):
        return typ is bool
    if typ is _NUM:
        return isinstance(value, (int, float))
    return isinstance(value, typ)


def _check_section(name, raw):
    schema = SCHEMA[name]
    if not isinstance(raw, dict):
        raise ConfigError(f"[{name}] must be a table")
    for key in raw:
        if key not in schema:
            raise ConfigError(f"unknown key '{name}.{key}'")
    out = {}
    for key, (typ, default) in schema.items():
        if key in raw:
            val = raw[key]
            if not (val is None and default is None) and not _type_ok(val, typ):
                raise ConfigError(f"'{name}.{key}' has wrong type {type(val).__name__}")
            if typ is _NUM:
                val = float(val) if isinstance(val, float) else val
            out[key] = val
        elif default is REQUIRED:
            raise ConfigError(f"missing required key '{name}.{key}'")
        else:
            out[key] = copy.deepcopy(default)
    return out


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def validate(cfg):
    """Check cross-field constraints of a defaults-filled config."""
    pb, topo, alg, orc = cfg["problem"], cfg["topology"], cfg["algorithm"], cfg["oracle"]
    _require(pb["kind"] in PROBLEM_KINDS, f"problem.kind must be one of {PROBLEM_KINDS}")
    _require(topo["kind"] in TOPOLOGY_KINDS, f"topology.kind must be one of {TOPOLOGY_KINDS}")
    _require(alg["kind"] in ALGORITHM_KINDS, f"algorithm.kind must be one of {ALGORITHM_KINDS}")
    _require(alg["rounds"] >= 1, "algorithm.rounds must be >= 1")
    _require(topo["n"] >= 1, "topology.n must be >= 1")
    _require(alg["m0"] > 0, "algorithm.m0 must be positive")
    for key in ("gamma", "gamma_x", "gamma_y", "gamma_v", "eta", "eta_x", "eta_y", "eta_v"):
        if alg[key] is not None:
            _require(alg[key] > 0, f"algorithm.{key} must be positive")
    rad = alg["projection_radius"]
    if isinstance(rad, str):
        _require(rad in ("auto", "unbounded"),
                 "algorithm.projection_radius must be 'auto', 'unbounded' or a number")
    else:
        _require(rad > 0, "algorithm.projection_radius must be positive")
    _require(alg["mix_accumulators"] in ("squared", "linear"),
             "algorithm.mix_accumulators must be 'squared' or 'linear'")
    _require(0 < orc["inner_tol"] < 1 and 0 < orc["cg_tol"] < 1,
             "oracle tolerances must lie in (0, 1)")
    _require(orc["max_inner_iters"] >= 1 and orc["max_cg_iters"] >= 1,
             "oracle iteration caps must be >= 1")
    _require(orc["stride"] >= 1, "oracle.stride must be >= 1")
    _require(pb["partition"] in ("equal", "by_class_skew"),
             "problem.partition must be 'equal' or 'by_class_skew'")
    if pb["kind"] == "synthetic":
        _require(pb["r"] > 0, "problem.r must be positive")
        _require(pb["train_total"] >= topo["n"] and pb["val_total"] >= topo["n"],
                 "synthetic sample totals must be at least topology.n")
    if pb["kind"] == "softmax":
        _require(pb["train_images"] and pb["train_labels"],
                 "softmax problem needs problem.train_images and problem.train_labels")
    if topo["kind"] == "ring":
        _require(0 < topo["ring_w"] < 1, "topology.ring_w must lie in (0, 1)")
    for fmt in cfg["output"]["formats"]:
        _require(fmt in OUTPUT_FORMATS, f"output.formats entries must be in {OUTPUT_FORMATS}")
    sweep = cfg.get("sweep")
    if sweep is not None:
        _require(sweep["parameter"] in SWEEP_PARAMETERS,
                 f"sweep.parameter must be one of {SWEEP_PARAMETERS}")
        _require(len(sweep["values"]) > 0, "sweep.values must be non-empty")
    return cfg


def resolve(raw):
    """Fill defaults and validate a parsed (dict) config."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a table")
    raw = copy.deepcopy(raw)
    for key in raw:
        if key not in SCHEMA:
            raise ConfigError(f"unknown section '{key}'")
    for key in SECTION_SHORTHAND:
        if isinstance(raw.get(key), str):
            raw[key] = {"kind": raw[key]}
    if "problem" not in raw:
        raise ConfigError("missing required section 'problem'")
    cfg = {}
    for name in SCHEMA:
        if name == "sweep":
            if "sweep" in raw:
                cfg["sweep"] = _check_section("sweep", raw["sweep"])
            continue
        cfg[name] = _check_section(name, raw.get(name, {}))
    return validate(cfg)


def parse_config(text):
    """Parse TOML text into a validated, defaults-filled config dict."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"TOML syntax error: {err}") from err
    return resolve(raw)


def load_config(path):
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as err:
        raise ConfigError(f"{path}: not UTF-8 text") from err
    return parse_config(text)


def config_hash(cfg):
    """Content hash of everything except the output section."""
    body = {k: v for k, v in cfg.items() if k != "output"}
    canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def apply_sweep_value(cfg, parameter, value):
    """Return a sweep-free copy of ``cfg`` with one sweep value applied."""
    out = copy.deepcopy(cfg)
    out.pop("sweep", None)
    alg, topo, pb = out["algorithm"], out["topology"], out["problem"]
    if parameter == "gamma":
        alg["gamma"] = value
        alg["gamma_x"] = alg["gamma_y"] = alg["gamma_v"] = None
    elif parameter == "eta":
        alg["eta"] = value
    elif parameter == "n":
        topo["n"] = value
    elif parameter == "topology":
        topo["kind"] = value
    elif parameter == "ring_w":
        topo["ring_w"] = value
    elif parameter == "r":
        pb["r"] = value
    else:
        raise ConfigError(f"unknown sweep parameter {parameter!r}")
    try:
        for section in ("problem", "topology", "algorithm"):
            out[section] = _check_section(section, out[section])
        return validate(out)
    except ConfigError as err:
        raise ConfigError(f"sweep value {parameter}={value!r}: {err}") from err


def coefficients(alg):
    """Effective ``(gamma_x, gamma_y, gamma_v)`` and ``(eta_x, eta_y, eta_v)``."""
    gam = tuple(alg[k] if alg[k] is not None else alg["gamma"]
                for k in ("gamma_x", "gamma_y", "gamma_v"))
    if alg["eta"] is not None:
        eta = (alg["eta"],) * 3
    else:
        eta = (alg["eta_x"], alg["eta_y"], alg["eta_v"])
    return gam, eta
