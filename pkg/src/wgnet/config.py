"""Run configuration: an INI-style file with fixed sections and keys.

Every key is validated before any computation starts and unknown keys are
rejected, so a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


def _int(v):
    return int(v)


def _float(v):
    return float(v)


def _opt_float(v):
    return None if str(v).strip().lower() in ("", "none", "auto") else float(v)


def _bool(v):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _widths(v):
    if isinstance(v, (list, tuple)):
        return [int(x) for x in v]
    return [int(x) for x in str(v).replace(",", " ").split()]


def _choice(*options):
    def parse(v):
        v = str(v).strip()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return v
    return parse


def _str(v):
    return str(v).strip()


def _opt_str(v):
    v = str(v).strip()
    return v or None


SCHEMA = {
    "problem": {
        "name": ("smooth_square", _choice("smooth_square", "lshape_singular", "interface_strip", "custom")),
        "beta": (10.0, _float),
        "f": (None, _opt_str),
        "g": ("0", _str),
        "u": (None, _opt_str),
        "domain": ("square", _choice("square", "lshape", "custom")),
        "cutoff": (None, _opt_str),
    },
    "mesh": {
        "generator": ("square", _choice("square", "lshape", "file")),
        "n": (8, _int),
        "cell_kind": ("quad", _choice("quad", "triangle")),
        "path": (None, _opt_str),
    },
    "discretization": {
        "k": (1, _int),
        "quad_degree": (None, lambda v: None if _opt_float(v) is None else int(v)),
        "proj_degree": (None, lambda v: None if _opt_float(v) is None else int(v)),
    },
    "solver": {
        "rel_tol": (1e-10, _float),
        "max_iter": (None, lambda v: None if _opt_float(v) is None else int(v)),
    },
    "convergence": {
        "levels": (4, _int),
    },
    "enrichment": {
        "mode": ("generalized", _choice("projected", "generalized")),
        "tol": (None, _opt_float),
        "max_enrichments": (8, _int),
        "include_base": (True, _bool),
        "delta_norm": (1e-10, _float),
        "schur_eps": (1e-10, _float),
    },
    "network": {
        "widths": ([2, 32, 32, 1], _widths),
        "seed": (0, _int),
        "lr": (1e-3, _float),
        "steps": (2000, _int),
        "restarts": (4, _int),
    },
    "quadrature": {
        "neural_degree": (10, _int),
        "subdivisions": (2, _int),
    },
    "output": {
        "dir": ("wgnet-out", _str),
    },
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)
    source: str | None = None

    def __getitem__(self, key):
        section, name = key.split(".")
        return self.values[section][name]

    def set(self, key, value):
        section, name = key.split(".")
        self.values[section][name] = value

    def echo(self) -> dict:
        return {s: dict(v) for s, v in self.values.items()}

    def enrichment_config(self):
        from .enrichment import EnrichmentConfig

        e, n, q, s = (self.values[x] for x in ("enrichment", "network", "quadrature", "solver"))
        return EnrichmentConfig(
            mode=e["mode"], tol=e["tol"], max_enrichments=e["max_enrichments"], widths=tuple(n["widths"]),
            restarts=n["restarts"], steps=n["steps"], lr=n["lr"], seed=n["seed"],
            neural_degree=q["neural_degree"], subdivisions=q["subdivisions"], delta_norm=e["delta_norm"],
            schur_eps=e["schur_eps"], rel_tol=s["rel_tol"], include_base=e["include_base"])


def defaults() -> RunConfig:
    return RunConfig({s: {k: d for k, (d, _) in keys.items()} for s, keys in SCHEMA.items()})


def parse_config(text: str, source: str | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = defaults()
    cfg.source = source
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown config key '{key}' in section [{section}]")
            _, conv = SCHEMA[section][key]
            try:
                cfg.values[section][key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key} = {raw!r}: {exc}") from None
    validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


def validate(cfg: RunConfig) -> None:
    v = cfg.values
    if v["discretization"]["k"] not in (1, 2):
        raise ConfigError("discretization.k must be 1 or 2")
    if v["mesh"]["n"] < 1:
        raise ConfigError("mesh.n must be >= 1")
    if v["mesh"]["generator"] == "file" and not v["mesh"]["path"]:
        raise ConfigError("mesh.path is required when mesh.generator = file")
    if v["problem"]["name"] == "custom" and not v["problem"]["f"]:
        raise ConfigError("problem.f is required for a custom problem")
    if v["convergence"]["levels"] < 2:
        raise ConfigError("convergence.levels must be >= 2")
    w = v["network"]["widths"]
    if len(w) < 2 or w[0] != 2 or w[-1] != 1 or min(w) < 1:
        raise ConfigError("network.widths must look like '2 32 32 1'")
    if v["network"]["restarts"] < 1 or v["network"]["steps"] < 0:
        raise ConfigError("network.restarts must be >= 1 and network.steps >= 0")
    if v["quadrature"]["subdivisions"] < 1 or v["quadrature"]["neural_degree"] < 0:
        raise ConfigError("quadrature.subdivisions must be >= 1 and neural_degree >= 0")
    if v["solver"]["rel_tol"] <= 0:
        raise ConfigError("solver.rel_tol must be positive")
    if v["enrichment"]["max_enrichments"] < 0:
        raise ConfigError("enrichment.max_enrichments must be >= 0")


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for section, keys in cfg.values.items():
        lines.append(f"[{section}]")
        for k, val in keys.items():
            if val is None:
                continue
            if isinstance(val, list):
                val = " ".join(map(str, val))
            lines.append(f"{k} = {val}")
        lines.append("")
    return "\n".join(lines)

