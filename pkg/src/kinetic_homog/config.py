"""Experiment configuration: TOML (or JSON) loading, validation and builders.

A configuration is a nested mapping with these tables::

    seed = 0
    [velocity]    d, family, count, v_min, v_max
    [cell]        points (per dimension)
    [kernel]      sigma spec (see kernel.py) plus ``psi_star`` and ``allow_asymmetry``
    [source]      ``terms`` list (see macro.SourceSpec)
    [macro]       period, cells, points_per_cell
    [transport]   epsilon, eta for a single direct solve
    [sweep]       ``points = [[eps, eta], ...]`` or ``epsilons`` with ``rule``
    [tolerances]  compat
    [study]       floor_check, workers
"""

from __future__ import annotations

import json
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError, HomogError
from .grids import CellGrid, MacroGrid, build_velocity_grid
from .kernel import build_kernel

KNOWN_TABLES = {"seed", "name", "velocity", "cell", "kernel", "source", "macro", "transport",
                "sweep", "tolerances", "study", "check"}


def load_config(path):
    """Read a TOML or JSON experiment file and validate it."""
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            cfg = json.loads(text)
        else:
            cfg = tomllib.loads(text.decode())
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return validate_config(cfg)


def validate_config(cfg):
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(cfg) - KNOWN_TABLES
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    seed = cfg.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    for name in KNOWN_TABLES - {"seed", "name"}:
        if name in cfg and not isinstance(cfg[name], dict):
            raise ConfigError(f"[{name}] must be a table")
    compat = cfg.get("tolerances", {}).get("compat", 1e-11)
    if not isinstance(compat, (int, float)) or not 0 < compat < 1e-3:
        raise ConfigError("tolerances.compat must lie in (0, 1e-3)")
    from .harness import sweep_points

    try:
        pairs = sweep_points(cfg.get("sweep", {}))
    except (HomogError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid sweep: {exc}") from exc
    tr = cfg.get("transport")
    if tr:
        if "epsilon" not in tr or "eta" not in tr:
            raise ConfigError("[transport] needs epsilon and eta")
        pairs = pairs + [(float(tr["epsilon"]), float(tr["eta"]))]
    for eps, eta in pairs:
        check_pair(eps, eta)
    return cfg


def check_pair(eps, eta):
    """Enforce 0 < epsilon < alpha = epsilon / eta < 1."""
    if eps <= 0 or eta <= 0:
        raise ConfigError(f"epsilon and eta must be positive, got ({eps}, {eta})")
    if eta >= 1:
        raise ConfigError(f"eta must be < 1, got {eta}")
    if eps / eta >= 1:
        raise ConfigError(f"alpha = epsilon / eta must be < 1, got {eps / eta}")


def build_grids(cfg):
    try:
        vg = build_velocity_grid(cfg.get("velocity", {}))
        cell = cfg.get("cell", {})
        cg = CellGrid(int(cell.get("points", 64)), vg.dim)
    except (HomogError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid grid spec: {exc}") from exc
    return vg, cg


def build_kernel_from_config(cfg):
    vg, cg = build_grids(cfg)
    spec = dict(cfg.get("kernel", {"family": "isotropic"}))
    psi_star = spec.pop("psi_star", None)
    allow = bool(spec.pop("allow_asymmetry", False))
    try:
        return build_kernel(spec, psi_star, vg, cg, allow_asymmetry=allow)
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"invalid kernel spec: {exc}") from exc


def build_macro_grid(cfg, dim=1):
    """Torus for the macroscopic densities (no cell structure needed beyond even counts)."""
    mac = cfg.get("macro", {})
    try:
        period = float(mac.get("period", 1.0))
        cells = int(mac.get("cells", 2))
        ppc = int(mac.get("points_per_cell", 64))
        return MacroGrid(period, cells * ppc, cells, dim)
    except (HomogError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid macro grid: {exc}") from exc
