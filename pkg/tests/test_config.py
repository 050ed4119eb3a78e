import json
from pathlib import Path

import numpy as np
import pytest

from kinetic_homog.config import (build_kernel_from_config, build_macro_grid, check_pair, load_config,
                                  validate_config)
from kinetic_homog.errors import ConfigError, KernelError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.mark.parametrize("name", ["isotropic", "generic", "drift", "empty"])
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / f"{name}.toml")
    assert isinstance(cfg, dict)


def test_json_is_equivalent_to_toml(tmp_path):
    cfg = load_config(CONFIGS / "generic.toml")
    path = tmp_path / "generic.json"
    path.write_text(json.dumps(cfg))
    a = build_kernel_from_config(cfg)
    b = build_kernel_from_config(load_config(path))
    np.testing.assert_array_equal(a.sigma, b.sigma)


def test_drift_config_builds_an_asymmetric_kernel():
    k = build_kernel_from_config(load_config(CONFIGS / "drift.toml"))
    assert not k.symmetric


def test_asymmetry_needs_permission():
    cfg = load_config(CONFIGS / "drift.toml")
    del cfg["kernel"]["allow_asymmetry"]
    with pytest.raises(KernelError):
        build_kernel_from_config(cfg)


@pytest.mark.parametrize("pair", [(0.5, 1.0), (0.2, 0.1), (0.0, 0.5), (0.1, -1.0)])
def test_scale_pairs_must_satisfy_ordering(pair):
    with pytest.raises(ConfigError):
        check_pair(*pair)
    with pytest.raises(ConfigError):
        validate_config({"sweep": {"points": [list(pair)]}})


@pytest.mark.parametrize("cfg", [{"bogus": 1}, {"seed": -1}, {"kernel": 3}, {"sweep": {"epsilons": [1e-2],
                                 "rule": "cubic"}}, {"tolerances": {"compat": 1.0}}, {"transport": {"eta": 0.1}}])
def test_invalid_configs(cfg):
    with pytest.raises(ConfigError):
        validate_config(cfg)


def test_unreadable_and_unparsable_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[kernel\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_macro_grid_from_config():
    mg = build_macro_grid({"macro": {"period": 2.0, "cells": 4, "points_per_cell": 16}})
    assert mg.n == 64 and mg.alpha == pytest.approx(0.5)
    with pytest.raises(ConfigError):
        build_macro_grid({"macro": {"cells": 3}})
