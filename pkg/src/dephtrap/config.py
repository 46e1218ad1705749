"""Sectioned TOML configuration with units spelled out in key names.

Frequencies are written as f = omega / 2 pi in MHz (keys ending in
``_mhz_over_2pi``) and converted to rad/us exactly once, by the builder
methods of :class:`Config`. Interaction coefficients use MHz um^eta over 2 pi;
the dimer coefficients C6 and C4 may instead be given through critical
distances (``d_c_s_um``, ``d_c_p_um``).
"""
from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .params import (RB87_MASS_AMU, BackgroundGas, BoxGeometry, EitParams, Grid1D,
                     InteractionParams, UnitSystem, WavepacketSpec, coefficient_for_critical_distance,
                     hbar_over_mass, mhz_over_2pi, sample_background)


class ConfigError(ValueError):
    pass


NUM = (int, float)
_LIST = list

# section -> key -> (types, default); a default of REQUIRED must be given
REQUIRED = object()
SCHEMA = {
    "scenario": {"name": (str, REQUIRED)},
    "units": {"mass_amu": (NUM, RB87_MASS_AMU)},
    "eit": {
        "omega_p_mhz_over_2pi": (NUM, REQUIRED),
        "omega_c_mhz_over_2pi": (NUM, REQUIRED),
        "delta_p_mhz_over_2pi": (NUM, 0.0),
        "delta_c_mhz_over_2pi": (NUM, 0.0),
        "gamma_p_mhz_over_2pi": (NUM, REQUIRED),
    },
    "interactions": {
        "c6_us_mhz_um6_over_2pi": (NUM, None),
        "c4_up_mhz_um4_over_2pi": (NUM, None),
        "d_c_s_um": (NUM, None),
        "d_c_p_um": (NUM, None),
        "c3_dd_mhz_um3_over_2pi": (NUM, 0.0),
    },
    "gas": {
        "shape": (str, "cube"),
        "center_um": (_LIST, [0.0, 0.0, 0.0]),
        "side_um": (NUM, None),
        "length_um": (NUM, None),
        "volume_um3": (NUM, None),
        "extents_um": (_LIST, None),
        "density_per_m3": (NUM, REQUIRED),
        "count": (int, None),
        "seed": (int, 0),
    },
    "grid": {"min_um": (NUM, REQUIRED), "max_um": (NUM, REQUIRED), "n": (int, REQUIRED)},
    "wavepacket": {
        "center_um": (NUM, 0.0),
        "sigma_um": (NUM, 0.4),
        "surface": (str, "repulsive"),
    },
    "kernels": {
        "vext": (str, "fit"),
        "vext_window_um": (NUM, 2.0),
        "vext_coefficients_mhz_over_2pi": (_LIST, None),
        "mask": (str, "auto"),
        "mask_window_um": (_LIST, None),
        "rc_threshold": (NUM, 0.1),
    },
    "run": {
        "t_final_us": (NUM, REQUIRED),
        "dt_us": (NUM, None),
        "out_every_us": (NUM, 10.0),
        "absorb_rate_per_us": (NUM, 20.0),
        "snapshot_times_us": (_LIST, []),
    },
    "benchmark": {
        "r_um": (_LIST, None),
        "d_um": (_LIST, None),
        "t_final_us": (NUM, 30.0),
        "n_samples": (int, 300),
        "trace_points": (_LIST, [[6.0, 1.05], [18.0, 1.05]]),
        "trace_t_final_us": (NUM, 25.0),
    },
    "calibration": {
        "target_rc_um": (NUM, 7.5),
        "bracket_mhz_um3_over_2pi": (_LIST, [100.0, 10000.0]),
        "tolerance_um": (NUM, 0.1),
        "r_min_um": (NUM, 2.0),
        "r_max_um": (NUM, 30.0),
        "n_r": (int, 400),
        "scaling_factors": (_LIST, [0.5, 1.0, 2.0]),
    },
}

OPTIONAL_SECTIONS = {"wavepacket", "kernels", "run", "benchmark", "calibration", "units"}


def _check_type(section, key, value, types):
    if types is NUM:
        ok = isinstance(value, NUM) and not isinstance(value, bool)
    elif types is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, types)
    if not ok:
        raise ConfigError(f"[{section}] {key}: expected {getattr(types, '__name__', 'number')}, "
                          f"got {type(value).__name__}")
    if isinstance(value, float) and not math.isfinite(value):
        raise ConfigError(f"[{section}] {key}: must be finite")


def validate(raw: dict) -> dict:
    """Check keys and types; return a normalised copy with defaults filled in."""
    out = {}
    for section in raw:
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
    for section, keys in SCHEMA.items():
        given = raw.get(section)
        if given is None:
            if section in OPTIONAL_SECTIONS:
                given = {}
            else:
                raise ConfigError(f"missing section [{section}]")
        if not isinstance(given, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key in given:
            if key not in keys:
                raise ConfigError(f"[{section}] unknown key {key!r}")
        sec = {}
        for key, (types, default) in keys.items():
            if key in given:
                _check_type(section, key, given[key], types)
                value = given[key]
                if types is NUM:
                    value = float(value)
                sec[key] = copy.deepcopy(value)
            elif default is REQUIRED:
                # optional tables may omit keys only the scenarios using them need
                if section in OPTIONAL_SECTIONS:
                    continue
                raise ConfigError(f"[{section}] missing required key {key!r}")
            elif default is not None:
                sec[key] = copy.deepcopy(default)
        out[section] = sec
    _semantic_checks(out)
    return out


def _semantic_checks(cfg):
    eit = cfg["eit"]
    if eit["omega_c_mhz_over_2pi"] <= 0 or eit["gamma_p_mhz_over_2pi"] <= 0:
        raise ConfigError("[eit] omega_c and gamma_p must be positive")
    inter = cfg["interactions"]
    if "c6_us_mhz_um6_over_2pi" in inter and "d_c_s_um" in inter:
        raise ConfigError("[interactions] give either c6_us or d_c_s, not both")
    if "c4_up_mhz_um4_over_2pi" in inter and "d_c_p_um" in inter:
        raise ConfigError("[interactions] give either c4_up or d_c_p, not both")
    if "c6_us_mhz_um6_over_2pi" not in inter and "d_c_s_um" not in inter:
        raise ConfigError("[interactions] need c6_us_mhz_um6_over_2pi or d_c_s_um")
    gas = cfg["gas"]
    if gas["shape"] not in ("cube", "tube", "box"):
        raise ConfigError(f"[gas] unknown shape {gas['shape']!r}")
    need = {"cube": ("side_um",), "tube": ("length_um", "volume_um3"), "box": ("extents_um",)}
    for key in need[gas["shape"]]:
        if key not in gas:
            raise ConfigError(f"[gas] shape {gas['shape']!r} needs {key!r}")
    if gas["density_per_m3"] <= 0:
        raise ConfigError("[gas] density must be positive")
    grid = cfg["grid"]
    n = grid["n"]
    if n < 2 or n & (n - 1):
        raise ConfigError("[grid] n must be a power of two")
    if grid["max_um"] <= grid["min_um"]:
        raise ConfigError("[grid] max_um must exceed min_um")
    wp = cfg["wavepacket"]
    if wp and wp["surface"] not in ("repulsive", "attractive", "bare-state"):
        raise ConfigError(f"[wavepacket] unknown surface {wp['surface']!r}")
    k = cfg["kernels"]
    if k and k["vext"] not in ("fit", "none", "given"):
        raise ConfigError("[kernels] vext must be 'fit', 'none' or 'given'")
    if k and k["vext"] == "given" and len(k.get("vext_coefficients_mhz_over_2pi", [])) != 5:
        raise ConfigError("[kernels] vext='given' needs five coefficients")
    if k and k["mask"] not in ("auto", "none", "window"):
        raise ConfigError("[kernels] mask must be 'auto', 'none' or 'window'")


@dataclass(frozen=True)
class Config:
    """Validated configuration; ``data`` holds the normalised tables."""

    data: dict

    def __eq__(self, other):
        return isinstance(other, Config) and self.data == other.data

    def __getitem__(self, section):
        return self.data[section]

    def require(self, section: str, key: str):
        """Value of an optional-table key a scenario cannot run without."""
        try:
            return self.data[section][key]
        except KeyError:
            raise ConfigError(f"[{section}] {key} is required for scenario {self.name!r}") from None

    @property
    def name(self) -> str:
        return self.data["scenario"]["name"]

    # builders: the only place where /2pi values become angular
    def units(self) -> UnitSystem:
        return UnitSystem(hbar_over_mass(self.data["units"]["mass_amu"]))

    def eit(self) -> EitParams:
        e = self.data["eit"]
        return EitParams(
            omega_p=mhz_over_2pi(e["omega_p_mhz_over_2pi"]),
            omega_c=mhz_over_2pi(e["omega_c_mhz_over_2pi"]),
            delta_p=mhz_over_2pi(e["delta_p_mhz_over_2pi"]),
            delta_c=mhz_over_2pi(e["delta_c_mhz_over_2pi"]),
            gamma_p=mhz_over_2pi(e["gamma_p_mhz_over_2pi"]),
        )

    def interactions(self, c3_override_mhz_um3_over_2pi: Optional[float] = None) -> InteractionParams:
        i = self.data["interactions"]
        eit = self.eit()
        if "c6_us_mhz_um6_over_2pi" in i:
            c6 = mhz_over_2pi(i["c6_us_mhz_um6_over_2pi"])
        else:
            c6 = coefficient_for_critical_distance(eit, i["d_c_s_um"], "s")
        if "c4_up_mhz_um4_over_2pi" in i:
            c4 = mhz_over_2pi(i["c4_up_mhz_um4_over_2pi"])
        elif "d_c_p_um" in i:
            c4 = coefficient_for_critical_distance(eit, i["d_c_p_um"], "p")
        else:
            c4 = 0.0
        c3 = i["c3_dd_mhz_um3_over_2pi"] if c3_override_mhz_um3_over_2pi is None \
            else c3_override_mhz_um3_over_2pi
        return InteractionParams(c6, c4, mhz_over_2pi(c3))

    def geometry(self) -> BoxGeometry:
        g = self.data["gas"]
        c = tuple(float(v) for v in g["center_um"])
        if g["shape"] == "cube":
            return BoxGeometry.cube(g["side_um"], c)
        if g["shape"] == "tube":
            return BoxGeometry.tube(g["length_um"], g["volume_um3"], c)
        return BoxGeometry(c, tuple(float(v) for v in g["extents_um"]))

    def gas(self, seed: Optional[int] = None) -> BackgroundGas:
        g = self.data["gas"]
        return sample_background(self.geometry(), g["density_per_m3"],
                                 g["seed"] if seed is None else seed, g.get("count"))

    def grid(self) -> Grid1D:
        g = self.data["grid"]
        return Grid1D(g["min_um"], g["max_um"], g["n"])

    def wavepacket(self) -> WavepacketSpec:
        w = self.data["wavepacket"]
        return WavepacketSpec(w["center_um"], w["sigma_um"], w["surface"])

    def with_overrides(self, **sections) -> "Config":
        """Copy with ``section={key: value}`` updates, re-validated."""
        data = copy.deepcopy(self.data)
        for sec, upd in sections.items():
            data.setdefault(sec, {}).update(upd)
        return Config(validate(data))


def parse(text: str) -> Config:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return Config(validate(raw))


def serialize(cfg: Config) -> str:
    return tomli_w.dumps(cfg.data)


def load(path) -> Config:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse(text)


# ---------------------------------------------------------------------------
# presets

_DIMER_EIT = {
    "omega_p_mhz_over_2pi": 0.3,
    "omega_c_mhz_over_2pi": 30.0,
    "delta_p_mhz_over_2pi": 0.0,
    "delta_c_mhz_over_2pi": 0.0,
    "gamma_p_mhz_over_2pi": 1.35,
}

PRESETS: dict[str, dict[str, Any]] = {
    "single-well": {
        "scenario": {"name": "single-well"},
        "eit": {
            "omega_p_mhz_over_2pi": 0.05,
            "omega_c_mhz_over_2pi": 5.0,
            "delta_p_mhz_over_2pi": 50.0,
            "delta_c_mhz_over_2pi": -50.0,
            "gamma_p_mhz_over_2pi": 6.1,
        },
        "interactions": {"c6_us_mhz_um6_over_2pi": -88.0},
        "gas": {"shape": "cube", "side_um": 1.5, "density_per_m3": 2.96e21, "seed": 1},
        "grid": {"min_um": -6.0, "max_um": 6.0, "n": 256},
        "wavepacket": {"center_um": 0.0, "sigma_um": 0.4},
        "kernels": {"vext": "fit", "vext_window_um": 2.0},
        "run": {"t_final_us": 500.0, "out_every_us": 10.0},
    },
    "gamma-map-benchmark": {
        "scenario": {"name": "gamma-map-benchmark"},
        "eit": dict(_DIMER_EIT),
        "interactions": {"d_c_s_um": 1.3, "d_c_p_um": 2.0, "c3_dd_mhz_um3_over_2pi": 557.0},
        "gas": {"shape": "box", "extents_um": [1.0, 1.0, 1.0], "density_per_m3": 1e18, "count": 1,
                "seed": 0},
        "grid": {"min_um": 2.0, "max_um": 18.0, "n": 512},
        "benchmark": {
            "r_um": [3.0 + 0.4 * i for i in range(40)],
            "d_um": [0.6 + 0.2 * i for i in range(20)],
            "t_final_us": 30.0,
            "n_samples": 300,
        },
    },
    "dimer-bind": {
        "scenario": {"name": "dimer-bind"},
        "eit": dict(_DIMER_EIT),
        "interactions": {"d_c_s_um": 1.3, "d_c_p_um": 2.0, "c3_dd_mhz_um3_over_2pi": 9025.0},
        # tube along the dimer axis, 0.0694 um^2 cross-section, reaching 3 um
        # beyond the outermost dimer atom
        "gas": {"shape": "tube", "length_um": 24.0, "volume_um3": 24.0 * 1.25 / 18.0,
                "center_um": [0.0, 0.0, 0.0], "density_per_m3": 1.6e21, "seed": 7},
        "grid": {"min_um": 2.0, "max_um": 18.0, "n": 512},
        "wavepacket": {"center_um": 5.5, "sigma_um": 0.4, "surface": "repulsive"},
        "kernels": {"mask": "auto"},
        "run": {"t_final_us": 13.0, "out_every_us": 0.5, "dt_us": 0.005, "absorb_rate_per_us": 20.0,
                "snapshot_times_us": [0.0, 2.0, 6.0, 13.0]},
        "calibration": {"target_rc_um": 7.5, "bracket_mhz_um3_over_2pi": [1000.0, 20000.0],
                        "tolerance_um": 0.02, "r_min_um": 2.0, "r_max_um": 18.0, "n_r": 400,
                        "scaling_factors": [0.5, 1.0, 2.0]},
    },
}
PRESETS["rc-scaling"] = copy.deepcopy(PRESETS["dimer-bind"])
PRESETS["rc-scaling"]["scenario"]["name"] = "rc-scaling"
PRESETS["rc-scaling"]["gas"].update(length_um=60.0, volume_um3=60.0 * 1.25 / 18.0)
PRESETS["rc-scaling"]["calibration"].update(
    r_max_um=40.0, n_r=500, scaling_factors=[0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0])


def preset(name: str) -> Config:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return Config(validate(copy.deepcopy(PRESETS[name])))
