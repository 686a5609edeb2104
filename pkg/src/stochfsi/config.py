"""Key-value run configuration.

The format is one ``key = value`` pair per line, ``#`` comments, blank
lines ignored.  Unknown keys are hard errors (these runs are sensitive to
silent typos in the threshold and penalty parameters), and every error
message carries the offending line number.  All quantities are in the
nondimensional units of the model (reference rectangle height 1).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigurationError
from .mesh import ReferenceMesh
from .scheme import Problem, SchemeConfig
from .structure import HermiteGrid, StructureState


def _parse_int_list(s: str):
    return tuple(int(x) for x in s.split(",") if x.strip())


def _parse_float_list(s: str):
    return tuple(float(x) for x in s.split(",") if x.strip())


# name -> (type, default, unit/doc)
CONFIG_KEYS = {
    "length": (float, 1.0, "axial extent L of the reference rectangle"),
    "mesh_nz": (int, 8, "cells along the axis"),
    "mesh_nr": (int, 8, "cells across the radius"),
    "struct_elems": (int, 8, "interface beam elements"),
    "T": (float, 0.5, "final time"),
    "steps": (int, 32, "number of time steps N (dt = T/N)"),
    "eps": (float, 1e-2, "penalty / velocity-regularization parameter"),
    "alpha": (float, 1.0, "slip coefficient"),
    "nu": (float, 0.1, "kinematic viscosity"),
    "delta1": (float, 0.1, "Jacobian floor of the geometry latch"),
    "delta2": (float, 0.5, "reciprocal interface-norm cap of the latch"),
    "s_exp": (float, 1.75, "fractional interface-norm exponent, in (1.5, 2)"),
    "c_bend": (float, 1.0, "bending coefficient of the elastic operator"),
    "c_low": (float, 0.0, "zeroth-order coefficient of the elastic operator"),
    "p_in_const": (float, 0.0, "constant inlet pressure"),
    "p_out_const": (float, 0.0, "constant outlet pressure"),
    "p_in_pulse": (float, 0.0, "inlet pulse amplitude"),
    "p_in_pulse_width": (float, 0.25, "inlet pulse duration (half-sine)"),
    "noise_modes": (int, 6, "retained stochastic modes K"),
    "noise_decay": (float, 2.0, "covariance spectrum decay, q_k = k^-decay"),
    "noise_gain": (float, 0.5, "coefficient gain in [0, 1]; 0 disables noise"),
    "picard_tol": (float, 1e-10, "relative nonlinear residual tolerance"),
    "picard_max": (int, 50, "maximum Picard iterations per solve"),
    "max_halvings": (int, 3, "maximum step subdivisions on solver failure"),
    "slip_projection": (str, "full", "interface slip pairing: full | tangential"),
    "init_u": (str, "zero", "initial velocity: zero | poiseuille"),
    "init_u_amp": (float, 0.0, "initial velocity amplitude"),
    "init_eta": (str, "zero", "initial displacement: zero | bump"),
    "init_eta_amp_r": (float, 0.0, "radial displacement bump amplitude"),
    "init_eta_amp_z": (float, 0.0, "axial displacement bump amplitude"),
    "init_v": (str, "zero", "initial interface velocity: zero | bump"),
    "init_v_amp_r": (float, 0.0, "radial velocity bump amplitude"),
    "init_v_amp_z": (float, 0.0, "axial velocity bump amplitude"),
    "paths": (int, 1, "ensemble size"),
    "seed": (int, 0, "base seed; path p uses seed + p"),
    "threads": (int, 1, "worker threads for ensembles"),
    "sweep_steps": (_parse_int_list, (), "comma list of N values for sweeps"),
    "sweep_eps": (_parse_float_list, (), "comma list of eps values for sweeps"),
}

_DEFAULTS = {k: v[1] for k, v in CONFIG_KEYS.items()}

# every other key falls back to its default
REQUIRED_KEYS = ("T", "steps")


@dataclass
class RunConfig:
    values: dict
    text: str
    digest: str

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name)


def parse_config_text(text: str) -> RunConfig:
    values = dict(_DEFAULTS)
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in CONFIG_KEYS:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        typ = CONFIG_KEYS[key][0]
        try:
            values[key] = typ(val)
        except ValueError as exc:
            raise ConfigurationError(f"line {lineno}: bad value for {key}: {exc}") from exc
    missing = [k for k in REQUIRED_KEYS if k not in seen]
    if missing:
        raise ConfigurationError(f"missing required key(s): {', '.join(missing)}")
    _validate(values)
    canon = canonical_text(values)
    return RunConfig(values=values, text=canon, digest=config_hash(canon))


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def canonical_text(values: dict) -> str:
    lines = []
    for k in sorted(values):
        v = values[k]
        if isinstance(v, tuple):
            v = ",".join(repr(x) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _validate(v: dict):
    if v["slip_projection"] not in ("full", "tangential"):
        raise ConfigurationError("slip_projection must be 'full' or 'tangential'")
    if v["init_u"] not in ("zero", "poiseuille"):
        raise ConfigurationError("init_u must be 'zero' or 'poiseuille'")
    for key in ("init_eta", "init_v"):
        if v[key] not in ("zero", "bump"):
            raise ConfigurationError(f"{key} must be 'zero' or 'bump'")
    if not 0.0 <= v["noise_gain"] <= 1.0:
        raise ConfigurationError("noise_gain must lie in [0, 1]")
    if v["noise_modes"] < 1:
        raise ConfigurationError("noise_modes must be >= 1")
    if v["paths"] < 1 or v["threads"] < 1:
        raise ConfigurationError("paths and threads must be >= 1")
    if v["p_in_pulse_width"] <= 0:
        raise ConfigurationError("p_in_pulse_width must be positive")
    # delegate the marching invariants
    SchemeConfig(
        T=v["T"],
        n_steps=v["steps"],
        eps=v["eps"],
        delta1=v["delta1"],
        delta2=v["delta2"],
        s_exp=v["s_exp"],
        alpha=v["alpha"],
        nu=v["nu"],
    )


def _bump(z: np.ndarray, L: float):
    """Clamped bump sin^2(pi z / L) with its derivative."""
    s = np.sin(np.pi * z / L) ** 2
    ds = (np.pi / L) * np.sin(2 * np.pi * z / L)
    return s, ds


def _hermite_bump(grid: HermiteGrid, amp_z: float, amp_r: float) -> np.ndarray:
    s, ds = _bump(grid.z_nodes, grid.length)
    full = np.zeros((2, grid.n_full))
    for c, amp in ((0, amp_z), (1, amp_r)):
        full[c, 0::2] = amp * s
        full[c, 1::2] = amp * ds
    return full[:, grid.free]


def build_problem(cfg: RunConfig, scheme_overrides: dict = None) -> Problem:
    """Construct mesh, operators, noise and initial data from a config."""
    v = dict(cfg.values)
    if scheme_overrides:
        v.update(scheme_overrides)
    mesh = ReferenceMesh(length=v["length"], nz=v["mesh_nz"], nr=v["mesh_nr"])
    grid = HermiteGrid(v["length"], v["struct_elems"])
    scheme = SchemeConfig(
        T=v["T"],
        n_steps=v["steps"],
        eps=v["eps"],
        delta1=v["delta1"],
        delta2=v["delta2"],
        s_exp=v["s_exp"],
        alpha=v["alpha"],
        nu=v["nu"],
        picard_tol=v["picard_tol"],
        max_picard=v["picard_max"],
        max_halvings=v["max_halvings"],
        slip_tangential=(v["slip_projection"] == "tangential"),
    )

    if v["init_u"] == "poiseuille":
        r = mesh.nodes[:, 1]
        u0 = np.zeros((mesh.n_nodes, 2))
        u0[:, 0] = v["init_u_amp"] * (1.0 - r**2)
    else:
        u0 = np.zeros((mesh.n_nodes, 2))

    eta0 = (
        _hermite_bump(grid, v["init_eta_amp_z"], v["init_eta_amp_r"])
        if v["init_eta"] == "bump"
        else np.zeros((2, grid.n_free))
    )
    v0 = (
        _hermite_bump(grid, v["init_v_amp_z"], v["init_v_amp_r"])
        if v["init_v"] == "bump"
        else np.zeros((2, grid.n_free))
    )

    if v["p_in_pulse"] != 0.0:
        amp, width = v["p_in_pulse"], v["p_in_pulse_width"]
        base = v["p_in_const"]

        def p_in_fun(t, base=base, amp=amp, width=width):
            return base + (amp * np.sin(np.pi * t / width) if 0.0 <= t < width else 0.0)

    else:
        base = v["p_in_const"]

        def p_in_fun(t, base=base):
            return base

    p_out_const = v["p_out_const"]

    def p_out_fun(t, c=p_out_const):
        return c

    return Problem.build(
        mesh=mesh,
        grid=grid,
        scheme=scheme,
        c_bend=v["c_bend"],
        c_low=v["c_low"],
        k_modes=v["noise_modes"],
        noise_decay=v["noise_decay"],
        noise_gain=v["noise_gain"],
        p_in_fun=p_in_fun,
        p_out_fun=p_out_fun,
        u0=u0,
        state0=StructureState(eta0, v0),
    )


def describe_keys() -> str:
    """Human-readable table of every config key for the CLI help text."""
    lines = ["known configuration keys (key: default  -- description):"]
    for k, (typ, default, doc) in CONFIG_KEYS.items():
        lines.append(f"  {k}: {default!r}  -- {doc}")
    return "\n".join(lines)
