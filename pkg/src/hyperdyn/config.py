"""Experiment configuration: INI files, environment overrides, hashing.

A config fully determines a run: same config + same build means identical
report payloads (reports carry no timestamps).  Values live in sections;
``HYPERDYN_<SECTION>_<KEY>`` environment variables override file values; the
config hash is the SHA-256 of the canonical ``section.key=value`` dump.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import os
from dataclasses import dataclass, field, fields

import numpy as np


def _parse_matrix(text: str):
    rows = [r.strip() for r in text.replace(";", "\n").splitlines() if r.strip()]
    return tuple(tuple(int(v) for v in r.split()) for r in rows)


def _parse_vector(text: str):
    return tuple(float(v) for v in text.split())


@dataclass
class ExperimentConfig:
    # linear-lane automorphism and the derived-from-Anosov base
    matrix: tuple = ((0, 0, 1), (1, 0, -5), (0, 1, 6))
    da_matrix: tuple = ((0, 0, 1), (1, 0, -6), (0, 1, 8))
    da_x1: tuple = (0.5, 0.5, 0.5)
    da_rho: float = 0.2
    da_mu: float = 1.2
    da_cstar: float = 0.03

    # ball for the avoidance/saturation experiments (linear lane)
    ball_center: tuple = (0.5, 0.5, 0.5)
    ball_radius: float = 0.1

    # resolutions
    saturate_n: int = 64
    gamma_n: int = 32
    leaf_n: int = 32
    avoid_horizon: int = 24
    walk_cells: int = 8000
    closure_iters: int = 3
    semiconj_m: int = 64
    semiconj_test: int = 128

    # shadowing experiment
    shadow_orbits: int = 1000
    shadow_steps: int = 10000
    shadow_alpha: float = 1e-3

    # tolerances and sampling
    cone_theta: float = 0.1
    cone_samples: int = 100000
    semiconj_tol: float = 1e-9
    leaf_length: float = 3200.0
    center_leaf_length: float = 3600.0
    density_budget: int = 10000
    chain_eps: float = 0.004
    tube_delta_p: float = 0.15
    tube_beta: float = 0.15
    tube_eta: float = 0.05
    calib_pairs: int = 60
    leaf_samples: int = 1000

    # seeds and output
    seed: int = 20240901
    out_dir: str = "reports"
    smoke: bool = False

    _SECTIONS = {
        "matrix": ("matrix",),
        "da": ("da_matrix", "da_x1", "da_rho", "da_mu", "da_cstar"),
        "ball": ("ball_center", "ball_radius"),
        "grids": ("saturate_n", "gamma_n", "leaf_n", "avoid_horizon", "walk_cells",
                  "closure_iters", "semiconj_m", "semiconj_test"),
        "shadow": ("shadow_orbits", "shadow_steps", "shadow_alpha"),
        "tolerances": ("cone_theta", "cone_samples", "semiconj_tol", "leaf_length",
                       "center_leaf_length", "density_budget", "chain_eps",
                       "tube_delta_p", "tube_beta", "tube_eta", "calib_pairs",
                       "leaf_samples"),
        "run": ("seed", "out_dir", "smoke"),
    }

    @classmethod
    def _field_section(cls, name):
        for sec, keys in cls._SECTIONS.items():
            if name in keys:
                return sec
        raise KeyError(name)

    @classmethod
    def load(cls, path=None, env=None, overrides=None) -> "ExperimentConfig":
        cfg = cls()
        if path:
            parser = configparser.ConfigParser()
            with open(path) as fh:
                parser.read_file(fh)
            for sec in parser.sections():
                for key, val in parser.items(sec):
                    cfg._set(key, val, f"{path}:[{sec}]{key}")
        env = os.environ if env is None else env
        for name in env:
            if name.startswith("HYPERDYN_"):
                cfg._set(name[len("HYPERDYN_"):].lower(), env[name], name)
        for key, val in (overrides or {}).items():
            if val is not None:
                setattr(cfg, key, val)
        return cfg

    def _set(self, key, val, where):
        matching = [f for f in fields(self) if f.name == key and not f.name.startswith("_")]
        if not matching:
            raise ValueError(f"unknown config key {key!r} at {where}")
        f = matching[0]
        cur = getattr(self, f.name)
        try:
            if isinstance(cur, bool):
                parsed = val.strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(cur, int):
                parsed = int(val)
            elif isinstance(cur, float):
                parsed = float(val)
            elif isinstance(cur, str):
                parsed = val.strip()
            elif f.name in ("matrix", "da_matrix"):
                parsed = _parse_matrix(val)
            else:
                parsed = _parse_vector(val)
        except Exception as exc:
            raise ValueError(f"cannot parse {key}={val!r} at {where}: {exc}") from exc
        setattr(self, f.name, parsed)

    def smoke_scaled(self) -> "ExperimentConfig":
        """Small-resolution variant that runs end-to-end in seconds."""
        import dataclasses

        return dataclasses.replace(
            self, smoke=True, saturate_n=16, gamma_n=16, leaf_n=12, avoid_horizon=8,
            walk_cells=400, semiconj_m=24, semiconj_test=36, shadow_orbits=20,
            shadow_steps=400, cone_samples=2000, leaf_length=150.0,
            center_leaf_length=150.0, density_budget=2000, calib_pairs=12,
            leaf_samples=100)

    def canonical_dump(self) -> str:
        lines = []
        for sec in sorted(self._SECTIONS):
            for key in sorted(self._SECTIONS[sec]):
                lines.append(f"{sec}.{key}={getattr(self, key)!r}")
        return "\n".join(lines)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_dump().encode()).hexdigest()[:16]

    def write_ini(self, path) -> None:
        parser = configparser.ConfigParser()
        for sec, keys in self._SECTIONS.items():
            parser[sec] = {}
            for key in keys:
                val = getattr(self, key)
                if key in ("matrix", "da_matrix"):
                    val = "; ".join(" ".join(str(v) for v in row) for row in val)
                elif isinstance(val, tuple):
                    val = " ".join(str(v) for v in val)
                parser[sec][key] = str(val)
        buf = io.StringIO()
        parser.write(buf)
        with open(path, "w") as fh:
            fh.write(buf.getvalue())
