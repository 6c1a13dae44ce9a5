"""INI-style run configuration.

`key = value` lines under [grid], [prior], [solver], [inversion], and
[sampling] sections; `#` starts a comment.  Unknown sections or keys are
rejected so typos fail loudly, and physical parameters are validated at
parse time (prior exponents must exceed d/2 = 1, the preconditioner shift
list must be nonempty).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

import numpy as np

from .covariance import PriorConfig
from .errors import ConfigError
from .grid import Grid, anisotropy_tensor
from .shifted import DEFAULT_TAUS

__all__ = ["RunConfig", "SolverOptions", "InversionOptions", "SamplingOptions", "load_config", "parse_config"]

_KNOWN = {
    "grid": {"nx", "ny", "lx", "ly"},
    "prior": {"alpha", "kappa2", "theta.l1sq", "theta.l2sq", "theta.angle", "lambda_c", "mean"},
    "solver": {"tol", "max_iter", "taus", "zeta"},
    "inversion": {"max_iter", "min_iter", "gcv_rtol", "uq_rank"},
    "sampling": {"seed", "n_samples"},
}


@dataclass
class SolverOptions:
    tol: float = 1e-8
    max_iter: int = 100
    taus: tuple = DEFAULT_TAUS
    zeta: float | None = None


@dataclass
class InversionOptions:
    max_iter: int = 100
    min_iter: int = 5
    gcv_rtol: float = 1e-5
    uq_rank: int | None = None


@dataclass
class SamplingOptions:
    seed: int = 0
    n_samples: int = 1


@dataclass
class RunConfig:
    grid: Grid
    prior: PriorConfig
    solver: SolverOptions = field(default_factory=SolverOptions)
    inversion: InversionOptions = field(default_factory=InversionOptions)
    sampling: SamplingOptions = field(default_factory=SamplingOptions)


def _get(parser, section, key, conv, default):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key)
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from exc


def parse_config(text: str, require_trace_class: bool = True) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc

    for section in parser.sections():
        if section not in _KNOWN:
            raise ConfigError(f"unknown section [{section}]")
        unknown = set(parser.options(section)) - _KNOWN[section]
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {', '.join(sorted(unknown))}")

    if not parser.has_section("grid") or not parser.has_option("grid", "nx"):
        raise ConfigError("missing [grid] nx")
    nx = _get(parser, "grid", "nx", int, None)
    ny = _get(parser, "grid", "ny", int, nx)
    grid = Grid(nx, ny,
                lx=_get(parser, "grid", "lx", float, 1.0),
                ly=_get(parser, "grid", "ly", float, 1.0))

    if not parser.has_section("prior") or not parser.has_option("prior", "alpha"):
        raise ConfigError("missing [prior] alpha")
    alpha = _get(parser, "prior", "alpha", float, None)
    kappa2 = _get(parser, "prior", "kappa2", float, 100.0)
    theta = np.eye(2)
    if any(parser.has_option("prior", k) for k in ("theta.l1sq", "theta.l2sq", "theta.angle")):
        theta = anisotropy_tensor(
            _get(parser, "prior", "theta.l1sq", float, 1.0),
            _get(parser, "prior", "theta.l2sq", float, 1.0),
            _get(parser, "prior", "theta.angle", float, 0.0),
        )
    lam_raw = parser.get("prior", "lambda_c", fallback="estimate").strip()
    lambda_c = None if lam_raw.lower() == "estimate" else float(lam_raw)
    mean_val = _get(parser, "prior", "mean", float, 0.0)
    mean = None if mean_val == 0.0 else np.full(grid.n_dofs, mean_val)
    prior = PriorConfig(alpha=alpha, kappa2=kappa2, theta=theta, lambda_c=lambda_c, mean=mean)
    if require_trace_class:
        try:
            prior.require_trace_class()
        except Exception as exc:
            raise ConfigError(str(exc)) from exc

    taus = _get(parser, "solver", "taus",
                lambda s: tuple(float(t) for t in s.replace(",", " ").split()), DEFAULT_TAUS)
    if len(taus) == 0:
        raise ConfigError("[solver] taus must be a nonempty list")
    solver = SolverOptions(
        tol=_get(parser, "solver", "tol", float, 1e-8),
        max_iter=_get(parser, "solver", "max_iter", int, 100),
        taus=taus,
        zeta=_get(parser, "solver", "zeta", float, None),
    )
    if solver.tol <= 0 or solver.max_iter < 1:
        raise ConfigError("[solver] tol must be positive and max_iter at least 1")

    uq = _get(parser, "inversion", "uq_rank", int, None)
    inversion = InversionOptions(
        max_iter=_get(parser, "inversion", "max_iter", int, 100),
        min_iter=_get(parser, "inversion", "min_iter", int, 5),
        gcv_rtol=_get(parser, "inversion", "gcv_rtol", float, 1e-5),
        uq_rank=uq,
    )
    sampling = SamplingOptions(
        seed=_get(parser, "sampling", "seed", int, 0),
        n_samples=_get(parser, "sampling", "n_samples", int, 1),
    )
    if sampling.n_samples < 1:
        raise ConfigError("[sampling] n_samples must be positive")
    return RunConfig(grid=grid, prior=prior, solver=solver, inversion=inversion, sampling=sampling)


def load_config(path, require_trace_class: bool = True) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, require_trace_class=require_trace_class)
