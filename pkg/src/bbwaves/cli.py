"""Config-driven experiment runner.

Every experiment reads one JSON config, writes CSV data with a JSON sidecar
into an output directory and finishes with ``run.json`` (the run report).

Exit codes: 0 success, 2 config error, 3 solver non-convergence,
4 numerical blow-up.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import platform
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Optional

import numpy as np
import scipy

from . import __version__
from .diagnostics import (convergence_table, error_vs_exact, find_peaks, invariants,
                          track_peak, v_from_u)
from .evolve import (BlowUp, FixedPointNotConverged, StepperConfig, WaveState,
                     resolve_steps, run)
from .model import (ModelCoeffs, ModelDomainError, PhysicalParams, cc_speed_bound,
                    classify_linear, classify_nft, classify_wellposed, closure,
                    coeffs_from_quadruple, delta_polynomial, derive_coeffs,
                    dispersion_profile, modelling_params, symbol_det, toland_segment)
from .spectral import Grid
from .waves import (NoExactSolution, PetviashviliError, PetviashviliOptions,
                    SingularMode, SolitaryWave, exact_sech2,
                    petviashvili_solve, sample_exact, sech2_guess, traveling_residual)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_BLOWUP = 0, 2, 3, 4

EXPERIMENTS = ("derive-params", "classify", "dispersion", "exact", "solitary",
               "evolve", "perturb", "collide", "resolve", "convergence")

RESIDUAL_WARN = 1e-8
WRAP_WARN = 1e-12


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


# ---------------------------------------------------------------------------
# schema

_SCHEMA = {
    "experiment": str,
    "name": str,
    "description": str,
    "quadruple": {"gamma": float, "delta": float, "a": "qv", "b": "qv", "c": "qv",
                  "d": "qv", "beta": float},
    "physical": {"gamma": float, "delta": float, "alpha1": float, "alpha2": float,
                 "beta": float, "surface_wave": bool},
    "grid": {"L": float, "N": int},
    "stepper": {"dt": float, "T": float, "fp_tolerance": float, "fp_max_iters": int,
                "cfl_alpha": float, "cfl_warn": float},
    "wave": {"c_s": float, "c_s_offset": float, "guess": "guess",
             "petviashvili": {"max_iters": int, "tolerance": float,
                              "mpe_cycle_width": int, "exponent": float,
                              "projection_manifold": bool,
                              "divergence_factor": float}},
    "initial": {"kind": str, "path": str, "direction": int, "shift": float},
    "exact": {"branch": str, "B": float, "sign": int},
    "perturbation": {"A": float},
    "superposition": "superposition",
    "gaussian": {"A": float, "tau": float},
    "dispersion": {"k_max": float, "n": int},
    "convergence": {"dts": "floats", "Ns": "ints", "T": float},
    "output": {"dir": str, "stride": int, "snapshots": int, "peaks": int,
               "peak_separation": float, "peak_method": str},
}
_GUESS = {"kind": str, "amplitude": float, "width": float, "centers": "floats",
          "path": str}
_SUPER = {"c_s": float, "c_s_offset": float, "center": float, "direction": int,
          "guess": "guess"}

_NEEDS = {
    "derive-params": (),
    "classify": (),
    "dispersion": (),
    "exact": ("grid",),
    "solitary": ("grid", "wave"),
    "evolve": ("grid", "stepper", "initial"),
    "perturb": ("grid", "stepper", "wave", "perturbation"),
    "collide": ("grid", "stepper", "superposition"),
    "resolve": ("grid", "stepper", "gaussian"),
    "convergence": ("grid", "convergence"),
}


def _number(path, val, kind):
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {val!r}")
    if kind is int:
        if isinstance(val, float) and not val.is_integer():
            raise ConfigError(f"{path}: expected an integer, got {val!r}")
        return int(val)
    if not math.isfinite(val):
        raise ConfigError(f"{path}: must be finite")
    return float(val)


def _check(path, val, spec):
    if isinstance(spec, dict):
        if not isinstance(val, dict):
            raise ConfigError(f"{path}: expected an object")
        unknown = sorted(set(val) - set(spec))
        if unknown:
            raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")
        return {k: _check(f"{path}.{k}" if path else k, v, spec[k]) for k, v in val.items()}
    if spec is str:
        if not isinstance(val, str):
            raise ConfigError(f"{path}: expected a string")
        return val
    if spec is bool:
        if not isinstance(val, bool):
            raise ConfigError(f"{path}: expected true/false")
        return val
    if spec in (int, float):
        return _number(path, val, spec)
    if spec == "qv":
        if val == "closure":
            return val
        return _number(path, val, float)
    if spec in ("floats", "ints"):
        if not isinstance(val, list) or not val:
            raise ConfigError(f"{path}: expected a non-empty list")
        kind = float if spec == "floats" else int
        return [_number(f"{path}[{i}]", x, kind) for i, x in enumerate(val)]
    if spec == "guess":
        return _check(path, val, _GUESS)
    if spec == "superposition":
        if not isinstance(val, list) or not val:
            raise ConfigError(f"{path}: expected a non-empty list of waves")
        return [_check(f"{path}[{i}]", x, _SUPER) for i, x in enumerate(val)]
    raise AssertionError(spec)


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides):
    """Set ``a.b.c=value`` entries (value parsed as JSON when possible)."""
    out = copy.deepcopy(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        node = out
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {key}: {p} is not an object")
            node = nxt
        node[parts[-1]] = _parse_value(text)
    return out


@dataclass
class ExperimentConfig:
    """Validated configuration with derived quantities resolved."""

    experiment: str
    raw: dict
    coeffs: ModelCoeffs
    consistency_residual: float
    c_s: Optional[float] = None
    resolved: dict = field(default_factory=dict)

    @property
    def grid(self) -> Optional[Grid]:
        g = self.raw.get("grid")
        return Grid(g["L"], g["N"]) if g else None

    def block(self, name):
        return self.raw.get(name, {})


def _resolve_quadruple(q):
    for key in ("gamma", "delta"):
        if key not in q:
            raise ConfigError(f"quadruple.{key} is required")
    vals = {n: q.get(n, 0.0) for n in "abcd"}
    open_ = [n for n in "abcd" if vals[n] == "closure"]
    if not open_:
        target = None
    elif len(open_) == 1:
        target = open_[0]
    elif sorted(open_) == ["b", "d"]:
        target = "bd"
    else:
        raise ConfigError("quadruple: 'closure' is allowed for one coefficient, "
                          "or for b and d together")
    if target:
        vals = closure(target, {n: (0.0 if v == "closure" else v) for n, v in vals.items()},
                       q["gamma"], q["delta"])
    coeffs, res = coeffs_from_quadruple(vals["a"], vals["b"], vals["c"], vals["d"],
                                        q["gamma"], q["delta"], q.get("beta"))
    return coeffs, res


def _resolve_speed(path, block, coeffs):
    has_cs, has_off = "c_s" in block, "c_s_offset" in block
    if has_cs and has_off:
        raise ConfigError(f"{path}: give c_s or c_s_offset, not both")
    if has_off:
        return coeffs.c_sound + block["c_s_offset"]
    if has_cs:
        return block["c_s"]
    return None


def validate(raw: dict) -> ExperimentConfig:
    """Strict validation and resolution of a raw config mapping."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    cfg = _check("", raw, _SCHEMA)
    exp = cfg.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}; got {exp!r}")
    if ("quadruple" in cfg) == ("physical" in cfg):
        raise ConfigError("exactly one of the 'quadruple' and 'physical' blocks is required")
    for name in _NEEDS[exp]:
        if name not in cfg:
            raise ConfigError(f"experiment {exp} requires a '{name}' block")
    try:
        if "physical" in cfg:
            p = cfg["physical"]
            for key in ("gamma", "delta"):
                if key not in p:
                    raise ConfigError(f"physical.{key} is required")
            coeffs = derive_coeffs(PhysicalParams(**p))
            res = coeffs.consistency_residual
        else:
            coeffs, res = _resolve_quadruple(cfg["quadruple"])
        if "grid" in cfg:
            g = cfg["grid"]
            if "L" not in g or "N" not in g:
                raise ConfigError("grid needs L and N")
            Grid(g["L"], g["N"])
    except ModelDomainError as exc:
        raise ConfigError(str(exc)) from exc
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc

    c_s = _resolve_speed("wave", cfg.get("wave", {}), coeffs)
    if exp in ("solitary", "perturb") and c_s is None:
        raise ConfigError(f"experiment {exp} requires wave.c_s or wave.c_s_offset")
    st = cfg.get("stepper", {})
    if exp in ("evolve", "perturb", "collide", "resolve"):
        for key in ("dt", "T"):
            if key not in st:
                raise ConfigError(f"stepper.{key} is required")
        if st["T"] < 0:
            raise ConfigError("stepper.T must be >= 0")
    if "dt" in st and not st["dt"] > 0:
        raise ConfigError("stepper.dt must be positive")
    guess = cfg.get("wave", {}).get("guess")
    if guess is not None:
        _check_guess("wave.guess", guess)
    ini = cfg.get("initial")
    if ini is not None:
        kind = ini.get("kind")
        if kind not in ("exact", "solitary", "profile", "gaussian"):
            raise ConfigError("initial.kind must be exact, solitary, profile or gaussian")
        if kind == "profile" and "path" not in ini:
            raise ConfigError("initial.kind=profile needs initial.path")
        if kind == "solitary" and c_s is None:
            raise ConfigError("initial.kind=solitary needs wave.c_s or wave.c_s_offset")
        if kind == "gaussian" and "gaussian" not in cfg:
            raise ConfigError("initial.kind=gaussian needs a 'gaussian' block")
        if ini.get("direction", 1) not in (1, -1):
            raise ConfigError("initial.direction must be 1 or -1")
    for i, w in enumerate(cfg.get("superposition", ())):
        if _resolve_speed(f"superposition[{i}]", w, coeffs) is None:
            raise ConfigError(f"superposition[{i}] needs c_s or c_s_offset")
        if w.get("direction", 1) not in (1, -1):
            raise ConfigError(f"superposition[{i}].direction must be 1 or -1")
        if "guess" in w:
            _check_guess(f"superposition[{i}].guess", w["guess"])
    if "gaussian" in cfg:
        gs = cfg["gaussian"]
        if "A" not in gs or "tau" not in gs or not gs["tau"] > 0:
            raise ConfigError("gaussian needs A and tau > 0")
    if "perturbation" in cfg and "A" not in cfg["perturbation"]:
        raise ConfigError("perturbation.A is required")
    if exp == "convergence":
        cv = cfg["convergence"]
        if "dts" not in cv:
            raise ConfigError("convergence.dts is required")
        if any(not x > 0 for x in cv["dts"]):
            raise ConfigError("convergence.dts must be positive")
        if "T" not in cv and "T" not in st:
            raise ConfigError("convergence needs a final time (convergence.T or stepper.T)")
    popt = cfg.get("wave", {}).get("petviashvili")
    if popt is not None:
        try:
            PetviashviliOptions(**popt)
        except ValueError as exc:
            raise ConfigError(f"wave.petviashvili: {exc}") from exc
    method = cfg.get("output", {}).get("peak_method", "quadratic")
    if method not in ("quadratic", "spectral"):
        raise ConfigError("output.peak_method must be quadratic or spectral")

    resolved = _resolved_echo(cfg, coeffs, c_s)
    return ExperimentConfig(exp, cfg, coeffs, res, c_s, resolved)


def _check_guess(path, guess):
    kind = guess.get("kind", "sech2")
    if kind not in ("sech2", "exact", "profile"):
        raise ConfigError(f"{path}.kind must be sech2, exact or profile")
    if kind == "sech2" and guess.get("amplitude", 1.0) == 0:
        raise ConfigError(f"{path}: guess must be nonzero")
    if kind == "profile" and "path" not in guess:
        raise ConfigError(f"{path}: profile guess needs a path")


def _resolved_echo(cfg, coeffs, c_s):
    out = copy.deepcopy(cfg)
    if "quadruple" in out:
        q = out["quadruple"]
        for n in "abcd":
            q[n] = getattr(coeffs, n)
        q["beta"] = coeffs.beta
    if c_s is not None:
        w = out["wave"]
        w.pop("c_s_offset", None)
        w["c_s"] = c_s
    for w in out.get("superposition", ()):
        if "c_s_offset" in w:
            w["c_s"] = coeffs.c_sound + w.pop("c_s_offset")
    return out


def load_config(path=None, overrides=(), text=None) -> ExperimentConfig:
    """Read, override and validate a config file (or JSON text)."""
    if text is None:
        if path is None:
            raise ConfigError("no config given")
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path or '<config>'}: line {exc.lineno} column {exc.colno}: "
                          f"{exc.msg}") from exc
    return validate(apply_overrides(raw, overrides))


# ---------------------------------------------------------------------------
# file formats


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return "%.17g" % v


class CsvSink:
    """Streaming CSV writer; the header line lists ``name [unit]`` columns."""

    def __init__(self, path, columns):
        self.path = path
        self.names = [c[0] for c in columns]
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow([f"{n} [{u}]" for n, u in columns])
        self._fh.flush()

    def row(self, *values):
        self._w.writerow([_fmt(v) for v in values])
        self._fh.flush()

    def rows(self, *cols):
        for vals in zip(*cols):
            self._w.writerow([_fmt(v) for v in vals])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_csv(path):
    """Columns of a CSV written by :class:`CsvSink` as float arrays."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        names = [h.split(" [")[0] for h in header]
        data = [[float(x) if x != "" else math.nan for x in row] for row in rd]
    arr = np.array(data, dtype=float).reshape(-1, len(names))
    return {n: arr[:, i] for i, n in enumerate(names)}


PROFILE_COLUMNS = (("x", "length"), ("zeta", "length"), ("v_beta", "velocity"),
                   ("u", "velocity"))


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_profile(path, state: WaveState, c_s=None, residual=None, wave_type=None,
                  extra=None):
    """Profile CSV (x, zeta, v_beta, u) plus its JSON sidecar."""
    g, k = state.grid, state.coeffs
    with CsvSink(path, PROFILE_COLUMNS) as out:
        out.rows(g.x, state.zeta, state.v, state.u())
    meta = dict(gamma=k.gamma, delta=k.delta, a=k.a, b=k.b, c=k.c, d=k.d, beta=k.beta,
                c_s=c_s, residual=residual, wave_type=wave_type, t=state.t,
                L=g.L, N=g.N)
    meta.update(extra or {})
    write_json(_sidecar(path), meta)


def _sidecar(path):
    return os.path.splitext(path)[0] + ".json"


def read_profile(path, grid: Grid, coeffs: ModelCoeffs, t=None) -> WaveState:
    """Load a profile file as an evolvable state on ``grid``."""
    try:
        cols = read_csv(path)
    except (OSError, ValueError, StopIteration) as exc:
        raise ConfigError(f"cannot read profile {path}: {exc}") from exc
    for name in ("x", "zeta", "v_beta"):
        if name not in cols:
            raise ConfigError(f"profile {path} lacks column {name}")
    if cols["x"].size != grid.N or np.max(np.abs(cols["x"] - grid.x)) > 1e-9 * grid.L:
        raise ConfigError(f"profile {path} nodes do not match {grid!r}")
    meta = {}
    if os.path.exists(_sidecar(path)):
        with open(_sidecar(path)) as fh:
            meta = json.load(fh)
    t0 = meta.get("t", 0.0) if t is None else t
    return WaveState.from_values(grid, coeffs, cols["zeta"], cols["v_beta"], t0 or 0.0)


# ---------------------------------------------------------------------------
# run report


@dataclass
class RunReport:
    experiment: str
    out_dir: str
    config: dict
    classification: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    steps: Optional[int] = None
    wall_clock: float = 0.0
    status: str = "ok"
    exit_code: int = EXIT_OK

    def path(self, name):
        p = os.path.join(self.out_dir, name)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        if name not in self.files:
            self.files.append(name)
        return p

    def warn(self, kind, message, value=None):
        self.warnings.append(dict(kind=kind, message=message, value=value))

    def as_dict(self):
        return dict(experiment=self.experiment, status=self.status,
                    exit_code=self.exit_code, config=self.config,
                    classification=self.classification, files=self.files,
                    warnings=self.warnings, results=self.results, steps=self.steps,
                    wall_clock_seconds=self.wall_clock,
                    versions=dict(bbwaves=__version__, numpy=np.__version__,
                                  scipy=scipy.__version__,
                                  python=platform.python_version()))

    def missing_files(self):
        bad = []
        for name in self.files:
            p = os.path.join(self.out_dir, name)
            if not os.path.exists(p) or os.path.getsize(p) == 0:
                bad.append(name)
        return bad


def _classification(coeffs, c_s):
    out = dict(linear_case=classify_linear(coeffs),
               wellposed_case=classify_wellposed(coeffs))
    if c_s is not None:
        try:
            out.update(classify_nft(coeffs, c_s).as_dict())
        except ModelDomainError as exc:
            out["nft_error"] = str(exc)
    return out


# ---------------------------------------------------------------------------
# experiments


def _wave_options(cfg: ExperimentConfig):
    return PetviashviliOptions(**cfg.block("wave").get("petviashvili", {}))


def _make_guess(cfg, grid, guess, c_s):
    guess = guess or {}
    kind = guess.get("kind", "sech2")
    if kind == "exact":
        e = exact_sech2(cfg.coeffs)
        return e.zeta(grid.x, 0.0, 2 * grid.L), e.v(grid.x, 0.0, 2 * grid.L)
    if kind == "profile":
        s = read_profile(guess["path"], grid, cfg.coeffs)
        return s.zeta, s.v
    return sech2_guess(grid, guess.get("amplitude", 1.0), guess.get("width", 0.5),
                       tuple(guess.get("centers", (0.0,))))


def _solve_wave(cfg, grid, c_s, guess_block, report, tag="", raise_=True):
    guess = _make_guess(cfg, grid, guess_block, c_s)
    try:
        w = petviashvili_solve(cfg.coeffs, c_s, grid, guess, _wave_options(cfg))
    except PetviashviliError as exc:
        _write_solitary(report, exc.wave, tag)
        raise
    return w


def _write_solitary(report, w: SolitaryWave, tag=""):
    g = w.grid
    state = w.state()
    write_profile(report.path(f"profile{tag}.csv"), state, w.c_s, w.residual, w.wave_type,
                  dict(iterations=w.iterations, converged=w.converged,
                       amplitude=w.amplitude))
    report.files.append(f"profile{tag}.json")
    with CsvSink(report.path(f"residual{tag}.csv"),
                 (("iteration", "-"), ("RES", "-"), ("m_h", "-"))) as out:
        out.rows(range(len(w.residual_history)), w.residual_history, w.m_history)
    zx = g.from_spectral(g.diff(state.zeta_hat))
    u = state.u()
    ux = g.diff_values(u)
    with CsvSink(report.path(f"phase{tag}.csv"),
                 (("zeta", "length"), ("zeta_x", "-"), ("u", "velocity"),
                  ("u_x", "1/time"))) as out:
        out.rows(state.zeta, zx, u, ux)


def cmd_derive_params(cfg, report):
    k = cfg.coeffs
    res = dict(coefficients=k.as_dict(), modelling=None)
    try:
        a1, a2, beta = modelling_params(k)
        res["modelling"] = dict(alpha1=a1, alpha2=a2, beta=beta)
    except (ModelDomainError, ZeroDivisionError, TypeError, ValueError) as exc:
        res["modelling_error"] = str(exc)
    res["cc_speed_bound"] = cc_speed_bound(k)
    report.results.update(res)
    names = ("a", "b", "c", "d", "gamma", "delta", "beta", "kappa1", "kappa2",
             "kappa_gd", "c_sound", "s_const", "consistency_residual")
    with CsvSink(report.path("coefficients.csv"), [(n, "-") for n in names]) as out:
        out.row(*[getattr(k, n) if n != "consistency_residual" else k.consistency_residual
                  for n in names])


def cmd_classify(cfg, report):
    k, c_s = cfg.coeffs, cfg.c_s
    out = dict(report.classification)
    out["cc_speed_bound"] = cc_speed_bound(k)
    if c_s is not None:
        dp = delta_polynomial(k, c_s)
        out["delta_polynomial"] = dict(delta0=dp.delta0, delta1=dp.delta1,
                                       delta2=dp.delta2, r_minus=dp.r_minus,
                                       r_plus=dp.r_plus)
        if k.b == k.d and k.b > 0 and k.kappa_gd != 0:
            seg = toland_segment(k, c_s)
            out["toland"] = dict(P1=list(seg.P1), P2=list(seg.P2), polarity=seg.polarity)
    prof = dispersion_profile(k, c_s or 0.0)
    out["phi_star"] = prof.phi_star
    out["x_star"] = prof.x_star
    report.results.update(out)
    cols = ("linear_case", "wellposed_case", "nft_case", "d_det", "A", "B", "region",
            "c_s", "predicted_type")
    with CsvSink(report.path("classification.csv"), [(c, "-") for c in cols]) as sink:
        sink.row(*[report.classification.get(c) for c in cols])


def cmd_dispersion(cfg, report):
    k = cfg.coeffs
    c_s = cfg.c_s or 0.0
    blk = cfg.block("dispersion")
    kk = np.linspace(0.0, blk.get("k_max", 10.0), blk.get("n", 501))
    prof = dispersion_profile(k, c_s)
    x = kk**2
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            phi, psi = prof.phi(x), prof.psi(x)
        except ModelDomainError as exc:
            raise ConfigError(f"dispersion relation undefined on the k range: {exc}") from exc
        cp, cm = prof.phase_speeds(kk)
        gp, gm = prof.group_velocities(kk)
    with CsvSink(report.path("dispersion.csv"),
                 (("k", "1/length"), ("x", "1/length^2"), ("phi", "-"), ("psi", "-"),
                  ("phase_plus", "velocity"), ("phase_minus", "velocity"),
                  ("group_plus", "velocity"), ("group_minus", "velocity"),
                  ("symbol_det", "-"))) as out:
        out.rows(kk, x, phi, psi, cp, cm, gp, gm, symbol_det(k, c_s, kk))
    report.results.update(phi_star=prof.phi_star, x_star=prof.x_star, p1=prof.p1,
                          p2=prof.p2, p3=prof.p3, a_tilde=prof.a_tilde)


def _exact(cfg):
    blk = cfg.block("exact")
    return exact_sech2(cfg.coeffs, blk.get("branch", "generic"), blk.get("B"),
                       blk.get("sign", 1))


def cmd_exact(cfg, report):
    grid = cfg.grid
    e = _exact(cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        s = sample_exact(e, grid)
    for wmsg in caught:
        report.warn("wrap_error", str(wmsg.message), _wrap_error(s))
    res = traveling_residual(cfg.coeffs, e.c_s, grid, s.zeta, s.v)
    write_profile(report.path("profile.csv"), s, e.c_s, res, "CSW")
    report.files.append("profile.json")
    report.results.update(B=e.B, mu1=e.mu1, mu2=e.mu2, c_s=e.c_s, amplitude=e.amplitude,
                          width=e.width, residual=res)
    report.classification = _classification(cfg.coeffs, e.c_s)


def cmd_solitary(cfg, report):
    grid = cfg.grid
    guess = cfg.block("wave").get("guess")
    w = _solve_wave(cfg, grid, cfg.c_s, guess, report)
    _write_solitary(report, w)
    report.results.update(amplitude=w.amplitude, residual=w.residual,
                          iterations=w.iterations, converged=w.converged,
                          wave_type=w.wave_type, m_h=w.m_history[-1],
                          v_max=float(np.max(np.abs(w.v_beta))),
                          u_max=float(np.max(np.abs(w.u))),
                          l2_zeta=grid.l2(w.zeta))
    _wrap_warning(report, w.state(), w.wave_type)


def _wrap_error(s: WaveState):
    z = np.abs(s.zeta)
    amp = float(np.max(z))
    if amp == 0:
        return 0.0
    edge = z[np.abs(s.grid.x) >= 0.99 * s.grid.L]
    return float(np.max(edge) / amp)


def _wrap_warning(report, s, wave_type=None):
    if wave_type in ("GSW", "PeriodicTW"):
        return
    err = _wrap_error(s)
    if err > WRAP_WARN:
        report.warn("wrap_error", f"initial data reaches {err:.2e} of its amplitude at the "
                    "domain ends; periodic wrap-around is not negligible", err)


def _shift(state: WaveState, x0):
    ph = np.exp(-1j * state.grid.kh * x0)
    ph[state.grid.nyquist] = 0.0
    return state.copy(zeta_hat=state.zeta_hat * ph, v_hat=state.v_hat * ph)


def _initial_evolve(cfg, report):
    """(state, reference speed, wave type) for the evolve experiment."""
    grid = cfg.grid
    ini = cfg.block("initial")
    kind = ini["kind"]
    direction = ini.get("direction", 1)
    c_ref, wtype = None, None
    if kind == "exact":
        e = _exact(cfg)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            s = sample_exact(e, grid)
        c_ref = e.c_s
        report.results["exact"] = dict(B=e.B, mu1=e.mu1, mu2=e.mu2, c_s=e.c_s)
    elif kind == "solitary":
        w = _solve_wave(cfg, grid, cfg.c_s, cfg.block("wave").get("guess"), report)
        _write_solitary(report, w)
        s, c_ref, wtype = w.state(), w.c_s, w.wave_type
    elif kind == "profile":
        s = read_profile(ini["path"], grid, cfg.coeffs, t=0.0)
        meta_path = _sidecar(ini["path"])
        if os.path.exists(meta_path):
            with open(meta_path) as fh:
                meta = json.load(fh)
            c_ref, wtype = meta.get("c_s"), meta.get("wave_type")
    else:
        s = _gaussian_state(cfg, grid)
    if direction == -1:
        s = s.copy(v_hat=-s.v_hat)
        c_ref = -c_ref if c_ref is not None else None
    if ini.get("shift"):
        s = _shift(s, ini["shift"])
    return s, c_ref, wtype


def _gaussian_state(cfg, grid):
    gs = cfg.block("gaussian")
    zeta = gs["A"] * np.exp(-gs["tau"] * grid.x**2)
    v = v_from_u(grid, zeta, cfg.coeffs.beta)
    return WaveState.from_values(grid, cfg.coeffs, zeta, v)


def _evolve(cfg, report, initial: WaveState, c_ref=None, x0=0.0, n_peaks=1, wave_type=None):
    st = cfg.block("stepper")
    out = cfg.block("output")
    grid = initial.grid
    config = StepperConfig(st["dt"], st.get("fp_tolerance", 1e-12),
                           st.get("fp_max_iters", 200), st.get("cfl_alpha"))
    M, dt, adjusted = resolve_steps(st["T"], st["dt"])
    if adjusted:
        report.warn("dt_adjusted", f"dt adjusted to {dt!r} so that T = M dt", dt)
    cfl = grid.N * dt
    report.results["cfl_product"] = cfl
    if cfl > st.get("cfl_warn", 64.0):
        report.warn("cfl", f"N dt = {cfl:.4g} exceeds cfl_warn; expect slow fixed-point "
                    "convergence", cfl)
    if config.cfl_alpha is not None and cfl > config.cfl_alpha:
        raise ConfigError(f"N dt = {cfl} exceeds stepper.cfl_alpha = {config.cfl_alpha}")
    _wrap_warning(report, initial, wave_type)
    stride = out.get("stride") or max(1, math.ceil(M / 400))
    n_snap = out.get("snapshots", 10)
    snap_every = max(1, math.ceil(M / n_snap)) if n_snap > 0 else None
    method = out.get("peak_method", "quadratic")
    sep = out.get("peak_separation", 2.0)

    inv0 = invariants(initial)
    amp0 = float(initial.zeta[np.argmax(np.abs(initial.zeta))])
    polarity = 1 if amp0 >= 0 else -1
    inv_sink = CsvSink(report.path("invariants.csv"),
                       (("t", "time"), ("I_h", "-"), ("E_h", "-"), ("l2_zeta", "length"),
                        ("l2_v", "velocity"), ("rel_drift_I", "-"), ("rel_drift_E", "-"),
                        ("rel_drift_l2_zeta", "-")))
    if n_peaks == 1:
        cols = (("t", "time"), ("amplitude", "length"), ("location", "length"),
                ("unwrapped", "length"), ("speed", "velocity"), ("phase_error", "length"),
                ("multi_peak", "bool"), ("amplitude_rel_err", "-"), ("speed_rel_err", "-"))
    else:
        cols = (("t", "time"),)
        for i in range(1, n_peaks + 1):
            cols += ((f"x{i}", "length"), (f"amplitude{i}", "length"))
    peak_sink = CsvSink(report.path("peaks.csv"), cols)
    last = {"track": None}

    def rel(a, b):
        # undefined for invariants that vanish initially (symmetric data)
        return (a - b) / abs(b) if abs(b) > 1e-10 else math.nan

    def observe(s, step):
        r = invariants(s)
        inv_sink.row(s.t, r.I_h, r.E_h, r.l2_zeta, r.l2_v, rel(r.I_h, inv0.I_h),
                     rel(r.E_h, inv0.E_h), rel(r.l2_zeta, inv0.l2_zeta))
        if n_peaks == 1:
            ref = (x0, c_ref) if c_ref is not None else None
            tr = track_peak(s, polarity, last["track"], ref, method)
            if last["track"] is None:
                last["amp0"] = tr.amplitude
            last["track"] = tr
            # normalized by the initial tracked amplitude and the reference speed
            amp_err = (tr.amplitude - last["amp0"]) / abs(last["amp0"])
            spd_err = (tr.speed - c_ref) / abs(c_ref) if c_ref else math.nan
            peak_sink.row(tr.t, tr.amplitude, tr.location, tr.unwrapped, tr.speed,
                          tr.phase_error, tr.multi_peak, amp_err, spd_err)
        else:
            pk = find_peaks(s.zeta, grid.x, n_peaks, polarity, sep)
            row = [s.t]
            for i in range(n_peaks):
                row += [pk[i][1], pk[i][2]] if i < len(pk) else [None, None]
            peak_sink.row(*row)
        if snap_every and (step % snap_every == 0 or step == M):
            name = f"snapshots/snap_{step:07d}.csv"
            write_profile(report.path(name), s, c_ref)
            report.files.append(name.replace(".csv", ".json"))

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            final, info = run(initial, st["T"], config, [observe], stride=stride)
    finally:
        inv_sink.close()
        peak_sink.close()
    write_profile(report.path("final.csv"), final, c_ref, None, wave_type)
    report.files.append("final.json")
    r = invariants(final)
    report.steps = info.steps
    report.results.update(
        T=final.t, dt=info.dt, steps=info.steps, fp_iterations=info.fp_iterations,
        max_fp_iterations=info.max_fp_iterations, I_h0=inv0.I_h, E_h0=inv0.E_h,
        l2_zeta0=inv0.l2_zeta, rel_drift_I=rel(r.I_h, inv0.I_h),
        rel_drift_E=rel(r.E_h, inv0.E_h), rel_drift_l2_zeta=rel(r.l2_zeta, inv0.l2_zeta),
        final_amplitude=float(final.zeta[np.argmax(np.abs(final.zeta))]))
    if last["track"] is not None:
        report.results["final_peak"] = last["track"].as_dict()
        report.results["error_normalization"] = (
            "amplitude_rel_err against the initial tracked amplitude; "
            "speed_rel_err against the reference wave speed")
    return final


def cmd_evolve(cfg, report):
    s, c_ref, wtype = _initial_evolve(cfg, report)
    if c_ref is not None:
        report.classification = _classification(cfg.coeffs, abs(c_ref))
    ini = cfg.block("initial")
    final = _evolve(cfg, report, s, c_ref, ini.get("shift", 0.0), wave_type=wtype)
    if ini["kind"] == "exact" and ini.get("direction", 1) == 1 and not ini.get("shift"):
        err = error_vs_exact(final, _exact(cfg))
        report.results["error_vs_exact"] = dict(err.__dict__)


def cmd_perturb(cfg, report):
    grid = cfg.grid
    w = _solve_wave(cfg, grid, cfg.c_s, cfg.block("wave").get("guess"), report)
    _write_solitary(report, w)
    A = cfg.block("perturbation")["A"]
    s = w.state()
    s = s.copy(zeta_hat=A * s.zeta_hat, v_hat=A * s.v_hat)
    report.results["unperturbed_amplitude"] = w.amplitude
    _evolve(cfg, report, s, w.c_s, wave_type=w.wave_type)


def cmd_collide(cfg, report):
    grid = cfg.grid
    waves = []
    cache = {}
    total = None
    for i, item in enumerate(cfg.resolved["superposition"]):
        c_s = item["c_s"]
        key = (c_s, json.dumps(item.get("guess"), sort_keys=True))
        if key not in cache:
            cache[key] = _solve_wave(cfg, grid, c_s, item.get("guess"), report, f"_{i}")
            _write_solitary(report, cache[key], f"_{i}")
        w = cache[key]
        s = w.state(direction=item.get("direction", 1))
        s = _shift(s, item.get("center", 0.0))
        waves.append(dict(c_s=c_s, amplitude=w.amplitude, center=item.get("center", 0.0),
                          direction=item.get("direction", 1), wave_type=w.wave_type))
        total = s if total is None else total.copy(zeta_hat=total.zeta_hat + s.zeta_hat,
                                                   v_hat=total.v_hat + s.v_hat)
    report.results["waves"] = waves
    n = cfg.block("output").get("peaks", len(waves))
    _evolve(cfg, report, total, n_peaks=n)


def cmd_resolve(cfg, report):
    s = _gaussian_state(cfg, cfg.grid)
    n = cfg.block("output").get("peaks", 1)
    _evolve(cfg, report, s, n_peaks=n)


def _convergence_cell(coeffs, L, T, fp_tolerance, N, dt):
    grid = Grid(L, N)
    e = exact_sech2(coeffs)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        s0 = sample_exact(e, grid)
        s, _ = run(s0, T, StepperConfig(dt, fp_tolerance))
    err = error_vs_exact(s, e)
    return dict(zeta_abs=err.zeta_abs, v_abs=err.v_abs, zeta_rel=err.zeta_rel,
                v_rel=err.v_rel)


def cmd_convergence(cfg, report, jobs=1):
    cv = cfg.block("convergence")
    st = cfg.block("stepper")
    grid = cfg.grid
    T = cv.get("T", st.get("T"))
    Ns = cv.get("Ns", [grid.N])
    e = exact_sech2(cfg.coeffs)
    report.results["exact"] = dict(B=e.B, mu1=e.mu1, mu2=e.mu2, c_s=e.c_s,
                                   amplitude=e.amplitude)
    report.classification = _classification(cfg.coeffs, e.c_s)
    cell = partial(_convergence_cell, cfg.coeffs, grid.L, T, st.get("fp_tolerance", 1e-12))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = convergence_table(cell, cv["dts"], Ns, mapper=pool.map)
    else:
        rows = convergence_table(cell, cv["dts"], Ns)
    keys = ("zeta_abs", "v_abs", "zeta_rel", "v_rel")
    cols = [("N", "-"), ("dt", "time")] + [(k, "-") for k in keys] + \
        [(f"rate_{k}", "-") for k in keys] + [("failed", "-")]
    with CsvSink(report.path("convergence.csv"), cols) as out:
        for r in rows:
            errs = r.errors or {}
            out.row(r.N, r.dt, *[errs.get(k) for k in keys],
                    *[r.rates.get(k) for k in keys], r.failed)
    report.results["table"] = [r.as_dict() for r in rows]
    failed = [r for r in rows if r.failed]
    if failed:
        report.warn("cell_failed", f"{len(failed)} convergence cell(s) failed",
                    [r.failed for r in failed])


_COMMANDS = {
    "derive-params": cmd_derive_params,
    "classify": cmd_classify,
    "dispersion": cmd_dispersion,
    "exact": cmd_exact,
    "solitary": cmd_solitary,
    "evolve": cmd_evolve,
    "perturb": cmd_perturb,
    "collide": cmd_collide,
    "resolve": cmd_resolve,
    "convergence": cmd_convergence,
}


def execute(cfg: ExperimentConfig, out_dir: str, jobs: int = 1) -> RunReport:
    """Run an experiment; the report is also written to ``out_dir/run.json``.

    Solver and stepper exceptions propagate after the partial outputs and the
    report (with ``status`` set) have been written.
    """
    os.makedirs(out_dir, exist_ok=True)
    report = RunReport(cfg.experiment, out_dir, cfg.resolved)
    report.classification = _classification(cfg.coeffs, cfg.c_s)
    if abs(cfg.consistency_residual) > RESIDUAL_WARN:
        report.warn("consistency_residual",
                    f"(delta+gamma) a + b + c + d - S = {cfg.consistency_residual:.3e}; "
                    "the quadruple is not derived from the modelling parameters",
                    cfg.consistency_residual)
    write_json(report.path("config.resolved.json"), cfg.resolved)
    t0 = time.perf_counter()
    fn = _COMMANDS[cfg.experiment]
    try:
        if cfg.experiment == "convergence":
            fn(cfg, report, jobs)
        else:
            fn(cfg, report)
    except BaseException as exc:
        report.status = f"{type(exc).__name__}: {exc}"
        report.exit_code = exit_code_for(exc)
        raise
    finally:
        report.wall_clock = time.perf_counter() - t0
        report.files = [f for f in report.files if os.path.exists(os.path.join(out_dir, f))]
        if "run.json" not in report.files:
            report.files.append("run.json")
        write_json(os.path.join(out_dir, "run.json"), report.as_dict())
    missing = report.missing_files()
    if missing:
        raise RuntimeError(f"empty or missing outputs: {missing}")
    return report


def exit_code_for(exc):
    if isinstance(exc, (ConfigError, ModelDomainError, NoExactSolution)):
        return EXIT_CONFIG
    if isinstance(exc, (PetviashviliError, FixedPointNotConverged, SingularMode)):
        return EXIT_SOLVER
    if isinstance(exc, (BlowUp, FloatingPointError)):
        return EXIT_BLOWUP
    return 1


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    p = argparse.ArgumentParser(prog="bbwaves", description="Boussinesq internal-wave lab")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", required=True, help="JSON config file")
        sp.add_argument("--out", help="output directory (overrides output.dir)")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="set a dotted config key; VALUE is parsed as JSON")
        sp.add_argument("--jobs", type=int, default=1, help="parallel convergence cells")
        sp.add_argument("--quiet", action="store_true", help="suppress the summary line")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    say = (lambda *a: None) if args.quiet else (lambda *a: print(*a, file=sys.stderr))
    try:
        cfg = load_config(args.config, args.override)
        if cfg.experiment != args.command:
            raise ConfigError(f"config is for '{cfg.experiment}', not '{args.command}'")
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = args.out or cfg.block("output").get("dir") or os.path.join("bbwaves-out",
                                                                         cfg.experiment)
    try:
        report = execute(cfg, out_dir, args.jobs)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        code = exit_code_for(exc)
        label = {EXIT_CONFIG: "config error", EXIT_SOLVER: "solver did not converge",
                 EXIT_BLOWUP: "blow-up"}.get(code, "error")
        print(f"{label}: {exc}", file=sys.stderr)
        return code
    for w in report.warnings:
        say(f"warning [{w['kind']}]: {w['message']}")
    say(f"{cfg.experiment}: ok, {len(report.files)} files in {out_dir} "
        f"({report.wall_clock:.1f} s)")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
