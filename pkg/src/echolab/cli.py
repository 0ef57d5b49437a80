"""Config-driven experiment runner.

Configs are flat ``block.key = value`` files (see ``presets/``); every output
is a comma-delimited file whose '#' header lines echo the resolved config.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import compare_series, default_smoothing_window, empirical_tau1, fit_power_law
from .classical import (
    DEFAULT_ESTIMATOR_LENGTH,
    action_difference_series,
    default_fd_step,
    k_p_series,
    k_pp_series,
    local_derivatives,
)
from .errors import (
    AnalysisError,
    BudgetExceededError,
    TorusResonanceError,
    UnreliableEstimateError,
    ValidationError,
)
from .model import PacketSpec, RotorParams, make_packet, make_rotor_params
from .quantum import fidelity_series
from .semiclassical import (
    GridControl,
    beta_of_sigma,
    crossover_time,
    m_sc1_series,
    m_sc2_series,
    m_sc_integral,
    plateau_end_time,
    tau1_estimate,
    tau_s,
)

EXIT_OK, EXIT_VALIDATION, EXIT_BUDGET, EXIT_ANALYSIS = 0, 1, 2, 3

DEFAULTS = {
    "model.k": "0.3",
    "model.n_dim": "4096",
    "model.sigma": "0.2",
    "packet.r0_over_pi": "1.2",
    "packet.p0_over_pi": "0.8",
    "packet.xi_sq_fraction": "20",
    "run.t_max": "1000",
    "run.output": "run",
    "run.p0_grid_span_in_wp": "5",
    "run.estimator_length": str(DEFAULT_ESTIMATOR_LENGTH),
    "run.fd_step": "auto",
    "run.derivative_method": "tangent",
    "run.sc_integral_t_max": "auto",
    "run.quadrature_budget": "400000",
    "run.rate_time": "100",
    "run.tau1_empirical": "true",
    "run.fit_t_lo": "",
    "run.fit_t_hi": "",
    "run.smoothing_window": "auto",
    "run.input": "",
    "run.compare_predictor": "M_sc_integral",
    "run.compare_threshold": "0.1",
    "sweep.sigma": "",
}
PREDICTORS = ("M_sc_integral", "M_sc1", "M_sc2")


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict
    k: float
    n_dim: int
    sigma: float
    r0_over_pi: float
    p0_over_pi: tuple
    xi_sq_fraction: float
    t_max: int
    output: str
    p0_grid_span_in_wp: float
    estimator_length: int
    fd_step: float | None
    derivative_method: str
    sc_integral_t_max: int
    quadrature_budget: int
    rate_time: int
    tau1_empirical: bool
    fit_t_lo: float | None
    fit_t_hi: float | None
    smoothing_window: int | None
    input: str
    compare_predictor: str
    compare_threshold: float
    sweep_sigma: tuple

    def params(self, sigma: float | None = None) -> RotorParams:
        return make_rotor_params(self.k, self.n_dim, self.sigma if sigma is None else sigma)

    def packet(self, p0_over_pi: float, params: RotorParams | None = None) -> PacketSpec:
        params = params or self.params()
        return make_packet(self.r0_over_pi * math.pi, p0_over_pi * math.pi, self.xi_sq_fraction, params)

    def echo(self, **replace) -> list[str]:
        """Resolved config as 'key = value' lines; ``replace`` entries that are None keep the file value."""
        raw = dict(self.raw)
        raw.update({k: v for k, v in replace.items() if v is not None})
        return [f"{key} = {raw[key]}" for key in sorted(raw)]


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected 'block.key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def _field(raw: dict, key: str, conv):
    text = raw[key]
    try:
        return conv(text)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{key}: cannot parse {text!r} ({exc})") from None


def _int(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError("not an integer")
    return int(value)


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


def _optional(conv):
    return lambda text: None if text in ("", "auto", "none") else conv(text)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def resolve_config(raw_file: dict, overrides: list[str] | None = None) -> ExperimentConfig:
    """Merge defaults, file values and ``--set key=value`` overrides, then validate every field."""
    raw = dict(DEFAULTS)
    for key, value in raw_file.items():
        if key not in DEFAULTS:
            raise ValidationError(f"unknown config field {key!r}")
        raw[key] = value
    for item in overrides or []:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in DEFAULTS:
            raise ValidationError(f"unknown config field {key!r}")
        raw[key] = value

    t_max = _field(raw, "run.t_max", _int)
    if t_max < 1:
        raise ValidationError("run.t_max must be >= 1")
    sc_t = _field(raw, "run.sc_integral_t_max", _optional(_int))
    cfg = ExperimentConfig(
        raw=raw,
        k=_field(raw, "model.k", float),
        n_dim=_field(raw, "model.n_dim", _int),
        sigma=_field(raw, "model.sigma", float),
        r0_over_pi=_field(raw, "packet.r0_over_pi", float),
        p0_over_pi=_field(raw, "packet.p0_over_pi", _floats),
        xi_sq_fraction=_field(raw, "packet.xi_sq_fraction", float),
        t_max=t_max,
        output=raw["run.output"] or "run",
        p0_grid_span_in_wp=_field(raw, "run.p0_grid_span_in_wp", float),
        estimator_length=_field(raw, "run.estimator_length", _int),
        fd_step=_field(raw, "run.fd_step", _optional(float)),
        derivative_method=raw["run.derivative_method"],
        sc_integral_t_max=t_max if sc_t is None else min(sc_t, t_max),
        quadrature_budget=_field(raw, "run.quadrature_budget", _int),
        rate_time=_field(raw, "run.rate_time", _int),
        tau1_empirical=_field(raw, "run.tau1_empirical", _bool),
        fit_t_lo=_field(raw, "run.fit_t_lo", _optional(float)),
        fit_t_hi=_field(raw, "run.fit_t_hi", _optional(float)),
        smoothing_window=_field(raw, "run.smoothing_window", _optional(_int)),
        input=raw["run.input"],
        compare_predictor=raw["run.compare_predictor"],
        compare_threshold=_field(raw, "run.compare_threshold", float),
        sweep_sigma=_field(raw, "sweep.sigma", _floats),
    )
    if not cfg.p0_over_pi:
        raise ValidationError("packet.p0_over_pi: at least one value required")
    if cfg.derivative_method not in ("tangent", "fd"):
        raise ValidationError(f"run.derivative_method: expected tangent or fd, got {cfg.derivative_method!r}")
    if cfg.compare_predictor not in PREDICTORS:
        raise ValidationError(f"run.compare_predictor: expected one of {PREDICTORS}")
    if cfg.estimator_length < 1000:
        raise ValidationError("run.estimator_length must be >= 1000")
    if cfg.p0_grid_span_in_wp <= 0:
        raise ValidationError("run.p0_grid_span_in_wp must be > 0")
    if cfg.fd_step is not None and cfg.fd_step <= 0:
        raise ValidationError("run.fd_step must be > 0")
    # every run the config can trigger goes through the model constructors up front
    for sigma in (cfg.sigma, *cfg.sweep_sigma):
        params = _validated(lambda: cfg.params(sigma), "model")
        for p0 in cfg.p0_over_pi:
            _validated(lambda: cfg.packet(p0, params), "packet")
    return cfg


def _validated(build, block: str):
    try:
        return build()
    except ValidationError as exc:
        raise ValidationError(f"{block}: {exc}") from None


def load_config(path: str | os.PathLike, overrides: list[str] | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from None
    return resolve_config(parse_config_text(text), overrides)


def preset_path(name: str) -> Path:
    """Filesystem path of a shipped preset, e.g. ``preset_path("fig3")``."""
    return Path(str(resources.files("echolab") / "presets" / f"{name}.cfg"))


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    return f"{float(value):.17g}"


def write_table(path: Path, header: list[str], columns: dict) -> Path:
    """Write '#'-prefixed header lines, a column row and the data atomically (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    cols = [np.asarray(columns[n]) if not isinstance(columns[n], list) else columns[n] for n in names]
    n_rows = len(cols[0]) if cols else 0
    lines = [f"# {h}" for h in header]
    lines.append(",".join(names))
    for i in range(n_rows):
        lines.append(",".join(_fmt(c[i]) for c in cols))
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_table(path: str | os.PathLike) -> tuple[dict, dict]:
    """Inverse of :func:`write_table`: returns (header key/values, columns).

    Numeric columns come back as float arrays, anything else as lists of str.
    """
    meta, rows, names = {}, [], None
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, value = (p.strip() for p in body.split("=", 1))
                meta[key] = value
            continue
        if not line.strip():
            continue
        if names is None:
            names = [n.strip() for n in line.split(",")]
            continue
        rows.append(line.split(","))
    if names is None:
        raise ValidationError(f"{path}: no column row")
    cols = {}
    for j, name in enumerate(names):
        values = [row[j] for row in rows]
        try:
            cols[name] = np.array([float(v) for v in values])
        except ValueError:
            cols[name] = values
    return meta, cols


def _tag(value: float, name: str) -> str:
    return f"{name}={value:g}"


def _stem(cfg: ExperimentConfig, p0: float | None = None, sigma: float | None = None) -> str:
    parts = [cfg.output]
    if p0 is not None and len(cfg.p0_over_pi) > 1:
        parts.append(_tag(p0, "p0") + "pi")
    if sigma is not None:
        parts.append(_tag(sigma, "sigma"))
    return ".".join(parts)


def _header(kind: str, echo: list[str], extra: list[str] | None = None) -> list[str]:
    return [f"echolab {__version__} {kind}", *echo, *(extra or [])]


def _map(fn, items: list, jobs: int) -> list:
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------

def _quantum_job(args):
    cfg, p0, sigma = args
    params = cfg.params(sigma)
    return fidelity_series(cfg.packet(p0, params), params, cfg.t_max)


def _quantum_columns(series) -> dict:
    return {"t": series.t, "M_quantum": series.m_sq, "Re_m": series.m_amp.real, "Im_m": series.m_amp.imag}


def _quantum_echo(cfg: ExperimentConfig, p0: float, sigma: float | None = None) -> list[str]:
    # per-run echo: one p0, one sigma, no sweep block, so the file reruns as-is
    return cfg.echo(**{"packet.p0_over_pi": f"{p0:g}", "model.sigma": None if sigma is None else f"{sigma:g}",
                       "sweep.sigma": ""})


def run_quantum(cfg: ExperimentConfig, out_dir: Path, jobs: int = 1) -> list[Path]:
    results = _map(_quantum_job, [(cfg, p0, None) for p0 in cfg.p0_over_pi], jobs)
    paths = []
    for p0, series in zip(cfg.p0_over_pi, results):
        path = out_dir / f"{_stem(cfg, p0)}.quantum.csv"
        write_table(path, _header("fidelity", _quantum_echo(cfg, p0)), _quantum_columns(series))
        paths.append(path)
    return paths


@dataclass(frozen=True)
class Estimates:
    derivs: object
    k_p: np.ndarray
    k_pp: np.ndarray
    tau1: float
    tau1_lower_bound: bool
    tau_s: float
    t_plateau: float
    t_cross: float

    @property
    def reliable(self) -> bool:
        return bool(self.derivs.reliable and self.derivs.center.regular)


def classical_estimates(cfg: ExperimentConfig, packet: PacketSpec, params: RotorParams) -> Estimates:
    h = cfg.fd_step or default_fd_step(packet)
    d = local_derivatives(packet.r0_center, packet.p0_center, params.k, h, cfg.estimator_length)
    kp = k_p_series(packet.r0_center, packet.p0_center, params.k, h, cfg.t_max, cfg.derivative_method)
    kpp = k_pp_series(packet.r0_center, packet.p0_center, params.k, h, cfg.t_max, cfg.derivative_method)
    t1, lb = tau1_estimate(packet, params, kpp)
    return Estimates(derivs=d, k_p=kp, k_pp=kpp, tau1=t1, tau1_lower_bound=lb, tau_s=tau_s(packet, d.nu_prime),
                     t_plateau=plateau_end_time(packet, params, d.u_i_prime),
                     t_cross=crossover_time(packet, params, d.u_i_double_prime))


def _semiclassical_job(args):
    cfg, p0 = args
    params = cfg.params()
    packet = cfg.packet(p0, params)
    est = classical_estimates(cfg, packet, params)
    sc1 = m_sc1_series(packet, params, est.k_p, est.reliable)
    sc2 = m_sc2_series(packet, params, est.derivs, cfg.t_max, c=1.0)
    grid = GridControl(nu_prime=est.derivs.nu_prime, span_in_wp=cfg.p0_grid_span_in_wp,
                       max_points=cfg.quadrature_budget)
    integral = m_sc_integral(packet, params, cfg.sc_integral_t_max, grid)
    m_int = np.full(cfg.t_max + 1, np.nan)
    m_int[: cfg.sc_integral_t_max + 1] = integral.M_sc
    return est, m_int, sc1.M_sc1, sc2.M_sc2, integral.info


def _estimate_rows(est: Estimates) -> dict:
    d, c = est.derivs, est.derivs.center

    def rel(value, base, err):
        return abs(value) * err / abs(base) if base else math.nan

    names = ["nu", "nu_prime", "U_I", "U_I_prime", "U_I_double_prime", "tau1", "tau_s", "t_plateau", "t_cross"]
    values = [c.nu, d.nu_prime, c.u_i, d.u_i_prime, d.u_i_double_prime, est.tau1, est.tau_s, est.t_plateau,
              est.t_cross]
    errors = [c.nu_err, d.nu_prime_err, c.u_i_err, d.u_i_prime_err, d.u_i_double_prime_err, math.nan,
              rel(est.tau_s, d.nu_prime, d.nu_prime_err), rel(est.t_plateau, d.u_i_prime, d.u_i_prime_err),
              rel(est.t_cross, d.u_i_double_prime, d.u_i_double_prime_err)]
    notes = ["", "", "", "", "", "lower bound (threshold not reached)" if est.tau1_lower_bound else "",
             "", "", ""]
    return {"name": names, "value": values, "error": errors, "note": notes}


def _status_lines(est: Estimates) -> list[str]:
    c = est.derivs.center
    lines = [f"orbit.motion = {c.motion}", f"orbit.harmonic = {c.harmonic}"]
    lines.append("status = ok" if est.reliable else "status = estimates unreliable")
    return lines


def run_semiclassical(cfg: ExperimentConfig, out_dir: Path, jobs: int = 1) -> list[Path]:
    results = _map(_semiclassical_job, [(cfg, p0) for p0 in cfg.p0_over_pi], jobs)
    paths = []
    for p0, (est, m_int, m1, m2, info) in zip(cfg.p0_over_pi, results):
        echo = _quantum_echo(cfg, p0)
        stem = _stem(cfg, p0)
        extra = _status_lines(est) + [f"quadrature.{k} = {_fmt(v)}" for k, v in sorted(info.items())]
        t = np.arange(cfg.t_max + 1)
        paths.append(write_table(out_dir / f"{stem}.semiclassical.csv", _header("semiclassical", echo, extra),
                                 {"t": t, "M_sc_integral": m_int, "M_sc1": m1, "M_sc2": m2}))
        paths.append(write_table(out_dir / f"{stem}.estimates.csv", _header("estimates", echo, _status_lines(est)),
                                 _estimate_rows(est)))
    return paths


def run_classical(cfg: ExperimentConfig, out_dir: Path, jobs: int = 1) -> list[Path]:
    paths = []
    params = cfg.params()
    for p0 in cfg.p0_over_pi:
        packet = cfg.packet(p0, params)
        est = classical_estimates(cfg, packet, params)
        series = action_difference_series(packet.center, params.k, cfg.t_max, u_i=est.derivs.center.u_i)
        echo = _quantum_echo(cfg, p0)
        stem = _stem(cfg, p0)
        paths.append(write_table(out_dir / f"{stem}.classical.csv", _header("classical", echo, _status_lines(est)),
                                 {"t": series.t, "dS_over_eps": series.dS_over_eps, "S_f": series.s_f,
                                  "k_p": est.k_p, "k_pp": est.k_pp}))
        paths.append(write_table(out_dir / f"{stem}.estimates.csv", _header("estimates", echo, _status_lines(est)),
                                 _estimate_rows(est)))
    return paths


def run_sweep(cfg: ExperimentConfig, out_dir: Path, jobs: int = 1) -> list[Path]:
    if not cfg.sweep_sigma:
        raise ValidationError("sweep.sigma: the sweep subcommand needs at least one sigma")
    if not 0 <= cfg.rate_time <= cfg.t_max:
        raise ValidationError("run.rate_time must lie in [0, run.t_max]")
    paths = []
    for p0 in cfg.p0_over_pi:
        sigmas = list(cfg.sweep_sigma)
        results = _map(_quantum_job, [(cfg, p0, s) for s in sigmas], jobs)
        rates = []
        for sigma, series in zip(sigmas, results):
            path = out_dir / f"{_stem(cfg, p0, sigma)}.quantum.csv"
            write_table(path, _header("fidelity", _quantum_echo(cfg, p0, sigma)), _quantum_columns(series))
            paths.append(path)
            m = series.m_sq[cfg.rate_time]
            rates.append(-math.log(m) if m > 0 else math.inf)
        params = cfg.params()
        packet = cfg.packet(p0, params)
        h = cfg.fd_step or default_fd_step(packet)
        d = local_derivatives(packet.r0_center, packet.p0_center, params.k, h, cfg.estimator_length)
        beta = beta_of_sigma(sigmas, d.u_i_prime, d.nu_prime)
        extra = [f"rate_time = {cfg.rate_time}", f"nu_prime = {_fmt(d.nu_prime)}",
                 f"U_I_prime = {_fmt(d.u_i_prime)}", f"period = {_fmt(beta.period)}",
                 "status = ok" if d.reliable else "status = estimates unreliable"]
        paths.append(write_table(
            out_dir / f"{_stem(cfg, p0)}.beta.csv",
            _header("beta", _quantum_echo(cfg, p0), extra),
            {"sigma": beta.sigma, "minus_ln_M": rates, "beta": beta.beta, "m": list(beta.m),
             "period": np.full(len(sigmas), beta.period)},
        ))
    return paths


def _tau1_job(args):
    cfg, p0 = args
    params = cfg.params()
    packet = cfg.packet(p0, params)
    h = cfg.fd_step or default_fd_step(packet)
    kpp = k_pp_series(packet.r0_center, packet.p0_center, params.k, h, cfg.t_max, cfg.derivative_method)
    t1, lb = tau1_estimate(packet, params, kpp)
    if not cfg.tau1_empirical:
        return t1, lb, math.nan, False
    kp = k_p_series(packet.r0_center, packet.p0_center, params.k, h, cfg.t_max, cfg.derivative_method)
    q = fidelity_series(packet, params, cfg.t_max)
    emp = empirical_tau1(q, m_sc1_series(packet, params, kp))
    return t1, lb, emp.t, emp.crossed


def run_tau1(cfg: ExperimentConfig, out_dir: Path, jobs: int = 1) -> list[Path]:
    results = _map(_tau1_job, [(cfg, p0) for p0 in cfg.p0_over_pi], jobs)
    cols = {"p0_over_pi": list(cfg.p0_over_pi),
            "tau1_estimate": [r[0] for r in results],
            "estimate_lower_bound": [int(r[1]) for r in results],
            "tau1_empirical": [r[2] for r in results],
            "empirical_crossed": [int(r[3]) for r in results]}
    return [write_table(out_dir / f"{cfg.output}.tau1.csv", _header("tau1", cfg.echo()), cols)]


def _fit_input(cfg: ExperimentConfig, p0: float):
    if cfg.input:
        path = Path(cfg.input)
        if not path.exists():
            raise ValidationError(f"run.input: {path} does not exist")
        _, cols = read_table(path)
        if "t" not in cols:
            raise ValidationError(f"{path}: needs a 't' column")
        name = "M_quantum" if "M_quantum" in cols else [c for c in cols if c != "t"][0]
        return cols["t"], cols[name]
    series = _quantum_job((cfg, p0, None))
    return series.t, series.m_sq


def run_fit(cfg: ExperimentConfig, out_dir: Path, jobs: int = 1) -> list[Path]:
    if cfg.fit_t_lo is None or cfg.fit_t_hi is None:
        raise ValidationError("run.fit_t_lo and run.fit_t_hi are required for fit")
    paths = []
    p0s = cfg.p0_over_pi[:1] if cfg.input else cfg.p0_over_pi
    for p0 in p0s:
        window = cfg.smoothing_window
        if window is None:
            if cfg.input:
                window = 5
            else:
                params = cfg.params()
                packet = cfg.packet(p0, params)
                d = local_derivatives(packet.r0_center, packet.p0_center, params.k, default_fd_step(packet),
                                      cfg.estimator_length)
                window = default_smoothing_window(d.center.nu)
        t, m = _fit_input(cfg, p0)
        fit = fit_power_law((t, m), cfg.fit_t_lo, cfg.fit_t_hi, window)
        cols = {"alpha": [fit.alpha], "stderr": [fit.stderr], "r_squared": [fit.r_squared],
                "t_lo": [fit.window[0]], "t_hi": [fit.window[1]], "n_points": [fit.n_points],
                "smoothing_window": [fit.smoothing_window], "trusted": [int(fit.trusted)]}
        print(f"alpha = {fit.alpha:.6g} +- {fit.stderr:.2g}  r2 = {fit.r_squared:.6f}  "
              f"window = [{fit.window[0]:g}, {fit.window[1]:g}]  smoothing = {fit.smoothing_window}"
              + ("" if fit.trusted else "  (untrusted: window < 1 decade)"))
        echo = _quantum_echo(cfg, p0) if not cfg.input else cfg.echo()
        paths.append(write_table(out_dir / f"{_stem(cfg, p0)}.fit.csv", _header("fit", echo), cols))
    return paths


def _compare_job(args):
    cfg, p0 = args
    q = _quantum_job((cfg, p0, None))
    _, m_int, m1, m2, _ = _semiclassical_job((cfg, p0))
    pred = {"M_sc_integral": m_int, "M_sc1": m1, "M_sc2": m2}[cfg.compare_predictor]
    return q, pred


def run_compare(cfg: ExperimentConfig, out_dir: Path, jobs: int = 1) -> list[Path]:
    results = _map(_compare_job, [(cfg, p0) for p0 in cfg.p0_over_pi], jobs)
    paths = []
    for p0, (q, pred) in zip(cfg.p0_over_pi, results):
        ok = np.isfinite(pred)
        report = compare_series((q.t[ok], q.m_sq[ok]), (q.t[ok], pred[ok]), cfg.compare_threshold)
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.abs(q.m_sq - pred) / np.abs(q.m_sq)
        crossing = "none" if report.first_crossing is None else _fmt(report.first_crossing)
        extra = [f"predictor = {cfg.compare_predictor}", f"max_rel_error = {_fmt(report.max_rel_error)}",
                 f"mean_rel_error = {_fmt(report.mean_rel_error)}", f"first_crossing = {crossing}",
                 f"n_compared = {report.n_compared}", *[f"note = {n}" for n in report.notes]]
        print(f"p0 = {p0:g}pi: max rel error {report.max_rel_error:.3g}, first crossing of "
              f"{cfg.compare_threshold:g} at t = {crossing}")
        paths.append(write_table(out_dir / f"{_stem(cfg, p0)}.compare.csv", _header("compare", _quantum_echo(cfg, p0),
                                                                                       extra),
                                 {"t": q.t, "M_quantum": q.m_sq, cfg.compare_predictor: pred, "rel_error": rel}))
    return paths


COMMANDS = {
    "quantum": run_quantum,
    "semiclassical": run_semiclassical,
    "classical": run_classical,
    "sweep": run_sweep,
    "tau1": run_tau1,
    "fit": run_fit,
    "compare": run_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="echolab", description="Fidelity decay experiments on the kicked rotator")
    parser.add_argument("--version", action="version", version=f"echolab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="config file, or preset name such as fig3")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel runs over p0 or sigma entries")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field")
        if name == "fit":
            p.add_argument("--t-lo", type=float)
            p.add_argument("--t-hi", type=float)
            p.add_argument("--smoothing", type=int)
            p.add_argument("--input", help="existing fidelity file to fit instead of running")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.set)
    if args.command == "fit":
        for flag, key in (("t_lo", "run.fit_t_lo"), ("t_hi", "run.fit_t_hi"),
                          ("smoothing", "run.smoothing_window"), ("input", "run.input")):
            if getattr(args, flag) is not None:
                overrides.append(f"{key}={getattr(args, flag)}")
    try:
        if args.jobs < 1:
            raise ValidationError("--jobs must be >= 1")
        config_path = Path(args.config)
        if not config_path.exists() and preset_path(args.config).exists():
            config_path = preset_path(args.config)
        cfg = load_config(config_path, overrides)
        paths = COMMANDS[args.command](cfg, Path(args.out), args.jobs)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except BudgetExceededError as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (AnalysisError, UnreliableEstimateError, TorusResonanceError) as exc:
        print(f"analysis error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    for path in paths:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
