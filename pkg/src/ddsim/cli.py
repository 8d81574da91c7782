"""Command-line front end: ``ddsim {sweep,decay,magnus-check,grating}``.

Configuration is one JSON document; times are in microseconds and angles in
degrees at this boundary. Every output carries the config hash and the base
seed. The seed is taken from ``--seed``, else the config, else the
``DDSIM_SEED`` environment variable, else 0.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ddsim import magnus
from ddsim.analysis import (
    SweepConfig,
    ThetaProfile,
    build_pair,
    fit_stretched_exp,
    manifestation_seed,
    sweep_theta,
)
from ddsim.engine import extract_t2prime, simulate_decay, with_theta
from ddsim.errors import CapacityExceeded, ConfigError, DDSimError, MagnusDivergenceWarning
from ddsim.lattice import DEFAULT_DEPHASING_RMS_HZ, LatticeConfig, generate_network
from ddsim.sequence import SequenceParams, make_sequence
from ddsim.spin_algebra import HamiltonianPair, MAX_SPINS

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_CAPACITY = 0, 1, 2, 3

_DEFAULT_MAGNUS = {
    "instances": 20,
    "n_values": [2, 7, 16, 64],
    "theta_deg": [30.0, 90.0, 137.5, 180.0, 217.0, 360.0],
    "tolerance": 1e-9,
    "identity_tolerance": 1e-12,
    "tau_norm": 0.05,
    "exact_n": 16,
    "exact_theta_rad": [1.0, 2.0, 1.2 * math.pi],
}


@dataclass(frozen=True)
class RunConfig:
    enrichment_eta: float = 0.03
    lattice_constant_nm: float = 0.35
    cell_extent: int = 8
    field_direction: tuple = (0.0, 0.0, 1.0)
    ns: int = 6
    t_acq_us: float = 32.0
    t_d_us: float = 6.0
    t_1_us: float = 0.0
    n_pulses: int = 2000
    rabi_hz: float = 11.4e3
    start_deg: float = 0.0
    stop_deg: float = 450.0
    step_deg: float = 4.5
    manifestations: int = 50
    ratio_dd_over_z: float | str = 0.2
    dephasing_weight: float = 1.0
    dephasing_rms_hz: float = DEFAULT_DEPHASING_RMS_HZ
    base_seed: int = 0
    output_dir: str = "out"
    emit_plots: bool = False
    decay_theta_deg: float = 218.0
    magnus: dict = field(default_factory=lambda: dict(_DEFAULT_MAGNUS))

    def __post_init__(self):
        if not self.step_deg > 0:
            raise ConfigError("theta_grid.step_deg: must be > 0")
        if self.stop_deg < self.start_deg or self.start_deg < 0:
            raise ConfigError("theta_grid: need 0 <= start_deg <= stop_deg")
        if self.manifestations < 1:
            raise ConfigError("manifestations: must be >= 1")
        if not isinstance(self.ratio_dd_over_z, str) and self.ratio_dd_over_z < 0:
            raise ConfigError("ratio_dd_over_z: must be >= 0 or \"native\"")
        if isinstance(self.ratio_dd_over_z, str) and self.ratio_dd_over_z != "native":
            raise ConfigError("ratio_dd_over_z: the only string value allowed is \"native\"")
        if not 0 <= self.base_seed < 2**64:
            raise ConfigError("base_seed: must fit in 64 unsigned bits")

    def theta_grid_rad(self) -> np.ndarray:
        count = int(math.floor((self.stop_deg - self.start_deg) / self.step_deg + 1e-9)) + 1
        return np.deg2rad(self.start_deg + self.step_deg * np.arange(count))

    def sequence_template(self, theta: float = math.pi) -> SequenceParams:
        return make_sequence(
            theta, t_acq=self.t_acq_us * 1e-6, t_d=self.t_d_us * 1e-6,
            t_1=self.t_1_us * 1e-6, n_pulses=self.n_pulses, rabi_omega=self.rabi_hz,
        )

    def sweep_config(self) -> SweepConfig:
        lattice = LatticeConfig(
            self.enrichment_eta, self.lattice_constant_nm, self.cell_extent,
            tuple(self.field_direction),
        )
        return SweepConfig(
            lattice=lattice, ns=self.ns, sequence=self.sequence_template(),
            dephasing_scale=self.dephasing_rms_hz, dephasing_weight=self.dephasing_weight,
            base_seed=self.base_seed,
        )

    @property
    def ratio(self):
        return None if self.ratio_dd_over_z == "native" else float(self.ratio_dd_over_z)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["field_direction"] = list(self.field_direction)
        return d

    def hash(self) -> str:
        """SHA-256 of the canonical JSON of every resolved setting except the output path."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("emit_plots")
        text = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


# JSON layout -> RunConfig field
_SECTIONS = {
    "lattice": {
        "enrichment_eta": "enrichment_eta",
        "lattice_constant_nm": "lattice_constant_nm",
        "cell_extent": "cell_extent",
        "field_direction": "field_direction",
    },
    "sequence": {
        "t_acq_us": "t_acq_us",
        "t_d_us": "t_d_us",
        "t_1_us": "t_1_us",
        "n_pulses": "n_pulses",
        "rabi_hz": "rabi_hz",
    },
    "theta_grid": {"start_deg": "start_deg", "stop_deg": "stop_deg", "step_deg": "step_deg"},
    "decay": {"theta_deg": "decay_theta_deg"},
}
_TOP = {
    "ns", "manifestations", "ratio_dd_over_z", "dephasing_weight",
    "dephasing_rms_hz", "base_seed", "output_dir", "emit_plots",
}
_INT_FIELDS = {"cell_extent", "ns", "n_pulses", "manifestations", "base_seed"}
_BOOL_FIELDS = {"emit_plots"}
_STR_FIELDS = {"output_dir"}


def _coerce(name: str, value, where: str):
    if name in _BOOL_FIELDS:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if name in _STR_FIELDS:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    if name == "field_direction":
        if not (isinstance(value, list) and len(value) == 3):
            raise ConfigError(f"{where}: expected a list of three numbers")
        vec = np.array([_coerce("x", v, where) for v in value], dtype=float)
        norm = float(np.linalg.norm(vec))
        if norm == 0:
            raise ConfigError(f"{where}: zero vector")
        return tuple(float(x) for x in vec / norm)
    if name == "ratio_dd_over_z" and isinstance(value, str):
        return value
    if name == "t_1_us" and value == "cpmg":
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number")
    if name in _INT_FIELDS:
        if int(value) != value:
            raise ConfigError(f"{where}: expected an integer")
        return int(value)
    return float(value)


def parse_config(doc: dict, seed_override: int | None = None, env: dict | None = None) -> RunConfig:
    """Build a RunConfig from a parsed JSON document; raise ConfigError naming the field."""
    if not isinstance(doc, dict):
        raise ConfigError("top level: expected a JSON object")
    kwargs = {}
    for key, value in doc.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{key}: expected an object")
            for sub, sval in value.items():
                if sub not in _SECTIONS[key]:
                    raise ConfigError(f"{key}.{sub}: unknown field")
                name = _SECTIONS[key][sub]
                kwargs[name] = _coerce(name, sval, f"{key}.{sub}")
        elif key == "magnus":
            if not isinstance(value, dict):
                raise ConfigError("magnus: expected an object")
            unknown = set(value) - set(_DEFAULT_MAGNUS)
            if unknown:
                raise ConfigError(f"magnus.{sorted(unknown)[0]}: unknown field")
            kwargs["magnus"] = {**_DEFAULT_MAGNUS, **value}
        elif key in _TOP:
            kwargs[key] = _coerce(key, value, key)
        else:
            raise ConfigError(f"{key}: unknown field")

    env = os.environ if env is None else env
    if seed_override is not None:
        kwargs["base_seed"] = int(seed_override)
    elif "base_seed" not in kwargs and env.get("DDSIM_SEED"):
        try:
            kwargs["base_seed"] = int(env["DDSIM_SEED"], 0)
        except ValueError as exc:
            raise ConfigError(f"DDSIM_SEED: not an integer ({env['DDSIM_SEED']!r})") from exc

    if kwargs.get("t_1_us") == "cpmg":
        kwargs["t_1_us"] = 0.5 * (kwargs.get("t_acq_us", 32.0) + kwargs.get("t_d_us", 6.0))
    cfg = RunConfig(**kwargs)
    try:
        cfg.sweep_config()
    except (ValueError, DDSimError) as exc:
        if isinstance(exc, CapacityExceeded):
            raise
        raise ConfigError(f"inconsistent settings: {exc}") from exc
    return cfg


def load_config(path: str | None, seed_override: int | None = None, env: dict | None = None) -> RunConfig:
    if path is None:
        return parse_config({}, seed_override, env)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_config(doc, seed_override, env)


# ---------------------------------------------------------------- output helpers

def _header(cfg: RunConfig, **extra) -> dict:
    return {"config_hash": cfg.hash(), "base_seed": cfg.base_seed, **extra}


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def svg_line_chart(x, y, xlabel: str, ylabel: str, logy: bool = False, width: int = 640, height: int = 400) -> str:
    """Minimal static SVG polyline chart; non-finite points break the line."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if logy:
        with np.errstate(divide="ignore", invalid="ignore"):
            y = np.where(y > 0, np.log10(y), np.nan)
    ok = np.isfinite(x) & np.isfinite(y)
    ml, mr, mt, mb = 70, 20, 20, 50
    if not np.any(ok):
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    else:
        x0, x1 = float(x[ok].min()), float(x[ok].max())
        y0, y1 = float(y[ok].min()), float(y[ok].max())
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def px(v):
        return ml + (v - x0) / (x1 - x0) * (width - ml - mr)

    def py(v):
        return height - mb - (v - y0) / (y1 - y0) * (height - mt - mb)

    segments, cur = [], []
    for xi, yi, good in zip(x, y, ok):
        if good:
            cur.append(f"{px(xi):.2f},{py(yi):.2f}")
        elif cur:
            segments.append(cur)
            cur = []
    if cur:
        segments.append(cur)
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{ml}" y1="{height - mb}" x2="{width - mr}" y2="{height - mb}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height - mb}" stroke="black"/>',
    ]
    for seg in segments:
        lines.append(f'<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{" ".join(seg)}"/>')
    ylab = f"log10 {ylabel}" if logy else ylabel
    lines += [
        f'<text x="{width / 2:.0f}" y="{height - 12}" text-anchor="middle" font-size="13">{xlabel}</text>',
        f'<text x="16" y="{height / 2:.0f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 16 {height / 2:.0f})">{ylab}</text>',
        f'<text x="{ml}" y="{height - mb + 16}" font-size="11">{x0:.4g}</text>',
        f'<text x="{width - mr}" y="{height - mb + 16}" text-anchor="end" font-size="11">{x1:.4g}</text>',
        f'<text x="{ml - 4}" y="{height - mb}" text-anchor="end" font-size="11">{y0:.4g}</text>',
        f'<text x="{ml - 4}" y="{mt + 10}" text-anchor="end" font-size="11">{y1:.4g}</text>',
        "</svg>",
    ]
    return "\n".join(lines) + "\n"


def _fmt(v: float) -> str:
    return f"{v:.6g}" if np.isfinite(v) else str(v)


# ---------------------------------------------------------------- subcommands

def _decay_report(cfg: RunConfig, theta: float, out: Path, k: int = 0) -> None:
    pair = build_pair(cfg.sweep_config(), k, cfg.ratio)
    seed = manifestation_seed(cfg.base_seed, k)
    if theta == 0.0:
        # no pulses: free induction decay sampled on the same grid
        seq = replace(with_theta(cfg.sequence_template(), 0.0), n_pulses=0)
        curve = simulate_decay(pair, seq, n_samples=cfg.n_pulses, network_seed=seed)
    else:
        seq = with_theta(cfg.sequence_template(), theta)
        curve = simulate_decay(pair, seq, network_seed=seed)
    header = _header(cfg, theta_rad=f"{theta:.11e}", network_seed=seed)
    _write(out / "decay.csv", curve.to_csv(header))
    if cfg.emit_plots:
        _write(out / "decay.svg", svg_line_chart(curve.times, curve.survival, "time (s)", "F"))

    try:
        log_point = extract_t2prime(curve)
        print(f"T2' (log-point)      = {_fmt(log_point)} s")
    except DDSimError as exc:
        print(f"T2' (log-point)      unavailable: {exc}")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            fit = fit_stretched_exp(np.column_stack([curve.times, curve.survival]))
        lo, hi = fit.t2prime_ci
        print(f"T2' (stretched fit)  = {_fmt(fit.t2prime_1e)} s  [95%: {_fmt(lo)}, {_fmt(hi)}]  beta = {fit.stretch_beta:.4f}")
    except DDSimError as exc:
        print(f"T2' (stretched fit)  unavailable: {exc}")


def run_sweep(cfg: RunConfig, jobs: int = 1) -> int:
    out = Path(cfg.output_dir)
    grid = cfg.theta_grid_rad()
    profile = sweep_theta(cfg.sweep_config(), grid, cfg.manifestations, cfg.ratio, jobs=jobs)
    header = _header(cfg)
    _write(out / "profile.csv", profile.to_csv(header))
    doc = {**header, "config": cfg.to_dict(), "profile": profile.to_dict()}
    _write(out / "profile.json", json.dumps(doc, indent=2) + "\n")
    if cfg.emit_plots:
        _write(out / "profile.svg", svg_line_chart(profile.thetas / np.pi, profile.t2prime_mean, "theta / pi", "T2' (s)", logy=True))

    print(summary_table(profile))
    if cfg.manifestations == 1 and len(grid) == 1:
        _decay_report(cfg, float(grid[0]), out)
    return EXIT_OK


def summary_table(profile: ThetaProfile) -> str:
    mean = np.asarray(profile.t2prime_mean, dtype=float)
    rows = [f"{'quantity':<22}{'value':>16}"]
    if np.any(~np.isnan(mean)):
        i = int(np.nanargmax(mean))
        rows.append(f"{'theta_opt / pi':<22}{profile.thetas[i] / np.pi:>16.4f}")
        rows.append(f"{'T2prime(theta_opt) s':<22}{_fmt(mean[i]):>16}")
    for name in ("pi", "two_pi"):
        w = profile.dip_widths.get(name, float("nan"))
        rows.append(f"{'dip width ' + name + ' rad':<22}{_fmt(w):>16}")
    rows.append(f"{'manifestations':<22}{profile.manifestations:>16d}")
    return "\n".join(rows)


def run_decay(cfg: RunConfig, theta_deg: float | None = None) -> int:
    theta = math.radians(cfg.decay_theta_deg if theta_deg is None else theta_deg)
    _decay_report(cfg, theta, Path(cfg.output_dir))
    return EXIT_OK


def _rel(a: np.ndarray, b: np.ndarray, scale: float) -> float:
    return float(np.linalg.norm(a - b) / scale)


def magnus_checks(cfg: RunConfig, f2_sign: float = 1.0) -> list[dict]:
    """Closed-form vs direct sums, recoupling identities and exact-propagator scaling.

    Errors are Frobenius distances relative to the natural scale of each term:
    ||H_part|| for order 0 and tau ||H_part||^2 for order 1.
    """
    m = cfg.magnus
    tol, id_tol = float(m["tolerance"]), float(m["identity_tolerance"])
    rows = []

    def add(name, value, limit, passed=None):
        ok = value <= limit if passed is None else passed
        rows.append({"check": name, "value": float(value), "limit": float(limit), "passed": bool(ok)})

    lattice = LatticeConfig(cfg.enrichment_eta, cfg.lattice_constant_nm, cfg.cell_extent, tuple(cfg.field_direction))
    nets = [
        generate_network(replace(lattice, seed=manifestation_seed(cfg.base_seed, k)), 3, cfg.dephasing_rms_hz)
        for k in range(int(m["instances"]))
    ]
    tau = 1e-4
    worst = {"dipolar order 0": 0.0, "dephasing order 0": 0.0, "dipolar order 1": 0.0, "dephasing order 1": 0.0}
    for net in nets:
        pair = HamiltonianPair.from_network(net)
        s_dd = max(np.linalg.norm(pair.h_dd), 1e-300)
        s_z = max(np.linalg.norm(pair.h_z), 1e-300)
        for theta in np.deg2rad(m["theta_deg"]):
            for n in m["n_values"]:
                n = int(n)
                worst["dipolar order 0"] = max(worst["dipolar order 0"], _rel(
                    magnus.magnus0_dipolar_closed(net, theta, n), magnus.magnus0_direct(pair.h_dd, theta, n), s_dd))
                worst["dephasing order 0"] = max(worst["dephasing order 0"], _rel(
                    magnus.magnus0_dephasing_closed(net, theta, n), magnus.magnus0_direct(pair.h_z, theta, n), s_z))
                if n >= 2:
                    worst["dipolar order 1"] = max(worst["dipolar order 1"], _rel(
                        magnus.magnus1_dipolar_closed(net, theta, n, tau, _f2_sign=f2_sign),
                        magnus.magnus1_direct(pair.h_dd, theta, n, tau), tau * s_dd**2))
                    worst["dephasing order 1"] = max(worst["dephasing order 1"], _rel(
                        magnus.magnus1_dephasing_closed(net, theta, n, tau),
                        magnus.magnus1_direct(pair.h_z, theta, n, tau), tau * s_z**2))
    for name, value in worst.items():
        add(f"closed vs direct, {name}", value, tol)

    id_worst = {"theta=pi dipolar": 0.0, "theta=pi dephasing (even n)": 0.0, "theta=2pi full": 0.0}
    for net in nets:
        pair = HamiltonianPair.from_network(net)
        for n in m["n_values"]:
            n = int(n)
            s = np.linalg.norm(pair.total)
            id_worst["theta=pi dipolar"] = max(id_worst["theta=pi dipolar"], _rel(
                magnus.magnus0_dipolar_closed(net, math.pi, n), pair.h_dd, s))
            if n % 2 == 0:
                id_worst["theta=pi dephasing (even n)"] = max(id_worst["theta=pi dephasing (even n)"], float(
                    np.linalg.norm(magnus.magnus0_dephasing_closed(net, math.pi, n)) / s))
            full = magnus.magnus0_dipolar_closed(net, 2 * math.pi, n) + magnus.magnus0_dephasing_closed(net, 2 * math.pi, n)
            id_worst["theta=2pi full"] = max(id_worst["theta=2pi full"], _rel(full, pair.total, s))
    for name, value in id_worst.items():
        add(f"recoupling identity, {name}", value, id_tol)
    fz = max(abs(f) for th in (0.0, math.pi, 2 * math.pi) for n in (2, 3, 64, 2000)
             for f in magnus.filter_functions(th, n))
    add("f1=f2=f3=0 at theta in {0, pi, 2pi}", fz, id_tol)

    # exact propagator vs exp(i N tau Hbar); tau halves at fixed N, so the
    # filter functions stay the same and only tau ||H|| changes
    tn, n0 = float(m["tau_norm"]), int(m["exact_n"])
    min_ratio, max_excess = np.inf, -np.inf
    for net in nets:
        pair = HamiltonianPair.from_network(net)
        h2 = float(np.linalg.norm(pair.total, 2))
        tau0 = 1e-4
        pair = pair.scaled(tn / (tau0 * h2), tn / (tau0 * h2))
        for theta in m["exact_theta_rad"]:
            errs = []
            for tt in (tau0, tau0 / 2):
                seq = SequenceParams(float(theta), 0.0, tt, 0.0, 0.0, n0)
                e0 = magnus.compare_with_exact(pair, seq, 0).propagator_error
                e1 = magnus.compare_with_exact(pair, seq, 1).propagator_error
                errs.append((e0, e1))
            min_ratio = min(min_ratio, errs[0][0] / errs[1][0])
            max_excess = max(max_excess, errs[0][1] - errs[0][0], errs[1][1] - errs[1][0])
    add("order-0 error ratio when tau halves", min_ratio, 1.5, passed=min_ratio > 1.5)
    add("order-1 error minus order-0 error", max_excess, 0.0, passed=max_excess <= 0.0)
    return rows


def run_magnus_check(cfg: RunConfig, f2_sign: float = 1.0, out: Path | None = None) -> int:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", MagnusDivergenceWarning)
        rows = magnus_checks(cfg, f2_sign)
    seen = set()
    for w in caught:
        if issubclass(w.category, MagnusDivergenceWarning) and str(w.message) not in seen:
            seen.add(str(w.message))
            print(f"warning: {w.message}", file=sys.stderr)
    width = max(len(r["check"]) for r in rows)
    print(f"{'check':<{width}}  {'value':>12}  {'limit':>10}  result")
    for r in rows:
        print(f"{r['check']:<{width}}  {r['value']:>12.3e}  {r['limit']:>10.2e}  {'PASS' if r['passed'] else 'FAIL'}")
    if out is not None:
        doc = {**_header(cfg), "divergence_warnings": sorted(seen), "checks": rows}
        _write(out / "magnus_check.json", json.dumps(doc, indent=2) + "\n")
    return EXIT_OK if all(r["passed"] for r in rows) else EXIT_FAIL


def run_grating(cfg: RunConfig, n: int | None = None) -> int:
    n = cfg.n_pulses if n is None else int(n)
    if n < 2:
        raise ConfigError("grating: n must be >= 2")
    lines = [f"# {k}={v}" for k, v in _header(cfg, n_pulses=n).items()]
    lines.append("theta_rad,grating,grating_half_angle,f1,f2,f3")
    for theta in cfg.theta_grid_rad():
        f1, f2, f3 = magnus.filter_functions(theta, n)
        vals = [theta, magnus.grating(theta, n), magnus.grating(theta / 2, n), f1, f2, f3]
        lines.append(",".join(f"{v:.11e}" for v in vals))
    _write(Path(cfg.output_dir) / "grating.csv", "\n".join(lines) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("--seed", type=_u64, help="base seed, overrides the config")
    common.add_argument("--out", help="output directory, overrides the config")

    ap = argparse.ArgumentParser(prog="ddsim", description="DD_theta pulse-train simulator")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("sweep", parents=[common], help="ensemble T2'(theta) profile")
    p = sub.add_parser("decay", parents=[common], help="single decay curve and T2' estimates")
    p.add_argument("--theta-deg", type=float, help="flip angle in degrees (default from config)")
    p = sub.add_parser("magnus-check", parents=[common], help="average-Hamiltonian oracle checks")
    p.add_argument("--inject-f2-sign-error", action="store_true",
                   help="negative control: flip the sign of the f2 term in the closed form")
    p = sub.add_parser("grating", parents=[common], help="dump G(theta) and f1-f3 tables")
    p.add_argument("--n", type=int, help="number of pulses (default from config)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
        if args.out:
            cfg = replace(cfg, output_dir=args.out)
        if args.jobs < 1:
            raise ConfigError("--jobs: must be >= 1")
        if cfg.ns > MAX_SPINS:
            raise CapacityExceeded(f"ns={cfg.ns} exceeds engine capacity {MAX_SPINS}")
        if args.command == "sweep":
            return run_sweep(cfg, args.jobs)
        if args.command == "decay":
            return run_decay(cfg, args.theta_deg)
        if args.command == "magnus-check":
            return run_magnus_check(cfg, -1.0 if args.inject_f2_sign_error else 1.0,
                                    Path(args.out) if args.out else None)
        return run_grating(cfg, args.n)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityExceeded as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except DDSimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
