"""Decay-curve processing, fits, and ensemble sweeps over the flip angle.

Fits use :func:`scipy.optimize.least_squares` with analytic Jacobians. The
1/e readout is the time at which a fitted curve drops to 1/e of the fitted
initial amplitude; its 95% spread comes from re-evaluating the curve at the
corners of the 95% parameter box (Gaussian approximation of the covariance).
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, signal, stats

from ddsim.engine import final_survival, t2prime_from_survival, with_theta
from ddsim.errors import (
    CapacityExceeded,
    DDSimError,
    DegenerateData,
    EmptyWindow,
    InvalidInputs,
    NoConvergence,
    NoDipDetected,
    TooFewExtrema,
)
from ddsim.lattice import DEFAULT_DEPHASING_RMS_HZ, LatticeConfig, generate_network
from ddsim.sequence import SequenceParams, make_sequence
from ddsim.spin_algebra import HamiltonianPair, rescale_to_ratio

MAX_ITERATIONS = 200
BETA_MAX = 3.0
Z95 = float(stats.norm.ppf(0.975))


def _as_points(points) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidInputs("expected a sequence of (time, value) pairs")
    return arr[:, 0].copy(), arr[:, 1].copy()


# ---------------------------------------------------------------- decimation

def median_decimate(raw, windows) -> list[tuple[float, float]]:
    """One (midpoint, median) pair per window.

    A window ``(start, end)`` holds samples with ``start <= t < end``; a
    zero-width window ``(t, t)`` holds samples exactly at ``t``.
    """
    t, v = _as_points(raw)
    win = sorted((float(a), float(b)) for a, b in windows)
    for (a0, b0), (a1, _) in zip(win, win[1:]):
        if a1 < b0:
            raise InvalidInputs(f"windows ({a0}, {b0}) and ({a1}, ...) overlap")
    out = []
    for a, b in win:
        if b < a:
            raise InvalidInputs(f"window ({a}, {b}) has end before start")
        mask = (t == a) if a == b else (t >= a) & (t < b)
        if not np.any(mask):
            raise EmptyWindow(f"no samples in window ({a}, {b})")
        out.append((0.5 * (a + b), float(np.median(v[mask]))))
    return out


# ---------------------------------------------------------------- fit results

@dataclass(frozen=True)
class FitResult:
    """Fitted decay with its 1/e readout.

    For the stretched model ``params`` is (A, T, beta). For the biexponential
    model it is (A1, T1, A2, T2) with T1 <= T2, ``amplitude`` is A1 + A2,
    ``time_constant`` is the 1/e time and ``stretch_beta`` is 1.
    """

    amplitude: float
    time_constant: float
    stretch_beta: float
    covariance: np.ndarray
    t2prime_1e: float
    t2prime_ci: tuple[float, float]
    model: str = "stretched"
    params: tuple[float, ...] = ()
    iterations: int = 0

    def __post_init__(self):
        if not self.time_constant > 0:
            raise ValueError("time constant must be positive")
        if not 0.0 < self.stretch_beta <= BETA_MAX:
            raise ValueError(f"beta must be in (0, {BETA_MAX}]")
        lo, hi = self.t2prime_ci
        if not lo <= self.t2prime_1e <= hi:
            raise ValueError("1/e time lies outside its confidence interval")

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "amplitude": self.amplitude,
            "time_constant_s": self.time_constant,
            "stretch_beta": self.stretch_beta,
            "params": list(self.params),
            "covariance": np.asarray(self.covariance).tolist(),
            "t2prime_1e_s": self.t2prime_1e,
            "t2prime_ci_s": list(self.t2prime_ci),
            "iterations": self.iterations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _check_fit_input(t: np.ndarray, y: np.ndarray, n_params: int) -> None:
    if len(t) < 5:
        raise DegenerateData(f"need at least 5 points, got {len(t)}")
    if np.any(t <= 0) or not np.all(np.isfinite(t)) or not np.all(np.isfinite(y)):
        raise InvalidInputs("times must be positive and all values finite")
    if len(np.unique(y)) < n_params:
        raise DegenerateData("fewer distinct values than fit parameters")
    if y[-1] > y[0]:
        warnings.warn("data do not trend downward; decay fit may be meaningless", stacklevel=3)


def _initial_guess(t: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    a0 = float(y[0])
    below = np.nonzero(y < a0 / np.e)[0]
    t0 = float(t[below[0]]) if len(below) else float(t[-1])
    return a0, t0


def _run_least_squares(resid, jac, p0, bounds):
    res = optimize.least_squares(
        resid, p0, jac=jac, bounds=bounds, method="trf", x_scale="jac",
        ftol=1e-15, xtol=1e-15, gtol=1e-15, max_nfev=MAX_ITERATIONS,
    )
    if res.status == 0:
        raise NoConvergence(f"no convergence within {MAX_ITERATIONS} iterations")
    m, p = res.jac.shape
    dof = max(m - p, 1)
    s2 = 2.0 * res.cost / dof
    cov = s2 * np.linalg.pinv(res.jac.T @ res.jac)
    return res, cov


def _corner_spread(cross, p: np.ndarray, cov: np.ndarray, lower: np.ndarray) -> list[float]:
    half = Z95 * np.sqrt(np.clip(np.diag(cov), 0.0, None))
    vals = []
    for signs in itertools.product((-1.0, 1.0), repeat=len(p)):
        q = np.maximum(p + np.array(signs) * half, lower)
        tc = cross(q)
        if np.isfinite(tc):
            vals.append(tc)
    return vals


def stretched_exp(t, amplitude, time_constant, beta):
    return amplitude * np.exp(-((np.asarray(t) / time_constant) ** beta))


def fit_stretched_exp(points) -> FitResult:
    """Least-squares fit of ``A exp(-(t/T)^beta)``.

    Starts from A0 = first sample, T0 = first time below A0/e (last time if
    none) and beta0 = 1.
    """
    t, y = _as_points(points)
    _check_fit_input(t, y, 3)
    a0, t0 = _initial_guess(t, y)

    def resid(p):
        return stretched_exp(t, *p) - y

    def jac(p):
        a, tc, b = p
        x = t / tc
        xb = x**b
        e = np.exp(-xb)
        return np.column_stack([e, a * e * b * xb / tc, -a * e * xb * np.log(x)])

    lower = np.array([-np.inf, 1e-300, 1e-6])
    res, cov = _run_least_squares(resid, jac, [a0, t0, 1.0], (lower, [np.inf, np.inf, BETA_MAX]))
    a, tc, b = (float(v) for v in res.x)
    if b > 0.97 * BETA_MAX:
        warnings.warn(f"stretch exponent {b:.3f} is near the {BETA_MAX} guard", stacklevel=2)

    def cross(q):
        # time where the corner curve meets the central A/e level
        qa, qt, qb = q
        if qa <= 0 or a <= 0:
            return np.nan
        arg = 1.0 + np.log(qa / a)
        return qt * arg ** (1.0 / qb) if arg > 0 else np.nan

    vals = _corner_spread(cross, res.x, cov, np.array([-np.inf, 1e-300, 1e-6]))
    ci = (min(vals + [tc]), max(vals + [tc]))
    return FitResult(a, tc, b, cov, tc, ci, "stretched", (a, tc, b), int(res.nfev))


def biexponential(t, a1, t1, a2, t2):
    t = np.asarray(t)
    return a1 * np.exp(-t / t1) + a2 * np.exp(-t / t2)


def _biexp_crossing(q, level: float) -> float:
    a1, t1, a2, t2 = q
    g = lambda s: biexponential(s, a1, t1, a2, t2) - level  # noqa: E731
    if g(0.0) <= 0:
        return np.nan
    hi = max(t1, t2)
    while g(hi) > 0:
        hi *= 2.0
        if hi > 1e12 * max(t1, t2):
            return np.nan
    return float(optimize.brentq(g, 0.0, hi, xtol=1e-15 * hi, rtol=4 * np.finfo(float).eps))


def fit_biexponential(points) -> FitResult:
    """Fit ``A1 exp(-t/T1) + A2 exp(-t/T2)``; T2' is the 1/e crossing only."""
    t, y = _as_points(points)
    _check_fit_input(t, y, 4)
    a0, t0 = _initial_guess(t, y)

    def resid(p):
        return biexponential(t, *p) - y

    def jac(p):
        a1, t1, a2, t2 = p
        e1, e2 = np.exp(-t / t1), np.exp(-t / t2)
        return np.column_stack([e1, a1 * e1 * t / t1**2, e2, a2 * e2 * t / t2**2])

    lower = np.array([0.0, 1e-300, 0.0, 1e-300])
    p0 = [0.5 * a0, t0 / 3.0, 0.5 * a0, 3.0 * t0]
    res, cov = _run_least_squares(resid, jac, p0, (lower, np.full(4, np.inf)))
    p = res.x.copy()
    if p[1] > p[3]:
        p = p[[2, 3, 0, 1]]
        cov = cov[np.ix_([2, 3, 0, 1], [2, 3, 0, 1])]
    amp = float(p[0] + p[2])
    level = amp / np.e
    t1e = _biexp_crossing(p, level)
    if not np.isfinite(t1e):
        raise DegenerateData("fitted biexponential never reaches the 1/e level")
    vals = _corner_spread(lambda q: _biexp_crossing(q, level), p, cov, lower + [0, 1e-300, 0, 1e-300])
    ci = (min(vals + [t1e]), max(vals + [t1e]))
    return FitResult(amp, t1e, 1.0, cov, t1e, ci, "biexponential", tuple(float(v) for v in p), int(res.nfev))


def fit_fid_envelope(points) -> float:
    """T2* from an exponential fit to the local maxima of |signal|.

    Signals without interior maxima (a plain monotone decay) are their own
    envelope. When the fitted decay rate is not resolved above its standard
    error the envelope is flat and ``inf`` is returned.
    """
    t, y = _as_points(points)
    mag = np.abs(y)
    interior = np.nonzero((mag[1:-1] >= mag[:-2]) & (mag[1:-1] > mag[2:]))[0] + 1
    if len(interior) == 0 and np.all(np.diff(mag) <= 0):
        idx = np.arange(len(mag))
    else:
        idx = interior
        if len(mag) > 1 and mag[0] >= mag[1]:
            idx = np.concatenate([[0], idx])
    idx = idx[mag[idx] > 0]
    if len(idx) < 3:
        raise TooFewExtrema(f"found {len(idx)} envelope maxima, need at least 3")
    fit = stats.linregress(t[idx], np.log(mag[idx]))
    rate = -fit.slope
    if rate <= 2.0 * fit.stderr or rate <= 0:
        return np.inf
    return float(1.0 / rate)


# ---------------------------------------------------------------- SNR

def snr_bounds(t2_star: float, t2_prime: float, eta_d: float) -> tuple[float, float]:
    """(sqrt(x), x) with x = (1 - eta_d) T2' / T2*."""
    if not (t2_star > 0 and t2_prime > 0) or not 0.0 <= eta_d <= 1.0:
        raise InvalidInputs("need positive times and 0 <= eta_d <= 1")
    x = (1.0 - eta_d) * t2_prime / t2_star
    return float(np.sqrt(x)), float(x)


def signal_yield(eta_d: float) -> float:
    """Relative acquired signal eta_d (1 - eta_d)."""
    if not 0.0 <= eta_d <= 1.0:
        raise InvalidInputs("eta_d must lie in [0, 1]")
    return eta_d * (1.0 - eta_d)


# ---------------------------------------------------------------- sweeps

_MASK64 = (1 << 64) - 1
_GOLDEN64 = 0x9E3779B97F4A7C15


def manifestation_seed(base_seed: int, k: int) -> int:
    """SplitMix64 output for state base_seed + (k + 1) * golden, mod 2^64.

    z = state; z = (z ^ z >> 30) * 0xBF58476D1CE4E5B9;
    z = (z ^ z >> 27) * 0x94D049BB133111EB; z ^= z >> 31 (all mod 2^64).
    """
    z = (int(base_seed) + (int(k) + 1) * _GOLDEN64) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class SweepConfig:
    """Everything a sweep needs apart from the flip-angle grid.

    ``sequence`` is a timing template whose flip angle is replaced at every
    grid point. ``dephasing_weight`` multiplies H_z after the norm-ratio
    rescaling, so it changes ||H_z|| at fixed ||H_dd||.
    """

    lattice: LatticeConfig = field(default_factory=lambda: LatticeConfig(0.03))
    ns: int = 6
    sequence: SequenceParams = field(default_factory=lambda: make_sequence(np.pi))
    dephasing_scale: float = DEFAULT_DEPHASING_RMS_HZ
    dephasing_weight: float = 1.0
    base_seed: int = 0

    def __post_init__(self):
        if self.dephasing_weight < 0:
            raise InvalidInputs("dephasing_weight must be >= 0")
        if not 0 <= int(self.base_seed) <= _MASK64:
            raise InvalidInputs("base_seed must fit in 64 unsigned bits")


def build_pair(config: SweepConfig, k: int, ratio) -> HamiltonianPair:
    """Hamiltonians of manifestation ``k``; ``ratio=None`` keeps raw couplings."""
    seed = manifestation_seed(config.base_seed, k)
    net = generate_network(replace(config.lattice, seed=seed), config.ns, config.dephasing_scale)
    pair = HamiltonianPair.from_network(net)
    if ratio is not None:
        pair = rescale_to_ratio(pair, float(ratio))
    if config.dephasing_weight != 1.0:
        pair = pair.scaled(z_factor=config.dephasing_weight)
    return pair


def _manifestation_row(args) -> np.ndarray:
    config, k, ratio, thetas = args
    row = np.full(len(thetas), np.nan)
    try:
        pair = build_pair(config, k, ratio)
    except CapacityExceeded:
        raise
    except DDSimError:
        return row
    for i, theta in enumerate(thetas):
        seq = with_theta(config.sequence, float(theta))
        try:
            row[i] = t2prime_from_survival(final_survival(pair, seq), seq.total_time)
        except CapacityExceeded:
            raise
        except DDSimError:
            pass
    return row


@dataclass(frozen=True)
class ThetaProfile:
    """Ensemble T2'(theta); missing cells are NaN in ``samples``."""

    thetas: np.ndarray
    t2prime_mean: np.ndarray
    t2prime_stderr: np.ndarray
    n_ok: np.ndarray
    manifestations: int
    ratio_dd_over_z: float
    dip_widths: dict = field(default_factory=dict)
    samples: np.ndarray | None = None
    seeds: tuple[int, ...] = ()

    def __post_init__(self):
        n = len(self.thetas)
        if not (len(self.t2prime_mean) == len(self.t2prime_stderr) == len(self.n_ok) == n):
            raise ValueError("profile arrays must have equal length")
        if self.manifestations < 1:
            raise ValueError("manifestations must be >= 1")
        if np.any(np.asarray(self.t2prime_stderr) < 0):
            raise ValueError("standard errors must be non-negative")

    def to_csv(self, header: dict | None = None) -> str:
        buf = io.StringIO()
        for key, val in (header or {}).items():
            buf.write(f"# {key}={val}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["theta_rad", "t2prime_mean_s", "t2prime_stderr_s", "n_ok"])
        for th, m, s, n in zip(self.thetas, self.t2prime_mean, self.t2prime_stderr, self.n_ok):
            w.writerow([f"{th:.11e}", f"{m:.11e}", f"{s:.11e}", int(n)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        def num(x):
            x = float(x)
            return x if np.isfinite(x) else str(x)

        return {
            "thetas_rad": [num(x) for x in self.thetas],
            "t2prime_mean_s": [num(x) for x in self.t2prime_mean],
            "t2prime_stderr_s": [num(x) for x in self.t2prime_stderr],
            "n_ok": [int(n) for n in self.n_ok],
            "manifestations": int(self.manifestations),
            "ratio_dd_over_z": num(self.ratio_dd_over_z),
            "dip_widths_rad": {k: num(v) for k, v in self.dip_widths.items()},
            "seeds": [int(s) for s in self.seeds],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def aggregate(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean, standard error and count per column, ignoring NaN cells.

    Any infinite T2' in a column makes its mean and standard error infinite.
    """
    samples = np.asarray(samples, dtype=float)
    n_cols = samples.shape[1]
    mean = np.full(n_cols, np.nan)
    err = np.full(n_cols, np.nan)
    n_ok = np.zeros(n_cols, dtype=int)
    for i in range(n_cols):
        col = samples[:, i]
        col = col[~np.isnan(col)]
        n_ok[i] = len(col)
        if len(col) == 0:
            continue
        if np.any(np.isinf(col)):
            mean[i] = err[i] = np.inf
            continue
        mean[i] = float(np.mean(col))
        err[i] = float(np.std(col, ddof=1) / np.sqrt(len(col))) if len(col) > 1 else 0.0
    return mean, err, n_ok


def sweep_theta(
    base_config: SweepConfig,
    theta_grid,
    manifestations: int,
    ratio=0.2,
    jobs: int = 1,
    dip_centers: tuple[str, ...] = ("pi", "two_pi"),
) -> ThetaProfile:
    """Ensemble-averaged T2'(theta) over seeded network manifestations.

    Manifestation k uses the seed :func:`manifestation_seed` (base_seed, k)
    for every theta. Engine failures become NaN cells. The grid is sorted, so
    the profile does not depend on the order of ``theta_grid``, and cells are
    evaluated independently, so it does not depend on ``jobs`` either.
    """
    thetas = np.sort(np.asarray(theta_grid, dtype=float).ravel())
    if thetas.size == 0:
        raise InvalidInputs("theta grid is empty")
    if manifestations < 1:
        raise InvalidInputs("need at least one manifestation")
    ratio = None if ratio is None or ratio == "native" else float(ratio)
    tasks = [(base_config, k, ratio, thetas) for k in range(manifestations)]
    if jobs > 1 and manifestations > 1:
        with ProcessPoolExecutor(max_workers=int(jobs)) as pool:
            rows = list(pool.map(_manifestation_row, tasks))
    else:
        rows = [_manifestation_row(t) for t in tasks]
    samples = np.vstack(rows)
    mean, err, n_ok = aggregate(samples)

    if ratio is None:
        eff_ratio = float("nan")
    elif base_config.dephasing_weight == 0:
        eff_ratio = float("inf") if ratio > 0 else float("nan")
    else:
        eff_ratio = ratio / base_config.dephasing_weight
    profile = ThetaProfile(
        thetas, mean, err, n_ok, manifestations, eff_ratio,
        samples=samples,
        seeds=tuple(manifestation_seed(base_config.base_seed, k) for k in range(manifestations)),
    )
    widths = {}
    for name in dip_centers:
        try:
            widths[name] = dip_width(profile, name)
        except (NoDipDetected, InvalidInputs, NoConvergence):
            widths[name] = float("nan")
    return replace(profile, dip_widths=widths)


# ---------------------------------------------------------------- dip widths

DIP_CENTERS = {"pi": np.pi, "two_pi": 2 * np.pi}
DIP_HALF_WINDOW = 0.5


def _window(profile: ThetaProfile, center: float, half_window: float, target: str):
    th = np.asarray(profile.thetas, dtype=float)
    t2 = np.asarray(profile.t2prime_mean, dtype=float)
    near = np.abs(th - center) <= half_window + 1e-12
    if target == "rate":
        # an infinite T2' is a valid zero rate, not a missing point
        with np.errstate(divide="ignore"):
            y = 1.0 / t2
    elif target == "log":
        with np.errstate(divide="ignore"):
            y = -np.log(t2)
    elif target == "t2prime":
        y = -t2
    else:
        raise ValueError(f"target must be 'log', 'rate' or 't2prime', got {target!r}")
    keep = near & np.isfinite(y)
    return th[keep], y[keep]


def dip_width(
    profile: ThetaProfile,
    center,
    half_window: float = DIP_HALF_WINDOW,
    target: str = "t2prime",
) -> float:
    """Gaussian sigma (rad) of the T2' dip near ``center``.

    The dip is a peak in ``y`` = -T2' (``target="t2prime"``, the default),
    1/T2' (``"rate"``) or -ln T2' (``"log"``). Fits ``a + b (theta - c) + D exp(-(theta - mu)^2 /
    2 sigma^2)`` to the points within ``half_window`` of the centre, so a
    local linear baseline is removed jointly with the dip. Missing points are
    left out, never interpolated; an infinite T2' counts as a zero rate.
    The overall scale of ``y`` does not affect sigma.
    """
    c = DIP_CENTERS[center] if isinstance(center, str) else float(center)
    th, y = _window(profile, c, half_window, target)
    if len(th) < 7:
        raise InvalidInputs(f"need >= 7 finite points within {half_window} rad of {c:.4f}, got {len(th)}")
    i_max = int(np.argmax(y))
    if abs(th[i_max] - c) > 0.5 * half_window or not y[i_max] > max(y[0], y[-1]):
        raise NoDipDetected(f"no local minimum of T2' near theta={c:.4f}")

    scale = float(np.max(np.abs(y)))
    y = y / scale
    edge = float(min(y[0], y[-1]))
    height0 = float(y[i_max] - edge)
    above = np.abs(th[y > edge + 0.5 * height0] - th[i_max])
    sigma0 = max(float(np.max(above)) / 1.1774, 1e-3 * half_window) if len(above) else half_window / 3
    slope0 = float((y[-1] - y[0]) / (th[-1] - th[0]))
    p0 = [edge, slope0, height0, float(th[i_max]), sigma0]

    def resid(p):
        a, b, d, mu, s = p
        return a + b * (th - c) + d * np.exp(-0.5 * ((th - mu) / s) ** 2) - y

    lo = np.array([-np.inf, -np.inf, 0.0, c - half_window, 1e-6 * half_window])
    hi = np.array([np.inf, np.inf, np.inf, c + half_window, 4 * half_window])
    p0 = np.clip(p0, lo + 1e-12, hi - 1e-12)
    res = optimize.least_squares(resid, p0, bounds=(lo, hi), method="trf", x_scale="jac", max_nfev=20 * MAX_ITERATIONS)
    if res.status == 0:
        raise NoConvergence("dip fit did not converge")
    if res.x[2] <= 0:
        raise NoDipDetected("fitted dip depth is zero")
    return float(res.x[4])


def dip_prominence(profile: ThetaProfile, center: float, half_window: float):
    """Most prominent local minimum of T2' within ``half_window`` of ``center``.

    Returns ``(theta, prominence, stderr)`` using :func:`scipy.signal.find_peaks`
    on -T2' over the whole finite profile, or ``None`` if there is no minimum
    in the window.
    """
    th = np.asarray(profile.thetas, dtype=float)
    y = np.asarray(profile.t2prime_mean, dtype=float)
    ok = np.isfinite(y)
    th, y, err = th[ok], y[ok], np.asarray(profile.t2prime_stderr)[ok]
    peaks, props = signal.find_peaks(-y, prominence=0.0)
    best = None
    for p, prom in zip(peaks, props["prominences"]):
        if abs(th[p] - center) <= half_window and (best is None or prom > best[1]):
            best = (float(th[p]), float(prom), float(err[p]))
    return best
