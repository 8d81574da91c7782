"""Exact stroboscopic propagation of the DD_theta train.

Conventions: a propagator U acts as rho -> U^dagger rho U and the leftmost
factor acts first in time, so one cycle ``exp(i theta I_x) exp(i tau H)`` is a
delta pulse followed by free evolution for tau.

Pulses are placed at times ``t_1 + k tau`` (k = 0, 1, ...) and the survival
probability is sampled on the grid ``n tau``. With ``t_1 = 0`` the n-th sample
is taken after exactly n cycles; with ``t_1 = tau/2`` (the CPMG first delay
between delta-pulse centres) every sample sits on a spin echo.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from ddsim.errors import (
    DimensionMismatch,
    EigenFailure,
    NonPositiveSurvival,
    ZeroInitialState,
)
from ddsim.sequence import SequenceParams
from ddsim.spin_algebra import HamiltonianPair, collective_operator

F_MIN = 1e-6
EPS_CLIP = 1e-12


def matrix_exponential_hermitian(h: np.ndarray, t: float) -> np.ndarray:
    """exp(i t h) for Hermitian ``h`` via its eigendecomposition."""
    if t == 0:
        return np.eye(h.shape[0], dtype=complex)
    try:
        w, v = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc
    return (v * np.exp(1j * t * w)) @ v.conj().T


def _total_hamiltonian(pair) -> np.ndarray:
    return pair.total if isinstance(pair, HamiltonianPair) else np.asarray(pair)


def pulse_propagator(theta: float, ns: int) -> np.ndarray:
    return matrix_exponential_hermitian(collective_operator("x", ns), theta)


def cycle_propagator(pair, seq: SequenceParams) -> np.ndarray:
    """exp(i theta I_x) exp(i tau H) with H = h_dd + h_z (rad/s)."""
    h = _total_hamiltonian(pair)
    ns = int(round(np.log2(h.shape[0])))
    if h.shape != (2**ns, 2**ns):
        raise DimensionMismatch(f"Hamiltonian shape {h.shape} is not 2^ns square")
    return pulse_propagator(seq.theta, ns) @ matrix_exponential_hermitian(h, seq.tau)


def survival_probability(rho_f: np.ndarray, rho_i: np.ndarray) -> float:
    """Tr(rho_i^dagger rho_f) / Tr(rho_i^dagger rho_i)."""
    if rho_f.shape != rho_i.shape:
        raise DimensionMismatch(f"{rho_f.shape} vs {rho_i.shape}")
    norm = np.vdot(rho_i, rho_i).real
    if norm == 0.0:
        raise ZeroInitialState("initial state has zero norm")
    return float(np.vdot(rho_i, rho_f).real / norm)


@dataclass(frozen=True)
class DecayCurve:
    times: np.ndarray
    survival: np.ndarray
    seq: SequenceParams
    network_seed: int = 0

    @property
    def theta(self) -> float:
        return self.seq.theta

    def to_csv(self, header: dict | None = None) -> str:
        buf = io.StringIO()
        for key, val in (header or {}).items():
            buf.write(f"# {key}={val}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time_s", "survival"])
        for t, f in zip(self.times, self.survival):
            w.writerow([f"{t:.11e}", f"{f:.11e}"])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "theta_rad": float(self.theta),
            "network_seed": int(self.network_seed),
            "sequence": {k: getattr(self.seq, k) for k in self.seq.__dataclass_fields__},
            "times_s": [float(t) for t in self.times],
            "survival": [float(f) for f in self.survival],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class _PoweredCycle:
    """Schur form of the cycle unitary; it is normal, so T is diagonal to rounding."""

    def __init__(self, u_cycle: np.ndarray):
        t, z = scipy.linalg.schur(u_cycle, output="complex")
        lam = np.diag(t)
        self.phases = np.angle(lam)
        self.basis = z

    def power(self, n: int) -> np.ndarray:
        z = self.basis
        return (z * np.exp(1j * n * self.phases)) @ z.conj().T


def _sequence_pieces(h: np.ndarray, seq: SequenceParams, n_samples: int | None):
    ns = int(round(np.log2(h.shape[0])))
    theta = seq.theta
    if seq.n_pulses == 0:
        if not n_samples:
            raise ValueError("free evolution (n_pulses=0) needs an explicit n_samples")
        theta = 0.0
    else:
        n_samples = seq.n_pulses if n_samples is None else n_samples
    pulse = pulse_propagator(theta, ns)
    first = matrix_exponential_hermitian(h, seq.t_1)
    cycle = pulse @ matrix_exponential_hermitian(h, seq.tau)
    last = pulse @ matrix_exponential_hermitian(h, seq.tau - seq.t_1)
    return first, cycle, last, int(n_samples)


def propagator(pair, seq: SequenceParams, n: int) -> np.ndarray:
    """Full propagator from t = 0 to the n-th sample (n >= 1)."""
    h = _total_hamiltonian(pair)
    first, cycle, last, _ = _sequence_pieces(h, seq, max(n, 1))
    return first @ _PoweredCycle(cycle).power(n - 1) @ last


def evolve(rho: np.ndarray, u: np.ndarray) -> np.ndarray:
    return u.conj().T @ rho @ u


def simulate_decay(
    pair,
    seq: SequenceParams,
    rho_init: np.ndarray | None = None,
    n_samples: int | None = None,
    network_seed: int = 0,
) -> DecayCurve:
    """Survival probability after every cycle, via one Schur decomposition.

    With U(n) = A C^(n-1) B (A: first delay, C: one cycle, B: final pulse and
    remaining delay) and C = Z diag(lambda) Z^dagger,
    F(n) = sum_ab Y_ba X_ab (conj(lambda_a) lambda_b)^(n-1) / Tr(rho^2)
    where X = Z^dagger A^dagger rho A Z and Y = Z^dagger B rho B^dagger Z.
    """
    h = _total_hamiltonian(pair)
    ns = int(round(np.log2(h.shape[0])))
    rho = collective_operator("x", ns) if rho_init is None else np.asarray(rho_init)
    if rho.shape != h.shape:
        raise DimensionMismatch(f"state {rho.shape} vs Hamiltonian {h.shape}")
    norm = np.vdot(rho, rho).real
    if norm == 0.0:
        raise ZeroInitialState("initial state has zero norm")

    first, cycle, last, n_samples = _sequence_pieces(h, seq, n_samples)
    pc = _PoweredCycle(cycle)
    z = pc.basis
    x = z.conj().T @ (first.conj().T @ rho @ first) @ z
    y = z.conj().T @ (last @ rho @ last.conj().T) @ z
    weights = y.T * x
    m = np.arange(n_samples)
    phase = np.exp(1j * np.outer(m, pc.phases))
    survival = np.einsum("ma,ab,mb->m", phase.conj(), weights, phase).real / norm
    times = (m + 1) * seq.tau
    return DecayCurve(times=times, survival=survival, seq=seq, network_seed=network_seed)


def final_survival(pair, seq: SequenceParams, rho_init: np.ndarray | None = None) -> float:
    """F at the last sample only; same arithmetic as :func:`simulate_decay`."""
    h = _total_hamiltonian(pair)
    ns = int(round(np.log2(h.shape[0])))
    rho = collective_operator("x", ns) if rho_init is None else np.asarray(rho_init)
    norm = np.vdot(rho, rho).real
    if norm == 0.0:
        raise ZeroInitialState("initial state has zero norm")
    first, cycle, last, n_samples = _sequence_pieces(h, seq, None)
    pc = _PoweredCycle(cycle)
    z = pc.basis
    x = z.conj().T @ (first.conj().T @ rho @ first) @ z
    y = z.conj().T @ (last @ rho @ last.conj().T) @ z
    ph = np.exp(1j * (n_samples - 1) * pc.phases)
    return float(np.einsum("a,ab,b->", ph.conj(), y.T * x, ph).real / norm)


def t2prime_from_survival(f: float, total_time: float, f_min: float = F_MIN, eps_clip: float = EPS_CLIP) -> float:
    if f >= 1.0 - eps_clip:
        return np.inf
    if f <= f_min:
        raise NonPositiveSurvival(f"F={f:.3e} at t={total_time:.3e}s is below {f_min}")
    return -total_time / np.log(f)


def extract_t2prime(curve: DecayCurve, f_min: float = F_MIN, eps_clip: float = EPS_CLIP) -> float:
    """T2' = -t_N / ln F(t_N) from the last sample of the curve."""
    if len(curve.survival) == 0:
        raise ValueError("empty decay curve")
    return t2prime_from_survival(float(curve.survival[-1]), float(curve.times[-1]), f_min, eps_clip)


def with_theta(seq: SequenceParams, theta: float) -> SequenceParams:
    """Same timing template at a new flip angle (pulse width follows the Rabi rate)."""
    if seq.rabi_omega is None:
        return replace(seq, theta=theta)
    t_p = theta / (2 * np.pi * seq.rabi_omega)
    return replace(seq, theta=theta, t_p=t_p)
