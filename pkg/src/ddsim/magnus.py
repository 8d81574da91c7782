"""Average-Hamiltonian (Magnus) terms of the DD_theta train.

Frames are H^(n) = exp(i n theta I_x) H exp(-i n theta I_x), n = 1..N, and the
stroboscopic propagator factorizes as

    [exp(i theta I_x) exp(i tau H)]^N = [prod_{n=1..N} exp(i tau H^(n))] exp(i N theta I_x)

with the n = 1 factor leftmost (first in time). Matching this product to
exp(i N tau Hbar) by Baker-Campbell-Hausdorff gives

    Hbar0 = (1/N) sum_n H^(n)
    Hbar1 = (i tau / 2N) sum_{n<l} [H^(n), H^(l)].

The closed forms below are checked against these brute-force sums.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ddsim.errors import CapacityExceeded, DimensionMismatch, MagnusDivergenceWarning
from ddsim.engine import _PoweredCycle, cycle_propagator, matrix_exponential_hermitian
from ddsim.sequence import SequenceParams
from ddsim.spin_algebra import (
    TWO_PI,
    HamiltonianPair,
    collective_operator,
    commutator,
    coupling_sum,
    double_quantum_pair,
    flip_flop_pair,
    frobenius_norm,
    hermitize,
    isotropic_pair,
    site_operator,
    tilted_flip_flop_pair,
)

DIRECT_FIRST_ORDER_CAP = 512


# --- exact trigonometry in units of pi -------------------------------------

def sinpi(x):
    """sin(pi x) with exact zeros at integer x."""
    x = np.asarray(x, dtype=float)
    m = np.round(x)
    f = x - m
    sign = 1.0 - 2.0 * np.mod(m, 2.0)
    return np.where(f == 0.0, 0.0, sign * np.sin(np.pi * f))


def cospi(x):
    """cos(pi x) with exact +-1 at integer x and exact 0 at half-integers."""
    return sinpi(np.asarray(x, dtype=float) + 0.5)


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def grating(theta, n: int):
    """G(theta) = sin(n theta) / (n sin theta), with its limit at multiples of pi.

    At theta = k pi the limit is (-1)^(k (n-1)).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    y = np.asarray(theta, dtype=float) / np.pi
    k = np.round(y)
    r = y - k
    sign = 1.0 - 2.0 * np.mod(k * (n - 1), 2.0)
    den = n * sinpi(r)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(r == 0.0, 1.0, sinpi(n * r) / np.where(den == 0.0, 1.0, den))
    return _scalar(sign * ratio)


def grating_weights(theta, n: int) -> tuple[float, float]:
    """(G cos((n+1) theta), G sin((n+1) theta)) = (1/n) sum_k (cos 2k theta, sin 2k theta)."""
    g = grating(theta, n)
    y = (n + 1) * float(theta) / np.pi
    return float(g * cospi(y)), float(g * sinpi(y))


def filter_functions(theta: float, n: int) -> tuple[float, float, float]:
    """(f1, f2, f3) double sums, reduced to single sums over k.

    f1 = (1/2n) sum_{m<l} (cos 2l t - cos 2m t) = (1/2n) sum_k (2k - 1 - n) cos 2k t
    f2 is the sine analogue; f3 = (1/2n) sum_{d=1}^{n-1} (n - d) sin 2d t.
    """
    if n < 2:
        raise ValueError("filter functions need n >= 2")
    y = float(theta) / np.pi
    k = np.arange(1, n + 1, dtype=float)
    w = 2.0 * k - 1.0 - n
    f1 = float(np.sum(w * cospi(2.0 * k * y))) / (2 * n)
    f2 = float(np.sum(w * sinpi(2.0 * k * y))) / (2 * n)
    d = np.arange(1, n, dtype=float)
    f3 = float(np.sum((n - d) * sinpi(2.0 * d * y))) / (2 * n)
    return f1, f2, f3


def filter_functions_direct(theta: float, n: int) -> tuple[float, float, float]:
    """O(n^2) double sums; independent check of :func:`filter_functions`."""
    m, l = np.triu_indices(n, 1)
    m = m + 1.0
    l = l + 1.0
    f1 = np.sum(np.cos(2 * l * theta) - np.cos(2 * m * theta)) / (2 * n)
    f2 = np.sum(np.sin(2 * l * theta) - np.sin(2 * m * theta)) / (2 * n)
    f3 = np.sum(np.sin(2 * (l - m) * theta)) / (2 * n)
    return float(f1), float(f2), float(f3)


# --- toggling frames and brute-force sums -----------------------------------

@lru_cache(maxsize=16)
def _ix_eigen(dim: int):
    ns = int(round(np.log2(dim)))
    w, v = np.linalg.eigh(collective_operator("x", ns))
    return w, v


def _rotation(dim: int, angle: float) -> np.ndarray:
    w, v = _ix_eigen(dim)
    return (v * np.exp(1j * angle * w)) @ v.conj().T


def toggling_hamiltonian(h: np.ndarray, theta: float, n: int) -> np.ndarray:
    """exp(i n theta I_x) h exp(-i n theta I_x)."""
    h = np.asarray(h)
    dim = h.shape[0]
    if h.shape != (dim, dim) or dim & (dim - 1):
        raise DimensionMismatch(f"expected square power-of-two matrix, got {h.shape}")
    if n == 0:
        return h.copy()
    r = _rotation(dim, n * theta)
    return hermitize(r @ h @ r.conj().T)


def magnus0_direct(h: np.ndarray, theta: float, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    acc = np.zeros_like(h, dtype=complex)
    for k in range(1, n + 1):
        acc += toggling_hamiltonian(h, theta, k)
    return acc / n


def magnus1_direct(h: np.ndarray, theta: float, n: int, tau: float) -> np.ndarray:
    """(i tau / 2n) sum_{k<l} [H^(k), H^(l)], grouped as sum_l [sum_{k<l} H^(k), H^(l)]."""
    if n < 2:
        raise ValueError("first order needs n >= 2")
    if n > DIRECT_FIRST_ORDER_CAP:
        raise CapacityExceeded(f"direct first-order sum capped at n={DIRECT_FIRST_ORDER_CAP}")
    prefix = toggling_hamiltonian(h, theta, 1)
    acc = np.zeros_like(h, dtype=complex)
    for l in range(2, n + 1):
        hl = toggling_hamiltonian(h, theta, l)
        acc += commutator(prefix, hl)
        prefix = prefix + hl
    return hermitize(1j * tau / (2 * n) * acc)


# --- closed forms -----------------------------------------------------------

def _couplings(network_or_couplings) -> np.ndarray:
    d = getattr(network_or_couplings, "couplings_d", network_or_couplings)
    return np.asarray(d, dtype=float)


def _fields(network_or_fields) -> np.ndarray:
    c = getattr(network_or_fields, "dephasing_c", network_or_fields)
    return np.asarray(c, dtype=float)


@dataclass(frozen=True)
class DipolarParts:
    """Coupling-weighted bilinear sums (rad/s): flip-flop, double-quantum, tilted, isotropic."""

    s_ff: np.ndarray
    s_dq: np.ndarray
    s_tff: np.ndarray
    s_iso: np.ndarray

    @classmethod
    def from_couplings(cls, network_or_couplings) -> "DipolarParts":
        d = _couplings(network_or_couplings)
        return cls(
            coupling_sum(d, flip_flop_pair),
            coupling_sum(d, double_quantum_pair),
            coupling_sum(d, tilted_flip_flop_pair),
            coupling_sum(d, isotropic_pair),
        )


def magnus0_dipolar_closed(network, theta: float, n: int) -> np.ndarray:
    """sum d_jk [ 3/2 (H_ff + G cos((n+1)t) H_dq + G sin((n+1)t) H~_ff) - I_j.I_k ]."""
    p = DipolarParts.from_couplings(network)
    gc, gs = grating_weights(theta, n)
    return hermitize(1.5 * (p.s_ff + gc * p.s_dq + gs * p.s_tff) - p.s_iso)


def magnus0_dipolar_limit(network) -> np.ndarray:
    """Large-n form sum d_jk (3/2 H_ff - I_j.I_k); commutes with collective I_x."""
    p = DipolarParts.from_couplings(network)
    return hermitize(1.5 * p.s_ff - p.s_iso)


def _collective_weighted(axis: str, weights: np.ndarray) -> np.ndarray:
    ns = len(weights)
    out = np.zeros((2**ns, 2**ns), dtype=complex)
    for j, w in enumerate(weights):
        if w != 0.0:
            out += w * site_operator(axis, j, ns)
    return out


def magnus0_dephasing_closed(network, theta: float, n: int) -> np.ndarray:
    """G(theta/2) sum_j c_j [I_jz cos((n+1) theta/2) + I_jy sin((n+1) theta/2)]."""
    c = TWO_PI * _fields(network)
    gc, gs = grating_weights(theta / 2.0, n)
    return hermitize(gc * _collective_weighted("z", c) + gs * _collective_weighted("y", c))


def magnus1_dipolar_closed(network, theta: float, n: int, tau: float, *, _f2_sign: float = 1.0) -> np.ndarray:
    """i tau (f1 [A, B] + f2 [A, C] + f3 [B, C]).

    A = 3/2 S_ff - S_iso, B = 3/2 S_dq, C = 3/2 S~_ff. The isotropic part does
    not commute with the anisotropic sums for unequal couplings, so it is kept
    inside A.
    """
    p = DipolarParts.from_couplings(network)
    f1, f2, f3 = filter_functions(theta, n)
    a = 1.5 * p.s_ff - p.s_iso
    b = 1.5 * p.s_dq
    c = 1.5 * p.s_tff
    acc = f1 * commutator(a, b) + _f2_sign * f2 * commutator(a, c) + f3 * commutator(b, c)
    return hermitize(1j * tau * acc)


def magnus1_dephasing_closed(network, theta: float, n: int, tau: float) -> np.ndarray:
    """tau f3(theta/2) sum_j c_j^2 I_jx (c in rad/s)."""
    c = TWO_PI * _fields(network)
    _, _, f3 = filter_functions(theta / 2.0, n)
    return hermitize(tau * f3 * _collective_weighted("x", c**2))


# --- comparison with the exact propagator -----------------------------------

@dataclass
class MagnusReport:
    h_bar_0: np.ndarray
    h_bar_1: np.ndarray
    grating_value: float
    filter_values: tuple[float, float, float]
    commutator_with_init: float
    propagator_error: float
    order: int
    tau_norm: float
    notes: list[str] = field(default_factory=list)

    def to_dict(self, include_matrices: bool = False) -> dict:
        out = {
            "order": self.order,
            "grating_value": self.grating_value,
            "filter_values": list(self.filter_values),
            "commutator_with_init": self.commutator_with_init,
            "propagator_error": self.propagator_error,
            "tau_norm": self.tau_norm,
            "notes": self.notes,
        }
        if include_matrices:
            for key in ("h_bar_0", "h_bar_1"):
                m = getattr(self, key)
                out[key] = {"re": m.real.tolist(), "im": m.imag.tolist()}
        return out

    def to_json(self, include_matrices: bool = False) -> str:
        return json.dumps(self.to_dict(include_matrices), indent=2)


def toggling_product(h: np.ndarray, theta: float, n: int) -> np.ndarray:
    """prod_{k=1..n} exp(i tau H^(k)) with tau absorbed into h, k = 1 leftmost."""
    out = np.eye(h.shape[0], dtype=complex)
    for k in range(1, n + 1):
        out = out @ matrix_exponential_hermitian(toggling_hamiltonian(h, theta, k), 1.0)
    return out


def compare_with_exact(pair, seq: SequenceParams, order: int = 0) -> MagnusReport:
    """Distance between the toggling-frame propagator and exp(i N tau Hbar).

    The residual collective rotation exp(i N theta I_x) commutes with the
    initial state I_x and is factored out of the exact propagator.
    """
    if order not in (0, 1):
        raise ValueError("order must be 0 or 1")
    h = pair.total if isinstance(pair, HamiltonianPair) else np.asarray(pair)
    n, tau, theta = seq.n_pulses, seq.tau, seq.theta
    if n < 1:
        raise ValueError("need at least one pulse")
    dim = h.shape[0]
    ns = int(round(np.log2(dim)))
    tau_norm = tau * float(np.linalg.norm(h, 2))
    notes = []
    if tau_norm >= 1.0:
        msg = f"tau*||H||_2 = {tau_norm:.3g} >= 1; Magnus series may diverge"
        warnings.warn(msg, MagnusDivergenceWarning, stacklevel=2)
        notes.append(msg)

    u_cycle = cycle_propagator(h, seq)
    exact = _PoweredCycle(u_cycle).power(n) @ _rotation(dim, -n * theta)

    hbar0 = magnus0_direct(h, theta, n)
    hbar1 = np.zeros_like(hbar0)
    if n >= 2:
        if n <= DIRECT_FIRST_ORDER_CAP:
            hbar1 = magnus1_direct(h, theta, n, tau)
        elif isinstance(pair, HamiltonianPair):
            notes.append("first order from closed forms; dipolar-dephasing cross terms omitted")
            hbar1 = _closed_first_order_from_pair(pair, theta, n, tau)
    heff = hbar0 + (hbar1 if order == 1 else 0)
    approx = matrix_exponential_hermitian(heff, n * tau)

    f = filter_functions(theta, n) if n >= 2 else (0.0, 0.0, 0.0)
    ix = collective_operator("x", ns)
    return MagnusReport(
        h_bar_0=hbar0,
        h_bar_1=hbar1,
        grating_value=float(grating(theta, n)),
        filter_values=f,
        commutator_with_init=frobenius_norm(commutator(hbar0, ix)),
        propagator_error=frobenius_norm(exact - approx),
        order=order,
        tau_norm=tau_norm,
        notes=notes,
    )


def _closed_first_order_from_pair(pair: HamiltonianPair, theta, n, tau) -> np.ndarray:
    if pair.couplings_d is None or pair.dephasing_c is None:
        raise ValueError("closed-form first order needs a pair built from a network")
    return magnus1_dipolar_closed(pair, theta, n, tau) + magnus1_dephasing_closed(pair, theta, n, tau)
