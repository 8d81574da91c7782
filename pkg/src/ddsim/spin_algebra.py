"""Dense many-body spin-1/2 operators on the 2**ns Hilbert space.

Hamiltonians are stored in angular frequency (rad/s) so that propagators are
plain ``exp(1j * t * H)``; couplings on a :class:`~ddsim.lattice.SpinNetwork`
are in Hz and converted here.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ddsim.errors import CapacityExceeded, DimensionMismatch, ZeroDephasingNorm

MAX_SPINS = 12
TWO_PI = 2.0 * np.pi

_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}
ROLES = ("hamiltonian", "unitary", "density", "generic")


def _check_capacity(ns: int) -> None:
    if ns < 1 or ns > MAX_SPINS:
        raise CapacityExceeded(f"ns={ns} outside supported range 1..{MAX_SPINS}")


@lru_cache(maxsize=None)
def _single_site_diagonal_z(ns: int) -> np.ndarray:
    # row j holds the +-1/2 eigenvalues of I_jz over the computational basis
    idx = np.arange(2**ns)
    bits = (idx[None, :] >> (ns - 1 - np.arange(ns))[:, None]) & 1
    return 0.5 - bits.astype(float)


@lru_cache(maxsize=None)
def _site_operator_cached(axis: str, site: int, ns: int) -> np.ndarray:
    mats = [np.eye(2, dtype=complex)] * ns
    mats[site] = 0.5 * _PAULI[axis]
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    out.setflags(write=False)
    return out


def site_operator(axis: str, site: int, ns: int) -> np.ndarray:
    """Return I_{site,axis} embedded in the ns-spin space (read-only array)."""
    _check_capacity(ns)
    if axis not in _PAULI:
        raise ValueError(f"axis must be one of x, y, z; got {axis!r}")
    if not 0 <= site < ns:
        raise IndexError(f"site {site} out of range for ns={ns}")
    return _site_operator_cached(axis, site, ns)


def collective_operator(axis: str, ns: int) -> np.ndarray:
    """Sum over sites of the spin-1/2 operator I_j,axis."""
    _check_capacity(ns)
    if axis == "z":
        return np.diag(_single_site_diagonal_z(ns).sum(axis=0)).astype(complex)
    return sum(site_operator(axis, j, ns) for j in range(ns))


def frobenius_norm(op: np.ndarray) -> float:
    return float(np.linalg.norm(op, "fro"))


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    return a @ b - b @ a


def hermitize(op: np.ndarray) -> np.ndarray:
    return 0.5 * (op + op.conj().T)


def check_role(op: np.ndarray, role: str) -> None:
    """Validate the invariant attached to ``role``; raise ValueError on violation."""
    if role not in ROLES:
        raise ValueError(f"unknown role {role!r}")
    dim = op.shape[0]
    if op.ndim != 2 or op.shape[1] != dim or dim & (dim - 1):
        raise DimensionMismatch(f"expected square power-of-two matrix, got {op.shape}")
    if role in ("hamiltonian", "density"):
        err = np.max(np.abs(op - op.conj().T)) if op.size else 0.0
        scale = max(1.0, float(np.max(np.abs(op))))
        if err > 1e-12 * scale:
            raise ValueError(f"{role} operator not Hermitian (max dev {err:.3e})")
    elif role == "unitary":
        err = frobenius_norm(op.conj().T @ op - np.eye(dim))
        if err > 1e-10 * dim:
            raise ValueError(f"operator not unitary (deviation {err:.3e})")


# Two-spin bilinear building blocks. Frames rotate about x, so the relevant
# combinations live in the (y, z) plane.

def bilinear(a: str, b: str, j: int, k: int, ns: int) -> np.ndarray:
    """I_ja I_kb for distinct sites."""
    return site_operator(a, j, ns) @ site_operator(b, k, ns)


def isotropic_pair(j: int, k: int, ns: int) -> np.ndarray:
    """Scalar product I_j . I_k."""
    return sum(bilinear(a, a, j, k, ns) for a in "xyz")


def flip_flop_pair(j: int, k: int, ns: int) -> np.ndarray:
    """I_jz I_kz + I_jy I_ky."""
    return bilinear("z", "z", j, k, ns) + bilinear("y", "y", j, k, ns)


def double_quantum_pair(j: int, k: int, ns: int) -> np.ndarray:
    """I_jz I_kz - I_jy I_ky."""
    return bilinear("z", "z", j, k, ns) - bilinear("y", "y", j, k, ns)


def tilted_flip_flop_pair(j: int, k: int, ns: int) -> np.ndarray:
    """I_jz I_ky + I_jy I_kz."""
    return bilinear("z", "y", j, k, ns) + bilinear("y", "z", j, k, ns)


def coupling_sum(couplings_hz: np.ndarray, pair_builder) -> np.ndarray:
    """Sum_{j<k} 2*pi*d_jk * pair_builder(j, k, ns), in rad/s."""
    d = np.asarray(couplings_hz, dtype=float)
    ns = d.shape[0]
    _check_capacity(ns)
    out = np.zeros((2**ns, 2**ns), dtype=complex)
    for j in range(ns):
        for k in range(j + 1, ns):
            if d[j, k] != 0.0:
                out += TWO_PI * d[j, k] * pair_builder(j, k, ns)
    return out


def _dipolar_pair(j: int, k: int, ns: int) -> np.ndarray:
    return 3.0 * bilinear("z", "z", j, k, ns) - isotropic_pair(j, k, ns)


def dipolar_from_couplings(couplings_hz: np.ndarray) -> np.ndarray:
    """Secular dipolar Hamiltonian sum_{j<k} d_jk (3 I_jz I_kz - I_j.I_k) in rad/s."""
    return hermitize(coupling_sum(couplings_hz, _dipolar_pair))


def dephasing_from_fields(fields_hz: np.ndarray) -> np.ndarray:
    """On-site Hamiltonian sum_j c_j I_jz in rad/s; diagonal."""
    c = np.asarray(fields_hz, dtype=float)
    ns = c.shape[0]
    _check_capacity(ns)
    diag = TWO_PI * (c[:, None] * _single_site_diagonal_z(ns)).sum(axis=0)
    return np.diag(diag).astype(complex)


def build_dipolar(network) -> np.ndarray:
    return dipolar_from_couplings(network.couplings_d)


def build_dephasing(network) -> np.ndarray:
    return dephasing_from_fields(network.dephasing_c)


@dataclass(frozen=True)
class HamiltonianPair:
    """Dipolar and dephasing parts of the system Hamiltonian (rad/s)."""

    h_dd: np.ndarray
    h_z: np.ndarray
    # generating parameters in Hz, kept in step with any rescaling (optional)
    couplings_d: np.ndarray | None = None
    dephasing_c: np.ndarray | None = None

    @property
    def ratio_dd_over_z(self) -> float:
        nz = frobenius_norm(self.h_z)
        nd = frobenius_norm(self.h_dd)
        if nz == 0.0:
            return np.inf if nd > 0 else np.nan
        return nd / nz

    @property
    def total(self) -> np.ndarray:
        return self.h_dd + self.h_z

    @property
    def num_spins(self) -> int:
        return int(np.log2(self.h_dd.shape[0]))

    @classmethod
    def from_network(cls, network) -> "HamiltonianPair":
        return cls(
            build_dipolar(network),
            build_dephasing(network),
            np.array(network.couplings_d, dtype=float),
            np.array(network.dephasing_c, dtype=float),
        )

    def scaled(self, dd_factor: float = 1.0, z_factor: float = 1.0) -> "HamiltonianPair":
        """Multiply each part (and its generating parameters) by a real factor."""
        return HamiltonianPair(
            self.h_dd * dd_factor,
            self.h_z * z_factor,
            None if self.couplings_d is None else self.couplings_d * dd_factor,
            None if self.dephasing_c is None else self.dephasing_c * z_factor,
        )


def rescale_to_ratio(pair: HamiltonianPair, target_ratio: float) -> HamiltonianPair:
    """Scale ``h_dd`` so that ||h_dd||_F / ||h_z||_F equals ``target_ratio``."""
    if target_ratio < 0 or not np.isfinite(target_ratio):
        raise ValueError(f"target_ratio must be finite and >= 0, got {target_ratio}")
    nz = frobenius_norm(pair.h_z)
    if nz == 0.0:
        raise ZeroDephasingNorm("cannot set a norm ratio against a zero dephasing term")
    if target_ratio == 0.0:
        return pair.scaled(dd_factor=0.0)
    nd = frobenius_norm(pair.h_dd)
    if nd == 0.0:
        raise ValueError("dipolar term is zero; no positive scaling reaches the ratio")
    return pair.scaled(dd_factor=target_ratio * nz / nd)
