"""Random 13C placements on a diamond lattice and their pairwise couplings."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import constants

from ddsim.errors import CapacityExceeded, InsufficientSites, ZeroSeparation
from ddsim.spin_algebra import MAX_SPINS

GAMMA_13C_HZ_PER_T = 10.7e6
LATTICE_CONSTANT_NM = 0.35
# sqrt(<A_zz^2>) with <A_zz^2> ~ 0.4 kHz^2
DEFAULT_DEPHASING_RMS_HZ = float(np.sqrt(0.4) * 1e3)

_FCC_BASIS = np.array([[0, 0, 0], [0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0]])
DIAMOND_BASIS = np.vstack([_FCC_BASIS, _FCC_BASIS + 0.25])


@dataclass(frozen=True)
class LatticeConfig:
    enrichment_eta: float
    lattice_constant_a: float = LATTICE_CONSTANT_NM
    cell_extent: int = 8
    field_direction: tuple[float, float, float] = (0.0, 0.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.enrichment_eta <= 1.0:
            raise ValueError(f"enrichment_eta must be in (0, 1], got {self.enrichment_eta}")
        if self.lattice_constant_a <= 0:
            raise ValueError("lattice_constant_a must be positive")
        if int(self.cell_extent) != self.cell_extent or self.cell_extent < 1:
            raise ValueError("cell_extent must be an integer >= 1")
        b = np.asarray(self.field_direction, dtype=float)
        if b.shape != (3,) or abs(np.linalg.norm(b) - 1.0) > 1e-12:
            raise ValueError("field_direction must be a unit 3-vector")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class SpinNetwork:
    """One random manifestation: positions (nm), couplings d_jk (Hz), fields c_j (Hz)."""

    positions: np.ndarray
    couplings_d: np.ndarray
    dephasing_c: np.ndarray
    seed: int = 0
    field_direction: tuple[float, float, float] = field(default=(0.0, 0.0, 1.0))

    def __post_init__(self):
        ns = len(self.positions)
        if self.couplings_d.shape != (ns, ns) or len(self.dephasing_c) != ns:
            raise ValueError("positions, couplings and dephasing must agree on ns")
        if not np.array_equal(self.couplings_d, self.couplings_d.T):
            raise ValueError("couplings must be symmetric")
        if np.any(np.diag(self.couplings_d) != 0):
            raise ValueError("couplings must have a zero diagonal")

    @property
    def num_spins(self) -> int:
        return len(self.positions)

    def to_json(self) -> str:
        return json.dumps(
            {
                "seed": int(self.seed),
                "field_direction": [float(x) for x in self.field_direction],
                "positions_nm": np.asarray(self.positions).tolist(),
                "couplings_hz": np.asarray(self.couplings_d).tolist(),
                "dephasing_hz": np.asarray(self.dephasing_c).tolist(),
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "SpinNetwork":
        doc = json.loads(text)
        return cls(
            positions=np.array(doc["positions_nm"], dtype=float),
            couplings_d=np.array(doc["couplings_hz"], dtype=float),
            dephasing_c=np.array(doc["dephasing_hz"], dtype=float),
            seed=int(doc["seed"]),
            field_direction=tuple(doc["field_direction"]),
        )


def spin_density(eta: float) -> float:
    """13C spins per nm^3 at enrichment ``eta``."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must be in [0, 1], got {eta}")
    return 0.92 * eta


def dipolar_prefactor_hz_nm3() -> float:
    """(mu0/4pi) hbar gamma^2 expressed in Hz * nm^3."""
    gamma = 2.0 * np.pi * GAMMA_13C_HZ_PER_T
    rad_per_s_m3 = constants.mu_0 / (4.0 * np.pi) * constants.hbar * gamma**2
    return rad_per_s_m3 * 1e27 / (2.0 * np.pi)


def dipolar_coupling(r_vec, field_direction=(0.0, 0.0, 1.0)) -> float:
    """Secular coupling d = K (3 cos^2 theta - 1) / r^3 in Hz, r in nm."""
    r = np.asarray(r_vec, dtype=float)
    dist = float(np.linalg.norm(r))
    if dist == 0.0:
        raise ZeroSeparation("coincident spins have no defined coupling")
    b = np.asarray(field_direction, dtype=float)
    cos_t = float(r @ b) / dist
    return dipolar_prefactor_hz_nm3() * (3.0 * cos_t**2 - 1.0) / dist**3


def coupling_matrix(positions: np.ndarray, field_direction) -> np.ndarray:
    ns = len(positions)
    d = np.zeros((ns, ns))
    for j in range(ns):
        for k in range(j + 1, ns):
            d[j, k] = d[k, j] = dipolar_coupling(positions[k] - positions[j], field_direction)
    return d


@lru_cache(maxsize=8)
def diamond_sites(cell_extent: int) -> np.ndarray:
    """Fractional (cell-unit) coordinates of all sites in an extent^3 block."""
    cells = np.stack(np.meshgrid(*[np.arange(cell_extent)] * 3, indexing="ij"), -1).reshape(-1, 3)
    sites = (cells[:, None, :] + DIAMOND_BASIS[None, :, :]).reshape(-1, 3)
    sites.setflags(write=False)
    return sites


def generate_network(
    config: LatticeConfig,
    ns: int,
    dephasing_scale: float = DEFAULT_DEPHASING_RMS_HZ,
) -> SpinNetwork:
    """Draw one network of ``ns`` spins.

    Each site is occupied with probability eta; the ``ns`` occupied sites
    nearest a uniformly chosen occupied anchor are kept. Distances use the
    minimum image of the periodically tiled block, and positions are the
    anchor-relative displacements (anchor at the origin). Fields c_j are
    normal draws rescaled to an RMS of exactly ``dephasing_scale``.
    """
    if ns < 2:
        raise ValueError("ns must be >= 2")
    if ns > MAX_SPINS:
        raise CapacityExceeded(f"ns={ns} exceeds engine capacity {MAX_SPINS}")
    rng = np.random.default_rng(int(config.seed))
    extent = int(config.cell_extent)
    sites = diamond_sites(extent)
    occupied = sites[rng.random(len(sites)) < config.enrichment_eta]
    if len(occupied) < ns:
        raise InsufficientSites(
            f"only {len(occupied)} occupied sites for ns={ns}; enlarge cell_extent"
        )
    anchor = occupied[rng.integers(len(occupied))]
    disp = occupied - anchor
    disp -= extent * np.round(disp / extent)
    dist2 = np.einsum("ij,ij->i", disp, disp)
    # lexsort keeps ties deterministic
    order = np.lexsort((disp[:, 2], disp[:, 1], disp[:, 0], np.round(dist2, 9)))
    positions = disp[order[:ns]] * config.lattice_constant_a

    couplings = coupling_matrix(positions, config.field_direction)
    c = rng.standard_normal(ns)
    rms = np.sqrt(np.mean(c**2))
    c = c * (dephasing_scale / rms) if dephasing_scale > 0 else np.zeros(ns)
    return SpinNetwork(
        positions=positions,
        couplings_d=couplings,
        dephasing_c=c,
        seed=int(config.seed),
        field_direction=tuple(float(x) for x in config.field_direction),
    )


def local_field_rms(eta: float, field_direction=(0.0, 0.0, 1.0), shells: int = 6) -> float:
    """sqrt(eta * sum_k d_0k^2) over a lattice neighbourhood, in Hz.

    Van Vleck style second-moment coupling seen by one spin; this is the
    quantity that scales as eta^(1/2).
    """
    sites = diamond_sites(2 * shells + 1).astype(float) - shells
    sites = sites[np.any(sites != 0, axis=1)] * LATTICE_CONSTANT_NM
    r = np.linalg.norm(sites, axis=1)
    cos_t = sites @ np.asarray(field_direction, dtype=float) / r
    d = dipolar_prefactor_hz_nm3() * (3 * cos_t**2 - 1) / r**3
    return float(np.sqrt(eta * np.sum(d**2)))
