"""Exact simulation and average-Hamiltonian analysis of DD_theta pulse trains
acting on small dipolar-coupled 13C networks in diamond."""

from ddsim.analysis import SweepConfig, ThetaProfile, dip_width, sweep_theta
from ddsim.engine import DecayCurve, extract_t2prime, simulate_decay
from ddsim.lattice import LatticeConfig, SpinNetwork, generate_network
from ddsim.sequence import SequenceParams, make_sequence, special_case
from ddsim.spin_algebra import HamiltonianPair, rescale_to_ratio

__version__ = "0.1.0"

__all__ = [
    "DecayCurve",
    "HamiltonianPair",
    "LatticeConfig",
    "SequenceParams",
    "SpinNetwork",
    "SweepConfig",
    "ThetaProfile",
    "dip_width",
    "extract_t2prime",
    "generate_network",
    "make_sequence",
    "rescale_to_ratio",
    "simulate_decay",
    "special_case",
    "sweep_theta",
]
