"""DD_theta pulse-train parameters and timing arithmetic.

Times are in seconds, angles in radians and the Rabi frequency in Hz
(cycles/s), so a pulse of width t_p rotates by 2*pi*rabi_omega*t_p.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from ddsim.errors import InvalidTiming, Recoupled, UnknownCase

RABI_HZ = 11.4e3
T_ACQ = 32e-6
T_DEAD = 6e-6
N_PULSES = 2000


@dataclass(frozen=True)
class SequenceParams:
    theta: float
    t_p: float
    t_acq: float
    t_d: float
    t_1: float
    n_pulses: int
    rabi_omega: float | None = None

    def __post_init__(self):
        for name in ("t_p", "t_acq", "t_d", "t_1"):
            if getattr(self, name) < 0:
                raise InvalidTiming(f"{name} must be >= 0")
        if self.n_pulses < 0 or int(self.n_pulses) != self.n_pulses:
            raise InvalidTiming("n_pulses must be a non-negative integer")
        if self.tau <= 0:
            raise InvalidTiming("cycle period tau must be positive")
        if self.t_1 > self.tau:
            raise InvalidTiming("first delay t_1 may not exceed the cycle period")
        if self.rabi_omega is not None and self.t_p > 0:
            expected = 2 * math.pi * self.rabi_omega * self.t_p
            if not math.isclose(self.theta, expected, rel_tol=1e-9, abs_tol=0.0):
                raise InvalidTiming(
                    f"theta={self.theta} inconsistent with 2*pi*rabi*t_p={expected}"
                )

    @property
    def tau(self) -> float:
        return self.t_p + self.t_acq + self.t_d

    @property
    def total_time(self) -> float:
        return self.n_pulses * self.tau


def make_sequence(
    theta: float,
    t_acq: float = T_ACQ,
    t_d: float = T_DEAD,
    t_1: float = 0.0,
    n_pulses: int = N_PULSES,
    rabi_omega: float = RABI_HZ,
) -> SequenceParams:
    """Build a sequence whose pulse width follows from theta and the Rabi frequency."""
    if theta < 0:
        raise InvalidTiming("theta must be >= 0")
    if rabi_omega <= 0:
        raise InvalidTiming("rabi_omega must be positive")
    t_p = theta / (2 * math.pi * rabi_omega)
    return SequenceParams(theta, t_p, t_acq, t_d, t_1, n_pulses, rabi_omega)


def special_case(name: str, base: SequenceParams) -> SequenceParams:
    """Named limits of the pulse train.

    ``cpmg`` and ``waugh_ostroff`` change the flip angle, so the pulse width is
    re-derived from the Rabi frequency when one is attached.
    """
    if name == "cpmg":
        out = _with_theta(base, math.pi)
        return replace(out, t_1=(out.t_acq + out.t_d) / 2)
    if name == "waugh_ostroff":
        return replace(_with_theta(base, math.pi / 2), t_1=0.0)
    if name == "spin_lock":
        return replace(base, t_acq=0.0, t_d=0.0, t_1=min(base.t_1, base.t_p))
    if name == "fid":
        return replace(base, n_pulses=0)
    raise UnknownCase(f"unknown special case {name!r}")


def _with_theta(base: SequenceParams, theta: float) -> SequenceParams:
    if base.rabi_omega is None:
        return replace(base, theta=theta)
    t_p = theta / (2 * math.pi * base.rabi_omega)
    return replace(base, theta=theta, t_p=t_p, t_1=min(base.t_1, t_p + base.t_acq + base.t_d))


def duty_cycle(seq: SequenceParams) -> float:
    """Fraction of the cycle spent pulsing, t_p / tau."""
    return seq.t_p / seq.tau


def _wrap(phase: float) -> float:
    """Map to (-pi, pi]."""
    w = math.remainder(phase, 2 * math.pi)
    return math.pi if w == -math.pi else w


def convergence_length(theta: float, interaction: str) -> int:
    """Pulses needed for the toggling phase to sweep a full turn.

    The per-pulse phase step is 2*theta for bilinear (dipolar) terms and theta
    for on-site (dephasing) terms, wrapped into (-pi, pi].
    """
    if interaction == "dipolar":
        step = _wrap(2 * theta)
    elif interaction == "dephasing":
        step = _wrap(theta)
    else:
        raise ValueError(f"interaction must be 'dipolar' or 'dephasing', got {interaction!r}")
    if abs(step) < 1e-12:
        raise Recoupled(f"theta={theta} recouples the {interaction} interaction")
    return math.ceil(2 * math.pi / abs(step) - 1e-9)
