"""Core state of a quantum object: packets, branches, phase constants,
entanglement links and packet-length arithmetic.

A Packet is a set of coherent Branches sharing one absolute phase constant
alpha1.  Branch geometry is 1-D along circuit edges: a branch carries the
edge it lives on, an offset along it and the support length sigma_y; the
propagation direction is a property of the edge.  Amplitudes are complex so
branches carry interferometric phase; alpha1 is stored separately on the
packet because it is global to all branches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

TWO_PI = 2.0 * math.pi

DEFAULT_ANGLE_THRESHOLD = 1e-3  # rad; momentum-space separation cutoff


class ZeroWeightError(ValueError):
    """Renormalization requested on a packet with no live weight."""


class Polarization(str, Enum):
    H = "H"
    V = "V"


class Species(str, Enum):
    MASSIVE = "massive"
    PHOTON = "photon"


class PhaseConstant(float):
    """An angle in radians, reduced to [0, 2*pi)."""

    def __new__(cls, value: float):
        return super().__new__(cls, float(value) % TWO_PI)

    def add(self, delta: float) -> "PhaseConstant":
        return PhaseConstant(float(self) + delta)


@dataclass(eq=False, slots=True)
class Branch:
    """One spatially/directionally distinct part of a packet."""

    id: int
    amplitude: complex
    polarization: Optional[Polarization]
    edge: object  # optics.Edge; kept untyped to avoid a module cycle
    longitudinal_offset: float = 0.0
    packet_length: float = 1e-8
    alive: bool = True
    # engine bookkeeping: the absorbing medium currently being traversed
    medium: object = None
    medium_entry_time: float = 0.0
    medium_speed: float = 0.0
    decide_epoch: int = -1
    resting: bool = False

    @property
    def weight(self) -> float:
        a = self.amplitude
        return a.real * a.real + a.imag * a.imag

    @property
    def direction(self) -> float:
        """Direction angle label inherited from the edge the branch rides on."""
        return self.edge.direction if self.edge is not None else 0.0


@dataclass(eq=False)
class Packet:
    """A one-quantum wavepacket: coherent branches plus the global phase alpha1."""

    alpha1: PhaseConstant
    species: Species = Species.PHOTON
    branches: list = field(default_factory=list)
    reduced: bool = False
    contraction_site: object = None
    epoch: int = 0  # bumped every time alpha1 is refreshed

    def live_branches(self) -> list:
        return [b for b in self.branches if b.alive]


@dataclass(eq=False)
class EntangledPair:
    """Two packets whose polarization components are correlated."""

    packet_a: Packet
    packet_b: Packet
    correlation: dict = field(
        default_factory=lambda: {Polarization.H: Polarization.H,
                                 Polarization.V: Polarization.V})

    def partner_of(self, packet: Packet) -> Packet:
        if packet is self.packet_a:
            return self.packet_b
        if packet is self.packet_b:
            return self.packet_a
        raise ValueError("packet does not belong to this pair")

    def correlated_component(self, packet: Packet, component: Polarization) -> Polarization:
        """Component of the partner correlated with `component` of `packet`."""
        if packet is self.packet_a:
            return self.correlation[component]
        inverse = {v: k for k, v in self.correlation.items()}
        return inverse[component]

    @property
    def packets(self) -> tuple:
        return (self.packet_a, self.packet_b)


@dataclass(frozen=True)
class SpreadingParams:
    """Inputs of the longitudinal packet-length estimate."""

    coherence_length: float  # sigma_cy, m
    flight_distance: float  # l, m
    relative_bandwidth: float  # d(lambda)/lambda, dimensionless
    species: Species = Species.MASSIVE

    def __post_init__(self):
        if self.coherence_length < 0 or self.flight_distance < 0:
            raise ValueError("lengths must be >= 0")
        if not (0.0 <= self.relative_bandwidth < 1.0):
            raise ValueError("relative bandwidth must lie in [0, 1)")


def total_weight(packet: Packet) -> float:
    """Sum of |amplitude|^2 over live branches."""
    return sum(b.weight for b in packet.branches if b.alive)


def renormalize(packet: Packet) -> Packet:
    """Scale all live amplitudes by the common factor 1/sqrt(total weight)."""
    w = total_weight(packet)
    if w <= 0.0:
        raise ZeroWeightError("packet has no live weight to renormalize")
    factor = 1.0 / math.sqrt(w)
    for b in packet.branches:
        if b.alive:
            b.amplitude *= factor
    return packet


def phase_space_separated(b1: Branch, b2: Branch,
                          angle_threshold: float = DEFAULT_ANGLE_THRESHOLD) -> bool:
    """Disjointness of two branches in momentum or ordinary space.

    True when their propagation directions differ by more than the angle
    threshold, or when they ride the same edge with supports that cannot
    overlap (offset gap beyond the half-length sum).
    """
    d = abs(b1.direction - b2.direction) % TWO_PI
    if min(d, TWO_PI - d) > angle_threshold:
        return True
    if b1.edge is b2.edge:
        gap = abs(b1.longitudinal_offset - b2.longitudinal_offset)
        return gap > 0.5 * (b1.packet_length + b2.packet_length)
    return False


def spread_length(params: SpreadingParams) -> float:
    """Total packet length sigma_y = sigma_cy + spreading increase.

    Massive packets spread by l * (d(lambda)/lambda); photons do not spread
    longitudinally.
    """
    if params.species is Species.PHOTON:
        return params.coherence_length
    delta_sy = params.flight_distance * params.relative_bandwidth
    return params.coherence_length + delta_sy
