"""The collapse engine: phase-matching, overlap condition, cluster encounter
sampling and the complement rule.

A contraction candidate arises when a branch traversing an absorbing medium
meets a cluster whose phase constant alpha2 matches the packet's alpha1
within half the fine-structure constant (circular distance).  Whether the
packet contracts there is decided by the overlap condition: accumulated
branch intensity over the cluster must reach alpha2/2pi.  If it does not and
a phase-space separated sibling exists, the contacting branch vanishes and
the survivors are renormalized (complement rule); with no separated sibling
nothing happens and the branch may meet further clusters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .wavepacket import (
    DEFAULT_ANGLE_THRESHOLD,
    TWO_PI,
    Branch,
    EntangledPair,
    Packet,
    PhaseConstant,
    Polarization,
    phase_space_separated,
    renormalize,
)

ALPHA_S = 1.0 / 137.035999  # Sommerfeld fine-structure constant
MATCH_PROBABILITY = ALPHA_S / TWO_PI  # per-cluster phase-match probability


class AlreadyReducedError(RuntimeError):
    """A reduction was attempted on an already-contracted packet (scheduler bug)."""


@dataclass(frozen=True)
class CriterionParams:
    """Constants of the contraction criterion and of cluster sampling."""

    alpha_s: float = ALPHA_S
    match_probability: float = MATCH_PROBABILITY
    cluster_line_density: float = 1e7  # clusters per meter of penetration
    overlap_saturation_depth: float = 1e-4  # m
    angle_threshold: float = DEFAULT_ANGLE_THRESHOLD

    @property
    def match_rate(self) -> float:
        """Rate (1/m) of phase-matching cluster encounters."""
        return self.cluster_line_density * self.match_probability


DEFAULT_CRITERION = CriterionParams()


@dataclass
class Cluster:
    """A sensitive absorber site with its own phase constant."""

    alpha2: PhaseConstant
    volume: float = 1e-24  # m^3, carried for reporting only
    medium: object = None
    position: float = 0.0  # depth (m) into the owning component


class OutcomeKind(str, Enum):
    CONTRACTED = "contracted"
    BRANCH_VANISHED = "branch_vanished"
    NO_EVENT = "no_event"


@dataclass
class ReductionOutcome:
    kind: OutcomeKind
    cluster: Optional[Cluster] = None
    branch: Optional[Branch] = None
    renorm_factor: float = 1.0


def circular_distance(a: float, b: float) -> float:
    d = abs(float(a) - float(b)) % TWO_PI
    return min(d, TWO_PI - d)


def phase_match(alpha1: float, alpha2: float, alpha_s: float = ALPHA_S) -> bool:
    """Condition 1: circular closeness of the phase constants within alpha_s/2."""
    return circular_distance(alpha1, alpha2) <= 0.5 * alpha_s


def overlap(branch: Branch, penetration: float, params: CriterionParams = DEFAULT_CRITERION) -> float:
    """Accumulated branch intensity over a cluster at the given penetration.

    Linear ramp saturating at the branch weight once the packet has swept a
    full saturation depth.
    """
    if penetration <= 0.0:
        return 0.0
    ramp = min(1.0, penetration / params.overlap_saturation_depth)
    return branch.weight * ramp


def overlap_condition(overlap_value: float, alpha2: float) -> bool:
    """Condition 2: overlap must reach alpha2/2pi."""
    return overlap_value >= float(alpha2) / TWO_PI


def sample_first_match(rng, path_length: float,
                       params: CriterionParams = DEFAULT_CRITERION,
                       alpha1: float = 0.0,
                       medium: object = None) -> Optional[tuple[float, Cluster]]:
    """Depth of the first phase-matching cluster along a path, if any.

    Cluster encounters form a homogeneous process with the configured line
    density, each matching independently with probability alpha_s/2pi, so the
    first match depth is exponential with rate density * match_probability.
    Returns None when the sampled depth exceeds path_length.  The returned
    cluster's alpha2 is uniform in the matching window alpha1 +- alpha_s/2.
    """
    if path_length < 0:
        raise ValueError("path_length must be >= 0")
    rate = params.match_rate
    if path_length == 0.0 or rate <= 0.0:
        return None
    depth = -math.log1p(-rng.random()) / rate
    if depth > path_length:
        return None
    alpha2 = PhaseConstant(float(alpha1) + (rng.random() - 0.5) * params.alpha_s)
    return depth, Cluster(alpha2=alpha2, medium=medium, position=depth)


def _has_separated_sibling(packet: Packet, branch: Branch, params: CriterionParams) -> bool:
    for other in packet.branches:
        if other is branch or not other.alive:
            continue
        if phase_space_separated(branch, other, params.angle_threshold):
            return True
    return False


def apply_reduction(packet: Packet, branch: Branch, cluster: Cluster,
                    penetration: float,
                    params: CriterionParams = DEFAULT_CRITERION) -> ReductionOutcome:
    """Decide the fate of a branch in contact with a phase-matching cluster.

    Contracted: the overlap condition holds; the whole packet collapses to the
    cluster (all branches die, photons are absorbed outright).
    BranchVanished: the overlap condition fails but a phase-space separated
    sibling exists; the contacting branch dies and survivors renormalize.
    NoEvent: no separated sibling; the branch survives and may meet further
    clusters downstream.
    """
    if packet.reduced:
        raise AlreadyReducedError("packet already contracted")
    if not branch.alive:
        raise ValueError("reduction attempted on a dead branch")
    if not phase_match(packet.alpha1, cluster.alpha2, params.alpha_s):
        raise ValueError("apply_reduction precondition violated: phases do not match")

    ov = overlap(branch, penetration, params)
    if overlap_condition(ov, cluster.alpha2):
        for b in packet.branches:
            b.alive = False
        packet.reduced = True
        packet.contraction_site = cluster
        return ReductionOutcome(OutcomeKind.CONTRACTED, cluster=cluster, branch=branch)

    if _has_separated_sibling(packet, branch, params):
        w_before = sum(b.weight for b in packet.branches if b.alive)
        branch.alive = False
        renormalize(packet)
        factor = 1.0 / math.sqrt(w_before - branch.weight)
        return ReductionOutcome(OutcomeKind.BRANCH_VANISHED, cluster=cluster,
                                branch=branch, renorm_factor=factor)

    return ReductionOutcome(OutcomeKind.NO_EVENT, cluster=cluster, branch=branch)


def reduce_partner(pair: EntangledPair, component: Polarization,
                   reduced_packet: Packet | None = None) -> None:
    """Collapse the partner packet onto the component correlated with the one
    the reduced packet just contracted to.

    If `reduced_packet` is omitted, the pair must contain exactly one packet
    already marked reduced; that packet is used. The partner is not marked
    contracted: it persists as the surviving component and keeps propagating.
    """
    if reduced_packet is None:
        done = [p for p in pair.packets if p.reduced]
        if len(done) != 1:
            raise ValueError(
                f"expected exactly one reduced packet in the pair, found {len(done)}")
        reduced_packet = done[0]
    partner = pair.partner_of(reduced_packet)
    keep = pair.correlated_component(reduced_packet, component)
    for b in partner.branches:
        if b.alive and b.polarization != keep:
            b.alive = False
    renormalize(partner)
