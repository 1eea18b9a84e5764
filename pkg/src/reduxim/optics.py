"""Circuit components, topology, splitter amplitude algebra and the
discrete-event scheduler that orders branch-medium encounters in time.

Reflection at a beam splitter advances the phase by pi/2 (factor i); this
convention makes a balanced interferometer send everything to the cross
port.  Absorbing media (detectors, absorbers, foils) sample the depth of the
first phase-matching cluster on entry; the contraction decision fires once
the packet has swept a full saturation depth past that cluster, so decisions
always see the saturated overlap.  Every decision refreshes the packet's
global phase constant and re-samples the pending matches of its branches
still inside media: a sampled cluster only matches the phase constant that
generated it.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Optional

from .reduction import (
    DEFAULT_CRITERION,
    CriterionParams,
    OutcomeKind,
    apply_reduction,
    reduce_partner,
    sample_first_match,
)
from .wavepacket import (
    TWO_PI,
    Branch,
    EntangledPair,
    Packet,
    PhaseConstant,
    Polarization,
    phase_space_separated,
)

PRUNE_WEIGHT = 1e-12  # outputs below this weight are never scheduled
SPEED_OF_LIGHT = 299792458.0
NEUTRON_SPEED = 2200.0

_ARRIVE, _DECIDE, _CHOICE = 0, 1, 2


class IncoherentMergeError(RuntimeError):
    """Superposition requested for phase-space separated branches."""


class ChoiceTooLateError(RuntimeError):
    """A splitter reconfiguration was scheduled after a branch reached it."""


class NonTerminationError(RuntimeError):
    """The event budget was exhausted before the trial settled."""


class GraphError(ValueError):
    """The circuit graph violates a topology invariant."""


# ---------------------------------------------------------------------------
# components and topology


@dataclass(eq=False)
class Edge:
    """Directed path between two component ports."""

    id: int
    src: "Component"
    src_port: int
    dst: "Component"
    dst_port: int
    length: float
    speed: float = SPEED_OF_LIGHT
    direction: float = 0.0  # propagation direction angle (rad)

    @property
    def flight_time(self) -> float:
        return self.length / self.speed


class Component:
    """Base circuit node; subclasses define behaviour at arrival."""

    kind = "component"
    terminal = False  # may legitimately have no outgoing edges
    gathers = False  # collect simultaneous arrivals before processing

    def __init__(self, label: str):
        self.label = label
        self.index = -1  # set by the graph; deterministic tie-break order
        self.out_edges: dict[int, Edge] = {}
        self.in_edges: list[Edge] = []

    def __repr__(self):
        return f"<{self.kind} {self.label}>"


class Source(Component):
    kind = "source"


class BeamSplitter(Component):
    kind = "beam_splitter"
    gathers = True

    def __init__(self, label: str, T: float, R: Optional[float] = None,
                 pass_polarization: Optional[Polarization] = None,
                 identity: bool = False):
        super().__init__(label)
        if R is None:
            R = 1.0 - T
        if T < 0 or R < 0 or abs(T + R - 1.0) > 1e-12:
            raise GraphError(f"beam splitter {label}: T + R must equal 1 (got {T}+{R})")
        self.T = T
        self.R = R
        self.pass_polarization = pass_polarization
        self.identity = identity  # pass-through for all polarizations ("removed")


class Mirror(Component):
    kind = "mirror"


class PhaseShifter(Component):
    kind = "phase_shifter"

    def __init__(self, label: str, phi: float):
        super().__init__(label)
        self.phi = phi
        self.factor = complex(math.cos(phi), math.sin(phi))


class _AbsorbingComponent(Component):
    """Common machinery of cluster-bearing media."""

    def __init__(self, label: str, criterion: CriterionParams = DEFAULT_CRITERION,
                 depth: float = math.inf):
        super().__init__(label)
        self.criterion = criterion
        self.depth = depth


class ObjectAbsorber(_AbsorbingComponent):
    kind = "object_absorber"
    terminal = True


class Detector(_AbsorbingComponent):
    """Complete absorber with a click counter; polarization is read from the
    contracting branch (a polarizing splitter in front of two counters)."""

    kind = "detector"
    terminal = True


class PartialFoil(_AbsorbingComponent):
    kind = "partial_foil"

    def __init__(self, label: str, a: float, interaction_length: float = 1e-4,
                 criterion: Optional[CriterionParams] = None):
        if not 0.0 <= a <= 1.0:
            raise GraphError(f"foil {label}: transmission must lie in [0, 1]")
        if criterion is None:
            criterion = CriterionParams(cluster_line_density=2e6)
        super().__init__(label, criterion=criterion, depth=interaction_length)
        self.a = a
        self.interaction_length = interaction_length


class Chopper(Component):
    """Classical gate: the whole packet is blocked with probability 1 - duty."""

    kind = "chopper"

    def __init__(self, label: str, duty: float):
        super().__init__(label)
        if not 0.0 <= duty <= 1.0:
            raise GraphError(f"chopper {label}: duty must lie in [0, 1]")
        self.duty = duty


class Sink(Component):
    kind = "sink"
    terminal = True


@dataclass(eq=False)
class Event:
    """Public record of one scheduled occurrence (audit traces)."""

    time: float
    node: Component
    branch: Optional[Branch] = None
    kind: str = "arrive"


class CircuitGraph:
    """Component topology with directed, timed edges."""

    def __init__(self):
        self.nodes: list[Component] = []
        self.edges: list[Edge] = []
        self._by_label: dict[str, Component] = {}

    def add(self, node: Component) -> Component:
        if node.label in self._by_label:
            raise GraphError(f"duplicate node label {node.label!r}")
        node.index = len(self.nodes)
        self.nodes.append(node)
        self._by_label[node.label] = node
        return node

    def __getitem__(self, label: str) -> Component:
        return self._by_label[label]

    def __contains__(self, label: str) -> bool:
        return label in self._by_label

    def connect(self, src: Component, src_port: int, dst: Component, dst_port: int,
                length: float, speed: float = SPEED_OF_LIGHT,
                direction: float = 0.0) -> Edge:
        edge = Edge(id=len(self.edges), src=src, src_port=src_port,
                    dst=dst, dst_port=dst_port, length=length, speed=speed,
                    direction=direction)
        if src_port in src.out_edges:
            raise GraphError(f"{src.label} port {src_port} already connected")
        src.out_edges[src_port] = edge
        dst.in_edges.append(edge)
        self.edges.append(edge)
        return edge

    def validate(self) -> None:
        sources = [n for n in self.nodes if isinstance(n, Source)]
        if not sources:
            raise GraphError("graph has no source")
        seen = set()
        stack = list(sources)
        while stack:
            node = stack.pop()
            if node.index in seen:
                continue
            seen.add(node.index)
            if not node.out_edges and not node.terminal:
                raise GraphError(
                    f"{node.label} ({node.kind}) is reachable but leads nowhere")
            for edge in node.out_edges.values():
                stack.append(edge.dst)


# ---------------------------------------------------------------------------
# amplitude algebra ops


def _clone_on(branch_id: int, template: Branch, amplitude: complex,
              edge: Optional[Edge]) -> Branch:
    return Branch(id=branch_id, amplitude=amplitude,
                  polarization=template.polarization, edge=edge,
                  longitudinal_offset=0.0, packet_length=template.packet_length)


def split(branch: Branch, bs: BeamSplitter) -> tuple[Branch, Optional[Branch]]:
    """Split a branch at a beam splitter: (sqrt(T), i*sqrt(R)) amplitudes.

    A pass-through splitter (identity, or selective with the branch carrying
    its pass polarization) forwards the branch unchanged; the reflected
    output is then None.
    """
    if not branch.alive:
        raise ValueError("cannot split a dead branch")
    if bs.identity or (bs.pass_polarization is not None
                       and branch.polarization == bs.pass_polarization):
        forwarded = _clone_on(branch.id, branch, branch.amplitude,
                              bs.out_edges.get(0))
        return forwarded, None
    transmitted = _clone_on(branch.id, branch,
                            math.sqrt(bs.T) * branch.amplitude, bs.out_edges.get(0))
    reflected = _clone_on(branch.id + 1, branch,
                          1j * math.sqrt(bs.R) * branch.amplitude, bs.out_edges.get(1))
    return transmitted, reflected


def superpose(b1: Branch, b2: Branch,
              angle_threshold: float = DEFAULT_CRITERION.angle_threshold) -> Branch:
    """Coherently merge two overlapping branches into one."""
    if not (b1.alive and b2.alive):
        raise ValueError("cannot superpose dead branches")
    if b1.polarization != b2.polarization:
        raise IncoherentMergeError("cannot superpose orthogonal polarizations")
    if phase_space_separated(b1, b2, angle_threshold):
        raise IncoherentMergeError("branches are phase-space separated")
    return _clone_on(b1.id, b1, b1.amplitude + b2.amplitude, b1.edge)


def apply_phase(branch: Branch, phi: float) -> Branch:
    """Multiply the branch amplitude by exp(i*phi)."""
    branch.amplitude *= complex(math.cos(phi), math.sin(phi))
    return branch


def partial_foil_split(branch: Branch, a: float,
                       transmitted_edge: Optional[Edge] = None,
                       deflected_edge: Optional[Edge] = None,
                       ) -> tuple[Optional[Branch], Optional[Branch]]:
    """Split at a partial foil: transmitted sqrt(a), deflected sqrt(1-a).

    The deflected part is routed toward a sink it can never leave; the two
    outputs are phase-space separated by construction (distinct directions).
    Outputs with zero weight are returned as None.
    """
    if not branch.alive:
        raise ValueError("cannot split a dead branch")
    if not 0.0 <= a <= 1.0:
        raise ValueError("transmission must lie in [0, 1]")
    transmitted = deflected = None
    if a > 0.0:
        transmitted = _clone_on(branch.id, branch,
                                math.sqrt(a) * branch.amplitude,
                                transmitted_edge or branch.edge)
    if a < 1.0:
        deflected = _clone_on(branch.id + 1, branch,
                              math.sqrt(1.0 - a) * branch.amplitude,
                              deflected_edge or branch.edge)
    return transmitted, deflected


def set_choice(graph: CircuitGraph, node_label: str, insert_bs: bool) -> None:
    """Toggle a splitter between its configured ratio and pass-through."""
    node = graph[node_label]
    if not isinstance(node, BeamSplitter):
        raise GraphError(f"{node_label} is not a beam splitter")
    node.identity = not insert_bs


# ---------------------------------------------------------------------------
# trial results


@dataclass
class TrialResult:
    """Outcome of one trial: what each packet ended as."""

    outcomes: dict = field(default_factory=dict)  # packet idx -> (kind, label, pol)
    n_events: int = 0
    notes: dict = field(default_factory=dict)
    audit: Optional[dict] = None

    def outcome(self, idx: int = 0) -> tuple:
        return self.outcomes.get(idx, ("none", None, None))

    @property
    def click(self) -> Optional[tuple]:
        kind, label, pol = self.outcome(0)
        return (label, pol) if kind == "click" else None

    @property
    def absorbed_at(self) -> Optional[str]:
        kind, label, _ = self.outcome(0)
        return label if kind == "absorbed" else None

    @property
    def blocked(self) -> bool:
        return self.outcome(0)[0] == "blocked"


# ---------------------------------------------------------------------------
# the event engine


def _group_tolerance(t: float) -> float:
    return 1e-18 + 1e-9 * abs(t)


def run_trial(graph: CircuitGraph, system, rng, *,
              choices: Optional[list] = None,
              event_budget: int = 1_000_000,
              audit: bool = False) -> TrialResult:
    """Run one trial: pop events in time order until the system settles.

    `system` is a Packet or an EntangledPair whose branches sit at the start
    of source edges at t = 0.  `choices` is an optional list of
    (node_label, time, insert) splitter reconfigurations to schedule.
    Settling means every packet contracted, was blocked, or has all
    surviving branches resting in sinks.
    """
    if isinstance(system, EntangledPair):
        packets = list(system.packets)
        pair = system
    else:
        packets = [system]
        pair = None
    packet_index = {id(p): i for i, p in enumerate(packets)}
    n_packets = len(packets)
    resolved = 0

    heap: list = []
    seq = 0
    next_branch_id = max((b.id for p in packets for b in p.branches), default=0) + 1
    branch_packet: dict[int, Packet] = {}
    first_arrival: dict[int, float] = {}  # node index -> earliest branch arrival
    result = TrialResult()
    notes = result.notes
    audit_data = None
    if audit:
        audit_data = {"max_norm_error": 0.0, "max_unitarity_error": 0.0,
                      "contractions": [0] * len(packets), "events": []}

    def push(t, node, bid, kind, payload):
        nonlocal seq
        seq += 1
        heapq.heappush(heap, (t, node.index, bid, seq, kind, payload))

    def schedule_branch(branch, packet, t_now):
        """Send a branch down its edge; it arrives at the far end."""
        edge = branch.edge
        branch_packet[id(branch)] = packet
        push(t_now + edge.flight_time, edge.dst, branch.id, _ARRIVE, branch)

    def new_branch(packet, template, amplitude, edge):
        nonlocal next_branch_id
        b = Branch(id=next_branch_id, amplitude=amplitude,
                   polarization=template.polarization, edge=edge,
                   packet_length=template.packet_length)
        next_branch_id += 1
        packet.branches.append(b)
        return b

    def schedule_match(node, branch, packet, t_now, start_depth):
        """Sample the next phase-matching cluster along the remaining path."""
        remaining = node.depth - start_depth
        found = sample_first_match(rng, remaining, node.criterion,
                                   alpha1=packet.alpha1, medium=node)
        if found is None:
            exit_medium(node, branch, packet, t_now)
            return
        rel_depth, cluster = found
        cluster.position = start_depth + rel_depth
        if isinstance(node, PartialFoil):
            notes["foil_matches"] = notes.get("foil_matches", 0) + 1
        branch.decide_epoch = packet.epoch
        t_decide = t_now + (rel_depth + node.criterion.overlap_saturation_depth) \
            / branch.medium_speed
        push(t_decide, node, branch.id, _DECIDE, (packet, branch, cluster, packet.epoch))

    def enter_medium(node, branch, packet, t_now):
        branch.medium = node
        branch.medium_entry_time = t_now
        branch.medium_speed = branch.edge.speed
        schedule_match(node, branch, packet, t_now, start_depth=0.0)

    def exit_medium(node, branch, packet, t_now):
        """No further cluster before the far face: leave the medium."""
        branch.medium = None
        if not node.out_edges:
            branch.resting = True  # trapped without contracting; stays put
            return
        t_exit = max(t_now, branch.medium_entry_time + node.depth / branch.medium_speed)
        if not isinstance(node, PartialFoil):
            branch.edge = node.out_edges[0]
        schedule_branch(branch, packet, t_exit)

    def refresh_packet(packet, t_now):
        """New global phase constant; pending matches are no longer valid."""
        packet.alpha1 = PhaseConstant(TWO_PI * rng.random())
        packet.epoch += 1
        stale = [b for b in packet.branches if b.alive and b.medium is not None]
        stale.sort(key=lambda b: b.id)
        for b in stale:
            node = b.medium
            pos = (t_now - b.medium_entry_time) * b.medium_speed
            if node.depth != math.inf:
                pos = min(pos, node.depth)
            schedule_match(node, b, packet, t_now, start_depth=max(pos, 0.0))

    def record_contraction(packet, node, branch, t_now):
        nonlocal resolved
        idx = packet_index[id(packet)]
        kind = "click" if isinstance(node, Detector) else "absorbed"
        pol = branch.polarization.value if branch.polarization else None
        result.outcomes[idx] = (kind, node.label, pol)
        resolved += 1
        if audit_data is not None:
            audit_data["contractions"][idx] += 1
        if isinstance(node, PartialFoil):
            notes["foil_contracted"] = notes.get("foil_contracted", 0) + 1
        if pair is not None and branch.polarization is not None:
            partner = pair.partner_of(packet)
            if not partner.reduced and any(b.alive for b in partner.branches):
                reduce_partner(pair, branch.polarization, reduced_packet=packet)
                refresh_packet(partner, t_now)

    def block_packet(packet, node):
        nonlocal resolved
        for b in packet.branches:
            b.alive = False
        result.outcomes[packet_index[id(packet)]] = ("blocked", node.label, None)
        resolved += 1

    def settled() -> bool:
        # every packet has either contracted or been blocked; trials whose
        # packet comes to rest in a sink end by draining the event queue
        return resolved == n_packets

    def process_arrival(node, group, t_now):
        if isinstance(node, BeamSplitter):
            # coherent gathering: sum amplitudes per (packet, polarization, port)
            buckets: dict[tuple, list] = {}
            for b in group:
                pkt = branch_packet[id(b)]
                key = (id(pkt), b.polarization)
                amps = buckets.setdefault(key, [pkt, b, complex(0), complex(0)])
                amps[2 + b.edge.dst_port] += b.amplitude
                b.alive = False
            for (_, pol), (pkt, template, a0, a1) in buckets.items():
                if node.identity or node.pass_polarization == pol:
                    out0, out1 = a0, a1
                else:
                    rt, rr = math.sqrt(node.T), math.sqrt(node.R)
                    out0 = rt * a0 + 1j * rr * a1
                    out1 = 1j * rr * a0 + rt * a1
                if audit_data is not None:
                    err = abs((abs(out0) ** 2 + abs(out1) ** 2)
                              - (abs(a0) ** 2 + abs(a1) ** 2))
                    if err > audit_data["max_unitarity_error"]:
                        audit_data["max_unitarity_error"] = err
                for port, amp in ((0, out0), (1, out1)):
                    if amp.real * amp.real + amp.imag * amp.imag <= PRUNE_WEIGHT:
                        continue
                    edge = node.out_edges.get(port)
                    if edge is None:
                        raise GraphError(
                            f"{node.label} emits on port {port} but it is not wired")
                    nb = new_branch(pkt, template, amp, edge)
                    schedule_branch(nb, pkt, t_now)
            return

        for b in group:
            pkt = branch_packet[id(b)]
            if isinstance(node, Mirror):
                b.edge = node.out_edges[0]
                schedule_branch(b, pkt, t_now)
            elif isinstance(node, PhaseShifter):
                b.amplitude *= node.factor
                b.edge = node.out_edges[0]
                schedule_branch(b, pkt, t_now)
            elif isinstance(node, Sink):
                b.resting = True
            elif isinstance(node, Chopper):
                if rng.random() < node.duty:
                    b.edge = node.out_edges[0]
                    schedule_branch(b, pkt, t_now)
                else:
                    block_packet(pkt, node)
            elif isinstance(node, PartialFoil):
                trans, defl = partial_foil_split(
                    b, node.a, transmitted_edge=node.out_edges.get(0),
                    deflected_edge=node.out_edges.get(1))
                b.alive = False
                if trans is not None and trans.weight > PRUNE_WEIGHT:
                    nb = new_branch(pkt, b, trans.amplitude, node.out_edges[0])
                    t_exit = t_now + node.interaction_length / b.edge.speed
                    schedule_branch(nb, pkt, t_exit)
                if defl is not None and defl.weight > PRUNE_WEIGHT:
                    nb = new_branch(pkt, b, defl.amplitude, node.out_edges[1])
                    nb.medium_speed = b.edge.speed
                    nb.medium = node
                    nb.medium_entry_time = t_now
                    schedule_match(node, nb, pkt, t_now, start_depth=0.0)
            elif isinstance(node, _AbsorbingComponent):
                enter_medium(node, b, pkt, t_now)
            else:
                raise GraphError(f"branch arrived at {node.label} ({node.kind})")

    # seed the queue: branches start at the source end of their edges at t=0
    for p in packets:
        for b in p.branches:
            if b.alive:
                schedule_branch(b, p, 0.0)
    for (label, t_choice, insert) in choices or ():
        push(t_choice, graph[label], -1, _CHOICE, bool(insert))

    n_pops = 0

    while heap:
        t, node_idx, bid, s, kind, payload = heapq.heappop(heap)
        n_pops += 1
        if n_pops > event_budget:
            raise NonTerminationError(f"event budget {event_budget} exhausted")
        node = graph.nodes[node_idx]

        if kind == _CHOICE:
            if node.index in first_arrival and first_arrival[node.index] <= t:
                raise ChoiceTooLateError(
                    f"choice at t={t} but {node.label} saw a branch at "
                    f"t={first_arrival[node.index]}")
            node.identity = not payload
            continue

        if kind == _DECIDE:
            packet, branch, cluster, epoch = payload
            if not branch.alive or packet.reduced or epoch != packet.epoch:
                continue
            medium = branch.medium
            outcome = apply_reduction(packet, branch, cluster,
                                      medium.criterion.overlap_saturation_depth,
                                      medium.criterion)
            if outcome.kind is OutcomeKind.CONTRACTED:
                record_contraction(packet, medium, branch, t)
                if settled():
                    break
            else:
                if outcome.kind is OutcomeKind.BRANCH_VANISHED:
                    branch.medium = None
                    if isinstance(medium, PartialFoil):
                        notes["foil_vanished"] = notes.get("foil_vanished", 0) + 1
                        notes["foil_renorm_factor"] = outcome.renorm_factor
                refresh_packet(packet, t)
            if audit_data is not None:
                _audit_norm(packets, result, audit_data)
            continue

        branch = payload
        if not branch.alive or branch.resting:
            continue
        if branch_packet[id(branch)].reduced:
            continue
        first_arrival.setdefault(node.index, t)

        group = [branch]
        if node.gathers:
            tol = _group_tolerance(t)
            while heap and heap[0][4] == _ARRIVE and heap[0][1] == node_idx \
                    and heap[0][0] - t <= tol:
                other = heapq.heappop(heap)[5]
                n_pops += 1
                if other.alive and not other.resting:
                    group.append(other)

        if audit_data is not None:
            audit_data["events"].append(Event(time=t, node=node, branch=branch))

        process_arrival(node, group, t)

        if audit_data is not None:
            _audit_norm(packets, result, audit_data)
        if settled():
            break

    result.n_events = n_pops
    result.audit = audit_data
    return result


def _audit_norm(packets, result, audit_data):
    for i, p in enumerate(packets):
        kind = result.outcomes.get(i, ("none",))[0]
        if p.reduced or kind == "blocked":
            continue
        w = sum(b.weight for b in p.branches if b.alive)
        err = abs(w - 1.0)
        if err > audit_data["max_norm_error"]:
            audit_data["max_norm_error"] = err
