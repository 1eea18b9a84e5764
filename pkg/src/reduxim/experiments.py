"""Prebuilt interferometer scenarios, ensemble runners and a closed-form
amplitude-algebra oracle.

Trial randomness: every run owns one logical random stream per scenario
label; trial i draws from the absolute stream position i * 2**64, so counts
are independent of worker count and chunking, and two runs that share a
label (e.g. a parameter sweep, or coin-flip versus static delayed choice)
see identical per-trial randomness.  Delayed-choice coins come from a
separate stream so the physics draws do not depend on the policy.
"""

from __future__ import annotations

import math
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .optics import (
    SPEED_OF_LIGHT,
    BeamSplitter,
    Chopper,
    CircuitGraph,
    Component,
    Detector,
    Mirror,
    ObjectAbsorber,
    PartialFoil,
    PhaseShifter,
    Sink,
    Source,
    run_trial,
)
from .stats import TrialStream, binomial_stderr, chi_square, derive_stream, fit_fringe
from .wavepacket import (
    TWO_PI,
    Branch,
    EntangledPair,
    Packet,
    PhaseConstant,
    Polarization,
    Species,
    SpreadingParams,
    spread_length,
)

SQRT_HALF = math.sqrt(0.5)
DEFAULT_PHI_POINTS = 24


class UnsupportedTopology(RuntimeError):
    """classical_oracle cannot express this circuit."""


def default_phi_grid(points: int = DEFAULT_PHI_POINTS) -> list:
    if points < 3:
        raise ValueError("phi grid needs at least 3 points")
    return [TWO_PI * k / points for k in range(points)]


def resolve_workers(explicit: Optional[int] = None) -> int:
    """Worker count: explicit arg, else REDUXIM_THREADS, else min(cpus, 8)."""
    if explicit is not None and explicit > 0:
        return int(explicit)
    env = os.environ.get("REDUXIM_THREADS", "").strip()
    if env:
        n = int(env)
        if n > 0:
            return n
    return min(os.cpu_count() or 1, 8)


# ---------------------------------------------------------------------------
# result containers


@dataclass(frozen=True)
class ScenarioConfig:
    """Fully resolved description of one scenario run.

    `params` carries the scenario-specific knobs (geometry scale, splitter
    ratio, foil transmission, phase value or sweep grid, ...); construction
    checks the cross-scenario invariants.  Physics bounds on individual
    parameters are enforced by the scenario runners themselves.
    """

    scenario: str
    params: dict
    trials: int
    seed: int

    def __post_init__(self):
        if not self.scenario:
            raise ValueError("scenario id must not be empty")
        if int(self.trials) < 1:
            raise ValueError("trials must be >= 1")
        for key, value in self.params.items():
            if isinstance(value, (list, tuple)) and not value:
                raise ValueError(f"{key} grid must not be empty")


@dataclass
class EnsembleStats:
    """Counter tallies of one ensemble with derived frequencies."""

    n_trials: int
    counts: dict
    eta: Optional[float] = None  # P(D2)/P(none) for interaction-free runs

    def __post_init__(self):
        if sum(self.counts.values()) != self.n_trials:
            raise ValueError("counts must sum to the number of trials")

    def frequency(self, key: str) -> float:
        return self.counts.get(key, 0) / self.n_trials

    def stderr(self, key: str) -> float:
        return binomial_stderr(self.frequency(key), self.n_trials)


@dataclass
class InterferenceScan:
    """A fringe scan: per-phase counter tallies plus the fitted sinusoid."""

    phi_grid: list
    values: list  # frequency of the bright counter per phi
    counts: list  # counter dict per phi
    n_per_point: int
    c0: float
    c1: float
    phi0: float
    visibility: float
    normalized_amplitude: Optional[float] = None  # c1 relative to reference
    i0_max: Optional[float] = None  # reference fringe extrema
    i0_min: Optional[float] = None
    absorbed_fraction: Optional[float] = None
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError("visibility must lie in [0, 1]")
        if self.normalized_amplitude is not None and self.normalized_amplitude < 0:
            raise ValueError("normalized amplitude must be >= 0")


@dataclass
class BornScreenResult:
    profile: list
    n_trials: int
    counts: list
    frequencies: list
    chi2: float
    p_value: float


@dataclass
class DelayedChoiceResult:
    policy: str
    by_choice: dict  # choice value -> EnsembleStats
    outcomes: Optional[list] = None  # per-trial (choice, counter) when kept


@dataclass
class EntangledScanResult:
    order: str
    phi_grid: list
    n_per_point: int
    joint_counts: list  # per phi: {"AD1:V|BD1:V": n, ...}
    bob_given_cv: list  # P(Bob D1 | Alice C_V) per phi
    bob_given_ch: list  # P(Bob D1 | Alice C_H) per phi
    alice_cv_marginal: list  # P(Alice C_V) per phi
    cv_scan: InterferenceScan = None


# ---------------------------------------------------------------------------
# geometry constants (meters); equal-length arms recombine coherently

_SRC = 0.25
_ARM = 0.25
_DET = 0.25
_OFF_AXIS = 0.3  # direction separating sibling branches in momentum space


def _wire_mzi(g: CircuitGraph, prefix: str, entry: Component, entry_port: int,
              phi: float, scale: float = 1.0,
              pass_polarization: Optional[Polarization] = None,
              bs2_identity: bool = False,
              d1: str = "D1", d2: str = "D2"):
    """Balanced Mach-Zehnder from `entry`'s out port: BS1, two arms (phase
    shifter in the transmitted arm), BS2, detectors on both outputs.  The
    cross output (port 1) is bright at phi = 0 and carries label `d1`."""
    bs1 = g.add(BeamSplitter(prefix + "BS1", 0.5))
    ps = g.add(PhaseShifter(prefix + "PS", phi))
    m = g.add(Mirror(prefix + "M"))
    bs2 = g.add(BeamSplitter(prefix + "BS2", 0.5,
                             pass_polarization=pass_polarization,
                             identity=bs2_identity))
    det1 = g.add(Detector(prefix + d1))
    det2 = g.add(Detector(prefix + d2))
    g.connect(entry, entry_port, bs1, 0, _SRC * scale)
    g.connect(bs1, 0, ps, 0, _ARM * scale, direction=0.0)
    g.connect(ps, 0, bs2, 0, _ARM * scale, direction=0.0)
    g.connect(bs1, 1, m, 0, _ARM * scale, direction=_OFF_AXIS)
    g.connect(m, 0, bs2, 1, _ARM * scale, direction=_OFF_AXIS)
    g.connect(bs2, 1, det1, 0, _DET * scale, direction=0.0)
    g.connect(bs2, 0, det2, 0, _DET * scale, direction=0.1)
    return bs2


def _single_branch_system(edge):
    def make(stream):
        p = Packet(alpha1=PhaseConstant(TWO_PI * stream.random()))
        p.branches.append(Branch(id=1, amplitude=complex(1.0),
                                 polarization=Polarization.H, edge=edge))
        return p
    return make


def build_circuit(params: dict):
    """Build the graph for one scenario parameterisation.

    Returns (graph, make_system, meta) where make_system(stream) creates a
    fresh packet/pair for one trial and meta carries builder facts such as
    the delayed-choice node and time window.
    """
    kind = params["circuit"]
    g = CircuitGraph()
    meta = {}

    if kind == "fig1":
        scale = float(params.get("distance_scale", 1.0))
        variant = params.get("variant", "a")
        src = g.add(Source("S"))
        bs = g.add(BeamSplitter("BS", 0.5))
        d1 = g.add(Detector("D1"))
        d2 = g.add(Detector("D2"))
        e0 = g.connect(src, 0, bs, 0, _SRC)
        if variant == "a":
            g.connect(bs, 0, d1, 0, 0.5 * scale, direction=0.0)
            g.connect(bs, 1, d2, 0, 0.5 * scale, direction=_OFF_AXIS)
        else:
            # far detector: its branch arrives only after the near branch's
            # first contraction decision has already resolved
            g.connect(bs, 0, d1, 0, 0.5, direction=0.0)
            g.connect(bs, 1, d2, 0, 1.0 * scale, direction=_OFF_AXIS)
        make = _single_branch_system(e0)

    elif kind == "ev":
        T = float(params["T"])
        if not 0.0 < T < 1.0:
            raise ValueError("splitter transmission must lie in (0, 1)")
        present = bool(params["object_present"])
        src = g.add(Source("S"))
        bs1 = g.add(BeamSplitter("BS1", T))
        m1 = g.add(Mirror("M1"))
        bs2 = g.add(BeamSplitter("BS2", 1.0 - T))
        d1 = g.add(Detector("D1"))
        d2 = g.add(Detector("D2"))
        e0 = g.connect(src, 0, bs1, 0, _SRC)
        g.connect(bs1, 0, m1, 0, _ARM, direction=0.0)
        g.connect(m1, 0, bs2, 0, _ARM, direction=0.0)
        if present:
            obj = g.add(ObjectAbsorber("O"))
            g.connect(bs1, 1, obj, 0, _ARM, direction=_OFF_AXIS)
        else:
            m2 = g.add(Mirror("M2"))
            g.connect(bs1, 1, m2, 0, _ARM, direction=_OFF_AXIS)
            g.connect(m2, 0, bs2, 1, _ARM, direction=_OFF_AXIS)
        g.connect(bs2, 1, d1, 0, _DET, direction=0.0)
        g.connect(bs2, 0, d2, 0, _DET, direction=0.1)
        make = _single_branch_system(e0)

    elif kind == "visibility":
        # a 1:99 splitter diverts almost everything into absorber A before
        # the surviving hundredth enters a balanced interferometer
        phi = float(params.get("phi", 0.0))
        src = g.add(Source("S"))
        bs0 = g.add(BeamSplitter("BS0", 0.01))
        absorber = g.add(ObjectAbsorber("A"))
        e0 = g.connect(src, 0, bs0, 0, _SRC)
        g.connect(bs0, 1, absorber, 0, 0.001, direction=_OFF_AXIS)
        _wire_mzi(g, "", bs0, 0, phi, d1="D", d2="D2")
        make = _single_branch_system(e0)

    elif kind == "delayed":
        policy = params.get("policy", "in")
        src = g.add(Source("S"))
        bs2 = _wire_mzi(g, "", src, 0, 0.0, bs2_identity=(policy == "out"))
        e0 = src.out_edges[0]
        t_bs1 = e0.flight_time
        t_bs2 = t_bs1 + 2 * _ARM / SPEED_OF_LIGHT
        meta["choice_node"] = bs2.label
        meta["choice_time"] = 0.5 * (t_bs1 + t_bs2)
        make = _single_branch_system(e0)

    elif kind == "partial":
        a = float(params["a"])
        phi = float(params.get("phi", 0.0))
        src = g.add(Source("S"))
        bs1 = g.add(BeamSplitter("BS1", 0.5))
        foil = g.add(PartialFoil("F", a))
        sink = g.add(Sink("FS"))
        ps = g.add(PhaseShifter("PS", phi))
        bs2 = g.add(BeamSplitter("BS2", 0.5))
        d = g.add(Detector("D"))
        d2 = g.add(Detector("D2"))
        e0 = g.connect(src, 0, bs1, 0, _SRC)
        g.connect(bs1, 0, foil, 0, _ARM, direction=0.0)
        g.connect(foil, 0, bs2, 0, _ARM, direction=0.0)
        g.connect(foil, 1, sink, 0, 0.3, direction=0.5)
        g.connect(bs1, 1, ps, 0, _ARM, direction=_OFF_AXIS)
        # the other arm is longer by the foil thickness so both arms
        # recombine in step (the residue falls inside co-arrival tolerance)
        g.connect(ps, 0, bs2, 1, _ARM + foil.interaction_length,
                  direction=_OFF_AXIS)
        g.connect(bs2, 1, d, 0, _DET, direction=0.0)
        g.connect(bs2, 0, d2, 0, _DET, direction=0.1)
        make = _single_branch_system(e0)

    elif kind == "chopper":
        a = float(params["a"])
        phi = float(params.get("phi", 0.0))
        src = g.add(Source("S"))
        ch = g.add(Chopper("CH", a))
        e0 = g.connect(src, 0, ch, 0, _SRC)
        _wire_mzi(g, "", ch, 0, phi, d1="D", d2="D2")
        make = _single_branch_system(e0)

    elif kind == "born":
        weights = [float(w) for w in params["profile"]]
        if len(weights) < 2:
            raise ValueError("profile needs at least 2 pixels")
        if any(w <= 0 for w in weights):
            raise ValueError("profile weights must be positive")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ValueError("profile weights must sum to 1")
        src = g.add(Source("S"))
        prev, prev_port = src, 0
        remaining = 1.0
        k = len(weights)
        for i, w in enumerate(weights[:-1]):
            bs = g.add(BeamSplitter(f"BS{i}", min(1.0, w / remaining)))
            g.connect(prev, prev_port, bs, 0, 0.05 if i else _SRC)
            pix = g.add(Detector(f"P{i}"))
            g.connect(bs, 0, pix, 0, 0.5 - 0.05 * i, direction=0.05 * (i + 1))
            prev, prev_port = bs, 1
            remaining -= w
        last = g.add(Detector(f"P{k - 1}"))
        g.connect(prev, prev_port, last, 0, 0.5 - 0.05 * (k - 1),
                  direction=0.05 * k)
        make = _single_branch_system(src.out_edges[0])

    else:
        raise ValueError(f"unknown circuit kind {kind!r}")

    g.validate()
    return g, make, meta


def build_entangled_circuit(params: dict):
    """Two polarization-selective interferometers fed by one correlated pair."""
    phi = float(params.get("phi", 0.0))
    order = params.get("order", "alice-first")
    alice_scale = 0.6 if order == "alice-first" else 1.6
    g = CircuitGraph()
    src_a = g.add(Source("SA"))
    src_b = g.add(Source("SB"))
    _wire_mzi(g, "A", src_a, 0, 0.0, scale=alice_scale,
              pass_polarization=Polarization.H)
    _wire_mzi(g, "B", src_b, 0, phi, scale=1.0,
              pass_polarization=Polarization.H)
    ea = src_a.out_edges[0]
    eb = src_b.out_edges[0]
    g.validate()

    def make(stream):
        pa = Packet(alpha1=PhaseConstant(TWO_PI * stream.random()))
        pa.branches.append(Branch(id=1, amplitude=complex(SQRT_HALF),
                                  polarization=Polarization.H, edge=ea))
        pa.branches.append(Branch(id=2, amplitude=complex(SQRT_HALF),
                                  polarization=Polarization.V, edge=ea))
        pb = Packet(alpha1=PhaseConstant(TWO_PI * stream.random()))
        pb.branches.append(Branch(id=1, amplitude=complex(SQRT_HALF),
                                  polarization=Polarization.H, edge=eb))
        pb.branches.append(Branch(id=2, amplitude=complex(SQRT_HALF),
                                  polarization=Polarization.V, edge=eb))
        return EntangledPair(pa, pb)

    return g, make, {}


# ---------------------------------------------------------------------------
# trial kernels (module-level so worker processes can import them)


def _outcome_key(outcome: tuple) -> str:
    kind, label, _pol = outcome
    if kind in ("click", "absorbed"):
        return label
    return kind  # "none" / "blocked"


def _single_kernel(task):
    params, master, label, start, stop, n_total, keep = task
    graph, make, meta = build_circuit(params)
    stream = TrialStream(master, label)
    policy = params.get("policy")
    coins = None
    if policy == "coinflip":
        gen = derive_stream(master, label + "/coins", 0).generator
        coins = gen.random(n_total) < 0.5
    counts = Counter()
    outcomes = [] if keep else None
    notes = Counter()
    renorm_product = 0.0
    for i in range(start, stop):
        stream.seek(i)
        system = make(stream)
        choices = None
        choice_tag = ""
        if policy == "coinflip":
            insert = bool(coins[i])
            choices = [(meta["choice_node"], meta["choice_time"], insert)]
            choice_tag = "in" if insert else "out"
        res = run_trial(graph, system, stream, choices=choices)
        key = _outcome_key(res.outcome(0))
        counts[key] += 1
        rn = res.notes
        if rn:
            if rn.get("foil_matches"):
                notes["contact_trials"] += 1
            if rn.get("foil_contracted"):
                notes["contract_trials"] += 1
            if "foil_renorm_factor" in rn:
                notes["vanish_trials"] += 1
                renorm_product += rn["foil_renorm_factor"]
        if keep:
            outcomes.append((choice_tag, key))
    notes_out = dict(notes)
    notes_out["renorm_sum"] = renorm_product
    return counts, outcomes, notes_out


def _entangled_kernel(task):
    params, master, label, start, stop, n_total, keep = task
    graph, make, _meta = build_entangled_circuit(params)
    stream = TrialStream(master, label)
    counts = Counter()
    outcomes = [] if keep else None
    for i in range(start, stop):
        stream.seek(i)
        pair = make(stream)
        res = run_trial(graph, pair, stream)
        ka, la, pa = res.outcome(0)
        kb, lb, pb = res.outcome(1)
        key = f"{la if ka == 'click' else ka}:{pa or '-'}" \
              f"|{lb if kb == 'click' else kb}:{pb or '-'}"
        counts[key] += 1
        if keep:
            outcomes.append(key)
    return counts, outcomes, {}


_KERNELS = {"single": _single_kernel, "entangled": _entangled_kernel}


def _kernel_chunk(payload):
    kernel, task = payload
    return _KERNELS[kernel](task)


def _run_trials(kernel: str, params: dict, master: int, label: str,
                start: int, stop: int, *, n_total: Optional[int] = None,
                workers: Optional[int] = None, keep: bool = False):
    """Run trials [start, stop) and merge worker tallies."""
    n = stop - start
    if n <= 0:
        raise ValueError("trial count must be >= 1")
    if n_total is None:
        n_total = stop
    workers = resolve_workers(workers)
    if workers <= 1 or n < 2 * workers:
        return _kernel_chunk((kernel, (params, master, label, start, stop,
                                       n_total, keep)))
    step = -(-n // workers)
    payloads = []
    lo = start
    while lo < stop:
        hi = min(lo + step, stop)
        payloads.append((kernel, (params, master, label, lo, hi, n_total, keep)))
        lo = hi
    counts = Counter()
    outcomes = [] if keep else None
    notes = Counter()
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for c, o, nt in pool.map(_kernel_chunk, payloads):
            counts.update(c)
            if keep:
                outcomes.extend(o)
            for k, v in nt.items():
                notes[k] += v
    return counts, outcomes, dict(notes)


# ---------------------------------------------------------------------------
# scenario runners


def run_fig1(variant: str, n_trials: int, seed: int, *,
             distance_scale: float = 1.0, workers: Optional[int] = None,
             keep_outcomes: bool = False):
    params = {"circuit": "fig1", "variant": variant,
              "distance_scale": distance_scale}
    counts, outcomes, _ = _run_trials(
        "single", params, seed, f"fig1{variant}", 0, int(n_trials),
        workers=workers, keep=keep_outcomes)
    stats = EnsembleStats(int(n_trials), dict(counts))
    return (stats, outcomes) if keep_outcomes else stats


def run_elitzur_vaidman(object_present: bool, T: float, n_trials: int,
                        seed: int, *, workers: Optional[int] = None) -> EnsembleStats:
    params = {"circuit": "ev", "T": float(T), "object_present": object_present}
    counts, _, _ = _run_trials("single", params, seed, "elitzur-vaidman",
                               0, int(n_trials), workers=workers)
    mapped = {"D1": counts.get("D1", 0), "D2": counts.get("D2", 0),
              "none": counts.get("O", 0) + counts.get("none", 0)}
    eta = None
    if object_present and mapped["none"] > 0:
        eta = mapped["D2"] / mapped["none"]
    return EnsembleStats(int(n_trials), mapped, eta=eta)


def _fit_scan(phi_grid, values):
    c0, c1, phi0 = fit_fringe(phi_grid, values)
    if c0 <= 0.0:
        vis = 0.0
    else:
        vis = min(1.0, max(0.0, c1 / c0))
    return c0, c1, phi0, vis


def run_visibility(mode: str, n_trials: int, seed: int, *,
                   phi_grid: Optional[list] = None,
                   workers: Optional[int] = None) -> InterferenceScan:
    """Fringe visibility bookkeeping for the 1:99 diverted interferometer.

    Classical mode propagates wave intensities analytically: the fringes on
    top of the strong beam have visibility I_weak/I_strong = 0.01 by the
    intensity-ratio convention.  Quantum mode runs packet trials: 99% of
    packets contract inside the absorber and are never recorded; recorded
    ones carry the full interference contrast.
    """
    grid = list(phi_grid) if phi_grid is not None else default_phi_grid()
    if mode == "classical":
        i_strong = 0.5 * 0.5
        i_weak = 0.5 * 0.5 * 0.01
        values = [i_strong + i_weak
                  + 2.0 * math.sqrt(i_strong * i_weak) * math.cos(p)
                  for p in grid]
        visibility = i_weak / i_strong
        c0, c1, phi0 = fit_fringe(grid, values)
        return InterferenceScan(
            phi_grid=grid, values=values, counts=[{} for _ in grid],
            n_per_point=0, c0=c0, c1=c1, phi0=phi0, visibility=visibility,
            absorbed_fraction=None,
            notes={"i_strong": i_strong, "i_weak": i_weak,
                   "convention": "intensity-ratio"})
    if mode != "quantum":
        raise ValueError("mode must be 'classical' or 'quantum'")

    n = int(n_trials)
    per_point = []
    values = []
    absorbed = 0
    for p_idx, phi in enumerate(grid):
        params = {"circuit": "visibility", "phi": phi}
        counts, _, _ = _run_trials("single", params, seed, "visibility",
                                   p_idx * n, (p_idx + 1) * n, workers=workers)
        per_point.append(dict(counts))
        values.append(counts.get("D", 0) / n)
        absorbed += counts.get("A", 0)
    c0, c1, phi0, vis = _fit_scan(grid, values)
    return InterferenceScan(
        phi_grid=grid, values=values, counts=per_point, n_per_point=n,
        c0=c0, c1=c1, phi0=phi0, visibility=vis,
        absorbed_fraction=absorbed / (n * len(grid)),
        notes={"convention": "fitted-contrast"})


def run_delayed_choice(policy: str, n_trials: int, seed: int, *,
                       workers: Optional[int] = None,
                       keep_outcomes: bool = False) -> DelayedChoiceResult:
    if policy not in ("in", "out", "coinflip"):
        raise ValueError("policy must be 'in', 'out' or 'coinflip'")
    n = int(n_trials)
    params = {"circuit": "delayed", "policy": policy}
    counts, outcomes, _ = _run_trials("single", params, seed, "delayed-choice",
                                      0, n, workers=workers, keep=True)
    by_choice = {}
    if policy == "coinflip":
        split = {"in": Counter(), "out": Counter()}
        for tag, key in outcomes:
            split[tag][key] += 1
        for tag, c in split.items():
            by_choice[tag] = EnsembleStats(sum(c.values()), dict(c))
    else:
        by_choice[policy] = EnsembleStats(n, dict(counts))
    return DelayedChoiceResult(policy=policy, by_choice=by_choice,
                               outcomes=outcomes if keep_outcomes else None)


def run_partial_absorption(a_grid, phi_grid, n_trials: int, seed: int, *,
                           absorber: str = "foil",
                           workers: Optional[int] = None) -> dict:
    """Fringe scans per transmission a, amplitudes normalized to the a = 1 run.

    `n_trials` is the per-scan budget, split evenly over the phase grid.
    Returns {a: InterferenceScan}; the a = 1.0 reference is always included.
    """
    if absorber not in ("foil", "chopper"):
        raise ValueError("absorber must be 'foil' or 'chopper'")
    grid = list(phi_grid) if phi_grid is not None else default_phi_grid()
    n_pt = max(1, int(n_trials) // len(grid))
    circuit = "partial" if absorber == "foil" else "chopper"

    def scan_for(a: float, label: str) -> InterferenceScan:
        per_point, values = [], []
        notes = Counter()
        for p_idx, phi in enumerate(grid):
            params = {"circuit": circuit, "a": a, "phi": phi}
            counts, _, nt = _run_trials("single", params, seed, label,
                                        p_idx * n_pt, (p_idx + 1) * n_pt,
                                        workers=workers)
            per_point.append(dict(counts))
            values.append(counts.get("D", 0) / n_pt)
            for k, v in nt.items():
                notes[k] += v
        c0, c1, phi0, vis = _fit_scan(grid, values)
        n_all = n_pt * len(grid)
        note_out = {}
        if absorber == "foil":
            note_out["q1"] = notes["contact_trials"] / n_all
            contacts = notes["contact_trials"]
            note_out["q2"] = (notes["contract_trials"] / contacts) if contacts else 0.0
            vanished = notes["vanish_trials"]
            note_out["f"] = (notes["renorm_sum"] / vanished) if vanished else 1.0
        return InterferenceScan(
            phi_grid=grid, values=values, counts=per_point, n_per_point=n_pt,
            c0=c0, c1=c1, phi0=phi0, visibility=vis, notes=note_out)

    reference = scan_for(1.0, f"partial/{absorber}/ref")
    ref_c1 = reference.c1
    reference.normalized_amplitude = 1.0 if ref_c1 > 0 else 0.0
    reference.i0_max = reference.c0 + reference.c1
    reference.i0_min = reference.c0 - reference.c1
    result = {}
    for a in a_grid:
        a = float(a)
        if not 0.0 < a <= 1.0:
            raise ValueError("foil transmission a must lie in (0, 1]")
        if a == 1.0:
            result[a] = reference
            continue
        scan = scan_for(a, f"partial/{absorber}")
        scan.normalized_amplitude = scan.c1 / ref_c1 if ref_c1 > 0 else 0.0
        scan.i0_max = reference.i0_max
        scan.i0_min = reference.i0_min
        result[a] = scan
    if 1.0 not in result:
        result[1.0] = reference
    return result


def run_entangled_delayed_choice(phi_grid, order: str, n_per_point: int,
                                 seed: int, *,
                                 workers: Optional[int] = None) -> EntangledScanResult:
    if order not in ("alice-first", "bob-first"):
        raise ValueError("order must be 'alice-first' or 'bob-first'")
    grid = list(phi_grid) if phi_grid is not None else default_phi_grid()
    n = int(n_per_point)
    joint, b_cv, b_ch, a_cv = [], [], [], []
    for p_idx, phi in enumerate(grid):
        params = {"circuit": "entangled", "phi": phi, "order": order}
        counts, _, _ = _run_trials("entangled", params, seed,
                                   f"entangled/{order}", p_idx * n,
                                   (p_idx + 1) * n, workers=workers)
        joint.append(dict(counts))
        cv = ch = cv_bd1 = ch_bd1 = 0
        for key, c in counts.items():
            alice, bob = key.split("|")
            apol = alice.rsplit(":", 1)[1]
            blabel = bob.rsplit(":", 1)[0]
            if apol == "V":
                cv += c
                if blabel == "BD1":
                    cv_bd1 += c
            elif apol == "H":
                ch += c
                if blabel == "BD1":
                    ch_bd1 += c
        b_cv.append(cv_bd1 / cv if cv else 0.0)
        b_ch.append(ch_bd1 / ch if ch else 0.0)
        a_cv.append(cv / n)
    c0, c1, phi0, vis = _fit_scan(grid, b_cv)
    cv_scan = InterferenceScan(
        phi_grid=grid, values=b_cv, counts=joint, n_per_point=n,
        c0=c0, c1=c1, phi0=phi0, visibility=vis,
        notes={"conditioned_on": "alice C_V"})
    return EntangledScanResult(order=order, phi_grid=grid, n_per_point=n,
                               joint_counts=joint, bob_given_cv=b_cv,
                               bob_given_ch=b_ch, alice_cv_marginal=a_cv,
                               cv_scan=cv_scan)


def run_born_screen(profile, n_trials: int, seed: int, *,
                    workers: Optional[int] = None) -> BornScreenResult:
    weights = [float(w) for w in profile]
    params = {"circuit": "born", "profile": weights}
    n = int(n_trials)
    counts, _, _ = _run_trials("single", params, seed, "born-screen", 0, n,
                               workers=workers)
    per_pixel = [counts.get(f"P{i}", 0) for i in range(len(weights))]
    stat, p = chi_square(per_pixel, weights)
    return BornScreenResult(profile=weights, n_trials=n, counts=per_pixel,
                            frequencies=[c / n for c in per_pixel],
                            chi2=stat, p_value=p)


def run_point(params: dict, n_trials: int, seed: int, label: str, *,
              workers: Optional[int] = None) -> EnsembleStats:
    """One ensemble of a raw circuit parameterisation, counters by node label."""
    counts, _, _ = _run_trials("single", params, seed, label, 0, int(n_trials),
                               workers=workers)
    return EnsembleStats(int(n_trials), dict(counts))


def run_spreading(sigma_cy: float, flight_distance: float,
                  relative_bandwidth: float,
                  species: str = "massive") -> dict:
    sp = Species(species)
    params = SpreadingParams(coherence_length=sigma_cy,
                             flight_distance=flight_distance,
                             relative_bandwidth=relative_bandwidth,
                             species=sp)
    sigma_y = spread_length(params)
    increase = 0.0 if sp is Species.PHOTON else flight_distance * relative_bandwidth
    return {"sigma_cy": sigma_cy, "flight_distance": flight_distance,
            "relative_bandwidth": relative_bandwidth, "species": sp.value,
            "spread_increase": increase, "sigma_y": sigma_y}


# ---------------------------------------------------------------------------
# closed-form oracle


def classical_oracle(graph: CircuitGraph) -> dict:
    """Expected terminal probabilities from plain amplitude propagation.

    Supports static single-source circuits.  Complete absorbers and
    detectors terminate their incident weight; a partial foil forwards
    sqrt(a) and diverts sqrt(1-a); sinks collect what reaches them.
    """
    sources = [nd for nd in graph.nodes if isinstance(nd, Source)]
    if len(sources) != 1:
        raise UnsupportedTopology("oracle requires exactly one source")
    if any(isinstance(nd, Chopper) for nd in graph.nodes):
        raise UnsupportedTopology("random classical gates have no amplitude form")

    order, indeg = [], {}
    for nd in graph.nodes:
        indeg[nd.index] = len(nd.in_edges)
    ready = [nd for nd in graph.nodes if indeg[nd.index] == 0]
    while ready:
        nd = ready.pop()
        order.append(nd)
        for e in nd.out_edges.values():
            indeg[e.dst.index] -= 1
            if indeg[e.dst.index] == 0:
                ready.append(e.dst)
    if len(order) != len(graph.nodes):
        raise UnsupportedTopology("circuit graph has a cycle")

    amp_in: dict = {}

    def feed(edge, pol, amp):
        key = (edge.dst.index, edge.dst_port, pol)
        amp_in[key] = amp_in.get(key, 0j) + amp

    probs: dict = {}
    src = sources[0]
    feed(src.out_edges[0], Polarization.H, complex(1.0))

    for nd in order:
        ins = {(port, pol): amp_in.pop((nd.index, port, pol))
               for port in (0, 1) for pol in Polarization
               if (nd.index, port, pol) in amp_in}
        if not ins:
            continue
        if isinstance(nd, (Detector, ObjectAbsorber, Sink)):
            w = sum(abs(a) ** 2 for a in ins.values())
            probs[nd.label] = probs.get(nd.label, 0.0) + w
        elif isinstance(nd, PartialFoil):
            for (port, pol), a in ins.items():
                feed(nd.out_edges[0], pol, math.sqrt(nd.a) * a)
                if nd.a < 1.0:
                    feed(nd.out_edges[1], pol, math.sqrt(1.0 - nd.a) * a)
        elif isinstance(nd, BeamSplitter):
            pols = {pol for (_port, pol) in ins}
            for pol in pols:
                a0 = ins.get((0, pol), 0j)
                a1 = ins.get((1, pol), 0j)
                if nd.identity or nd.pass_polarization == pol:
                    o0, o1 = a0, a1
                else:
                    rt, rr = math.sqrt(nd.T), math.sqrt(nd.R)
                    o0 = rt * a0 + 1j * rr * a1
                    o1 = 1j * rr * a0 + rt * a1
                for port, amp in ((0, o0), (1, o1)):
                    if amp != 0:
                        edge = nd.out_edges.get(port)
                        if edge is None:
                            raise UnsupportedTopology(
                                f"{nd.label} port {port} is unwired but carries weight")
                        feed(edge, pol, amp)
        elif isinstance(nd, PhaseShifter):
            for (_port, pol), a in ins.items():
                feed(nd.out_edges[0], pol, nd.factor * a)
        elif isinstance(nd, (Mirror, Source)):
            for (_port, pol), a in ins.items():
                feed(nd.out_edges[0], pol, a)
        else:
            raise UnsupportedTopology(f"no amplitude rule for {nd.kind}")

    total = sum(probs.values())
    if abs(total - 1.0) > 1e-9:
        raise UnsupportedTopology(f"propagated weight {total} does not close to 1")
    return probs
