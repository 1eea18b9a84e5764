"""Seeded random streams, goodness-of-fit tests and fringe fitting.

Streams are derived from a (master seed, label, index) triple so that any
trial or helper stream can be reconstructed independently of worker count or
call order.  All uniform draws come from PCG64; helpers that need other
distributions derive them from uniforms by inverse CDF so that the number of
raw draws consumed per value is always one (replay determinism).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special


class DegenerateBinError(ValueError):
    """A chi-square bin has expected count below the validity floor."""


class RankDeficientError(ValueError):
    """Not enough distinct grid points to fit a fringe."""


def _label_digest(label: str) -> int:
    # stable across platforms and processes, unlike hash()
    return int.from_bytes(hashlib.blake2b(label.encode(), digest_size=8).digest(), "big")


@dataclass
class SeededStream:
    """A reproducible uniform random stream addressed by (master, label, index)."""

    master: int
    label: str
    index: int = 0
    counter: int = field(default=0, init=False)
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        seq = np.random.SeedSequence(entropy=(self.master, _label_digest(self.label), self.index))
        self._gen = np.random.Generator(np.random.PCG64(seq))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def random(self, n: int | None = None):
        """Uniform draw(s) in [0, 1). Consumes exactly one raw draw per value."""
        if n is None:
            self.counter += 1
            return self._gen.random()
        self.counter += int(n)
        return self._gen.random(n)

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def angle(self) -> float:
        """Uniform angle in [0, 2*pi)."""
        return 2.0 * math.pi * self.random()

    def exponential(self, scale: float) -> float:
        """Inverse-CDF exponential; one raw draw, unlike the ziggurat method."""
        return -scale * math.log1p(-self.random())


def derive_stream(master: int, label: str, index: int = 0) -> SeededStream:
    """Deterministic, collision-resistant stream derivation."""
    return SeededStream(master=master, label=label, index=index)


class TrialStream:
    """One bit generator serving many trials at fixed stream offsets.

    Trial i reads from a dedicated span of a single counter-based (Philox)
    sequence, so per-trial draws are a pure function of (master, label,
    trial index): chunking trials across workers, or two runs sharing a
    label, cannot change any outcome.  A counter-based generator is required
    here; congruential generators develop lattice correlations between
    outputs sampled at power-of-two strides.

    Philox.advance moves the 256-bit block counter (one block = 4 doubles)
    and discards any partially consumed block, so seek() accounts for draws
    in ceil(n/4) blocks.
    """

    _TRIAL_BLOCKS = 1 << 62  # 2**64 doubles per trial
    _PERIOD = 1 << 256

    __slots__ = ("_bitgen", "_random", "_block", "_draws", "counter")

    def __init__(self, master: int, label: str):
        seq = np.random.SeedSequence(entropy=(master, _label_digest("trial/" + label)))
        self._bitgen = np.random.Philox(seq)
        self._random = np.random.Generator(self._bitgen).random
        self._block = 0  # block counter position of the bit generator
        self._draws = 0  # doubles drawn since the last seek
        self.counter = 0

    def seek(self, trial_index: int) -> None:
        target = trial_index * self._TRIAL_BLOCKS
        here = self._block + (self._draws + 3) // 4
        self._bitgen.advance((target - here) % self._PERIOD)
        self._block = target
        self._draws = 0

    def random(self) -> float:
        self._draws += 1
        self.counter += 1
        return self._random()

    def exponential(self, scale: float) -> float:
        return -scale * math.log1p(-self.random())


def chi_square(observed, expected) -> tuple[float, float]:
    """Pearson chi-square of observed counts against expected probabilities.

    Returns (statistic, p_value) with K-1 degrees of freedom.  Raises
    DegenerateBinError when any expected count N*p_k is below 5.
    """
    obs = np.asarray(observed, dtype=float)
    exp = np.asarray(expected, dtype=float)
    if obs.shape != exp.shape:
        raise ValueError("observed and expected must have the same length")
    if np.any(exp <= 0):
        raise ValueError("expected probabilities must be positive")
    total = float(np.sum(exp))
    if abs(total - 1.0) > 1e-9:
        raise ValueError("expected probabilities must sum to 1")
    n = float(np.sum(obs))
    exp_counts = exp * n
    if np.any(exp_counts < 5.0):
        raise DegenerateBinError(
            f"expected count below 5 in at least one bin (min {exp_counts.min():.3g})"
        )
    stat = float(np.sum((obs - exp_counts) ** 2 / exp_counts))
    dof = len(obs) - 1
    p = float(special.gammaincc(dof / 2.0, stat / 2.0))
    return stat, p


def fit_fringe(phi_grid, values) -> tuple[float, float, float]:
    """Least-squares fit of values ~ c0 + c1*cos(phi + phi0).

    Returns (c0, c1, phi0) with c1 >= 0.  Solved linearly via the expansion
    c0 + A*cos(phi) + B*sin(phi) with A = c1*cos(phi0), B = -c1*sin(phi0).
    """
    phi = np.asarray(phi_grid, dtype=float)
    val = np.asarray(values, dtype=float)
    if phi.shape != val.shape:
        raise ValueError("phi grid and values must have the same length")
    if phi.size < 3 or np.unique(phi).size < 3:
        raise RankDeficientError("need at least 3 distinct phase points")
    design = np.column_stack([np.ones_like(phi), np.cos(phi), np.sin(phi)])
    coef, _, rank, _ = np.linalg.lstsq(design, val, rcond=None)
    if rank < 3:
        raise RankDeficientError("phase grid is rank deficient")
    c0, a, b = (float(c) for c in coef)
    c1 = math.hypot(a, b)
    phi0 = math.atan2(-b, a) if c1 > 0 else 0.0
    return c0, c1, phi0


def binomial_stderr(p_hat: float, n: int) -> float:
    if n <= 0:
        return float("nan")
    return math.sqrt(max(p_hat * (1.0 - p_hat), 0.0) / n)
