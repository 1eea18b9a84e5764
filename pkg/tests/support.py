"""Shared closed-form laws and independent oracles used by the tests.

Everything here is computed from first principles (beam-splitter algebra and
the contract-or-vanish race), independently of the package internals, so the
tests compare the simulator against freestanding math rather than against
itself.
"""

import math

import numpy as np

ALPHA_S = 1.0 / 137.035999
TWO_PI = 2.0 * math.pi


def four_sigma(p, n):
    """4-sigma binomial tolerance for an observed frequency."""
    return 4.0 * math.sqrt(max(p * (1.0 - p), 1e-12) / n)


def circular_distance(a, b):
    d = abs(a - b) % TWO_PI
    return min(d, TWO_PI - d)


def discretized_race(weights, grid=20000):
    """Outcome distribution of the contract-or-vanish race, by brute force.

    The engine draws a fresh uniform phase constant before every decision and
    contracts when the matching-threshold fraction falls below the branch's
    renormalized weight.  Here we replace each draw by exhaustive enumeration
    over a uniform grid of phase-constant values and recurse over the attempt
    sequence, so the returned probabilities involve no sampling at all.

    weights: per-outcome weights in attempt order (need not be normalized).
    Returns a list of probabilities, one per input weight.
    """
    thresholds = (np.arange(grid) + 0.5) / grid
    out = [0.0] * len(weights)

    def recurse(start, live_total, prob):
        w = weights[start] / live_total
        p_hit = float(np.count_nonzero(thresholds <= w)) / grid
        if start == len(weights) - 1:
            # last live branch: renormalized weight is 1, contraction certain
            p_hit = 1.0
        out[start] += prob * p_hit
        if start + 1 < len(weights):
            recurse(start + 1, live_total - weights[start], prob * (1.0 - p_hit))

    recurse(0, float(sum(weights)), 1.0)
    return out


def ev_probabilities(T, object_present):
    """Interaction-free tester outcome probabilities.

    First splitter transmits T toward the inner mirror arm; the recombiner
    transmits 1-T.  With the object absent the device is tuned so the D2 port
    is dark; with it present the object arm weight is 1-T.
    """
    if not object_present:
        return {"D1": 1.0, "D2": 0.0, "none": 0.0}
    return {"none": 1.0 - T, "D1": T * T, "D2": T * (1.0 - T)}


def mzi_bright(phi):
    """Bright-port probability of a balanced two-path interferometer."""
    return (1.0 + math.cos(phi)) / 2.0


def foil_detector_probability(a, phi):
    """Bright-detector probability with an amplitude-a**0.5 foil in one arm."""
    return (1.0 + a + 2.0 * math.sqrt(a) * math.cos(phi)) / 4.0


def chopper_detector_probability(a, phi):
    """Bright-detector probability when whole packets are blocked w.p. 1-a."""
    return a * (1.0 + math.cos(phi)) / 2.0


def fringe_stats(values, phi):
    """Least-squares fringe fit [c0 + c1*cos(phi + phi0)] done independently."""
    phi = np.asarray(phi, dtype=float)
    design = np.stack([np.ones_like(phi), np.cos(phi), np.sin(phi)], axis=1)
    coef, *_ = np.linalg.lstsq(design, np.asarray(values, dtype=float), rcond=None)
    c0 = float(coef[0])
    c1 = float(math.hypot(coef[1], coef[2]))
    phi0 = float(math.atan2(-coef[2], coef[1])) if c1 > 0 else 0.0
    return c0, c1, phi0
