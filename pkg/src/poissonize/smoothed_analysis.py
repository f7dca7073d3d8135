"""Empirical checks of perturbed Khatri-Rao conditioning.

A base matrix M of shape n x C(n,2) gets an iid N(0, sigma^2) perturbation N,
and the trial measures sigma_min of the multilinear square (M+N)^(-:2), a
square C(n,2) x C(n,2) matrix, against the reference level sigma^2 / n^7.
The full Khatri-Rao square is recorded alongside; its least singular value
dominates the multilinear one, so every passed trial certifies both.

Two supporting checks live here as well: the leave-one-out lower bound on
sigma_min (distances to the spans of the remaining columns) and a Monte
Carlo anticoncentration estimate for the multilinear distance polynomial.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .tensor_linalg import khatri_rao, multilinear_kr_square, sigma_min

__all__ = [
    "FAMILIES",
    "SmoothedTrial",
    "base_matrix",
    "smoothed_trial",
    "run_smoothed",
    "rv_check",
    "anticoncentration_estimate",
]

FAMILIES = ("zero", "gaussian", "rank1")

_RV_SLACK = 1e-10


@dataclass
class SmoothedTrial:
    """One perturbation trial; passed means sigma_min_kr2 > bound."""

    family: str
    n: int
    sigma: float
    seed: int
    sigma_min_kr2: float
    sigma_min_kr_odot2: float
    bound: float
    passed: bool

    def __post_init__(self):
        if self.passed != (self.sigma_min_kr2 > self.bound):
            raise ValueError("passed flag contradicts the recorded values")

    def to_dict(self):
        return {
            "family": self.family,
            "n": self.n,
            "sigma": self.sigma,
            "seed": self.seed,
            "sigma_min_kr2": self.sigma_min_kr2,
            "sigma_min_kr_odot2": self.sigma_min_kr_odot2,
            "bound": self.bound,
            "passed": self.passed,
        }


def base_matrix(family, n, rng):
    """Base matrix of shape n x C(n,2) from one of the probe families.

    "zero" isolates the pure-noise case, "gaussian" a generic dense base,
    and "rank1" a worst-case-like base whose columns are all parallel.  The
    rank-1 base is scaled to unit RMS entries so all three families sit at
    a comparable magnitude.
    """
    n = int(n)
    if n < 3:
        raise ValueError("need n >= 3 for a nontrivial multilinear square")
    cols = n * (n - 1) // 2
    if family == "zero":
        return np.zeros((n, cols))
    if family == "gaussian":
        return rng.standard_normal((n, cols))
    if family == "rank1":
        scale = math.sqrt(n * cols)
        return scale * np.outer(rng.unit_vector(n), rng.unit_vector(cols))
    raise ValueError(f"unknown base matrix family: {family!r}")


def smoothed_trial(base, sigma, rng, family="custom"):
    """Perturb a base matrix and measure the conditioning of its squares.

    base must have shape n x C(n,2) so that the multilinear square is a
    square matrix and sigma_min is a genuine least singular value.
    """
    base = np.asarray(base, dtype=float)
    if base.ndim != 2:
        raise ValueError("base must be a matrix")
    n = base.shape[0]
    if base.shape[1] != n * (n - 1) // 2:
        raise ValueError(
            f"base must have shape ({n}, {n * (n - 1) // 2}), got {base.shape}"
        )
    sigma = float(sigma)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    perturbed = base + sigma * rng.standard_normal(base.shape)
    kr2 = float(sigma_min(multilinear_kr_square(perturbed)))
    odot2 = float(sigma_min(khatri_rao(perturbed, perturbed)))
    bound = sigma * sigma / float(n) ** 7
    return SmoothedTrial(
        family=family,
        n=n,
        sigma=sigma,
        seed=rng.seed,
        sigma_min_kr2=kr2,
        sigma_min_kr_odot2=odot2,
        bound=bound,
        passed=bool(kr2 > bound),
    )


def run_smoothed(families, n, sigma, trials, rng):
    """Independent trials per family with derived seeds, merge-order free."""
    results = []
    counter = 0
    for family in families:
        for _ in range(int(trials)):
            sub = rng.derive(counter)
            counter += 1
            results.append(smoothed_trial(base_matrix(family, n, sub), sigma, sub, family=family))
    return results


def rv_check(a):
    """Leave-one-out lower bound on the least singular value.

    lhs = min_i dist(C_i, span of the other columns) / sqrt(m) never exceeds
    sigma_min(A); a violation beyond slack 1e-10 means the distance or SVD
    computation is broken, not the inequality.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[1] < 2:
        raise ValueError("need a matrix with at least two columns")
    m = a.shape[1]
    distances = np.empty(m)
    for i in range(m):
        others = np.delete(a, i, axis=1)
        coef, *_ = np.linalg.lstsq(others, a[:, i], rcond=None)
        distances[i] = np.linalg.norm(a[:, i] - others @ coef)
    lhs = float(distances.min()) / math.sqrt(m)
    rhs = float(sigma_min(a))
    return {
        "lhs": lhs,
        "rhs": rhs,
        "holds": bool(lhs <= rhs + _RV_SLACK),
        "distances": distances,
    }


def anticoncentration_estimate(degree, eps, trials, rng, n=8, t=0.0, c_policy=1.0):
    """Monte Carlo small-ball probability of the distance polynomial.

    The polynomial is P(N) = sum over degree-subsets S of u_S prod_{i in S}
    (M_i + N_i) for a random unit coefficient vector u and a random Gaussian
    base column M, i.e. the quantity controlling the distance of a perturbed
    Khatri-Rao column to the span of the others.  P is normalized to zero
    mean and unit variance; the variance is exact, via the orthogonality of
    distinct multilinear monomials in iid standard Gaussians.

    Returns the fraction of trials with |P - t| <= eps next to the reference
    bound c_policy * degree * eps^(1/degree).
    """
    degree = int(degree)
    n = int(n)
    if degree < 1 or n <= degree:
        raise ValueError("need 1 <= degree < n")
    eps = float(eps)
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    trials = int(trials)
    if trials < 1:
        raise ValueError("need at least one trial")

    subsets = list(itertools.combinations(range(n), degree))
    u = rng.unit_vector(len(subsets))
    base = rng.standard_normal(n)

    coeffs = {}
    for weight, subset in zip(u, subsets):
        for r in range(degree + 1):
            for kept in itertools.combinations(subset, r):
                kept_set = set(kept)
                rest = [i for i in subset if i not in kept_set]
                coeffs[kept] = coeffs.get(kept, 0.0) + weight * float(
                    np.prod(base[rest])
                )
    mean = coeffs.pop((), 0.0)
    variance = math.fsum(c * c for c in coeffs.values())

    draws = rng.standard_normal((trials, n))
    values = np.zeros(trials)
    for kept, c in coeffs.items():
        values += c * np.prod(draws[:, kept], axis=1)
    normalized = values / math.sqrt(variance)

    empirical = float(np.mean(np.abs(normalized - t) <= eps))
    bound = float(c_policy) * degree * eps ** (1.0 / degree) if eps > 0 else 0.0
    return {
        "empirical": empirical,
        "bound": bound,
        "degree": degree,
        "eps": eps,
        "trials": trials,
        "mean_shift": float(mean),
        "variance": float(variance),
    }
