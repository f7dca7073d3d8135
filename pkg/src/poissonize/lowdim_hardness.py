"""Close mixture pairs from Gaussian kernel interpolation on point sets.

Interpolating a fixed smooth positive target through two disjoint point sets
and splitting the difference of the interpolants by coefficient sign yields
two normalized mixtures that are statistically close while their centers
stay separated.  Pigeonholing over component-count differences upgrades a
batch of such pairs to one with equal component counts, and the basic
Poissonization embeds any pair into a pair of noisy ICA models.

The kernel matrix is intrinsically ill-conditioned; that ill-conditioning is
the phenomenon, so the solver accepts instances by achieved residual rather
than rejecting by condition number.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.special import ndtr

from .distributions import (
    GmmParams,
    certified_tail_threshold,
    gmm_pdf,
    poisson_tail_threshold,
    sample_gmm,
)

__all__ = [
    "PointSet",
    "SignedMixture",
    "MixturePair",
    "IcaDescriptor",
    "DegeneratePairError",
    "KernelConditioningError",
    "kernel",
    "target_f",
    "compute_fill",
    "interpolate",
    "build_close_pair",
    "l1_distance",
    "pigeonhole_pair",
    "embed_as_ica",
    "equispaced_interleaved",
    "random_points",
    "pair_to_json",
    "pair_from_json",
]

_CUBE_TOL = 1e-12
_RESIDUAL_REL_TOL = 1e-8
_REFINE_STEPS = 4
_QUAD_RANGE = (-8.0, 9.0)


class DegeneratePairError(RuntimeError):
    """The interpolant difference has coefficients of only one sign."""


class KernelConditioningError(RuntimeError):
    """The kernel solve could not reach the required residual."""

    def __init__(self, residual, target):
        self.residual = float(residual)
        self.target = float(target)
        super().__init__(
            f"kernel solve residual {residual:.3e} exceeds target {target:.3e}"
        )


@dataclass
class PointSet:
    """Points in the unit cube together with their fill (covering radius)."""

    points: np.ndarray
    fill: float = 0.0

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.size == 0:
            raise ValueError("point set is empty")
        if np.any(self.points < -_CUBE_TOL) or np.any(self.points > 1.0 + _CUBE_TOL):
            raise ValueError("points must lie in the unit cube")
        self.fill = float(self.fill)
        if self.fill < 0:
            raise ValueError("fill must be nonnegative")

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def dimension(self):
        return self.points.shape[1]


@dataclass
class SignedMixture:
    """Kernel expansion sum_i w_i K(x_i, .) with coefficients of any sign."""

    centers: np.ndarray
    coefficients: np.ndarray
    residual: float = 0.0
    kernel_condition: float = 0.0

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.centers.shape[0],):
            raise ValueError("one coefficient per center required")

    def evaluate(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return kernel(x, self.centers) @ self.coefficients


@dataclass
class MixturePair:
    """Two normalized disjointly-centered mixtures and their measured gap."""

    p: GmmParams
    q: GmmParams
    l1_distance: float
    min_center_distance: float
    alpha: float = 1.0
    beta: float = 1.0
    fill: float = 0.0
    kernel_condition: float = 0.0

    def __post_init__(self):
        if self.p.n != self.q.n:
            raise ValueError("mixtures live in different dimensions")
        if self.min_center_distance <= 0:
            raise ValueError("center sets must be disjoint")
        cross = _cross_min_distance(self.p.means.T, self.q.means.T)
        if cross <= 0:
            raise ValueError("center sets must be disjoint")


def kernel(x, y):
    """Unit Gaussian kernel matrix (2 pi)^(-n/2) exp(-||x - y||^2 / 2)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.shape[1] != y.shape[1]:
        raise ValueError("dimension mismatch")
    n = x.shape[1]
    sq = ((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=2)
    return (2.0 * math.pi) ** (-0.5 * n) * np.exp(-0.5 * sq)


def target_f(x, n=None):
    """Positive target: the unit Gaussian kernel smoothed over the cube.

    f(x) = prod_j (Phi(x_j) - Phi(x_j - 1)), the closed form of the
    convolution of the kernel with the uniform density on [0, 1]^n.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if n is not None and x.shape[-1] != n:
        raise ValueError(f"expected points in dimension {n}")
    return np.prod(ndtr(x) - ndtr(x - 1.0), axis=-1)


def compute_fill(point_set, grid_resolution):
    """Upper bound on the covering radius via a regular grid sweep.

    Max over lattice points of the distance to the set, plus half the lattice
    cell diagonal so the result dominates the true fill.
    """
    grid_resolution = int(grid_resolution)
    if grid_resolution < 10:
        raise ValueError("need at least 10 grid points per axis")
    n = point_set.dimension
    axes = [np.linspace(0.0, 1.0, grid_resolution)] * n
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    pts = point_set.points
    block = max(1, (1 << 22) // max(pts.shape[0], 1))
    worst = 0.0
    for start in range(0, grid.shape[0], block):
        piece = grid[start : start + block]
        d2 = ((piece[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        worst = max(worst, float(d2.min(axis=1).max()))
    spacing = 1.0 / (grid_resolution - 1)
    return math.sqrt(worst) + 0.5 * math.sqrt(n) * spacing


def _solve_kernel(kmat, rhs):
    """Spectrum-clipped symmetric solve with extended-precision refinement.

    The right-hand side of our interpolation problems lies in the numerical
    range of the kernel operator, so clipping the spectrum at the rounding
    floor and refining drives the residual to that floor even when the full
    condition number is astronomically large.  Returns (solution, residual,
    condition estimate); eigenvalues at or below the clip make the condition
    estimate a lower bound.
    """
    vals, vecs = np.linalg.eigh(kmat)
    lam_max = float(vals[-1])
    if lam_max <= 0:
        raise KernelConditioningError(np.linalg.norm(rhs), 0.0)
    clip = lam_max * kmat.shape[0] * np.finfo(float).eps
    inv = np.where(vals > clip, 1.0 / np.maximum(vals, clip), 0.0)

    def solve(residual):
        return vecs @ (inv * (vecs.T @ residual))

    kmat_l = kmat.astype(np.longdouble)
    rhs_l = rhs.astype(np.longdouble)

    def residual_of(w):
        r = rhs_l - kmat_l @ w.astype(np.longdouble)
        return np.asarray(r, dtype=float), float(np.linalg.norm(np.asarray(r, dtype=float)))

    w = solve(rhs)
    best_w = w
    r, best_norm = residual_of(w)
    for _ in range(_REFINE_STEPS):
        w = w + solve(r)
        r, norm = residual_of(w)
        if norm < best_norm:
            best_w, best_norm = w, norm
        else:
            break
    condition = lam_max / max(float(vals[0]), clip)
    return best_w, best_norm, condition


def interpolate(point_set):
    """Signed kernel mixture matching the smooth target on the nodes.

    Solves K_X w = f(X) for the (positive definite, badly conditioned)
    kernel matrix; acceptance is by achieved residual, per-instance, with
    the condition estimate recorded on the result.
    """
    pts = point_set.points
    if pts.shape[0] > 1:
        d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        np.fill_diagonal(d2, np.inf)
        if d2.min() <= 0.0:
            raise ValueError("interpolation nodes must be distinct")
    kmat = kernel(pts, pts)
    fvals = np.atleast_1d(target_f(pts))
    coeffs, residual, condition = _solve_kernel(kmat, fvals)
    target = _RESIDUAL_REL_TOL * float(np.linalg.norm(fvals))
    if residual > target:
        raise KernelConditioningError(residual, target)
    return SignedMixture(pts, coeffs, residual=residual, kernel_condition=condition)


def _cross_min_distance(a, b):
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return float(np.sqrt(d2.min()))


def build_close_pair(x_set, y_set, rng=None, l1_samples=200_000):
    """Normalized mixture pair from the signed difference of interpolants.

    The difference f_X - f_Y is split by coefficient sign into p1 - p2; the
    normalizations alpha = sum p1, beta = sum p2 are recorded (both close to
    and at least about 1 when the interpolants are accurate).
    """
    if x_set.dimension != y_set.dimension:
        raise ValueError("point sets live in different dimensions")
    cross = _cross_min_distance(x_set.points, y_set.points)
    if cross <= _CUBE_TOL:
        raise ValueError("point sets must be disjoint")
    fx = interpolate(x_set)
    fy = interpolate(y_set)
    centers = np.vstack([x_set.points, y_set.points])
    coeffs = np.concatenate([fx.coefficients, -fy.coefficients])
    pos = coeffs > 0
    neg = coeffs < 0
    if not pos.any() or not neg.any():
        raise DegeneratePairError("interpolant difference is one-signed")
    alpha = float(coeffs[pos].sum())
    beta = float(-coeffs[neg].sum())
    n = centers.shape[1]
    eye = np.eye(n)
    p = GmmParams(centers[pos].T, coeffs[pos] / alpha, eye)
    q = GmmParams(centers[neg].T, -coeffs[neg] / beta, eye)
    gap = l1_distance(p, q, rng=rng, samples=l1_samples)
    return MixturePair(
        p=p,
        q=q,
        l1_distance=gap,
        min_center_distance=_cross_min_distance(centers[pos], centers[neg]),
        alpha=alpha,
        beta=beta,
        fill=max(x_set.fill, y_set.fill),
        kernel_condition=max(fx.kernel_condition, fy.kernel_condition),
    )


def l1_distance(p, q, method=None, rng=None, samples=200_000, return_error=False):
    """L1 distance between two mixture densities over all of R^n.

    Univariate instances integrate |p - q| by adaptive quadrature over a
    range holding all but < 1e-14 of both masses, with the stray mass added
    to the error report.  Higher dimensions use importance sampling from the
    balanced mixture (p + q)/2, whose weight |p - q| / m is bounded by 2;
    a relative error above 50% triggers an unreliable-estimate warning.
    """
    if p.n != q.n:
        raise ValueError("mixtures live in different dimensions")
    if method is None:
        method = "quadrature" if p.n == 1 else "monte-carlo"
    if method == "quadrature":
        if p.n != 1:
            raise ValueError("quadrature path is univariate")
        lo, hi = _QUAD_RANGE

        def gap(t):
            x = np.array([[t]])
            return abs(float(gmm_pdf(p, x)[0]) - float(gmm_pdf(q, x)[0]))

        breaks = np.unique(np.concatenate([p.means.ravel(), q.means.ravel()]))
        breaks = [float(b) for b in breaks if lo < b < hi]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", IntegrationWarning)
            value, err = quad(
                gap, lo, hi, points=breaks or None, limit=600, epsabs=1e-14
            )
        tail = _mass_outside(p, lo, hi) + _mass_outside(q, lo, hi)
        value = float(value)
        err = float(err) + tail
    elif method == "monte-carlo":
        if rng is None:
            raise ValueError("monte-carlo estimation needs an rng")
        samples = int(samples)
        half = samples // 2
        x = np.vstack([sample_gmm(p, half, rng), sample_gmm(q, samples - half, rng)])
        dp = gmm_pdf(p, x)
        dq = gmm_pdf(q, x)
        ratios = np.abs(dp - dq) / (0.5 * (dp + dq))
        value = float(ratios.mean())
        err = float(ratios.std(ddof=1)) / math.sqrt(samples)
        if err > 0.5 * max(value, 1e-300):
            warnings.warn(
                "L1 Monte Carlo estimate has relative error above 50%",
                RuntimeWarning,
                stacklevel=2,
            )
    else:
        raise ValueError("method must be 'quadrature' or 'monte-carlo'")
    if return_error:
        return value, err
    return value


def _mass_outside(gmm, lo, hi):
    """Unit-covariance mixture mass outside [lo, hi] (univariate)."""
    mus = gmm.means.ravel()
    return float(np.sum(gmm.weights * (ndtr(lo - mus) + ndtr(mus - hi))))


def random_points(count, dimension, rng):
    """Uniform points in the unit cube, shape (count, dimension)."""
    return rng.uniform(0.0, 1.0, size=(int(count), int(dimension)))


def _fill_resolution(dimension):
    return {1: 512, 2: 48, 3: 14}.get(int(dimension), 10)


def pigeonhole_pair(points, rng, retries=5, l1_samples=200_000):
    """Equal-component-count close pair from 4k^2 points.

    The points are split into 2k groups of 2k; each group's first and last k
    points interpolate into a close pair.  Over the 2k groups the component
    count differences take at most 2k - 1 values, so two groups must agree;
    averaging those two pairs crosswise gives mixtures with equal counts.
    Groups whose build degenerates are skipped; if no collision survives,
    the points are reshuffled (bounded retries).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    total = points.shape[0]
    k = math.isqrt(max(total, 0) // 4)
    if total < 8 or 4 * k * k != total:
        raise ValueError("need 4k^2 points with k >= 2")
    resolution = _fill_resolution(points.shape[1])
    order = np.arange(total)
    for _ in range(int(retries)):
        built = []
        for group in order.reshape(2 * k, 2 * k):
            sub = points[group]
            try:
                x_set = PointSet(sub[:k])
                y_set = PointSet(sub[k:])
                x_set.fill = compute_fill(x_set, resolution)
                y_set.fill = compute_fill(y_set, resolution)
                built.append(build_close_pair(x_set, y_set, rng=rng, l1_samples=l1_samples))
            except (DegeneratePairError, KernelConditioningError, ValueError):
                continue
        for pair in built:
            if pair.p.m == pair.q.m:
                return pair
        by_difference = {}
        collision = None
        for pair in built:
            key = pair.p.m - pair.q.m
            if key in by_difference:
                collision = (by_difference[key], pair)
                break
            by_difference[key] = pair
        if collision is not None:
            return _combine_pairs(*collision, rng=rng, l1_samples=l1_samples)
        order = rng.permutation(total)
    raise RuntimeError(
        "no two groups shared a component-count difference within the retry budget"
    )


def _combine_pairs(first, second, rng, l1_samples):
    """Crosswise average of two pairs with equal count differences."""
    if not np.allclose(first.p.covariance, second.p.covariance):
        raise ValueError("pairs must share the noise covariance")
    p = GmmParams(
        np.hstack([first.p.means, second.q.means]),
        np.concatenate([first.p.weights, second.q.weights]) / 2.0,
        first.p.covariance,
    )
    q = GmmParams(
        np.hstack([first.q.means, second.p.means]),
        np.concatenate([first.q.weights, second.p.weights]) / 2.0,
        first.q.covariance,
    )
    return MixturePair(
        p=p,
        q=q,
        l1_distance=l1_distance(p, q, rng=rng, samples=l1_samples),
        min_center_distance=_cross_min_distance(p.means.T, q.means.T),
        fill=max(first.fill, second.fill),
        kernel_condition=max(first.kernel_condition, second.kernel_condition),
    )


@dataclass
class IcaDescriptor:
    """Noisy ICA model induced by Poissonizing one mixture.

    Observables are X = mixing diag(scales) S + eta(tau) with S_i Poisson
    of the given rates; to_gmm() reconstructs the mixture whose basic
    Poissonization realizes exactly this model.
    """

    mixing: np.ndarray
    rates: np.ndarray
    scales: np.ndarray
    noise_covariance: np.ndarray
    tau: int
    lam: float

    def __post_init__(self):
        self.mixing = np.asarray(self.mixing, dtype=float)
        self.rates = np.asarray(self.rates, dtype=float)
        self.scales = np.asarray(self.scales, dtype=float)
        self.noise_covariance = np.asarray(self.noise_covariance, dtype=float)
        norms = np.linalg.norm(self.mixing, axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("mixing columns must be unit vectors")
        if np.any(self.rates <= 0) or np.any(self.scales <= 0):
            raise ValueError("rates and scales must be positive")
        if abs(self.rates.sum() - self.lam) > 1e-9 * max(self.lam, 1.0):
            raise ValueError("rates must sum to lambda")

    def to_gmm(self):
        return GmmParams(
            self.mixing * self.scales, self.rates / self.lam, self.noise_covariance
        )

    def to_dict(self):
        return {
            "mixing": self.mixing.tolist(),
            "rates": self.rates.tolist(),
            "scales": self.scales.tolist(),
            "noise_covariance": self.noise_covariance.tolist(),
            "tau": int(self.tau),
            "lam": float(self.lam),
        }


def embed_as_ica(pair, tau_policy="certified", delta=1e-9):
    """Noisy ICA descriptors for both mixtures of a pair.

    lambda is set to the component count, so the source rates are w_i lambda
    and sum back to lambda.  tau comes from the tail threshold at the given
    delta; "certified" walks the threshold up until the actual tail is below
    delta, "lemma" takes the closed-form threshold as is.
    """
    descriptors = []
    for gmm in (pair.p, pair.q):
        lam = float(gmm.m)
        if tau_policy == "certified":
            tau = certified_tail_threshold(delta, lam)
        elif tau_policy == "lemma":
            tau = poisson_tail_threshold(delta, lam)
        else:
            raise ValueError("tau_policy must be 'certified' or 'lemma'")
        norms = np.linalg.norm(gmm.means, axis=0)
        if np.any(norms <= 0):
            raise ValueError("a zero center cannot be unit-normalized")
        descriptors.append(
            IcaDescriptor(
                mixing=gmm.means / norms,
                rates=gmm.weights * lam,
                scales=norms,
                noise_covariance=gmm.covariance,
                tau=int(tau),
                lam=lam,
            )
        )
    return tuple(descriptors)


def equispaced_interleaved(h):
    """Interleaved 1D designs X = {(2i-1)h} and Y = X + h with k = 1/(2h).

    Exact fills: the cube point farthest from X is 0 at distance h, and from
    Y it is 0 again at distance 2h.
    """
    h = float(h)
    if h <= 0:
        raise ValueError("h must be positive")
    k = round(1.0 / (2.0 * h))
    if k < 1 or abs(2.0 * k * h - 1.0) > 1e-9:
        raise ValueError("h must equal 1/(2k) for a positive integer k")
    xs = (2.0 * np.arange(1, k + 1) - 1.0) * h
    x_set = PointSet(xs[:, None], fill=h)
    y_set = PointSet(xs[:, None] + h, fill=2.0 * h)
    return x_set, y_set


def pair_to_json(pair):
    """Hard-instance export; centers are row lists, one row per component."""
    payload = {
        "centers_p": pair.p.means.T.tolist(),
        "weights_p": pair.p.weights.tolist(),
        "centers_q": pair.q.means.T.tolist(),
        "weights_q": pair.q.weights.tolist(),
        "l1_distance": float(pair.l1_distance),
        "fill": float(pair.fill),
        "kernel_condition": float(pair.kernel_condition),
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def pair_from_json(text):
    payload = json.loads(text)
    centers_p = np.asarray(payload["centers_p"], dtype=float)
    centers_q = np.asarray(payload["centers_q"], dtype=float)
    n = centers_p.shape[1]
    eye = np.eye(n)
    p = GmmParams(centers_p.T, np.asarray(payload["weights_p"], dtype=float), eye)
    q = GmmParams(centers_q.T, np.asarray(payload["weights_q"], dtype=float), eye)
    return MixturePair(
        p=p,
        q=q,
        l1_distance=float(payload["l1_distance"]),
        min_center_distance=_cross_min_distance(centers_p, centers_q),
        fill=float(payload["fill"]),
        kernel_condition=float(payload["kernel_condition"]),
    )
