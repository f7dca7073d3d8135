"""End-to-end mixture learning through the Poissonized ICA pipeline.

learn_means drives the full chain: parameter schedule, truncated Poissonized
sampling, streaming cumulant estimation, simultaneous diagonalization, and
the unlift (divide each recovered column by its last entry, which also
cancels the ICA sign ambiguity).  Weights are recovered afterwards from the
order-3 cumulant of the unlifted coordinates of the same stream.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .cumulants import analytic_ica_cumulant, assemble_flat_cumulant
from .distributions import GmmParams
from .ica import IllConditionedError, estimate_cumulant_pair, recover_from_cumulants
from .poissonization import (
    MixtureSource,
    SubroutineFailure,
    build_lifted_model,
    compute_reduction_params,
    sample_approx_ica_batch,
    tv_gap,
)
from .tensor_linalg import khatri_rao_power, pseudo_inverse, sigma_min

__all__ = [
    "MeanBounds",
    "LearnReport",
    "FeasibilityError",
    "lifted_conditioning",
    "derive_bounds",
    "learn_means",
    "learn_means_oracle",
    "recover_weights",
    "evaluate_recovery",
]

_WEIGHT_CLIP_TOL = 1e-8


class FeasibilityError(RuntimeError):
    """The mixture violates the conditioning hypothesis of the pipeline."""


@dataclass
class MeanBounds:
    """A-priori parameter bounds handed to the reduction.

    w : weight ratio bound, >= w_max / w_min >= 1.
    u : mean norm bound, >= max ||mu_i||.
    r : separation parameter, positive.
    b : conditioning floor for the lifted Khatri-Rao power, positive.
    """

    w: float
    u: float
    r: float
    b: float

    def __post_init__(self):
        if self.w < 1.0:
            raise ValueError("w must be >= 1")
        if min(self.u, self.r, self.b) <= 0:
            raise ValueError("u, r, b must be positive")


def lifted_conditioning(gmm, d):
    """sigma_m of the (d/2)-fold Khatri-Rao power of the normalized lifted
    means; the quantity the pipeline's conditioning hypothesis bounds."""
    lifted = np.vstack([gmm.means, np.ones((1, gmm.m))])
    normalized = lifted / np.linalg.norm(lifted, axis=0)
    return sigma_min(khatri_rao_power(normalized, d // 2))


def derive_bounds(gmm, d, slack=0.99):
    """Bounds that a known mixture satisfies with a little slack."""
    norms = np.linalg.norm(gmm.means, axis=0)
    diffs = gmm.means[:, :, None] - gmm.means[:, None, :]
    dist = np.linalg.norm(diffs, axis=0)
    iu = np.triu_indices(gmm.m, k=1)
    separation = float(dist[iu].min()) if iu[0].size else 1.0
    return MeanBounds(
        w=float(gmm.weights.max() / gmm.weights.min()),
        u=float(norms.max()),
        r=max(separation, 1e-12),
        b=float(lifted_conditioning(gmm, d)) * slack,
    )


@dataclass
class LearnReport:
    """Outcome of one learning run.

    estimated_means is None when the run failed (truncation abort); weights
    are clipped at zero with ``diagnostics["weights_clipped"]`` set when the
    raw recovery went slightly negative.  aligned_error is the mean matched
    column distance against ground truth (the worst column sits in
    ``diagnostics["max_error"]``), None when no truth was supplied.
    """

    estimated_means: np.ndarray | None
    estimated_weights: np.ndarray | None
    aligned_error: float | None
    params: object
    samples_used: int
    failed: bool
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "estimated_means": None
            if self.estimated_means is None
            else self.estimated_means.tolist(),
            "estimated_weights": None
            if self.estimated_weights is None
            else self.estimated_weights.tolist(),
            "aligned_error": self.aligned_error,
            "params": self.params.to_dict() if self.params is not None else None,
            "samples_used": self.samples_used,
            "failed": self.failed,
            "diagnostics": {
                k: (v.tolist() if isinstance(v, np.ndarray) else v)
                for k, v in self.diagnostics.items()
            },
        }

    def to_json(self):
        return json.dumps(self.to_dict())


def recover_weights(mixing, lam, flat_cum):
    """Source weights from an order-ell flattened cumulant of X = A S + noise.

    With S_i ~ Poisson(w_i * lambda) scaled by the columns' own lengths the
    cross-cumulants satisfy vec(kappa) = A^(KR ell) (lambda w), so
    w = (1 / lambda) pinv(A^(KR ell)) vec(kappa).  Returns the raw vector;
    callers decide about clipping.
    """
    mixing = np.asarray(mixing, dtype=float)
    if flat_cum.order <= 2:
        raise ValueError("weight recovery needs a cumulant order above 2")
    if flat_cum.dimension != mixing.shape[0]:
        raise ValueError("cumulant dimension does not match the mixing matrix")
    lam = float(lam)
    if lam <= 0:
        raise ValueError("lambda must be positive")
    kr = khatri_rao_power(mixing, flat_cum.order)
    smin = sigma_min(kr)
    if smin <= 1e-10 * max(1.0, float(np.linalg.norm(kr, 2))):
        raise IllConditionedError(
            f"khatri-rao power of the mixing is rank deficient (sigma_min {smin:.3e})"
        )
    return (pseudo_inverse(kr) @ flat_cum.data) / lam


def _clip_weights(raw):
    clipped = bool(np.any(raw < -_WEIGHT_CLIP_TOL))
    return np.clip(raw, 0.0, None), clipped


def _unlift(columns):
    """Divide out the homogenizing coordinate; the division cancels the
    per-column sign ambiguity of the ICA estimate."""
    last = columns[-1, :]
    if np.any(np.abs(last) < 1e-9):
        raise FeasibilityError(
            "a recovered column has (numerically) zero lift coordinate"
        )
    return columns[:-1, :] / last


def learn_means(
    source,
    m,
    d,
    delta,
    eps,
    bounds,
    rng,
    samples,
    tau=None,
    with_weights=True,
    truth=None,
    weight_order=3,
    chunk=1 << 17,
):
    """Learn mixture means (and optionally weights) from Poissonized samples.

    Parameters
    ----------
    source : GmmParams or MixtureSource
        The mixture being learned.  Passing GmmParams uses it both as the
        sampler and (unless ``truth`` is given) as the evaluation truth;
        a MixtureSource enables the ground-truth-free mode, where no
        feasibility check or error metric is possible.
    m, d : component count and cumulant order (d in {4, 6}).
    delta, eps : failure budget and target accuracy of the schedule.
    bounds : MeanBounds.
    rng : SeededRng; all randomness of the run flows through it.
    samples : Poissonized sample budget N.
    tau : optional truncation override (e.g. a desk-scale value); the run is
        then certified a posteriori through the recorded tv_gap.
    truth : optional GmmParams for diagnostics and aligned errors.
    """
    if isinstance(source, GmmParams):
        covariance = source.covariance
        if truth is None:
            truth = source
    elif isinstance(source, MixtureSource):
        covariance = source.covariance
    else:
        raise TypeError("source must be GmmParams or MixtureSource")
    n = covariance.shape[0]
    sigma = math.sqrt(max(float(np.linalg.eigvalsh(covariance).max()), 0.0))
    params = compute_reduction_params(
        n,
        m,
        d,
        delta,
        eps,
        bounds.w,
        bounds.u,
        bounds.r,
        bounds.b,
        sigma,
        tau_override=tau,
    )
    gap = tv_gap(params.lam, params.tau, samples)
    diagnostics = {"tv_gap": gap, "tv_certified": bool(gap < delta / 2.0)}
    if truth is not None:
        measured = float(lifted_conditioning(truth, d))
        diagnostics["sigma_m_lifted"] = measured
        if measured < bounds.b:
            raise FeasibilityError(
                f"sigma_m of the lifted Khatri-Rao power is {measured:.3e}, "
                f"below the declared floor {bounds.b:.3e}"
            )

    def stream(count):
        return sample_approx_ica_batch(source, params.lam, params.tau, rng, count)

    try:
        m0, k_next, acc = estimate_cumulant_pair(stream, d, samples, chunk=chunk)
    except SubroutineFailure as failure:
        diagnostics["failure_count"] = failure.count
        return LearnReport(
            estimated_means=None,
            estimated_weights=None,
            aligned_error=None,
            params=params,
            samples_used=0,
            failed=True,
            diagnostics=diagnostics,
        )

    estimate = recover_from_cumulants(m0, k_next, m, d, rng)
    diagnostics["eigengap"] = estimate.eigengap
    means = _unlift(estimate.columns)

    weights = None
    if with_weights:
        flat3 = assemble_flat_cumulant(acc, weight_order, coordinates=range(n))
        raw = recover_weights(means, params.lam, flat3)
        weights, clipped = _clip_weights(raw)
        diagnostics["weights_clipped"] = clipped
        diagnostics["weight_sum"] = float(weights.sum())

    report = LearnReport(
        estimated_means=means,
        estimated_weights=weights,
        aligned_error=None,
        params=params,
        samples_used=int(samples),
        failed=False,
        diagnostics=diagnostics,
    )
    if truth is not None:
        metrics = evaluate_recovery(report, truth)
        report.aligned_error = metrics["mean_error"]
        diagnostics["max_error"] = metrics["max_error"]
        if "weight_max_error" in metrics:
            diagnostics["weight_max_error"] = metrics["weight_max_error"]
    return report


def learn_means_oracle(gmm, d, rng, delta=0.1, eps=0.1, bounds=None, tau=None, with_weights=True):
    """The same pipeline with analytic cumulants instead of estimation.

    Isolates algorithmic error from statistical error: with exact tensors the
    recovered means and weights must match the model to solver precision.
    """
    if bounds is None:
        bounds = derive_bounds(gmm, d)
    sigma = math.sqrt(max(float(np.linalg.eigvalsh(gmm.covariance).max()), 0.0))
    params = compute_reduction_params(
        gmm.n,
        gmm.m,
        d,
        delta,
        eps,
        bounds.w,
        bounds.u,
        bounds.r,
        bounds.b,
        sigma,
        tau_override=tau,
    )
    model = build_lifted_model(gmm, params.lam, params.tau)
    cum_d = model.scales**d * model.rates
    cum_next = model.scales ** (d + 1) * model.rates
    m0 = analytic_ica_cumulant(model.mixing, cum_d, d).as_matrix()
    k_next = analytic_ica_cumulant(model.mixing, cum_next, d + 1).data
    estimate = recover_from_cumulants(m0, k_next, gmm.m, d, rng)
    means = _unlift(estimate.columns)
    weights = None
    diagnostics = {"oracle": True, "eigengap": estimate.eigengap}
    if with_weights:
        flat3 = analytic_ica_cumulant(gmm.means, gmm.weights * params.lam, 3)
        weights, clipped = _clip_weights(recover_weights(means, params.lam, flat3))
        diagnostics["weights_clipped"] = clipped
    report = LearnReport(
        estimated_means=means,
        estimated_weights=weights,
        aligned_error=None,
        params=params,
        samples_used=0,
        failed=False,
        diagnostics=diagnostics,
    )
    metrics = evaluate_recovery(report, gmm)
    report.aligned_error = metrics["mean_error"]
    diagnostics["max_error"] = metrics["max_error"]
    if "weight_max_error" in metrics:
        diagnostics["weight_max_error"] = metrics["weight_max_error"]
    return report


def evaluate_recovery(report, truth):
    """Assignment metrics between estimated and true means (no sign freedom).

    Returns max and mean matched-column errors, the permutation (entry j is
    the estimate column matched to true column j), and, when the report
    carries weights, the matched maximum weight error.
    """
    if report.failed or report.estimated_means is None:
        raise ValueError("failed runs report no means")
    est = np.asarray(report.estimated_means, dtype=float)
    tru = truth.means
    if est.shape != tru.shape:
        raise ValueError("shape mismatch between estimate and truth")
    cost = np.linalg.norm(est[:, :, None] - tru[:, None, :], axis=0)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(truth.m, dtype=int)
    for i, j in zip(rows, cols):
        perm[j] = i
    errors = cost[perm, np.arange(truth.m)]
    metrics = {
        "max_error": float(errors.max()),
        "mean_error": float(errors.mean()),
        "permutation": perm.tolist(),
    }
    if report.estimated_weights is not None:
        werr = np.abs(report.estimated_weights[perm] - truth.weights)
        metrics["weight_max_error"] = float(werr.max())
    return metrics
