"""Posterior and posterior-predictive densities of cleared prices via the
No-U-Turn sampler with dual-averaging step size adaptation.

The sampler is the doubling/slice-sampling variant with a divergence
cutoff at an energy error of 1000 and a maximum tree depth of 10.  Price
observations are modelled with a normal or log-normal likelihood whose
location gets a weakly-informative normal prior and whose scale is
half-normal through a log parameterization.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PriceModel",
    "PosteriorSamples",
    "log_posterior_and_grad",
    "leapfrog",
    "build_tree",
    "nuts_sample",
    "posterior_predictive",
    "predictive_grid",
    "fit_price_pdfs",
    "GroupPdf",
]

DIVERGENCE_CUTOFF = 1000.0
MAX_TREE_DEPTH = 10


@dataclass
class PriceModel:
    """Two-parameter location/log-scale price model with fixed priors."""

    family: str = "normal"  # or "lognormal"
    prior_loc_mean: float = 0.0
    prior_loc_std: float = 10.0
    prior_scale: float = 10.0  # half-normal scale of sigma

    def __post_init__(self):
        if self.family not in ("normal", "lognormal"):
            raise ValueError(f"unknown likelihood family {self.family!r}")
        if self.prior_loc_std <= 0 or self.prior_scale <= 0:
            raise ValueError("prior scales must be positive")

    @classmethod
    def for_data(cls, data, family: str = "normal") -> "PriceModel":
        data = np.asarray(data, dtype=float)
        x = np.log(data) if family == "lognormal" else data
        std = float(np.std(x))
        floor = 1e-3 * (1.0 + abs(float(np.mean(x))))
        std = max(std, floor)
        return cls(
            family=family,
            prior_loc_mean=float(np.mean(x)),
            prior_loc_std=10.0 * std,
            prior_scale=10.0 * std,
        )


def _observed(model: PriceModel, data) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    if data.size == 0:
        raise ValueError("no observations")
    if model.family == "lognormal":
        if (data <= 0).any():
            raise ValueError("log-normal likelihood needs positive data")
        return np.log(data)
    return data


def log_posterior_and_grad(model: PriceModel, params, data):
    """Log posterior and analytic gradient on the unconstrained space.

    ``params`` is (location, log-scale).  The half-normal scale prior picks
    up the Jacobian of the log parameterization, keeping the density proper
    in the sampled coordinates.
    """
    x = _observed(model, data)
    mu, phi = float(params[0]), float(params[1])
    sigma = math.exp(phi)
    n = x.size
    resid = x - mu
    ss = float(resid @ resid)
    logp = -n * phi - 0.5 * ss / sigma**2 - 0.5 * n * math.log(2 * math.pi)
    dmu = float(resid.sum()) / sigma**2
    dphi = -n + ss / sigma**2
    # location prior
    logp += -0.5 * ((mu - model.prior_loc_mean) / model.prior_loc_std) ** 2
    dmu += -(mu - model.prior_loc_mean) / model.prior_loc_std**2
    # half-normal prior on sigma, log parameterized: p(phi) ~ exp(-s^2/2t^2) * s
    logp += -0.5 * (sigma / model.prior_scale) ** 2 + phi
    dphi += -(sigma / model.prior_scale) ** 2 + 1.0
    return logp, np.array([dmu, dphi])


def leapfrog(params, momentum, eps, grad_fn):
    """One symplectic step; volume preserving and reversible under momentum
    negation."""
    _, g = grad_fn(params)
    r = momentum + 0.5 * eps * g
    q = params + eps * r
    logp, g2 = grad_fn(q)
    r = r + 0.5 * eps * g2
    return q, r, logp, g2


def _joint(logp, r):
    return logp - 0.5 * float(r @ r)


def build_tree(q, r, grad, logu, direction, depth, eps, joint0, grad_fn, rng):
    """Recursive doubling with slice acceptance, U-turn and divergence stops.

    Returns (q_minus, r_minus, q_plus, r_plus, q_prop, n_valid, keep_going,
    alpha, n_alpha, divergent).
    """
    if depth == 0:
        q1, r1, logp1, _ = leapfrog(q, r, direction * eps, grad_fn)
        joint = _joint(logp1, r1)
        n1 = int(logu <= joint)
        divergent = joint - joint0 < -DIVERGENCE_CUTOFF
        s1 = int(not divergent)
        alpha = min(1.0, math.exp(min(joint - joint0, 0.0)))
        return q1, r1, q1, r1, q1, n1, s1, alpha, 1, divergent
    qm, rm, qp, rp, qprop, n1, s1, alpha, nalpha, div = build_tree(
        q, r, grad, logu, direction, depth - 1, eps, joint0, grad_fn, rng
    )
    if s1:
        if direction == -1:
            qm, rm, _, _, qprop2, n2, s2, a2, na2, div2 = build_tree(
                qm, rm, grad, logu, direction, depth - 1, eps, joint0, grad_fn, rng
            )
        else:
            _, _, qp, rp, qprop2, n2, s2, a2, na2, div2 = build_tree(
                qp, rp, grad, logu, direction, depth - 1, eps, joint0, grad_fn, rng
            )
        if n1 + n2 > 0 and rng.uniform() < n2 / (n1 + n2):
            qprop = qprop2
        alpha += a2
        nalpha += na2
        span = qp - qm
        s1 = s2 * int(span @ rm >= 0) * int(span @ rp >= 0)
        n1 += n2
        div = div or div2
    return qm, rm, qp, rp, qprop, n1, s1, alpha, nalpha, div


@dataclass
class PosteriorSamples:
    draws: np.ndarray  # (M, dim)
    accept_rate: float
    step_size: float
    divergences: int
    warmup: int
    seed: int
    model: PriceModel | None = None

    def __post_init__(self):
        if self.draws.size == 0:
            raise ValueError("no draws")
        if np.isnan(self.draws).any():
            raise ValueError("NaN draws")


def _find_reasonable_eps(q, grad_fn, rng):
    eps = 1.0
    logp, _ = grad_fn(q)
    r = rng.standard_normal(q.size)
    q1, r1, logp1, _ = leapfrog(q, r, eps, grad_fn)
    joint0 = _joint(logp, r)
    joint1 = _joint(logp1, r1)
    if not np.isfinite(joint1):
        joint1 = -np.inf
    a = 1.0 if joint1 - joint0 > math.log(0.5) else -1.0
    for _ in range(60):
        eps *= 2.0**a
        q1, r1, logp1, _ = leapfrog(q, r, eps, grad_fn)
        joint1 = _joint(logp1, r1)
        if not np.isfinite(joint1):
            joint1 = -np.inf
        if a * (joint1 - joint0) <= -a * math.log(2.0):
            break
    return eps


def nuts_sample(
    model,
    data,
    draws: int,
    warmup: int,
    target_accept: float = 0.8,
    seed: int = 0,
    initial=None,
    max_depth: int = MAX_TREE_DEPTH,
) -> PosteriorSamples:
    """Sample with dual-averaging step adaptation during warmup.

    ``model`` is a :class:`PriceModel` (with ``data``) or any callable
    ``params -> (logp, grad)`` for a fixed target, in which case ``data``
    is ignored.
    """
    if draws <= 0 or warmup <= 0:
        raise ValueError("draws and warmup must be positive")
    if not 0.0 < target_accept < 1.0:
        raise ValueError("target_accept must sit in (0, 1)")
    if isinstance(model, PriceModel):
        grad_fn = lambda p: log_posterior_and_grad(model, p, data)
        x = _observed(model, data)
        q = np.array([float(np.mean(x)), math.log(max(float(np.std(x)), 1e-3))]) if initial is None else np.asarray(initial, dtype=float)
        model_ref = model
    else:
        grad_fn = model
        if initial is None:
            raise ValueError("a fixed target needs an initial point")
        q = np.asarray(initial, dtype=float)
        model_ref = None

    rng = np.random.default_rng(seed)
    eps = _find_reasonable_eps(q, grad_fn, rng)
    mu = math.log(10.0 * eps)
    eps_bar, h_bar = 1.0, 0.0
    gamma, t0, kappa = 0.05, 10.0, 0.75
    total = warmup + draws
    out = np.empty((draws, q.size))
    divergences = 0
    accepts = []
    logp, grad = grad_fn(q)
    for m in range(1, total + 1):
        r0 = rng.standard_normal(q.size)
        joint0 = _joint(logp, r0)
        logu = joint0 + math.log(rng.uniform())
        qm = qp = q
        rm = rp = r0
        qprop = q
        n, s, depth = 1, 1, 0
        alpha, nalpha = 0.0, 1
        while s and depth < max_depth:
            direction = -1 if rng.uniform() < 0.5 else 1
            if direction == -1:
                qm, rm, _, _, q1, n1, s1, alpha, nalpha, div = build_tree(
                    qm, rm, grad, logu, direction, depth, eps, joint0, grad_fn, rng
                )
            else:
                _, _, qp, rp, q1, n1, s1, alpha, nalpha, div = build_tree(
                    qp, rp, grad, logu, direction, depth, eps, joint0, grad_fn, rng
                )
            if div:
                divergences += 1
            if s1 and n1 > 0 and rng.uniform() < min(1.0, n1 / n):
                qprop = q1
            n += n1
            span = qp - qm
            s = s1 * int(span @ rm >= 0) * int(span @ rp >= 0)
            depth += 1
        q = qprop
        logp, grad = grad_fn(q)
        accept = alpha / max(nalpha, 1)
        accepts.append(accept)
        if m <= warmup:
            frac = 1.0 / (m + t0)
            h_bar = (1.0 - frac) * h_bar + frac * (target_accept - accept)
            eps = math.exp(mu - math.sqrt(m) / gamma * h_bar)
            step = m**-kappa
            eps_bar = math.exp((1.0 - step) * math.log(eps_bar) + step * math.log(eps))
        else:
            eps = eps_bar
            out[m - warmup - 1] = q
    if divergences >= total:
        raise RuntimeError("every transition diverged; the step size never stabilized")
    return PosteriorSamples(
        draws=out,
        accept_rate=float(np.mean(accepts[warmup:])),
        step_size=eps_bar,
        divergences=divergences,
        warmup=warmup,
        seed=seed,
        model=model_ref,
    )


def _likelihood_density(model: PriceModel, mu, sigma, grid):
    if model.family == "lognormal":
        z = (np.log(grid) - mu) / sigma
        return np.exp(-0.5 * z * z) / (grid * sigma * math.sqrt(2 * math.pi))
    z = (grid - mu) / sigma
    return np.exp(-0.5 * z * z) / (sigma * math.sqrt(2 * math.pi))


def posterior_predictive(samples: PosteriorSamples, model: PriceModel, grid) -> np.ndarray:
    """Average the likelihood density over posterior draws on the grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.size < 2 or (np.diff(grid) <= 0).any():
        raise ValueError("grid must be sorted and non-degenerate")
    if model.family == "lognormal" and (grid <= 0).any():
        raise ValueError("log-normal support is positive")
    dens = np.zeros_like(grid)
    for mu, phi in samples.draws:
        dens += _likelihood_density(model, mu, math.exp(phi), grid)
    return dens / samples.draws.shape[0]


def predictive_grid(samples: PosteriorSamples, model: PriceModel, spread: float = 6.0, points: int = 512):
    mus = samples.draws[:, 0]
    sigmas = np.exp(samples.draws[:, 1])
    if model.family == "lognormal":
        lo = math.exp(float(mus.min() - spread * sigmas.max()))
        hi = math.exp(float(mus.max() + spread * sigmas.max()))
        return np.linspace(max(lo, 1e-9), hi, points)
    lo = float(mus.min() - spread * sigmas.max())
    hi = float(mus.max() + spread * sigmas.max())
    return np.linspace(lo, hi, points)


@dataclass
class GroupPdf:
    label: str
    model: PriceModel
    samples: PosteriorSamples
    grid: np.ndarray
    density: np.ndarray
    normalization: float
    threshold_probs: dict = field(default_factory=dict)


def fit_price_pdfs(
    groups: dict,
    family: str = "normal",
    draws: int = 2000,
    warmup: int = 500,
    seed: int = 0,
    thresholds: tuple = (),
    min_group: int = 5,
) -> dict:
    """One posterior fit and predictive density per observation group.

    ``thresholds`` yields tail masses per group: for each level x the report
    carries P(price > x) and P(price < x) under the predictive density.
    """
    out = {}
    for gi, (label, obs) in enumerate(sorted(groups.items(), key=lambda kv: str(kv[0]))):
        obs = np.asarray(obs, dtype=float)
        if obs.size < min_group:
            raise ValueError(f"group {label!r} has {obs.size} observations, needs {min_group}")
        model = PriceModel.for_data(obs, family)
        samples = nuts_sample(model, obs, draws, warmup, seed=seed + gi)
        grid = predictive_grid(samples, model)
        dens = posterior_predictive(samples, model, grid)
        norm = float(np.trapezoid(dens, grid))
        probs = {}
        for thr in thresholds:
            above = grid >= thr
            probs[f"P(>{thr})"] = float(np.trapezoid(dens[above], grid[above])) if above.sum() > 1 else 0.0
            below = grid <= thr
            probs[f"P(<{thr})"] = float(np.trapezoid(dens[below], grid[below])) if below.sum() > 1 else 0.0
        out[label] = GroupPdf(str(label), model, samples, grid, dens, norm, probs)
    return out
