import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
from loguru import logger
from scipy.optimize import minimize_scalar
from tqdm import tqdm

from ..config.run_config import InferenceConfig, PriorConfig
from ..dataset import ReportingTriangle
from ..errors import FitError, InputError
from ..utils import save_json, substream
from .delay_model import (DTYPE, Hyperparameters, LatentField, LatentState, ModelSpec,
                          hyper_log_prior)

HYPER_NAMES = ("phi", "eta_alpha", "eta_beta")
# relative slack for accepting a Newton step that only changes the objective by round-off
_ROUNDOFF = 1e-12


@dataclass
class ModeResult:
    x: torch.Tensor
    log_density: float
    converged: bool
    iterations: int
    max_abs_gradient: float
    chol: Optional[torch.Tensor] = None

    @property
    def log_det_precision(self) -> float:
        return 2.0 * float(torch.log(torch.diagonal(self.chol)).sum())


def find_mode(latent_field: LatentField, hyper: Hyperparameters, x0: torch.Tensor,
              cfg: InferenceConfig) -> ModeResult:
    """
    Damped Newton ascent on the conditional log-posterior of the latent field.
    The returned ``chol`` factors the negated Hessian at the final point.
    """
    q = latent_field.prior_precision(hyper)
    x = x0.clone()
    f = float(latent_field.log_density(x, hyper, q))
    converged, it = False, 0
    while True:
        g = latent_field.gradient(x, hyper, q)
        chol, info = torch.linalg.cholesky_ex(-latent_field.hessian(x, hyper, q))
        if int(info) != 0:
            logger.debug(f"negated Hessian not positive definite at iteration {it}")
            return ModeResult(x, f, False, it, float(g.abs().max()), None)
        if float(g.norm()) < cfg.newton_tol:
            converged = True
            break
        if it >= cfg.newton_max_iter:
            break

        step = torch.cholesky_solve(g[:, None], chol)[:, 0]
        scale, accepted = 1.0, False
        for _ in range(cfg.max_halvings + 1):
            x_new = x + scale * step
            f_new = float(latent_field.log_density(x_new, hyper, q))
            if math.isfinite(f_new) and f_new >= f - _ROUNDOFF * max(1.0, abs(f)):
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            logger.debug(f"Newton step halving exhausted at iteration {it}")
            break
        x, f = x_new, f_new
        it += 1
    return ModeResult(x, f, converged, it, float(g.abs().max()), chol)


def laplace_log_marginal(latent_field: LatentField, hyper: Hyperparameters, mode: ModeResult,
                         priors: PriorConfig) -> float:
    """log p(theta | y) up to a constant, from the Gaussian approximation at the mode."""
    return (mode.log_density + hyper_log_prior(hyper, priors)
            + 0.5 * latent_field.size * math.log(2 * math.pi) - 0.5 * mode.log_det_precision)


def initial_latent(latent_field: LatentField) -> torch.Tensor:
    x = torch.zeros(latent_field.size, dtype=DTYPE)
    observed = latent_field.k[latent_field.mask]
    x[0] = math.log(float(observed.mean()) + 0.5)
    return x


class HyperObjective:
    """
    Laplace log marginal of the log-hyperparameters; each call warm-starts Newton
    from the last mode it found.
    """

    def __init__(self, latent_field: LatentField, priors: PriorConfig, cfg: InferenceConfig):
        self.latent_field = latent_field
        self.priors = priors
        self.cfg = cfg
        self.x = initial_latent(latent_field)
        self.evaluations = 0

    def __call__(self, theta) -> Tuple[float, ModeResult]:
        hyper = Hyperparameters.from_log(theta)
        mode = find_mode(self.latent_field, hyper, self.x, self.cfg)
        self.evaluations += 1
        if mode.chol is None or not math.isfinite(mode.log_density):
            return -math.inf, mode
        self.x = mode.x
        return laplace_log_marginal(self.latent_field, hyper, mode, self.priors), mode


def find_hyper_map(objective: HyperObjective, theta0: np.ndarray, cfg: InferenceConfig) -> np.ndarray:
    """Coordinate ascent over (log phi, log eta_alpha, log eta_beta)."""
    lo, hi = cfg.log_hyper_bounds
    theta = np.clip(np.asarray(theta0, dtype=np.float64), lo, hi)
    for sweep in range(cfg.map_sweeps):
        for j in range(len(theta)):
            def negative(value, j=j):
                trial = theta.copy()
                trial[j] = value
                score, _ = objective(trial)
                return 1e300 if not math.isfinite(score) else -score

            bounds = (max(lo, theta[j] - 4.0), min(hi, theta[j] + 4.0))
            res = minimize_scalar(negative, bounds=bounds, method="bounded", options={"xatol": 0.02})
            if res.fun < negative(theta[j]):
                theta[j] = res.x
        logger.debug(f"hyperparameter sweep {sweep}: log phi={theta[0]:.3f} "
                     f"log eta_alpha={theta[1]:.3f} log eta_beta={theta[2]:.3f}")
    return theta


def grid_steps(objective: HyperObjective, theta: np.ndarray, center: float, cfg: InferenceConfig) -> np.ndarray:
    """
    Per-axis log spacing: one posterior standard deviation from the curvature of the
    log marginal at the MAP, or ``grid_log_step`` where the curvature is unusable.
    """
    steps = np.full(len(theta), cfg.grid_log_step)
    if cfg.grid_points < 2:
        return steps
    h = 0.25
    for j in range(len(theta)):
        offset = np.zeros(len(theta))
        offset[j] = h
        up, _ = objective(theta + offset)
        down, _ = objective(theta - offset)
        curvature = (up - 2 * center + down) / h ** 2
        if math.isfinite(curvature) and curvature < 0:
            steps[j] = float(np.clip(1.0 / math.sqrt(-curvature), 0.05, 4 * cfg.grid_log_step))
    return steps


@dataclass(frozen=True)
class GridPoint:
    log_hyper: Tuple[float, float, float]
    log_marginal: float
    converged: bool
    iterations: int
    max_abs_gradient: float
    weight: float = 0.0


@dataclass(frozen=True, eq=False)
class PosteriorSamples:
    spec: ModelSpec
    first_week: object
    as_of: object
    mu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    coefficients: np.ndarray
    phi: np.ndarray
    eta_alpha: np.ndarray
    eta_beta: np.ndarray
    log_lambda: np.ndarray  # draws x weeks x delays
    regressors: np.ndarray
    seed: int
    diagnostics: Dict = field(default_factory=dict)

    def __len__(self):
        return int(self.mu.shape[0])

    @property
    def lam(self) -> np.ndarray:
        return np.exp(self.log_lambda)

    def state(self, s: int) -> LatentState:
        return LatentState(mu=float(self.mu[s]), alpha=self.alpha[s], beta=self.beta[s],
                           gamma_delta=self.coefficients[s])

    def hyper(self, s: int) -> Hyperparameters:
        return Hyperparameters(float(self.phi[s]), float(self.eta_alpha[s]), float(self.eta_beta[s]))


def _check_inputs(spec: ModelSpec, triangle: ReportingTriangle, regressors: Optional[np.ndarray], n_samples: int,
                  seed: int):
    if spec.is_naive:
        raise InputError("the naive model has no posterior; use naive_nowcast")
    if n_samples < 1:
        raise InputError(f"need at least one posterior sample, got {n_samples}")
    if spec.d_max != triangle.d_max:
        raise InputError(f"model d_max {spec.d_max} does not match triangle d_max {triangle.d_max}")
    if triangle.n_weeks <= triangle.d_max:
        raise InputError(f"triangle of {triangle.n_weeks} weeks leaves delay columns beyond "
                         f"{triangle.n_weeks - 1} unobserved (d_max {triangle.d_max})")
    n_columns = 0 if regressors is None else np.asarray(regressors).shape[1]
    if n_columns != len(spec.regressors):
        raise InputError(f"variant {spec.variant} needs {len(spec.regressors)} regressor column(s), got {n_columns}")
    if not triangle.counts[triangle.observed_mask].any():
        raise FitError("reporting triangle has no cases",
                       diagnostics={"seed": seed_or_none(seed), "variant": spec.variant})


def seed_or_none(seed):
    return None if seed is None else int(seed)


def fit(spec: ModelSpec, triangle: ReportingTriangle, regressors: Optional[np.ndarray], n_samples: int = 1000,
        seed: int = 0, priors: PriorConfig = None, inference: InferenceConfig = None,
        progress: bool = False) -> PosteriorSamples:
    """
    Approximate posterior of the delay model by a Laplace approximation on a
    grid of hyperparameters around their joint MAP.

    :param regressors: weeks x columns matrix of log signals aligned with the triangle rows
    """
    priors = priors or PriorConfig()
    cfg = inference or InferenceConfig()
    _check_inputs(spec, triangle, regressors, n_samples, seed)
    regressors = np.zeros((triangle.n_weeks, 0)) if regressors is None else np.asarray(regressors, dtype=np.float64)

    latent_field = LatentField(triangle, regressors, priors)
    objective = HyperObjective(latent_field, priors, cfg)
    theta_map = find_hyper_map(objective, np.array([math.log(10.0), math.log(0.1), math.log(0.1)]), cfg)
    center, center_mode = objective(theta_map)
    x_center = center_mode.x if math.isfinite(center) else initial_latent(latent_field)
    steps = grid_steps(objective, theta_map, center, cfg) if math.isfinite(center) \
        else np.full(3, cfg.grid_log_step)

    offsets = np.arange(cfg.grid_points) - (cfg.grid_points - 1) / 2.0
    axes = [theta_map[j] + steps[j] * offsets for j in range(3)]
    grid, modes = [], []
    lo, hi = cfg.log_hyper_bounds
    for theta in tqdm(list(itertools.product(*axes)), desc=f"grid {spec.variant}", disable=not progress):
        theta = np.clip(np.array(theta), lo, hi)
        hyper = Hyperparameters.from_log(theta)
        mode = find_mode(latent_field, hyper, x_center, cfg)
        ok = mode.converged and mode.chol is not None and math.isfinite(mode.log_density)
        score = laplace_log_marginal(latent_field, hyper, mode, priors) if ok else -math.inf
        grid.append(GridPoint(tuple(float(v) for v in theta), score, mode.converged, mode.iterations,
                              mode.max_abs_gradient))
        modes.append(mode if ok else None)

    scores = np.array([p.log_marginal for p in grid])
    diagnostics = {
        "seed": seed_or_none(seed),
        "variant": spec.variant,
        "d_max": triangle.d_max,
        "first_week": str(triangle.first_week),
        "as_of": str(triangle.as_of),
        "map_log_hyper": dict(zip(HYPER_NAMES, map(float, theta_map))),
        "grid_log_steps": dict(zip(HYPER_NAMES, map(float, steps))),
        "objective_evaluations": objective.evaluations,
    }
    if not np.isfinite(scores).any():
        diagnostics["grid"] = [_grid_entry(p) for p in grid]
        raise FitError(f"Newton iterations failed at all {len(grid)} grid points", diagnostics=diagnostics)
    n_failed = int((~np.isfinite(scores)).sum())
    if n_failed:
        logger.warning(f"{n_failed} of {len(grid)} grid point(s) did not converge and get no weight")

    weights = np.zeros_like(scores)
    finite = np.isfinite(scores)
    weights[finite] = np.exp(scores[finite] - scores[finite].max())
    weights /= weights.sum()
    grid = [GridPoint(p.log_hyper, p.log_marginal, p.converged, p.iterations, p.max_abs_gradient, float(w))
            for p, w in zip(grid, weights)]

    draws, picked = _sample_latents(latent_field, grid, modes, weights, n_samples, seed)
    layout = latent_field.layout
    x = torch.stack(draws)
    mu, alpha, beta, coef = x[:, 0], x[:, layout.alpha], x[:, layout.beta], x[:, layout.coefficients]
    log_lambda = (mu[:, None, None] + alpha[:, :, None] + beta[:, None, :]
                  + (coef @ latent_field.X.T)[:, :, None])
    log_hyper = np.array([grid[k].log_hyper for k in picked])

    used = sorted(set(picked))
    diagnostics.update({
        "n_samples": n_samples,
        "grid": [_grid_entry(p) for p in grid],
        "grid_points_sampled": len(used),
        "max_abs_gradient": max(grid[k].max_abs_gradient for k in used),
        "converged": all(grid[k].converged for k in used),
    })
    logger.info(f"fit {spec.variant} at {triangle.as_of}: {triangle.n_weeks} weeks, d_max {triangle.d_max}, "
                f"MAP phi={math.exp(theta_map[0]):.3g} eta_alpha={math.exp(theta_map[1]):.3g} "
                f"eta_beta={math.exp(theta_map[2]):.3g}")
    return PosteriorSamples(
        spec=spec, first_week=triangle.first_week, as_of=triangle.as_of,
        mu=mu.numpy(), alpha=alpha.numpy(), beta=beta.numpy(), coefficients=coef.numpy(),
        phi=np.exp(log_hyper[:, 0]), eta_alpha=np.exp(log_hyper[:, 1]), eta_beta=np.exp(log_hyper[:, 2]),
        log_lambda=log_lambda.numpy(), regressors=regressors, seed=seed_or_none(seed), diagnostics=diagnostics)


def _sample_latents(latent_field: LatentField, grid: List[GridPoint], modes: List[Optional[ModeResult]],
                    weights: np.ndarray, n_samples: int, seed: int):
    """
    Grid index from substream (seed, 0); the standard normal vector of draw s from
    substream (seed, 1, s), mapped through the Cholesky factor of its grid point.
    """
    picked = substream(seed, 0).choice(len(grid), size=n_samples, p=weights)
    draws: List[Optional[torch.Tensor]] = [None] * n_samples
    for k in sorted(set(int(p) for p in picked)):
        members = np.nonzero(picked == k)[0]
        chol = modes[k].chol
        z = np.stack([substream(seed, 1, int(s)).standard_normal(latent_field.size) for s in members], axis=1)
        # x = mode + L^{-T} z has covariance (L L^T)^{-1}
        offsets = torch.linalg.solve_triangular(chol.T, torch.as_tensor(z, dtype=DTYPE), upper=True)
        for column, s in enumerate(members):
            draws[s] = modes[k].x + offsets[:, column]
    return draws, [int(p) for p in picked]


def _grid_entry(p: GridPoint) -> dict:
    entry = {f"log_{name}": v for name, v in zip(HYPER_NAMES, p.log_hyper)}
    entry.update({name: math.exp(v) for name, v in zip(HYPER_NAMES, p.log_hyper)})
    entry.update({"log_marginal": p.log_marginal if math.isfinite(p.log_marginal) else None,
                  "converged": p.converged, "iterations": p.iterations,
                  "max_abs_gradient": p.max_abs_gradient, "weight": p.weight})
    return entry


def pointwise_log_likelihood(samples: PosteriorSamples, triangle: ReportingTriangle) -> np.ndarray:
    """draws x observed cells matrix of NB log-likelihoods, cells in row-major order."""
    if triangle.first_week != samples.first_week or triangle.as_of != samples.as_of:
        raise InputError("samples were fitted on a different triangle")
    mask = torch.tensor(np.asarray(triangle.observed_mask, dtype=bool))
    k = torch.tensor(triangle.counts, dtype=DTYPE)[mask]
    eta = torch.as_tensor(samples.log_lambda, dtype=DTYPE)[:, mask]
    phi = torch.as_tensor(samples.phi, dtype=DTYPE)[:, None]
    log_total = torch.logaddexp(torch.log(phi), eta)
    ll = (torch.lgamma(k + phi) - torch.lgamma(phi) - torch.lgamma(k + 1)
          + phi * (torch.log(phi) - log_total) + k * (eta - log_total))
    return ll.numpy()


def export_diagnostics(samples: PosteriorSamples, path: str):
    save_json(samples.diagnostics, path)
