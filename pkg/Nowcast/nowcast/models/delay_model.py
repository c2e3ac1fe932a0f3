import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import torch

from ..config.run_config import PriorConfig
from ..dataset import ReportingTriangle
from ..errors import InputError, ParameterError
from ..signals import RegressorSet

DTYPE = torch.float64

# variant -> coefficient labels of its regressors
VARIANTS = {
    "baseline": (),
    "google_dengue": ("gamma_d",),
    "twitter": ("delta",),
    "google_dengue_twitter": ("gamma_d", "delta"),
    "google_all": ("gamma_d", "gamma_z", "gamma_c"),
    "google_all_twitter": ("gamma_d", "gamma_z", "gamma_c", "delta"),
    "naive": (),
}


def variant_name(name: str) -> str:
    """Accepts both ``google-dengue-twitter`` and ``google_dengue_twitter``."""
    key = name.strip().lower().replace("-", "_")
    if key not in VARIANTS:
        valid = " | ".join(v.replace("_", "-") for v in VARIANTS)
        raise InputError(f"unknown model variant {name!r}; valid names: {valid}")
    return key


@dataclass(frozen=True, eq=False)
class ModelSpec:
    variant: str
    regressors: RegressorSet = field(default_factory=RegressorSet)
    d_max: int = 8

    def __post_init__(self):
        object.__setattr__(self, "variant", variant_name(self.variant))
        expected = VARIANTS[self.variant]
        if sorted(self.regressors.labels) != sorted(expected):
            raise InputError(f"variant {self.variant} needs regressors {list(expected)}, "
                             f"got {list(self.regressors.labels)}")
        if self.d_max < 0:
            raise InputError(f"d_max must be non-negative, got {self.d_max}")

    @property
    def is_naive(self) -> bool:
        return self.variant == "naive"


@dataclass(frozen=True, eq=False)
class LatentState:
    mu: float
    alpha: np.ndarray
    beta: np.ndarray
    gamma_delta: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma_delta"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(-1))

    def to_vector(self) -> torch.Tensor:
        return torch.cat([torch.tensor([float(self.mu)], dtype=DTYPE), torch.as_tensor(self.alpha, dtype=DTYPE),
                          torch.as_tensor(self.beta, dtype=DTYPE), torch.as_tensor(self.gamma_delta, dtype=DTYPE)])


@dataclass(frozen=True)
class Hyperparameters:
    phi: float
    eta_alpha: float
    eta_beta: float

    def __post_init__(self):
        for name in ("phi", "eta_alpha", "eta_beta"):
            value = getattr(self, name)
            if not value > 0 or not math.isfinite(value):
                raise ParameterError(f"{name} must be a positive finite number, got {value}")

    @classmethod
    def from_log(cls, theta) -> "Hyperparameters":
        log_phi, log_eta_alpha, log_eta_beta = (float(v) for v in theta)
        return cls(math.exp(log_phi), math.exp(log_eta_alpha), math.exp(log_eta_beta))

    def to_log(self) -> Tuple[float, float, float]:
        return math.log(self.phi), math.log(self.eta_alpha), math.log(self.eta_beta)


@dataclass(frozen=True)
class LatentLayout:
    """ Latent vector order: mu | alpha_0..alpha_{T-1} | beta_0..beta_D | coefficients """
    n_weeks: int
    n_delays: int
    n_coefficients: int

    @property
    def size(self) -> int:
        return 1 + self.n_weeks + self.n_delays + self.n_coefficients

    @property
    def alpha(self) -> slice:
        return slice(1, 1 + self.n_weeks)

    @property
    def beta(self) -> slice:
        return slice(1 + self.n_weeks, 1 + self.n_weeks + self.n_delays)

    @property
    def coefficients(self) -> slice:
        return slice(1 + self.n_weeks + self.n_delays, self.size)

    def split(self, x: torch.Tensor):
        return x[0], x[self.alpha], x[self.beta], x[self.coefficients]

    def to_state(self, x: torch.Tensor) -> LatentState:
        x = x.detach().cpu().numpy()
        return LatentState(mu=float(x[0]), alpha=x[self.alpha], beta=x[self.beta], gamma_delta=x[self.coefficients])


def nb_log_pmf(k, lam, phi):
    """
    Negative binomial log-probability with mean ``lam`` and variance ``lam * (1 + lam / phi)``.
    Scalars in, float out; arrays in, tensor out.
    """
    k, lam, phi = (torch.as_tensor(v, dtype=DTYPE) for v in (k, lam, phi))
    if not bool((lam > 0).all()) or not bool((phi > 0).all()):
        raise ParameterError("negative binomial needs lambda > 0 and phi > 0")
    log_total = torch.logaddexp(torch.log(phi), torch.log(lam))
    out = (torch.lgamma(k + phi) - torch.lgamma(phi) - torch.lgamma(k + 1)
           - phi * torch.log1p(lam / phi) + k * (torch.log(lam) - log_total))
    return out.item() if out.dim() == 0 else out


def linear_predictor(state: LatentState, regressors: Optional[np.ndarray], t: int, tau: int) -> float:
    """log lambda_{t,tau} = mu + alpha_t + beta_tau + sum_j coefficient_j * regressor_{t,j}"""
    if not 0 <= t < state.alpha.shape[0]:
        raise InputError(f"week index {t} out of range 0..{state.alpha.shape[0] - 1}")
    if not 0 <= tau < state.beta.shape[0]:
        raise InputError(f"delay {tau} out of range 0..{state.beta.shape[0] - 1}")
    value = state.mu + state.alpha[t] + state.beta[tau]
    if state.gamma_delta.size:
        if regressors is None or np.ndim(regressors) != 2 or np.shape(regressors)[1] != state.gamma_delta.size:
            raise InputError(f"{state.gamma_delta.size} coefficient(s) need as many regressor columns")
        value += float(np.dot(state.gamma_delta, regressors[t]))
    return float(value)


def _log_gamma_density(u, shape: float, rate: float):
    """Density of u = log(v) for v ~ gamma(shape, rate)."""
    return shape * math.log(rate) - math.lgamma(shape) + shape * u - rate * math.exp(u)


def hyper_log_prior(hyper: Hyperparameters, priors: PriorConfig) -> float:
    """Gamma priors on phi and on the precisions 1/eta, expressed on the log scale."""
    log_phi, log_eta_alpha, log_eta_beta = hyper.to_log()
    a, b = priors.hyper_shape, priors.hyper_rate
    return (_log_gamma_density(log_phi, a, b) + _log_gamma_density(-log_eta_alpha, a, b)
            + _log_gamma_density(-log_eta_beta, a, b))


def _walk_precision(n: int, eta: float, init_variance: float) -> torch.Tensor:
    q = torch.zeros((n, n), dtype=DTYPE)
    if n > 1:
        idx = torch.arange(n - 1)
        q[idx, idx] += 1.0 / eta
        q[idx + 1, idx + 1] += 1.0 / eta
        q[idx, idx + 1] -= 1.0 / eta
        q[idx + 1, idx] -= 1.0 / eta
    q[0, 0] += 1.0 / init_variance
    return q


class LatentField:
    """
    Conditional log-posterior of the latent vector given hyperparameters over the
    observed cells of a triangle, with its analytic gradient and Hessian.
    """

    def __init__(self, triangle: ReportingTriangle, regressors: Optional[np.ndarray], priors: PriorConfig):
        n_weeks, n_delays = triangle.counts.shape
        if regressors is None:
            regressors = np.zeros((n_weeks, 0))
        regressors = np.asarray(regressors, dtype=np.float64)
        if regressors.ndim != 2 or regressors.shape[0] != n_weeks:
            raise InputError(f"regressor matrix {regressors.shape} does not match {n_weeks} triangle weeks")

        self.layout = LatentLayout(n_weeks, n_delays, regressors.shape[1])
        self.priors = priors
        self.k = torch.tensor(triangle.counts, dtype=DTYPE)
        self.mask = torch.tensor(np.asarray(triangle.observed_mask, dtype=bool))
        self.X = torch.tensor(regressors, dtype=DTYPE)
        self.log_k_factorial = torch.lgamma(self.k + 1)

    @property
    def size(self) -> int:
        return self.layout.size

    def eta(self, x: torch.Tensor) -> torch.Tensor:
        mu, alpha, beta, coef = self.layout.split(x)
        return mu + alpha[:, None] + beta[None, :] + (self.X @ coef)[:, None]

    def prior_precision(self, hyper: Hyperparameters) -> torch.Tensor:
        layout, priors = self.layout, self.priors
        q = torch.zeros((layout.size, layout.size), dtype=DTYPE)
        q[0, 0] = 1.0 / priors.coef_variance
        q[layout.alpha, layout.alpha] = _walk_precision(layout.n_weeks, hyper.eta_alpha, priors.walk_init_variance)
        q[layout.beta, layout.beta] = _walk_precision(layout.n_delays, hyper.eta_beta, priors.walk_init_variance)
        c = layout.coefficients
        q[c, c] = torch.eye(layout.n_coefficients, dtype=DTYPE) / priors.coef_variance
        return q

    def log_prior_constant(self, hyper: Hyperparameters) -> float:
        layout, priors = self.layout, self.priors
        log_2pi = math.log(2 * math.pi)
        gaussian = lambda variance: -0.5 * (log_2pi + math.log(variance))
        return ((1 + layout.n_coefficients) * gaussian(priors.coef_variance)
                + 2 * gaussian(priors.walk_init_variance)
                + (layout.n_weeks - 1) * gaussian(hyper.eta_alpha)
                + (layout.n_delays - 1) * gaussian(hyper.eta_beta))

    def cell_log_likelihood(self, x: torch.Tensor, phi: float) -> torch.Tensor:
        """NB log-likelihood per cell, zero on unobserved cells."""
        eta = self.eta(x)
        phi_t = torch.tensor(phi, dtype=DTYPE)
        log_total = torch.logaddexp(torch.log(phi_t), eta)
        ll = (torch.lgamma(self.k + phi_t) - torch.lgamma(phi_t) - self.log_k_factorial
              + phi_t * (torch.log(phi_t) - log_total) + self.k * (eta - log_total))
        return torch.where(self.mask, ll, torch.zeros_like(ll))

    def log_likelihood(self, x: torch.Tensor, phi: float) -> torch.Tensor:
        return self.cell_log_likelihood(x, phi).sum()

    def log_prior(self, x: torch.Tensor, hyper: Hyperparameters, q: Optional[torch.Tensor] = None) -> torch.Tensor:
        q = self.prior_precision(hyper) if q is None else q
        return -0.5 * x @ (q @ x) + self.log_prior_constant(hyper)

    def log_density(self, x: torch.Tensor, hyper: Hyperparameters, q: Optional[torch.Tensor] = None) -> torch.Tensor:
        return self.log_likelihood(x, hyper.phi) + self.log_prior(x, hyper, q)

    def _cell_derivatives(self, x: torch.Tensor, phi: float):
        eta = self.eta(x)
        log_phi = math.log(phi)
        share = torch.sigmoid(eta - log_phi)  # lambda / (phi + lambda)
        first = self.k * (1 - share) - phi * share
        second = -(self.k + phi) * share * (1 - share)
        zero = torch.zeros_like(first)
        return torch.where(self.mask, first, zero), torch.where(self.mask, second, zero)

    def gradient(self, x: torch.Tensor, hyper: Hyperparameters, q: Optional[torch.Tensor] = None) -> torch.Tensor:
        q = self.prior_precision(hyper) if q is None else q
        g_cells, _ = self._cell_derivatives(x, hyper.phi)
        rows = g_cells.sum(dim=1)
        g = torch.cat([g_cells.sum().reshape(1), rows, g_cells.sum(dim=0), self.X.T @ rows])
        return g - q @ x

    def hessian(self, x: torch.Tensor, hyper: Hyperparameters, q: Optional[torch.Tensor] = None) -> torch.Tensor:
        layout = self.layout
        q = self.prior_precision(hyper) if q is None else q
        _, w = self._cell_derivatives(x, hyper.phi)
        rows, cols = w.sum(dim=1), w.sum(dim=0)
        a, b, c = layout.alpha, layout.beta, layout.coefficients

        h = torch.zeros((layout.size, layout.size), dtype=DTYPE)
        h[0, 0] = w.sum()
        h[0, a] = rows
        h[0, b] = cols
        h[0, c] = rows @ self.X
        h[a, a] = torch.diag(rows)
        h[a, b] = w
        h[a, c] = rows[:, None] * self.X
        h[b, b] = torch.diag(cols)
        h[b, c] = w.T @ self.X
        h[c, c] = self.X.T @ (rows[:, None] * self.X)
        upper = torch.triu(h, diagonal=1)
        h = torch.diag(torch.diagonal(h)) + upper + upper.T
        return h - q


def log_posterior(state: LatentState, hyper: Hyperparameters, triangle: ReportingTriangle,
                  regressors: Optional[np.ndarray], priors: PriorConfig = None) -> float:
    """
    Observed-cell NB log-likelihood plus the RW1, intercept, coefficient and
    hyperparameter prior log-densities.
    """
    priors = priors or PriorConfig()
    latent_field = LatentField(triangle, regressors, priors)
    x = state.to_vector()
    if x.shape[0] != latent_field.size:
        raise InputError(f"state has {x.shape[0]} coordinates, triangle and regressors need {latent_field.size}")
    return float(latent_field.log_density(x, hyper)) + hyper_log_prior(hyper, priors)


def log_posterior_gradient(state: LatentState, hyper: Hyperparameters, triangle: ReportingTriangle,
                           regressors: Optional[np.ndarray], priors: PriorConfig = None) -> np.ndarray:
    """Gradient of log_posterior in the latent vector order mu | alpha | beta | coefficients."""
    priors = priors or PriorConfig()
    latent_field = LatentField(triangle, regressors, priors)
    x = state.to_vector()
    if x.shape[0] != latent_field.size:
        raise InputError(f"state has {x.shape[0]} coordinates, triangle and regressors need {latent_field.size}")
    return latent_field.gradient(x, hyper).numpy()
