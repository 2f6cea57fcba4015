"""Diffusion mathematics and loops.

Forward marginal x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, noise-
prediction training objective, per-step reverse update, ancestral and
mean-only samplers, the constrained temporal super-resolution sampler,
and a Monte-Carlo variational-bound diagnostic. Steps are indexed 1..T;
schedule arrays store step t at index t - 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import (
    ConfigurationError,
    InputError,
    SamplingDivergedError,
    TrainingDivergedError,
)

PAPER_MEAN = "paper-mean"
ANCESTRAL = "ancestral"


@dataclass
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    reverse_var: np.ndarray

    def validate(self) -> None:
        for name in ("beta", "alpha", "alpha_bar", "reverse_var"):
            arr = getattr(self, name)
            if arr.shape != (self.T,):
                raise ConfigurationError(f"{name} must have length T={self.T}")
        if np.any(self.beta <= 0) or np.any(self.beta >= 1):
            raise ConfigurationError("need 0 < beta_t < 1 for all t")
        if np.any(np.diff(self.alpha_bar) >= 0):
            raise ConfigurationError("alpha_bar must be strictly decreasing")

    def alpha_bar_at(self, t: int) -> float:
        """alpha_bar for step t, with the t = 0 convention alpha_bar = 1."""
        if t == 0:
            return 1.0
        return float(self.alpha_bar[t - 1])

    def posterior_var(self, t: int) -> float:
        """Variance of q(x_{t-1} | x_t, x_0)."""
        return float(
            (1.0 - self.alpha_bar_at(t - 1))
            / (1.0 - self.alpha_bar_at(t))
            * self.beta[t - 1]
        )


def make_schedule(
    T: int, beta_start: float = 1e-4, beta_end: float = 0.02
) -> NoiseSchedule:
    """Linear beta schedule over steps 1..T; fixed reverse variance beta_t."""
    if T < 1:
        raise ConfigurationError("T must be >= 1")
    if not (0 < beta_start <= beta_end < 1):
        raise ConfigurationError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    sched = NoiseSchedule(T, beta, alpha, alpha_bar, reverse_var=beta.copy())
    sched.validate()
    return sched


def _check_step(t: int, T: int) -> None:
    if not 1 <= t <= T:
        raise InputError(f"step {t} outside [1, {T}]")


def forward_sample(x0, t: int, eps, sched: NoiseSchedule):
    """Closed-form forward marginal sample; works on numpy or torch arrays."""
    _check_step(t, sched.T)
    ab = float(sched.alpha_bar[t - 1])
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def forward_compose(x0: np.ndarray, k: int, sched: NoiseSchedule, rng) -> np.ndarray:
    """Iterate the per-step transition x_t = sqrt(a_t) x_{t-1} + sqrt(b_t) e_t.

    The training loop's literal forward recursion; matches the closed
    form marginal at step k in distribution.
    """
    _check_step(k, sched.T)
    x = np.asarray(x0, dtype=np.float64)
    for t in range(1, k + 1):
        eps = rng.standard_normal(x.shape)
        x = math.sqrt(sched.alpha[t - 1]) * x + math.sqrt(sched.beta[t - 1]) * eps
    return x


def _model_dtype(model) -> torch.dtype:
    try:
        return next(model.parameters()).dtype
    except (AttributeError, StopIteration):
        return torch.float64


def training_loss(x0, cond_features, t: int, eps, model, sched: NoiseSchedule):
    """Squared L2 norm between eps and the model's prediction at step t.

    Returns a torch scalar (differentiable when the model is).
    """
    _check_step(t, sched.T)
    dtype = _model_dtype(model)
    x0 = torch.as_tensor(x0, dtype=dtype)
    eps = torch.as_tensor(eps, dtype=dtype)
    cond = torch.as_tensor(cond_features, dtype=dtype)
    if x0.shape != eps.shape:
        raise ConfigurationError(
            f"x0 shape {tuple(x0.shape)} != eps shape {tuple(eps.shape)}"
        )
    x_t = forward_sample(x0, t, eps, sched)
    eps_hat = model(x_t[None], torch.tensor([t]), cond[None])[0]
    return torch.sum((eps - eps_hat) ** 2)


@dataclass
class DiffusionTrainConfig:
    lr: float = 1e-3
    batch_size: int = 8
    steps: int = 2000
    seed: int = 0


@dataclass
class TrainState:
    model: object
    optimizer: object
    step: int
    seed: int
    loss_history: list[float] = field(default_factory=list)


def train(
    x0_tokens: np.ndarray,
    cond_features: np.ndarray,
    model,
    sched: NoiseSchedule,
    hyper: DiffusionTrainConfig,
) -> TrainState:
    """Noise-prediction training: uniform t, Adam updates, seeded batches."""
    x0_tokens = np.asarray(x0_tokens)
    cond_features = np.asarray(cond_features)
    if x0_tokens.ndim != 3 or x0_tokens.shape[0] == 0:
        raise InputError("need a non-empty (N, tokens, width) x0 stack")
    if cond_features.shape[0] != x0_tokens.shape[0]:
        raise InputError("x0 and condition stacks disagree in length")

    dtype = _model_dtype(model)
    data_x0 = torch.as_tensor(x0_tokens, dtype=dtype)
    data_cond = torch.as_tensor(cond_features, dtype=dtype)
    abar = torch.as_tensor(sched.alpha_bar, dtype=dtype)
    n = data_x0.shape[0]

    torch.manual_seed(hyper.seed)
    gen = torch.Generator().manual_seed(hyper.seed)
    opt = torch.optim.Adam(model.parameters(), lr=hyper.lr)
    state = TrainState(model, opt, 0, hyper.seed)

    for step in range(hyper.steps):
        idx = torch.randint(0, n, (hyper.batch_size,), generator=gen)
        t = torch.randint(1, sched.T + 1, (hyper.batch_size,), generator=gen)
        x0 = data_x0[idx]
        eps = torch.randn(x0.shape, generator=gen, dtype=dtype)
        ab = abar[t - 1][:, None, None]
        x_t = torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * eps
        eps_hat = model(x_t, t, data_cond[idx])
        loss = torch.sum((eps - eps_hat) ** 2, dim=(1, 2)).mean()
        if not torch.isfinite(loss):
            raise TrainingDivergedError(
                f"non-finite loss at step {step}",
                step=step,
                recent_losses=state.loss_history[-10:],
            )
        opt.zero_grad()
        loss.backward()
        opt.step()
        state.loss_history.append(float(loss.detach()))
        state.step = step + 1
    return state


def reverse_step(x_t, t: int, eps_hat, sched: NoiseSchedule, mode: str = PAPER_MEAN, rng=None):
    """One reverse update x_t -> x_{t-1}.

    paper-mean returns the deterministic mean update; ancestral adds
    sqrt(reverse_var_t) * z for t > 1.
    """
    _check_step(t, sched.T)
    if mode not in (PAPER_MEAN, ANCESTRAL):
        raise ConfigurationError(f"unknown sampler mode {mode!r}")
    beta = float(sched.beta[t - 1])
    alpha = float(sched.alpha[t - 1])
    ab = float(sched.alpha_bar[t - 1])
    coef = 0.0 if beta == 0.0 else beta / math.sqrt(1.0 - ab)
    mean = (x_t - coef * eps_hat) / math.sqrt(alpha)
    if mode == ANCESTRAL and t > 1:
        sigma = math.sqrt(float(sched.reverse_var[t - 1]))
        if torch.is_tensor(x_t):
            z = torch.randn(x_t.shape, generator=rng, dtype=x_t.dtype)
        else:
            z = rng.standard_normal(np.asarray(x_t).shape)
        mean = mean + sigma * z
    return mean


@dataclass
class SamplerConfig:
    mode: str = PAPER_MEAN
    lowres_lambda: float = 0.5
    group_size: int = 3

    def validate(self) -> None:
        if self.mode not in (PAPER_MEAN, ANCESTRAL):
            raise ConfigurationError(f"unknown sampler mode {self.mode!r}")
        if self.group_size < 1:
            raise ConfigurationError("group_size must be >= 1")
        if not (0.0 < self.lowres_lambda <= 1.0):
            raise ConfigurationError("lowres_lambda must lie in (0, 1]")


def _finite_or_raise(x: torch.Tensor, t: int) -> None:
    if not torch.isfinite(x).all():
        raise SamplingDivergedError(
            f"non-finite sampler state at step {t}", step=t
        )


def sample(
    cond_features: np.ndarray,
    model,
    sched: NoiseSchedule,
    cfg: SamplerConfig,
    seed: int,
    token_shape: tuple[int, int] | None = None,
) -> np.ndarray:
    """Reverse loop from pure noise, conditioned per frame.

    cond_features: (frames, tokens, feature dim). Returns x0 tokens
    (frames, tokens, token width).
    """
    cfg.validate()
    dtype = _model_dtype(model)
    cond = torch.as_tensor(np.asarray(cond_features), dtype=dtype)
    if token_shape is None:
        token_shape = (model.config.token_count, model.config.token_width)
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn((cond.shape[0],) + token_shape, generator=gen, dtype=dtype)
    with torch.no_grad():
        for t in range(sched.T, 0, -1):
            t_vec = torch.full((x.shape[0],), t, dtype=torch.long)
            eps_hat = model(x, t_vec, cond)
            x = reverse_step(x, t, eps_hat, sched, cfg.mode, gen)
            _finite_or_raise(x, t)
    return x.numpy().astype(np.float64)


def sample_superres(
    cond_features: np.ndarray,
    lowres_tokens: np.ndarray,
    model,
    sched: NoiseSchedule,
    cfg: SamplerConfig,
    seed: int,
) -> np.ndarray:
    """Jointly sample group_size frames per low-res frame with a
    consistency projection.

    The frames of each group start from one shared noise draw, so
    within-group differences are driven by their (stride-shifted)
    conditions rather than independent initialization noise. After every
    reverse step (state now at step s), each group of group_size
    consecutive latents is shifted by
    lambda * (sqrt(abar_s) * z_lowres - group mean); lambda is forced to
    1 at the terminal step so each output triple's mean matches its
    low-res anchor.
    """
    cfg.validate()
    g = cfg.group_size
    cond = np.asarray(cond_features)
    lowres = np.asarray(lowres_tokens)
    if lowres.ndim != 3:
        raise InputError("lowres_tokens must be (frames, tokens, width)")
    if cond.shape[0] != g * lowres.shape[0]:
        raise InputError(
            f"{cond.shape[0]} condition windows do not align with "
            f"{lowres.shape[0]} low-res frames at group size {g}"
        )
    dtype = _model_dtype(model)
    cond_t = torch.as_tensor(cond, dtype=dtype)
    z_low = torch.as_tensor(lowres, dtype=dtype)
    n_hi = cond_t.shape[0]
    n_lo, n_tok, width = z_low.shape

    gen = torch.Generator().manual_seed(seed)
    x = torch.randn((n_lo, 1, n_tok, width), generator=gen, dtype=dtype)
    x = x.repeat(1, g, 1, 1).reshape(n_hi, n_tok, width)
    with torch.no_grad():
        for t in range(sched.T, 0, -1):
            t_vec = torch.full((n_hi,), t, dtype=torch.long)
            eps_hat = model(x, t_vec, cond_t)
            x = reverse_step(x, t, eps_hat, sched, cfg.mode, gen)
            s = t - 1
            lam = 1.0 if s == 0 else cfg.lowres_lambda
            target = math.sqrt(sched.alpha_bar_at(s)) * z_low
            group_mean = x.reshape(n_lo, g, n_tok, width).mean(dim=1)
            shift = lam * (target - group_mean)
            x = x + shift.repeat_interleave(g, dim=0)
            _finite_or_raise(x, t)
    return x.numpy().astype(np.float64)


def variational_bound(
    x0: np.ndarray,
    cond_features: np.ndarray,
    model,
    sched: NoiseSchedule,
    n_mc: int,
    seed: int = 0,
) -> float:
    """Monte-Carlo estimate of the per-sample variational bound, in nats.

    Reconstruction negative log-likelihood at t = 1 plus the sum over
    t >= 2 of KL(q(x_{t-1}|x_t, x_0) || p(x_{t-1}|x_t, c)) with the
    schedule's fixed reverse variance.
    """
    if n_mc < 1:
        raise ConfigurationError("n_mc must be >= 1")
    dtype = _model_dtype(model)
    x0_t = torch.as_tensor(np.asarray(x0), dtype=dtype)
    cond = torch.as_tensor(np.asarray(cond_features), dtype=dtype)
    T = sched.T
    abar = torch.as_tensor(sched.alpha_bar, dtype=dtype)
    abar_prev = torch.cat([torch.ones(1, dtype=dtype), abar[:-1]])
    beta = torch.as_tensor(sched.beta, dtype=dtype)
    alpha = torch.as_tensor(sched.alpha, dtype=dtype)
    var_p = torch.as_tensor(sched.reverse_var, dtype=dtype)
    var_q = (1.0 - abar_prev) / (1.0 - abar) * beta

    gen = torch.Generator().manual_seed(seed)
    t_vec = torch.arange(1, T + 1, dtype=torch.long)
    col = (slice(None),) + (None,) * x0_t.ndim
    total = 0.0
    with torch.no_grad():
        for _ in range(n_mc):
            eps = torch.randn((T,) + tuple(x0_t.shape), generator=gen, dtype=dtype)
            x_t = torch.sqrt(abar)[col] * x0_t + torch.sqrt(1.0 - abar)[col] * eps
            eps_hat = model(x_t, t_vec, cond.expand((T,) + tuple(cond.shape)))
            mu_model = (
                x_t - (beta / torch.sqrt(1.0 - abar))[col] * eps_hat
            ) / torch.sqrt(alpha)[col]

            # t = 1: Gaussian reconstruction NLL of x0 under p(x0 | x1).
            nll = 0.5 * torch.sum(
                (x0_t - mu_model[0]) ** 2 / var_p[0]
                + math.log(2.0 * math.pi)
                + torch.log(var_p[0])
            )

            # t >= 2: closed-form Gaussian KL per step.
            mu_post = (
                torch.sqrt(abar_prev)[col] * beta[col] * x0_t
                + torch.sqrt(alpha)[col] * (1.0 - abar_prev)[col] * x_t
            ) / (1.0 - abar)[col]
            d = float(np.prod(x0_t.shape))
            kl_t = 0.5 * (
                d * torch.log(var_p / var_q)
                + (d * var_q + torch.sum((mu_post - mu_model) ** 2, dim=tuple(range(1, x_t.ndim)))) / var_p
                - d
            )
            total += float(nll + kl_t[1:].sum())
    return total / n_mc
