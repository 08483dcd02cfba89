"""Terminal boundary condition ``a_T``: isotropic Gaussian, perturbed ground
truth, or a small conditional VAE."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import AdamW, Layout, dense_entries, init_dense, mlp_backward, mlp_forward

PRIOR_VARIANTS = ("gaussian", "perturbed_gt", "learned")


@dataclass(frozen=True)
class PriorKind:
    variant: str = "learned"
    gaussian_scale: float = 10.0
    perturb_scale: float = 1.0

    def __post_init__(self):
        if self.variant not in PRIOR_VARIANTS:
            raise ValueError(f"unknown prior variant {self.variant!r}")
        if self.gaussian_scale <= 0 or self.perturb_scale < 0:
            raise ValueError("prior scales must be positive")


@dataclass
class LearnedPrior:
    """Conditional VAE: encoder ``(c, a0) -> (mean, logvar)`` of z, decoder
    ``(c, z) -> trajectory``."""

    horizon: int = 8
    context_dim: int = 8
    latent_dim: int = 8
    hidden: int = 64
    beta: float = 0.1
    params: np.ndarray | None = None
    loss_trace: list = field(default_factory=list)

    def __post_init__(self):
        self.layout = Layout(dense_entries("enc", self._enc_sizes()) + dense_entries("dec", self._dec_sizes()))
        if self.params is None:
            self.params = self.layout.zeros()
        else:
            self.params = np.asarray(self.params, dtype=np.float64).copy()
            if self.params.shape != (self.layout.size,):
                raise ValueError("parameter vector does not match the prior architecture")

    @property
    def D(self) -> int:
        return 2 * self.horizon

    def _enc_sizes(self):
        return [self.context_dim + self.D, self.hidden, self.hidden, 2 * self.latent_dim]

    def _dec_sizes(self):
        return [self.context_dim + self.latent_dim, self.hidden, self.hidden, self.D]

    def init(self, rng: np.random.Generator) -> "LearnedPrior":
        p = self.layout.unflatten(self.params)
        init_dense(p, "enc", self._enc_sizes(), rng)
        init_dense(p, "dec", self._dec_sizes(), rng)
        return self

    def architecture(self) -> dict:
        return {"horizon": self.horizon, "context_dim": self.context_dim,
                "latent_dim": self.latent_dim, "hidden": self.hidden, "beta": self.beta}

    def encode(self, c, a0):
        p = self.layout.unflatten(self.params)
        x = np.concatenate([c, np.asarray(a0).reshape(-1, self.D)], axis=1)
        out, _ = mlp_forward(p, "enc", 3, x)
        return out[:, :self.latent_dim], out[:, self.latent_dim:]

    def decode(self, c, z):
        p = self.layout.unflatten(self.params)
        out, _ = mlp_forward(p, "dec", 3, np.concatenate([c, z], axis=1))
        return out.reshape(-1, self.horizon, 2)

    def sample(self, c, rng: np.random.Generator):
        """Test-time draw: ``z ~ N(0, I)``."""
        c = np.atleast_2d(c)
        return self.decode(c, rng.standard_normal((c.shape[0], self.latent_dim)))

    def sample_posterior(self, c, a0, rng: np.random.Generator):
        """Training-time draw: ``z ~ q(z | c, a0)``."""
        mean, logvar = self.encode(c, a0)
        z = mean + np.exp(0.5 * logvar) * rng.standard_normal(mean.shape)
        return self.decode(c, z)

    def loss_and_grad(self, c, a0, rng=None, noise=None):
        """Negative ELBO ``recon MSE + beta * KL`` and its flat gradient.

        Returns ``(loss, grad, recon, kl)``; KL is the per-sample sum over
        latent dimensions, averaged over the batch.
        """
        p = self.layout.unflatten(self.params)
        grad = self.layout.zeros()
        g = self.layout.unflatten(grad)
        a0 = np.asarray(a0, dtype=np.float64).reshape(-1, self.D)
        B, L = a0.shape[0], self.latent_dim
        enc_out, enc_cache = mlp_forward(p, "enc", 3, np.concatenate([c, a0], axis=1))
        mean, logvar = enc_out[:, :L], enc_out[:, L:]
        if noise is None:
            noise = rng.standard_normal(mean.shape)
        std = np.exp(0.5 * logvar)
        z = mean + std * noise
        dec_out, dec_cache = mlp_forward(p, "dec", 3, np.concatenate([c, z], axis=1))
        resid = dec_out - a0
        recon = float(np.mean(resid ** 2))
        kl_terms = 0.5 * (mean ** 2 + np.exp(logvar) - 1.0 - logvar)
        kl = float(kl_terms.sum() / B)
        loss = recon + self.beta * kl

        d_dec_in = mlp_backward(p, g, "dec", dec_cache, 2.0 * resid / resid.size)
        dz = d_dec_in[:, c.shape[1]:]
        dmean = dz + self.beta * mean / B
        dlogvar = dz * noise * 0.5 * std + self.beta * 0.5 * (np.exp(logvar) - 1.0) / B
        mlp_backward(p, g, "enc", enc_cache, np.concatenate([dmean, dlogvar], axis=1))
        return loss, grad, recon, kl


def gaussian_kl(mean, logvar):
    """Closed-form ``KL(N(mean, exp(logvar)) || N(0, I))`` per row."""
    return 0.5 * np.sum(mean ** 2 + np.exp(logvar) - 1.0 - logvar, axis=-1)


def train_prior(prior: LearnedPrior, c, a0, epochs: int, rng: np.random.Generator,
                lr: float = 1e-3, batch_size: int = 256) -> LearnedPrior:
    """Minimise the negative ELBO with AdamW; appends epoch losses to ``loss_trace``."""
    c = np.asarray(c, dtype=np.float64)
    a0 = np.asarray(a0, dtype=np.float64)
    n = a0.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    opt = AdamW(lr=lr, weight_decay=0.0)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            loss, grad, _, _ = prior.loss_and_grad(c[idx], a0[idx], rng=rng)
            if not np.isfinite(loss):
                raise FloatingPointError(f"prior loss diverged at epoch {epoch}")
            opt.update(prior.params, grad)
            total += loss * idx.size
        prior.loss_trace.append(total / n)
    return prior


def sample_prior(kind: PriorKind, c, a0=None, rng: np.random.Generator | None = None,
                 learned: LearnedPrior | None = None, horizon: int = 8):
    """Draw ``a_T`` for a batch of contexts ``c`` with shape ``(B, d)``."""
    c = np.atleast_2d(np.asarray(c, dtype=np.float64))
    B = c.shape[0]
    if kind.variant == "gaussian":
        return kind.gaussian_scale * rng.standard_normal((B, horizon, 2))
    if kind.variant == "perturbed_gt":
        if a0 is None:
            raise ValueError("perturbed_gt prior needs the ground-truth trajectory")
        a0 = np.asarray(a0, dtype=np.float64)
        return a0 + kind.perturb_scale * rng.standard_normal(a0.shape)
    if learned is None:
        raise ValueError("learned prior variant needs a trained LearnedPrior")
    return learned.sample(c, rng)


def make_train_sampler(kind: PriorKind, learned: LearnedPrior | None = None,
                       posterior: bool = True, horizon: int = 8):
    """Callable ``(c, a0, rng) -> a_T`` used inside velocity training.

    With ``posterior`` the learned prior draws ``z`` from the encoder, as in
    the training branch of the prior; otherwise from ``N(0, I)``.
    """
    if kind.variant == "learned" and posterior:
        return lambda c, a0, rng: learned.sample_posterior(c, a0, rng)
    return lambda c, a0, rng: sample_prior(kind, c, a0, rng, learned=learned, horizon=horizon)
