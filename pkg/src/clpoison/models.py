"""The solver (MLP classifier) and generator (VAE) shared by every learner."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .params import ParamSet


def _init_affine(rng: np.random.Generator, fan_in: int, fan_out: int) -> tuple[np.ndarray, np.ndarray]:
    # Uniform fan-in scaling; biases start at zero.
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    return w, np.zeros(fan_out)


def softmax(logits: np.ndarray, active: np.ndarray | None = None) -> np.ndarray:
    """Row-wise softmax; inactive classes get probability exactly 0."""
    logits = np.asarray(logits, dtype=np.float64)
    if active is not None:
        logits = np.where(np.asarray(active, dtype=bool), logits, -np.inf)
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    e = np.where(np.isfinite(logits), e, 0.0)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class SoftTargets:
    """Per-sample probability rows used as distillation targets."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 2:
            raise ValueError(f"soft targets must be 2-D, got shape {probs.shape}")
        if probs.size and probs.min() < 0:
            raise ValueError("soft target probabilities must be non-negative")
        if probs.size and np.abs(probs.sum(axis=1) - 1.0).max() > 1e-6:
            raise ValueError("soft target rows must sum to 1")
        object.__setattr__(self, "probs", probs)

    def __len__(self) -> int:
        return self.probs.shape[0]


class MlpClassifier:
    """Fully-connected relu classifier over flat inputs."""

    def __init__(
        self,
        input_dim: int,
        num_classes: int,
        hidden: tuple[int, ...] = (256, 256),
        rng: np.random.Generator | None = None,
        params: ParamSet | None = None,
    ):
        self.input_dim = int(input_dim)
        self.num_classes = int(num_classes)
        self.hidden = tuple(int(h) for h in hidden)
        if params is not None:
            self.params = params
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            widths = [self.input_dim, *self.hidden, self.num_classes]
            tensors = {}
            for i in range(len(widths) - 1):
                w, b = _init_affine(rng, widths[i], widths[i + 1])
                tensors[f"w{i}"] = w
                tensors[f"b{i}"] = b
            self.params = ParamSet(tensors)

    @property
    def layer_widths(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.num_classes]

    def forward(self, params, X):
        """Logits for a batch; works on tape Vars and plain arrays alike."""
        h = X
        n_layers = len(self.hidden) + 1
        for i in range(n_layers):
            h = ad.affine(h, params[f"w{i}"], params[f"b{i}"])
            if i < n_layers - 1:
                h = ad.relu(h)
        return h

    def classify(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ValueError(f"expected batch of shape (n, {self.input_dim}), got {X.shape}")
        return self.forward(self.params, X)

    def predict(self, X: np.ndarray, active: np.ndarray | None = None) -> np.ndarray:
        logits = self.classify(X)
        if active is not None:
            logits = np.where(np.asarray(active, dtype=bool), logits, -np.inf)
        return logits.argmax(axis=1)

    def copy(self) -> "MlpClassifier":
        return MlpClassifier(
            self.input_dim, self.num_classes, self.hidden, params=self.params.copy()
        )


def cross_entropy(logits, targets, active: np.ndarray | None = None):
    """Mean cross-entropy; targets may be hard labels, SoftTargets, or prob rows.

    A one-hot soft target gives exactly the hard-label loss.
    """
    if isinstance(targets, SoftTargets):
        targets = targets.probs
    return ad.softmax_cross_entropy(logits, targets, active=active)


class Vae:
    """Variational autoencoder with a Bernoulli (sigmoid) output head."""

    def __init__(
        self,
        input_dim: int,
        latent_dim: int = 32,
        hidden: int = 256,
        rng: np.random.Generator | None = None,
        params: ParamSet | None = None,
    ):
        self.input_dim = int(input_dim)
        self.latent_dim = int(latent_dim)
        self.hidden = int(hidden)
        if params is not None:
            self.params = params
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            tensors = {}
            for name, (fi, fo) in {
                "enc_w0": (self.input_dim, self.hidden),
                "enc_wmu": (self.hidden, self.latent_dim),
                "enc_wlv": (self.hidden, self.latent_dim),
                "dec_w0": (self.latent_dim, self.hidden),
                "dec_w1": (self.hidden, self.input_dim),
            }.items():
                w, b = _init_affine(rng, fi, fo)
                tensors[name] = w
                tensors[name.replace("w", "b", 1)] = b
            self.params = ParamSet(tensors)

    def encode(self, params, X):
        h = ad.relu(ad.affine(X, params["enc_w0"], params["enc_b0"]))
        mu = ad.affine(h, params["enc_wmu"], params["enc_bmu"])
        logvar = ad.affine(h, params["enc_wlv"], params["enc_blv"])
        return mu, logvar

    def decode_logits(self, params, Z):
        h = ad.relu(ad.affine(Z, params["dec_w0"], params["dec_b0"]))
        return ad.affine(h, params["dec_w1"], params["dec_b1"])

    def decode(self, Z: np.ndarray) -> np.ndarray:
        return ad.sigmoid(self.decode_logits(self.params, np.asarray(Z, dtype=np.float64)))

    def loss_fn(self, X: np.ndarray, eps: np.ndarray):
        """Build the ELBO-style loss closure for one fixed noise draw."""
        X = _check_unit_range(X, self.input_dim)
        if eps.shape != (X.shape[0], self.latent_dim):
            raise ValueError(f"eps must have shape {(X.shape[0], self.latent_dim)}")

        def fn(params):
            mu, logvar = self.encode(params, X)
            std = ad.exp(ad.mul(logvar, 0.5))
            z = ad.add(mu, ad.mul(std, eps))
            recon = ad.binary_cross_entropy_logits(self.decode_logits(params, z), X)
            return ad.add(recon, ad.gaussian_kl(mu, logvar))

        return fn

    def copy(self) -> "Vae":
        return Vae(self.input_dim, self.latent_dim, self.hidden, params=self.params.copy())


def _check_unit_range(X: np.ndarray, input_dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != input_dim:
        raise ValueError(f"expected batch of shape (n, {input_dim}), got {X.shape}")
    if X.size and (X.min() < 0.0 or X.max() > 1.0):
        raise ValueError("inputs must be pre-normalized to [0, 1]")
    return X


def vae_loss(vae: Vae, X: np.ndarray, rng: np.random.Generator) -> float:
    """Reconstruction + KL value on one noise draw (batch means)."""
    X = np.asarray(X, dtype=np.float64)
    eps = rng.standard_normal((X.shape[0], vae.latent_dim))
    loss = vae.loss_fn(X, eps)(vae.params)  # ndarray params take the no-tape path
    return float(np.asarray(loss))


def vae_generate(vae: Vae, n: int, rng: np.random.Generator) -> np.ndarray:
    """Decode n latent draws; output lies in [0, 1] by the sigmoid head."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return np.zeros((0, vae.input_dim))
    z = rng.standard_normal((n, vae.latent_dim))
    return vae.decode(z)
