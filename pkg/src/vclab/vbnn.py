"""Mean-field Gaussian variational network with hand-written reverse-mode
gradients.

Every weight and bias is an independent Gaussian N(mu, exp(logvar)). The
forward pass draws whole-tensor weight samples

    w = mu + exp(logvar / 2) * eps,    eps ~ N(0, 1)

one draw per Monte Carlo sample, shared across the batch, and the training
objective for a batch is

    loss = nll + beta * kl / n_task

where nll is the mean negative log-likelihood over samples and batch and kl
is the closed-form KL from the current posterior to the running prior,
summed over the trunk and the active head in nats. Dividing the KL by the
task's training-set size makes per-batch gradients unbiased estimates of the
full per-task objective.

The likelihood part of the gradient flows pathwise through the sampled
weights into (mu, logvar); the KL part is differentiated analytically.
``backward_gradients`` is verified against central finite differences with
frozen noise in the test suite -- there is no autodiff anywhere.

Architecture is fixed: a shared trunk of affine+ReLU layers plus one affine
output head per task. Heads are created lazily; a head that is not active
contributes nothing to the KL and receives no updates.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numerics import AdamState, NumericError, adam_step, gaussian_sample

INIT_LOGVAR = -6.0


@dataclass
class VariationalLayer:
    """One affine layer's variational parameters: (mu, logvar) for W and b."""

    mu_w: np.ndarray       # (fan_in, fan_out)
    logvar_w: np.ndarray   # (fan_in, fan_out)
    mu_b: np.ndarray       # (fan_out,)
    logvar_b: np.ndarray   # (fan_out,)

    @property
    def fan_in(self) -> int:
        return self.mu_w.shape[0]

    @property
    def fan_out(self) -> int:
        return self.mu_w.shape[1]

    def param_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.mu_w, self.logvar_w, self.mu_b, self.logvar_b

    def copy(self, frozen: bool = False) -> "VariationalLayer":
        arrays = [a.copy() for a in self.param_arrays()]
        if frozen:
            for a in arrays:
                a.flags.writeable = False
        return VariationalLayer(*arrays)


def _init_layer(fan_in: int, fan_out: int, rng: np.random.Generator) -> VariationalLayer:
    # Mean init N(0, 0.1^2); logvar -6 starts training near-deterministic.
    # The 0.1 scale must stay large enough for one-epoch difficulty probes
    # to learn through the trunk.
    return VariationalLayer(
        mu_w=0.1 * gaussian_sample(rng, fan_in, fan_out),
        logvar_w=np.full((fan_in, fan_out), INIT_LOGVAR),
        mu_b=np.zeros(fan_out),
        logvar_b=np.full(fan_out, INIT_LOGVAR),
    )


class VariationalNet:
    """Shared variational trunk plus per-task variational heads."""

    def __init__(self, input_dim: int, hidden_dims: Sequence[int], head_output_dim: int,
                 trunk: list[VariationalLayer], heads: dict[int, VariationalLayer]):
        self.input_dim = input_dim
        self.hidden_dims = tuple(hidden_dims)
        self.head_output_dim = head_output_dim
        self.trunk = trunk
        self.heads = heads

    @property
    def trunk_width(self) -> int:
        """Width of the representation consumed by every head."""
        return self.hidden_dims[-1] if self.hidden_dims else self.input_dim

    def head(self, head_index: int) -> VariationalLayer:
        try:
            return self.heads[head_index]
        except KeyError:
            raise KeyError(f"no head {head_index}; existing heads: {sorted(self.heads)}") from None

    def ensure_head(self, head_index: int, rng: np.random.Generator,
                    n_out: int | None = None) -> VariationalLayer:
        """Create the head if missing (fresh init, N(0,1) prior implied)."""
        if head_index not in self.heads:
            self.heads[head_index] = _init_layer(self.trunk_width, n_out or self.head_output_dim, rng)
        return self.heads[head_index]

    def active_layers(self, head_index: int) -> list[VariationalLayer]:
        """Trunk layers followed by the given head: the trainable set."""
        return [*self.trunk, self.head(head_index)]


def init_network(input_dim: int, hidden_dims: Sequence[int], head_output_dim: int,
                 rng: np.random.Generator) -> VariationalNet:
    """Fresh network with no heads yet; heads are added lazily per task."""
    dims = [input_dim, *hidden_dims, head_output_dim]
    if any(int(d) < 1 for d in dims):
        raise ValueError(f"all dimensions must be >= 1, got {dims}")
    widths = [input_dim, *hidden_dims]
    trunk = [_init_layer(widths[i], widths[i + 1], rng) for i in range(len(hidden_dims))]
    return VariationalNet(input_dim, hidden_dims, head_output_dim, trunk, {})


# ---------------------------------------------------------------------------
# Posterior snapshots (the running prior q_{t-1})


@dataclass(frozen=True)
class PosteriorSnapshot:
    """Frozen copy of all variational parameters at the end of a task.

    Serves as the prior for the next task. Arrays are marked read-only;
    heads absent from the snapshot are treated as having an N(0, 1) prior.
    """

    trunk: tuple[VariationalLayer, ...]
    heads: dict[int, VariationalLayer] = field(default_factory=dict)


def standard_prior(net: VariationalNet) -> PosteriorSnapshot:
    """N(0, 1) prior on every trunk parameter (used before the first task)."""
    trunk = []
    for layer in net.trunk:
        zero_like = [np.zeros_like(a) for a in layer.param_arrays()]
        for a in zero_like:
            a.flags.writeable = False
        trunk.append(VariationalLayer(*zero_like))
    return PosteriorSnapshot(trunk=tuple(trunk))


def advance_prior(net: VariationalNet) -> PosteriorSnapshot:
    """Deep-copy the current posterior; the copy is immutable thereafter."""
    return PosteriorSnapshot(
        trunk=tuple(layer.copy(frozen=True) for layer in net.trunk),
        heads={i: h.copy(frozen=True) for i, h in net.heads.items()},
    )


def diag_gaussian_kl(mu: np.ndarray, logvar: np.ndarray,
                     prior_mu: np.ndarray | float, prior_logvar: np.ndarray | float) -> float:
    """Closed-form KL(N(mu, e^logvar) || N(prior_mu, e^prior_logvar)), summed.

    Written so that KL(q || q) is exactly 0.0 in floating point.
    """
    diff = logvar - prior_logvar
    terms = -diff + np.exp(diff) + (mu - prior_mu) ** 2 * np.exp(-np.asarray(prior_logvar, dtype=np.float64)) - 1.0
    return 0.5 * float(np.sum(terms))


def _layer_kl(layer: VariationalLayer, prior: VariationalLayer | None) -> float:
    if prior is None:
        # New head: N(0, 1) prior on every parameter.
        return (diag_gaussian_kl(layer.mu_w, layer.logvar_w, 0.0, 0.0)
                + diag_gaussian_kl(layer.mu_b, layer.logvar_b, 0.0, 0.0))
    if layer.mu_w.shape != prior.mu_w.shape or layer.mu_b.shape != prior.mu_b.shape:
        raise ValueError(
            f"prior shape {prior.mu_w.shape} does not match layer {layer.mu_w.shape}")
    return (diag_gaussian_kl(layer.mu_w, layer.logvar_w, prior.mu_w, prior.logvar_w)
            + diag_gaussian_kl(layer.mu_b, layer.logvar_b, prior.mu_b, prior.logvar_b))


def kl_to_prior(net: VariationalNet, prior: PosteriorSnapshot, active_head: int) -> float:
    """Total KL in nats over trunk + active head; inactive heads contribute 0."""
    if len(prior.trunk) != len(net.trunk):
        raise ValueError(f"prior has {len(prior.trunk)} trunk layers, net has {len(net.trunk)}")
    total = sum(_layer_kl(layer, p) for layer, p in zip(net.trunk, prior.trunk))
    total += _layer_kl(net.head(active_head), prior.heads.get(active_head))
    return float(total)


# ---------------------------------------------------------------------------
# Reparameterized forward pass


@dataclass
class ForwardCache:
    """Everything the matching backward pass needs, including the noise."""

    head_index: int
    n_samples: int
    batch_size: int
    noise: list[tuple[np.ndarray, np.ndarray]]    # per layer: eps_w (S,I,O), eps_b (S,O)
    weights: list[tuple[np.ndarray, np.ndarray]]  # per layer: sampled w (S,I,O), b (S,O)
    inputs: list[np.ndarray]                      # input activation per layer
    pre: list[np.ndarray]                         # pre-activations per layer (S,B,out)

    @property
    def logits(self) -> np.ndarray:
        return self.pre[-1]


def sample_noise(net: VariationalNet, head_index: int, n_samples: int,
                 rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    """Fresh standard-normal noise for every weight/bias of trunk + head."""
    noise = []
    for layer in net.active_layers(head_index):
        eps_w = rng.standard_normal((n_samples, layer.fan_in, layer.fan_out))
        eps_b = rng.standard_normal((n_samples, layer.fan_out))
        noise.append((eps_w, eps_b))
    return noise


def zero_noise(net: VariationalNet, head_index: int,
               n_samples: int = 1) -> list[tuple[np.ndarray, np.ndarray]]:
    """All-zero noise: the forward pass collapses to the mean network."""
    return [(np.zeros((n_samples, layer.fan_in, layer.fan_out)), np.zeros((n_samples, layer.fan_out)))
            for layer in net.active_layers(head_index)]


def forward_with_noise(net: VariationalNet, head_index: int, x: np.ndarray,
                       noise: list[tuple[np.ndarray, np.ndarray]]) -> ForwardCache:
    """Forward pass with the given noise; ReLU between trunk layers, linear head."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(f"input shape {x.shape} does not match input_dim {net.input_dim}")
    layers = net.active_layers(head_index)
    if len(noise) != len(layers):
        raise ValueError(f"noise for {len(noise)} layers, net has {len(layers)}")
    weights, inputs, pre = [], [], []
    act: np.ndarray = x
    for li, layer in enumerate(layers):
        eps_w, eps_b = noise[li]
        w = layer.mu_w + np.exp(0.5 * layer.logvar_w) * eps_w   # (S, I, O)
        b = layer.mu_b + np.exp(0.5 * layer.logvar_b) * eps_b   # (S, O)
        z = act @ w + b[:, None, :]                             # (S, B, O)
        weights.append((w, b))
        inputs.append(act)
        pre.append(z)
        act = np.maximum(z, 0.0) if li < len(layers) - 1 else z
    return ForwardCache(head_index=head_index, n_samples=noise[0][0].shape[0],
                        batch_size=x.shape[0], noise=noise, weights=weights,
                        inputs=inputs, pre=pre)


def reparameterized_forward(net: VariationalNet, head_index: int, x: np.ndarray,
                            rng: np.random.Generator, n_samples: int) -> ForwardCache:
    """Monte Carlo forward pass: fresh weight draws per sample, cached for backward."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    return forward_with_noise(net, head_index, x, sample_noise(net, head_index, n_samples, rng))


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(z))


# ---------------------------------------------------------------------------
# Loss and gradients


@dataclass(frozen=True)
class ElboBreakdown:
    """Negative beta-ELBO for one batch, split into its parts."""

    nll: float
    kl: float
    beta: float
    n_task: int
    loss: float


def _check_labels(y: np.ndarray, n_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"labels out of range [0, {n_classes}): {y.min()}..{y.max()}")
    return y.astype(np.int64)


def beta_elbo_loss(net: VariationalNet, prior: PosteriorSnapshot, head_index: int,
                   x: np.ndarray, y: np.ndarray, *, beta: float, n_task: int,
                   rng: np.random.Generator | None = None, n_samples: int = 1,
                   noise: list[tuple[np.ndarray, np.ndarray]] | None = None,
                   ) -> tuple[ElboBreakdown, ForwardCache]:
    """Negative beta-ELBO of one batch plus the cache for backward.

    Pass explicit ``noise`` to freeze the reparameterization draws (gradient
    checking); otherwise fresh noise is drawn from ``rng``.
    """
    if beta <= 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    x = np.asarray(x, dtype=np.float64)
    if n_task < x.shape[0]:
        raise ValueError(f"n_task {n_task} smaller than batch {x.shape[0]}")
    if noise is None:
        if rng is None:
            raise ValueError("either rng or frozen noise is required")
        noise = sample_noise(net, head_index, n_samples, rng)
    cache = forward_with_noise(net, head_index, x, noise)
    y = _check_labels(y, cache.logits.shape[-1])
    logp = _log_softmax(cache.logits)                       # (S, B, O)
    picked = logp[:, np.arange(y.size), y]                  # (S, B)
    nll = -float(picked.mean())
    kl = kl_to_prior(net, prior, head_index)
    loss = nll + beta * kl / n_task
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss: nll={nll}, kl={kl}")
    return ElboBreakdown(nll=nll, kl=kl, beta=beta, n_task=n_task, loss=loss), cache


@dataclass
class LayerGrads:
    """Gradient of the batch loss w.r.t. one layer's four parameter arrays."""

    mu_w: np.ndarray
    logvar_w: np.ndarray
    mu_b: np.ndarray
    logvar_b: np.ndarray

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.mu_w, self.logvar_w, self.mu_b, self.logvar_b


def backward_gradients(net: VariationalNet, prior: PosteriorSnapshot, cache: ForwardCache,
                       y: np.ndarray, *, beta: float, n_task: int) -> list[LayerGrads]:
    """Exact gradients of the batch loss for every (mu, logvar) of trunk + head.

    Combines the pathwise likelihood gradient (through w = mu + sigma * eps,
    using the cached noise) with the analytic KL gradient:

        dKL/dmu     = (mu - mu0) / var0
        dKL/dlogvar = (exp(logvar)/var0 - 1) / 2
    """
    layers = net.active_layers(cache.head_index)
    y = _check_labels(y, cache.logits.shape[-1])
    if y.size != cache.batch_size:
        raise ValueError(f"stale cache: batch size {cache.batch_size}, labels {y.size}")
    for layer, (w, _) in zip(layers, cache.weights):
        if w.shape[1:] != layer.mu_w.shape:
            raise ValueError("stale cache: layer shapes changed since forward pass")
    scale = 1.0 / (cache.n_samples * cache.batch_size)
    d_z = softmax(cache.logits)
    d_z[:, np.arange(y.size), y] -= 1.0
    d_z *= scale

    kl_scale = beta / n_task
    prior_layers: list[VariationalLayer | None] = [*prior.trunk, prior.heads.get(cache.head_index)]
    grads: list[LayerGrads] = [None] * len(layers)  # type: ignore[list-item]
    for li in range(len(layers) - 1, -1, -1):
        layer = layers[li]
        eps_w, eps_b = cache.noise[li]
        a_in = cache.inputs[li]
        if a_in.ndim == 2:
            d_w = a_in.T @ d_z                      # (I,B)@(S,B,O) -> (S,I,O)
        else:
            d_w = a_in.transpose(0, 2, 1) @ d_z     # (S,I,B)@(S,B,O) -> (S,I,O)
        d_b = d_z.sum(axis=1)                       # (S, O)

        sigma_w = np.exp(0.5 * layer.logvar_w)
        sigma_b = np.exp(0.5 * layer.logvar_b)
        g = LayerGrads(
            mu_w=d_w.sum(axis=0),
            logvar_w=(d_w * eps_w).sum(axis=0) * (0.5 * sigma_w),
            mu_b=d_b.sum(axis=0),
            logvar_b=(d_b * eps_b).sum(axis=0) * (0.5 * sigma_b),
        )
        pl = prior_layers[li]
        if pl is None:
            g.mu_w += kl_scale * layer.mu_w
            g.logvar_w += kl_scale * 0.5 * (np.exp(layer.logvar_w) - 1.0)
            g.mu_b += kl_scale * layer.mu_b
            g.logvar_b += kl_scale * 0.5 * (np.exp(layer.logvar_b) - 1.0)
        else:
            g.mu_w += kl_scale * (layer.mu_w - pl.mu_w) * np.exp(-pl.logvar_w)
            g.logvar_w += kl_scale * 0.5 * (np.exp(layer.logvar_w - pl.logvar_w) - 1.0)
            g.mu_b += kl_scale * (layer.mu_b - pl.mu_b) * np.exp(-pl.logvar_b)
            g.logvar_b += kl_scale * 0.5 * (np.exp(layer.logvar_b - pl.logvar_b) - 1.0)
        grads[li] = g

        if li > 0:
            w, _ = cache.weights[li]
            d_a = d_z @ w.transpose(0, 2, 1)        # (S, B, I)
            d_z = d_a * (cache.pre[li - 1] > 0)
    return grads


class NetAdam:
    """Adam over every parameter array of the trunk plus one head."""

    def __init__(self, net: VariationalNet, head_index: int, lr: float):
        self._layers = net.active_layers(head_index)
        self._states = [tuple(AdamState.zeros_like(p, lr=lr) for p in layer.param_arrays())
                        for layer in self._layers]

    def step(self, grads: list[LayerGrads]) -> None:
        for layer, layer_grads, states in zip(self._layers, grads, self._states):
            for param, grad, state in zip(layer.param_arrays(), layer_grads.arrays(), states):
                adam_step(param, grad, state)


def fit(net: VariationalNet, prior: PosteriorSnapshot, head_index: int,
        x: np.ndarray, y: np.ndarray, *, beta: float, n_task: int, epochs: int,
        batch_size: int, lr: float, mc_samples: int,
        rng: np.random.Generator) -> list[ElboBreakdown]:
    """Train trunk + head with Adam on the per-batch negative beta-ELBO.

    Data is reshuffled every epoch from ``rng``; the last partial batch is
    kept. Returns one averaged breakdown per epoch. This single code path
    serves both fixed-beta and scheduled-beta training.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.shape[0] == 0:
        raise ValueError("empty dataset")
    optimizer = NetAdam(net, head_index, lr)
    history = []
    for _ in range(epochs):
        order = rng.permutation(x.shape[0])
        sums = np.zeros(3)
        n_batches = 0
        for start in range(0, x.shape[0], batch_size):
            idx = order[start:start + batch_size]
            breakdown, cache = beta_elbo_loss(
                net, prior, head_index, x[idx], y[idx],
                beta=beta, n_task=n_task, rng=rng, n_samples=mc_samples)
            grads = backward_gradients(net, prior, cache, y[idx], beta=beta, n_task=n_task)
            optimizer.step(grads)
            sums += (breakdown.nll, breakdown.kl, breakdown.loss)
            n_batches += 1
        nll, kl, loss = sums / n_batches
        history.append(ElboBreakdown(nll=nll, kl=kl, beta=beta, n_task=n_task, loss=loss))
    return history


def posterior_predict(net: VariationalNet, head_index: int, x: np.ndarray,
                      rng: np.random.Generator, n_eval_samples: int) -> np.ndarray:
    """Posterior-predictive class probabilities: softmax averaged over draws."""
    cache = reparameterized_forward(net, head_index, x, rng, n_eval_samples)
    return softmax(cache.logits).mean(axis=0)


def predict_mean(net: VariationalNet, head_index: int, x: np.ndarray) -> np.ndarray:
    """Deterministic softmax of the mean network (zero-variance limit)."""
    cache = forward_with_noise(net, head_index, x, zero_noise(net, head_index))
    return softmax(cache.logits)[0]


# ---------------------------------------------------------------------------
# Parameter vector helpers (gradient checking, diagnostics)


def get_param_vector(net: VariationalNet, head_index: int) -> np.ndarray:
    """All trainable parameters as one flat vector, in layer/array order."""
    return np.concatenate([a.ravel() for layer in net.active_layers(head_index)
                           for a in layer.param_arrays()])


def set_param_vector(net: VariationalNet, head_index: int, vec: np.ndarray) -> None:
    """Inverse of :func:`get_param_vector`."""
    pos = 0
    for layer in net.active_layers(head_index):
        for a in layer.param_arrays():
            a[...] = vec[pos:pos + a.size].reshape(a.shape)
            pos += a.size
    if pos != vec.size:
        raise ValueError(f"vector has {vec.size} entries, net expects {pos}")


def flatten_grads(grads: list[LayerGrads]) -> np.ndarray:
    return np.concatenate([a.ravel() for g in grads for a in g.arrays()])


# ---------------------------------------------------------------------------
# Snapshot serialization
#
# Binary layout (little-endian), documented here and in the README:
#   magic   8 bytes  b"VCLSNAP1"
#   u32     number of trunk layers T
#   u32     number of heads H
#   T x (u32 fan_in, u32 fan_out)               trunk shapes in order
#   H x (u32 head_index, u32 fan_in, u32 fan_out)  heads sorted by index
#   then for each trunk layer, then each head (same order):
#       mu_w, logvar_w, mu_b, logvar_b as raw float64 little-endian
# Round-tripping is lossless for 64-bit floats.

SNAPSHOT_MAGIC = b"VCLSNAP1"


def save_snapshot(snapshot: PosteriorSnapshot, path) -> None:
    """Write a snapshot in the flat binary format described above."""
    head_items = sorted(snapshot.heads.items())
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<II", len(snapshot.trunk), len(head_items)))
        for layer in snapshot.trunk:
            fh.write(struct.pack("<II", layer.fan_in, layer.fan_out))
        for index, layer in head_items:
            fh.write(struct.pack("<III", index, layer.fan_in, layer.fan_out))
        for layer in [*snapshot.trunk, *(h for _, h in head_items)]:
            for a in layer.param_arrays():
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_snapshot(path) -> PosteriorSnapshot:
    """Read a snapshot written by :func:`save_snapshot`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != SNAPSHOT_MAGIC:
        raise ValueError(f"bad snapshot magic {blob[:8]!r}")
    pos = 8
    n_trunk, n_heads = struct.unpack_from("<II", blob, pos)
    pos += 8
    trunk_shapes = []
    for _ in range(n_trunk):
        trunk_shapes.append(struct.unpack_from("<II", blob, pos))
        pos += 8
    head_shapes = []
    for _ in range(n_heads):
        head_shapes.append(struct.unpack_from("<III", blob, pos))
        pos += 12

    def read_layer(fan_in: int, fan_out: int) -> VariationalLayer:
        nonlocal pos
        arrays = []
        for shape in [(fan_in, fan_out), (fan_in, fan_out), (fan_out,), (fan_out,)]:
            count = int(np.prod(shape))
            a = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
            a.flags.writeable = False
            arrays.append(a)
            pos += count * 8
        return VariationalLayer(*arrays)

    trunk = tuple(read_layer(fi, fo) for fi, fo in trunk_shapes)
    heads = {index: read_layer(fi, fo) for index, fi, fo in head_shapes}
    if pos != len(blob):
        raise ValueError(f"snapshot has {len(blob) - pos} trailing bytes")
    return PosteriorSnapshot(trunk=trunk, heads=heads)
