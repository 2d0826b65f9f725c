"""Soft actor-critic from scratch on numpy, with manual backpropagation.

Twin Q networks with Polyak-averaged targets, a tanh-squashed diagonal
Gaussian actor over (position delta, axis-angle delta), a uniform replay
buffer and a learned entropy temperature. The networks are small fixed MLPs
(default two hidden layers of 128 ReLU units), so the backward passes are
written out by hand; every loss gradient is validated against central finite
differences in the test suite.

Gradient bookkeeping for the squashed actor (per action dimension, with
fixed reparametrization noise xi and u = mu + sigma * xi):

    a      = limit * tanh(u)
    log pi = -xi^2/2 - log sigma - log(2 pi)/2
             - log limit - 2*(log 2 - u - softplus(-2u))
    d log pi / d u        = 2 tanh(u)
    d log pi / d log sigma = -1 + 2 tanh(u) sigma xi
    d a / d u             = limit * (1 - tanh(u)^2)

All losses are deterministic functions of (parameters, batch, noise), which
is what makes finite differencing possible; `update` draws the noise from the
state's own generator, so training is reproducible bit for bit from the seed.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field

import numpy as np

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
DEFAULT_POS_LIMIT = 0.005  # m per step
DEFAULT_ROT_LIMIT = math.radians(2.0)  # rad per step


def default_action_limits(action_dim: int = 6) -> np.ndarray:
    if action_dim == 6:
        return np.array([DEFAULT_POS_LIMIT] * 3 + [DEFAULT_ROT_LIMIT] * 3)
    return np.ones(action_dim)


@dataclass
class SacConfig:
    state_dim: int = 7
    action_dim: int = 6
    hidden: tuple = (128, 128)
    lr: float = 3e-4
    gamma: float = 0.99
    batch_size: int = 100
    warmup: int = 100  # replay size required before updates start
    tau: float = 0.005  # Polyak rate for target networks
    alpha_init: float = 0.1
    learn_alpha: bool = True
    target_entropy: float | None = None  # default -action_dim
    action_limits: np.ndarray | None = None
    obs_scale: np.ndarray | None = None  # optional fixed observation scaling
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.target_entropy is None:
            self.target_entropy = -float(self.action_dim)
        if self.action_limits is None:
            self.action_limits = default_action_limits(self.action_dim)
        self.action_limits = np.asarray(self.action_limits, dtype=float).reshape(self.action_dim)
        if np.any(self.action_limits <= 0):
            raise ValueError("action limits must be positive")
        if self.obs_scale is not None:
            self.obs_scale = np.asarray(self.obs_scale, dtype=float).reshape(self.state_dim)

    def to_dict(self) -> dict:
        return {
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "hidden": list(self.hidden),
            "lr": self.lr,
            "gamma": self.gamma,
            "batch_size": self.batch_size,
            "warmup": self.warmup,
            "tau": self.tau,
            "alpha_init": self.alpha_init,
            "learn_alpha": self.learn_alpha,
            "target_entropy": self.target_entropy,
            "action_limits": self.action_limits.tolist(),
            "obs_scale": None if self.obs_scale is None else self.obs_scale.tolist(),
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
        }

    @staticmethod
    def from_dict(d: dict) -> "SacConfig":
        d = dict(d)
        d["hidden"] = tuple(d["hidden"])
        if d.get("action_limits") is not None:
            d["action_limits"] = np.array(d["action_limits"], dtype=float)
        if d.get("obs_scale") is not None:
            d["obs_scale"] = np.array(d["obs_scale"], dtype=float)
        return SacConfig(**d)


# ---------------------------------------------------------------------------
# MLP with manual backprop
# ---------------------------------------------------------------------------


class Mlp:
    """Fully connected ReLU network; final layer linear with small init."""

    def __init__(self, sizes, rng: np.random.Generator, final_scale: float = 1.0):
        self.sizes = list(sizes)
        self.weights = []
        self.biases = []
        last = len(self.sizes) - 2
        for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            if i == last:
                # small uniform final layer keeps initial outputs near zero
                w = rng.uniform(-3e-3, 3e-3, size=(n_in, n_out)) * final_scale
            else:
                w = rng.standard_normal((n_in, n_out)) * np.sqrt(2.0 / n_in)
            self.weights.append(w)
            self.biases.append(np.zeros(n_out))

    def params(self) -> list:
        """Live references, alternating weight/bias per layer."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x: np.ndarray):
        """Returns (output, cache); cache feeds :meth:`backward`."""
        xs = [x]
        zs = []
        h = x
        n_layers = len(self.weights)
        for i in range(n_layers):
            z = h @ self.weights[i] + self.biases[i]
            if i < n_layers - 1:
                zs.append(z)
                h = np.maximum(z, 0.0)
                xs.append(h)
            else:
                return z, (xs, zs)

    def backward(self, cache, grad_out: np.ndarray):
        """Backprop grad_out (B, out_dim) -> (param grads, input grad)."""
        xs, zs = cache
        grads = []
        g = grad_out
        for i in reversed(range(len(self.weights))):
            grads.append(g.sum(axis=0))  # bias
            grads.append(xs[i].T @ g)  # weight
            g = g @ self.weights[i].T
            if i > 0:
                g = g * (zs[i - 1] > 0.0)
        grads.reverse()
        return grads, g

    def backward_input(self, cache, grad_out: np.ndarray) -> np.ndarray:
        """Input gradient only; skips the weight-gradient GEMMs."""
        _, zs = cache
        g = grad_out
        for i in reversed(range(len(self.weights))):
            g = g @ self.weights[i].T
            if i > 0:
                g = g * (zs[i - 1] > 0.0)
        return g

    def state_dict(self) -> dict:
        return {
            "sizes": self.sizes,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    def load_state_dict(self, d: dict) -> None:
        self.sizes = list(d["sizes"])
        self.weights = [np.array(w, dtype=float) for w in d["weights"]]
        self.biases = [np.array(b, dtype=float) for b in d["biases"]]


class Adam:
    """Standard Adam with bias correction, updating parameters in place."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            denom = np.sqrt(v / c2)
            denom += self.eps
            upd = m / c1
            upd /= denom
            upd *= self.lr
            p -= upd

    def state_dict(self) -> dict:
        return {
            "m": [a.tolist() for a in self.m],
            "v": [a.tolist() for a in self.v],
            "t": self.t,
        }

    def load_state_dict(self, d: dict) -> None:
        self.m = [np.array(a, dtype=float) for a in d["m"]]
        self.v = [np.array(a, dtype=float) for a in d["v"]]
        self.t = int(d["t"])


# ---------------------------------------------------------------------------
# squashed Gaussian policy
# ---------------------------------------------------------------------------


def _log_one_minus_tanh_sq(u: np.ndarray) -> np.ndarray:
    # log(1 - tanh(u)^2), stable for any u
    return 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


@dataclass
class SquashedGaussianPolicy:
    """Actor view: MLP emitting [mu, log_std], squashed to action limits."""

    net: Mlp
    limits: np.ndarray
    obs_scale: np.ndarray | None = None

    def _net_input(self, s: np.ndarray) -> np.ndarray:
        return s if self.obs_scale is None else s * self.obs_scale

    def dist_params(self, s: np.ndarray):
        """(mu, log_std, clip_mask, cache) for a batch of states."""
        raw, cache = self.net.forward(self._net_input(s))
        dim = raw.shape[1] // 2
        mu = raw[:, :dim]
        log_std_raw = raw[:, dim:]
        log_std = np.clip(log_std_raw, LOG_STD_MIN, LOG_STD_MAX)
        clip_mask = (log_std_raw > LOG_STD_MIN) & (log_std_raw < LOG_STD_MAX)
        return mu, log_std, clip_mask, cache

    def sample_batch(self, s: np.ndarray, noise: np.ndarray):
        """Reparametrized batch sample -> (a, logp, aux dict for backprop)."""
        mu, log_std, clip_mask, cache = self.dist_params(s)
        std = np.exp(log_std)
        u = mu + std * noise
        tanh_u = np.tanh(u)
        a = self.limits * tanh_u
        logp = (
            -0.5 * noise**2
            - log_std
            - 0.5 * np.log(2.0 * np.pi)
            - np.log(self.limits)
            - _log_one_minus_tanh_sq(u)
        ).sum(axis=1)
        aux = {
            "mu": mu,
            "log_std": log_std,
            "std": std,
            "noise": noise,
            "u": u,
            "tanh_u": tanh_u,
            "clip_mask": clip_mask,
            "cache": cache,
        }
        return a, logp, aux

    def act(self, s: np.ndarray, rng: np.random.Generator | None = None, deterministic: bool = False):
        """Single-observation action -> (a, logp, latent u)."""
        s = np.asarray(s, dtype=float).reshape(1, -1)
        dim = len(self.limits)
        noise = np.zeros((1, dim)) if deterministic else rng.standard_normal((1, dim))
        a, logp, aux = self.sample_batch(s, noise)
        return a[0], float(logp[0]), aux["u"][0]


def actor_sample(policy: SquashedGaussianPolicy, s, rng=None, deterministic: bool = False):
    """Sample an action and its log-probability for one observation."""
    a, logp, _ = policy.act(s, rng=rng, deterministic=deterministic)
    return a, logp


# ---------------------------------------------------------------------------
# replay buffer
# ---------------------------------------------------------------------------


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling.

    Actions are stored post-squash (environment units); the pre-squash latent
    is kept alongside for diagnostics.
    """

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.latent = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.done = np.zeros(capacity)
        self.ptr = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, s, a, r, s2, done, latent=None) -> None:
        i = self.ptr
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s2[i] = s2
        self.done[i] = float(done)
        if latent is not None:
            self.latent[i] = latent
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch_size: int) -> dict:
        idx = rng.integers(0, self.size, size=batch_size)
        return {
            "s": self.s[idx],
            "a": self.a[idx],
            "r": self.r[idx],
            "s2": self.s2[idx],
            "done": self.done[idx],
        }


# ---------------------------------------------------------------------------
# SAC state and losses
# ---------------------------------------------------------------------------


@dataclass
class SacState:
    cfg: SacConfig
    actor: Mlp
    critic1: Mlp
    critic2: Mlp
    target1: Mlp
    target2: Mlp
    log_alpha: np.ndarray  # shape (1,)
    opt_actor: Adam
    opt_critic: Adam
    opt_alpha: Adam
    rng: np.random.Generator
    step_count: int = 0

    @staticmethod
    def init(cfg: SacConfig, rng: np.random.Generator) -> "SacState":
        actor = Mlp([cfg.state_dim, *cfg.hidden, 2 * cfg.action_dim], rng)
        critic1 = Mlp([cfg.state_dim + cfg.action_dim, *cfg.hidden, 1], rng)
        critic2 = Mlp([cfg.state_dim + cfg.action_dim, *cfg.hidden, 1], rng)
        target1 = copy.deepcopy(critic1)
        target2 = copy.deepcopy(critic2)
        log_alpha = np.array([np.log(cfg.alpha_init)])
        return SacState(
            cfg=cfg,
            actor=actor,
            critic1=critic1,
            critic2=critic2,
            target1=target1,
            target2=target2,
            log_alpha=log_alpha,
            opt_actor=Adam(actor.params(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
            opt_critic=Adam(
                critic1.params() + critic2.params(),
                cfg.lr,
                cfg.adam_beta1,
                cfg.adam_beta2,
                cfg.adam_eps,
            ),
            opt_alpha=Adam([log_alpha], cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
            rng=rng,
        )

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    @property
    def policy(self) -> SquashedGaussianPolicy:
        return SquashedGaussianPolicy(self.actor, self.cfg.action_limits, self.cfg.obs_scale)

    def _net_obs(self, s: np.ndarray) -> np.ndarray:
        return s if self.cfg.obs_scale is None else s * self.cfg.obs_scale


def _q_forward(net: Mlp, s_net: np.ndarray, a: np.ndarray):
    x = np.concatenate([s_net, a], axis=1)
    return net.forward(x)


def critic_targets(state: SacState, batch: dict, next_noise: np.ndarray, gamma=None) -> np.ndarray:
    """Bootstrap target y = r + gamma (1 - done) (min twin target Q - alpha log pi)."""
    gamma = state.cfg.gamma if gamma is None else gamma
    s2 = batch["s2"]
    a2, logp2, _ = state.policy.sample_batch(s2, next_noise)
    s2_net = state._net_obs(s2)
    q1t, _ = _q_forward(state.target1, s2_net, a2)
    q2t, _ = _q_forward(state.target2, s2_net, a2)
    qt = np.minimum(q1t, q2t)[:, 0]
    y = batch["r"] + gamma * (1.0 - batch["done"]) * (qt - state.alpha * logp2)
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("non-finite critic target")
    return y


def critic_loss(state: SacState, batch: dict, next_noise: np.ndarray, gamma=None):
    """MSE of both critics against the shared target -> (loss, grads1, grads2)."""
    y = critic_targets(state, batch, next_noise, gamma)
    s_net = state._net_obs(batch["s"])
    B = len(y)
    q1, cache1 = _q_forward(state.critic1, s_net, batch["a"])
    q2, cache2 = _q_forward(state.critic2, s_net, batch["a"])
    e1 = q1[:, 0] - y
    e2 = q2[:, 0] - y
    loss = float(np.mean(e1**2) + np.mean(e2**2))
    grads1, _ = state.critic1.backward(cache1, (2.0 / B) * e1[:, None])
    grads2, _ = state.critic2.backward(cache2, (2.0 / B) * e2[:, None])
    return loss, grads1, grads2


def actor_loss(state: SacState, batch: dict, noise: np.ndarray):
    """Reparametrized policy objective -> (loss, actor grads).

    loss = mean(alpha * log pi(a~|s) - min_k Q_k(s, a~)); the gradient flows
    through the sampled action into whichever critic realizes the minimum.
    """
    s = batch["s"]
    B = s.shape[0]
    policy = state.policy
    a, logp, aux = policy.sample_batch(s, noise)
    s_net = state._net_obs(s)
    q1, cache_q1 = _q_forward(state.critic1, s_net, a)
    q2, cache_q2 = _q_forward(state.critic2, s_net, a)
    qmin = np.minimum(q1, q2)[:, 0]
    alpha = state.alpha
    loss = float(np.mean(alpha * logp - qmin))

    # route -1/B through the minimizing critic, back to its action input
    upstream = -np.ones((B, 1)) / B
    mask1 = (q1 <= q2).astype(float)
    gin1 = state.critic1.backward_input(cache_q1, upstream * mask1)
    gin2 = state.critic2.backward_input(cache_q2, upstream * (1.0 - mask1))
    sdim = state.cfg.state_dim
    dL_da = gin1[:, sdim:] + gin2[:, sdim:]

    tanh_u = aux["tanh_u"]
    sech2 = 1.0 - tanh_u**2
    da_du = policy.limits * sech2
    dlogp = alpha / B  # per-sample weight on the entropy term
    sigma_xi = aux["std"] * aux["noise"]
    g_mu = dlogp * 2.0 * tanh_u + dL_da * da_du
    g_log_std = dlogp * (-1.0 + 2.0 * tanh_u * sigma_xi) + dL_da * da_du * sigma_xi
    g_raw = np.concatenate([g_mu, g_log_std * aux["clip_mask"]], axis=1)
    grads, _ = state.actor.backward(aux["cache"], g_raw)
    return loss, grads


def alpha_loss(state: SacState, batch: dict, noise: np.ndarray, target_entropy=None):
    """Temperature objective -> (loss, d loss / d log_alpha).

    Zero gradient exactly when mean log pi equals -target_entropy, i.e. when
    the policy entropy sits at the target.
    """
    target_entropy = state.cfg.target_entropy if target_entropy is None else target_entropy
    _, logp, _ = state.policy.sample_batch(batch["s"], noise)
    drift = float(np.mean(logp + target_entropy))
    loss = -float(state.log_alpha[0]) * drift
    return loss, np.array([-drift])


def polyak_update(state: SacState) -> None:
    tau = state.cfg.tau
    for tgt, src in ((state.target1, state.critic1), (state.target2, state.critic2)):
        for t, s in zip(tgt.params(), src.params()):
            t[:] = (1.0 - tau) * t + tau * s


def update(state: SacState, buffer: ReplayBuffer) -> dict:
    """One gradient step on critics, actor and temperature, plus Polyak targets.

    No-op (returns ``{"updated": False}``) until the buffer holds at least
    ``warmup`` transitions; no randomness is consumed in that case. Mutates
    ``state`` in place.
    """
    cfg = state.cfg
    if buffer.size < cfg.warmup:
        return {"updated": False}
    B, A = cfg.batch_size, cfg.action_dim
    batch = buffer.sample(state.rng, B)

    loss_c, g1, g2 = critic_loss(state, batch, state.rng.standard_normal((B, A)))
    state.opt_critic.step(state.critic1.params() + state.critic2.params(), g1 + g2)

    loss_a, ga = actor_loss(state, batch, state.rng.standard_normal((B, A)))
    state.opt_actor.step(state.actor.params(), ga)

    if cfg.learn_alpha:
        loss_al, g_la = alpha_loss(state, batch, state.rng.standard_normal((B, A)))
        state.opt_alpha.step([state.log_alpha], [g_la])
    else:
        loss_al = 0.0

    polyak_update(state)
    state.step_count += 1
    return {
        "updated": True,
        "critic_loss": loss_c,
        "actor_loss": loss_a,
        "alpha_loss": loss_al,
        "alpha": state.alpha,
    }


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


def save_checkpoint(state: SacState, path) -> None:
    """Write everything needed to resume updates bit-identically (given the
    same replay contents): parameters, Adam moments, temperature, counters
    and the generator state."""
    payload = {
        "config": state.cfg.to_dict(),
        "actor": state.actor.state_dict(),
        "critic1": state.critic1.state_dict(),
        "critic2": state.critic2.state_dict(),
        "target1": state.target1.state_dict(),
        "target2": state.target2.state_dict(),
        "log_alpha": float(state.log_alpha[0]),
        "step_count": state.step_count,
        "adam": {
            "actor": state.opt_actor.state_dict(),
            "critic": state.opt_critic.state_dict(),
            "alpha": state.opt_alpha.state_dict(),
        },
        "rng_state": state.rng.bit_generator.state,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> SacState:
    with open(path) as fh:
        payload = json.load(fh)
    cfg = SacConfig.from_dict(payload["config"])
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = payload["rng_state"]
    state = SacState.init(cfg, np.random.default_rng(0))
    for name in ("actor", "critic1", "critic2", "target1", "target2"):
        getattr(state, name).load_state_dict(payload[name])
    state.log_alpha[0] = payload["log_alpha"]
    state.step_count = int(payload["step_count"])
    state.opt_actor.load_state_dict(payload["adam"]["actor"])
    state.opt_critic.load_state_dict(payload["adam"]["critic"])
    state.opt_alpha.load_state_dict(payload["adam"]["alpha"])
    state.rng = rng
    return state
