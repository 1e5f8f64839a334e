"""Count-proportion policy network and its clipped policy-gradient trainer.

The actor maps (x / N, normalised budgets) to a priority matrix and a
resource-use proportion; actions come from the sequential priority sampler.
Networks are plain numpy MLPs with hand-written backpropagation.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit, log_ndtr, logit

from .model import WcmdpSpec, is_symmetric
from .sampler import PolicyOutput, SampleTrace, logprob_of, sample_count_action
from .simulate import CountSimulator, EvalConfig, evaluate_count_policy

PRIORITY_FLOOR = 1e-6
# the resource head's location spans [-MARGIN, 1 + MARGIN] before clipping,
# so that clipping at 0 or 1 (all or nothing) stays reachable
RESOURCE_MARGIN = 0.3
CHECKPOINT_VERSION = 1
_LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)


class NonFiniteLoss(FloatingPointError):
    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


def _orthogonal(rng, n_in, n_out, gain):
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return gain * q[:n_in, :n_out]


class Mlp:
    """tanh MLP; parameters are [W1, b1, W2, b2, ..., W_out, b_out] with W of shape (in, out)."""

    def __init__(self, sizes, rng=None, out_gain=0.01, hidden_gain=np.sqrt(2)):
        rng = np.random.default_rng(0) if rng is None else rng
        self.sizes = list(sizes)
        self.params = []
        for i, (m, n) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = out_gain if i == len(sizes) - 2 else hidden_gain
            self.params += [_orthogonal(rng, m, n, gain), np.zeros(n)]

    def forward(self, X):
        X = np.atleast_2d(X)
        hs = [X]
        h = X
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            h = np.tanh(z) if i < n_layers - 1 else z
            hs.append(h)
        return h, hs

    def backward(self, hs, dout):
        grads = [None] * len(self.params)
        g = dout
        n_layers = len(self.params) // 2
        for i in reversed(range(n_layers)):
            grads[2 * i] = hs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.params[2 * i].T) * (1.0 - hs[i] ** 2)
        return grads

    def get_flat(self):
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, theta):
        i = 0
        for p in self.params:
            p[...] = np.reshape(theta[i:i + p.size], p.shape)
            i += p.size

    @property
    def num_params(self):
        return sum(p.size for p in self.params)


class PolicyNet:
    def __init__(self, S, A, K, hidden=64, rng=None):
        self.S, self.A, self.K = S, A, K
        self.mlp = Mlp([S + K, hidden, hidden, S * A + K], rng)
        # start at location 1 (use the whole budget): with integer consumption a
        # smaller proportion can make every active action unaffordable
        self.mlp.params[-1][S * A:] = logit((1.0 + RESOURCE_MARGIN) / (1.0 + 2 * RESOURCE_MARGIN))

    @property
    def input_width(self):
        return self.S + self.K

    @property
    def output_width(self):
        return self.S * self.A + self.K

    def heads(self, z):
        """Raw outputs -> (priorities (B,S,A), pre-clip resource location (B,K))."""
        SA = self.S * self.A
        sig_u = expit(z[:, :SA])
        U = PRIORITY_FLOOR + (1.0 - PRIORITY_FLOOR) * sig_u
        sig_p = expit(z[:, SA:])
        mu = (1.0 + 2 * RESOURCE_MARGIN) * sig_p - RESOURCE_MARGIN
        return U.reshape(-1, self.S, self.A), mu, sig_u, sig_p

    def forward(self, xbar, bbar) -> PolicyOutput:
        feat = np.concatenate([np.asarray(xbar, float), np.asarray(bbar, float)])
        z, _ = self.mlp.forward(feat)
        U, mu, _, _ = self.heads(z)
        return PolicyOutput(U[0], np.clip(mu[0], 0.0, 1.0))


class CriticNet:
    def __init__(self, S, K, hidden=64, rng=None):
        self.mlp = Mlp([S + K, hidden, hidden, 1], rng, out_gain=1.0)

    def value(self, feats):
        v, _ = self.mlp.forward(feats)
        return v[:, 0]


@dataclass
class TrainConfig:
    episodes: int = 800
    steps_per_episode: int = 100
    actor_lr: float = 5e-4
    critic_lr: float = 3e-4
    clip: float = 0.2
    discount: float = 0.95
    gae_lambda: float = 0.95
    epochs: int = 4
    minibatches: int = 4
    resource_noise: float = 0.1
    max_grad_norm: float = 0.5
    hidden: int = 64
    rng_seed: int = 0
    eval_every: int = 20  # 0 disables the learning curve
    eval_trajectories: int = 100
    eval_horizon: int = 300

    def __post_init__(self):
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise ValueError("learning rates must be positive")
        if not 0 < self.clip < 1:
            raise ValueError("clip ratio must lie in (0, 1)")


# -- features and the resource head ------------------------------------------

def features(x, spec: WcmdpSpec) -> np.ndarray:
    """x / N followed by b_k / (N * max_a d_k(a))."""
    x = np.asarray(x, dtype=float)
    N = spec.num_submdps
    d = spec.consumption[:, 0, :]
    peak = d.max(axis=1)
    bbar = np.where(peak > 0, spec.budgets / (N * np.where(peak > 0, peak, 1.0)), 1.0)
    return np.concatenate([x / N, np.clip(bbar, 0.0, 1.0)])


def censored_logpdf(p, mu, sd):
    """Log-density of clip(mu + sd * xi, 0, 1) with point masses at 0 and 1, and d/dmu."""
    p, mu = np.asarray(p, float), np.asarray(mu, float)
    lo = (0.0 - mu) / sd
    hi = (mu - 1.0) / sd
    mid = (p - mu) / sd
    lp = np.where(p <= 0.0, log_ndtr(lo), np.where(p >= 1.0, log_ndtr(hi), -0.5 * mid ** 2 - _LOG_SQRT_2PI - np.log(sd)))
    # d log Phi(t) / dt = phi(t) / Phi(t), evaluated in log space
    mills_lo = np.exp(-0.5 * lo ** 2 - _LOG_SQRT_2PI - log_ndtr(lo))
    mills_hi = np.exp(-0.5 * hi ** 2 - _LOG_SQRT_2PI - log_ndtr(hi))
    dmu = np.where(p <= 0.0, -mills_lo / sd, np.where(p >= 1.0, mills_hi / sd, mid / sd))
    return lp, dmu


@dataclass
class Step:
    feat: np.ndarray
    x: np.ndarray
    trace: SampleTrace
    p_tilde: np.ndarray
    logprob: float
    reward: float = 0.0
    value: float = 0.0
    budgets: np.ndarray = None
    consumption: np.ndarray = None


def act(net: PolicyNet, x, spec: WcmdpSpec, rng, explore: bool = True, noise: float = 0.1, cache=None):
    """Sample a count action. Returns (u, logprob, Step).

    With ``explore`` the resource proportion is drawn from the censored
    Gaussian around the head's location and its log-density is part of the
    returned logprob; otherwise the clipped location is used as is.
    """
    x = np.asarray(x, dtype=np.int64)
    feat = features(x, spec)
    key = tuple(x)
    if cache is not None and key in cache:
        U, mu = cache[key]
    else:
        z, _ = net.mlp.forward(feat)
        U, mu, _, _ = net.heads(z)
        U, mu = U[0], mu[0]
        if cache is not None:
            cache[key] = (U, mu)
    d = spec.consumption[:, 0, :]
    if explore:
        p = np.clip(mu + noise * rng.standard_normal(mu.shape), 0.0, 1.0)
        lp_p, _ = censored_logpdf(p, mu, noise)
        lp_p = float(lp_p.sum())
    else:
        p = np.clip(mu, 0.0, 1.0)
        lp_p = 0.0
    trace = sample_count_action(x, PolicyOutput(U, p), spec.budgets, d, rng)
    lp = trace.logprob + lp_p
    return trace.action, lp, Step(feat, x, trace, p, lp, budgets=spec.budgets, consumption=d)


def count_policy(net: PolicyNet, spec: WcmdpSpec, explore: bool = False, noise: float = 0.1):
    """Callable ``policy(x, rng) -> u`` with per-state forward caching."""
    cache = {}

    def policy(x, rng):
        u, _, _ = act(net, x, spec, rng, explore=explore, noise=noise, cache=cache)
        return u
    return policy


# -- losses with analytic gradients -------------------------------------------

def policy_loss(net: PolicyNet, steps, adv, lp_old, clip: float, noise: float):
    """Clipped surrogate (to minimise) over ``steps`` and its parameter gradients."""
    F = np.stack([s.feat for s in steps])
    z, hs = net.mlp.forward(F)
    U, mu, sig_u, sig_p = net.heads(z)
    B = len(steps)
    SA = net.S * net.A
    lp_new = np.empty(B)
    gU = np.empty((B, net.S, net.A))
    gmu = np.empty((B, net.K))
    for i, st in enumerate(steps):
        lp_s, g = logprob_of(st.x, PolicyOutput(U[i], st.p_tilde), st.budgets, st.consumption, st.trace, with_grad=True)
        lp_p, dmu = censored_logpdf(st.p_tilde, mu[i], noise)
        lp_new[i] = lp_s + lp_p.sum()
        gU[i] = g
        gmu[i] = dmu
    ratio = np.exp(lp_new - lp_old)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1 - clip, 1 + clip) * adv
    loss = -float(np.mean(np.minimum(surr1, surr2)))
    active = surr1 <= surr2  # gradient flows through the unclipped branch
    coef = np.where(active, -adv * ratio / B, 0.0)
    dz = np.empty_like(z)
    dz[:, :SA] = (coef[:, None, None] * gU).reshape(B, SA) * (1 - PRIORITY_FLOOR) * sig_u * (1 - sig_u)
    dz[:, SA:] = coef[:, None] * gmu * (1 + 2 * RESOURCE_MARGIN) * sig_p * (1 - sig_p)
    grads = net.mlp.backward(hs, dz)
    info = {"ratio_mean": float(ratio.mean()), "clip_frac": float(np.mean(~active))}
    return loss, grads, info


def critic_loss(critic: CriticNet, feats, returns):
    v, hs = critic.mlp.forward(feats)
    err = v[:, 0] - returns
    loss = 0.5 * float(np.mean(err ** 2))
    grads = critic.mlp.backward(hs, (err / len(returns))[:, None])
    return loss, grads


def finite_difference_check(mlp: Mlp, loss_fn, analytic_flat, indices, h=1e-6):
    """Max relative error between analytic and central-difference gradients on ``indices``."""
    theta = mlp.get_flat()
    errs = []
    for j in indices:
        t = theta.copy()
        t[j] += h
        mlp.set_flat(t)
        up = loss_fn()
        t[j] -= 2 * h
        mlp.set_flat(t)
        down = loss_fn()
        num = (up - down) / (2 * h)
        ana = analytic_flat[j]
        errs.append(abs(num - ana) / max(abs(num), abs(ana), 1e-8))
    mlp.set_flat(theta)
    return max(errs)


# -- optimisation ---------------------------------------------------------------

class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _clip_grads(grads, max_norm):
    norm = float(np.sqrt(sum(np.sum(g * g) for g in grads)))
    if not np.isfinite(norm):
        return grads, norm
    if max_norm and norm > max_norm:
        grads = [g * (max_norm / norm) for g in grads]
    return grads, norm


def gae(rewards, values, last_value, gamma, lam):
    T = len(rewards)
    adv = np.zeros(T)
    nxt = last_value
    running = 0.0
    for t in reversed(range(T)):
        delta = rewards[t] + gamma * nxt - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
        nxt = values[t]
    return adv, adv + np.asarray(values)


@dataclass
class TrainResult:
    actor: PolicyNet
    critic: CriticNet
    config: TrainConfig
    curve: list = field(default_factory=list)  # (episode, eval_ggf, stderr)
    episode_seconds: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)


def _check_shared(specs):
    S, A, K = specs[0].sub_mdps[0].num_states, specs[0].sub_mdps[0].num_actions, specs[0].num_resources
    for sp in specs:
        if not is_symmetric(sp):
            raise ValueError("count-based training needs identical sub-MDPs")
        if (sp.sub_mdps[0].num_states, sp.sub_mdps[0].num_actions, sp.num_resources) != (S, A, K):
            raise ValueError("multitask instances must share S, A and K")
    return S, A, K


def rollout(actor, critic, spec, steps, rng, noise, discount=None):
    gamma = spec.discount if discount is None else discount
    sub = spec.sub_mdps[0]
    sim = CountSimulator(sub, spec.consumption[:, 0, :], spec.budgets, spec.num_submdps)
    x = rng.multinomial(spec.num_submdps, sub.initial_dist)
    cache = {}
    out = []
    for _ in range(steps):
        u, _, st = act(actor, x, spec, rng, explore=True, noise=noise, cache=cache)
        x, r = sim.step(x, u, rng)
        st.reward = r
        out.append(st)
    vals = critic.value(np.stack([s.feat for s in out] + [features(x, spec)]))
    for s, v in zip(out, vals[:-1]):
        s.value = float(v)
    return out, float(vals[-1]), gamma


def train(spec_or_specs, cfg: TrainConfig | None = None, eval_spec: WcmdpSpec | None = None, log=None) -> TrainResult:
    """Clipped policy-gradient training; one update per collected episode.

    A list of instances switches to a random one at the end of every episode.
    """
    cfg = cfg or TrainConfig()
    specs = list(spec_or_specs) if isinstance(spec_or_specs, (list, tuple)) else [spec_or_specs]
    S, A, K = _check_shared(specs)
    eval_spec = eval_spec or specs[0]
    rng = np.random.default_rng(cfg.rng_seed)
    init_rng = np.random.default_rng([cfg.rng_seed, 1])
    actor = PolicyNet(S, A, K, cfg.hidden, init_rng)
    critic = CriticNet(S, K, cfg.hidden, init_rng)
    opt_a = Adam(actor.mlp.params, cfg.actor_lr)
    opt_c = Adam(critic.mlp.params, cfg.critic_lr)
    result = TrainResult(actor, critic, cfg, metadata={"instances": [sp.metadata for sp in specs]})
    spec = specs[0]

    for ep in range(cfg.episodes):
        t0 = time.perf_counter()
        steps, last_v, gamma = rollout(actor, critic, spec, cfg.steps_per_episode, rng, cfg.resource_noise, cfg.discount)
        rewards = [s.reward for s in steps]
        values = [s.value for s in steps]
        adv, ret = gae(rewards, values, last_v, gamma, cfg.gae_lambda)
        lp_old = np.array([s.logprob for s in steps])
        feats = np.stack([s.feat for s in steps])
        n = len(steps)
        mb = max(1, n // cfg.minibatches)
        for _ in range(cfg.epochs):
            perm = rng.permutation(n)
            for start in range(0, n, mb):
                idx = perm[start:start + mb]
                a = adv[idx]
                if len(idx) > 1:
                    a = (a - a.mean()) / (a.std() + 1e-8)
                loss_p, g_p, _ = policy_loss(actor, [steps[i] for i in idx], a, lp_old[idx], cfg.clip, cfg.resource_noise)
                loss_v, g_v = critic_loss(critic, feats[idx], ret[idx])
                g_p, norm_p = _clip_grads(g_p, cfg.max_grad_norm)
                g_v, norm_v = _clip_grads(g_v, cfg.max_grad_norm)
                if not all(np.isfinite(v) for v in (loss_p, loss_v, norm_p, norm_v)):
                    raise NonFiniteLoss(
                        f"non-finite loss at episode {ep}",
                        {"episode": ep, "policy_loss": loss_p, "critic_loss": loss_v,
                         "grad_norms": (norm_p, norm_v), "actor_params": actor.mlp.get_flat().tolist()},
                    )
                opt_a.step(g_p)
                opt_c.step(g_v)
        result.episode_seconds.append(time.perf_counter() - t0)

        last = ep == cfg.episodes - 1
        if cfg.eval_every and ((ep + 1) % cfg.eval_every == 0 or last):
            rep = evaluate_count_policy(
                count_policy(actor, eval_spec), eval_spec,
                EvalConfig(cfg.eval_trajectories, cfg.eval_horizon, rng_seed=cfg.rng_seed + 10_000 + ep),
            )
            result.curve.append((ep + 1, rep.ggf_score, rep.stderr))
            if log:
                log(f"episode {ep + 1}: eval {rep.ggf_score:.4f} +- {rep.stderr:.4f}")
        if len(specs) > 1:
            spec = specs[rng.integers(len(specs))]
    return result


# -- checkpoints ----------------------------------------------------------------

def save_checkpoint(path, result: TrainResult):
    actor, critic = result.actor, result.critic
    doc = {
        "version": CHECKPOINT_VERSION,
        "S": actor.S, "A": actor.A, "K": actor.K,
        "actor": {"sizes": actor.mlp.sizes, "params": [p.tolist() for p in actor.mlp.params]},
        "critic": {"sizes": critic.mlp.sizes, "params": [p.tolist() for p in critic.mlp.params]},
        "config": asdict(result.config),
        "metadata": result.metadata,
        "curve": [list(c) for c in result.curve],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def load_checkpoint(path) -> TrainResult:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    S, A, K = doc["S"], doc["A"], doc["K"]
    hidden = doc["actor"]["sizes"][1]
    actor = PolicyNet(S, A, K, hidden)
    critic = CriticNet(S, K, hidden)
    for net, key in ((actor.mlp, "actor"), (critic.mlp, "critic")):
        if net.sizes != doc[key]["sizes"]:
            raise ValueError(f"{key} layer sizes do not match")
        for p, stored in zip(net.params, doc[key]["params"]):
            p[...] = np.asarray(stored, dtype=float)
    cfg = TrainConfig(**doc["config"])
    return TrainResult(actor, critic, cfg, [tuple(c) for c in doc["curve"]], [], doc["metadata"])
