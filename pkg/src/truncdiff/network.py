"""Trainable noise predictor: a locked base MLP plus a zero-initialized adapter.

Layout (rows are samples, ``L`` hidden layers)::

    base input     h0 = [x, t/T, sqrt(alpha_bar_t)]
    adapter input  u0 = [x, t/T, sqrt(alpha_bar_t), cond]

    u_l   = silu(u_{l-1} @ A_l + c_l)
    h_l   = silu(h_{l-1} @ W_l + b_l) + (u_l @ Z_l + z_l)
    eps   = h_L @ W_out + b_out

``Z_l`` and ``z_l`` form the adapter's output layer. They start at zero, so a
fresh adapter leaves the base prediction untouched; with ``lock_base`` only
adapter parameters move during training.
"""
from __future__ import annotations

import json
import logging
import math
from pathlib import Path

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator

from .exceptions import NumericError, ParameterError
from .mixture import GaussianMixture, gm_sample
from .schedule import NoiseSchedule, make_linear_schedule
from .validation import check_batch, check_int, check_positive, check_rng

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "truncdiff-checkpoint"
CHECKPOINT_VERSION = 1
N_TIME_FEATURES = 2


def silu(z):
    return z * expit(z)


def silu_grad(z):
    s = expit(z)
    return s * (1.0 + z * (1.0 - s))


def time_features(sched: NoiseSchedule, t, n: int) -> np.ndarray:
    """Per-sample ``(t / T, sqrt(alpha_bar_t))`` columns."""
    t = np.broadcast_to(np.asarray(t), (n,))
    if not np.issubdtype(t.dtype, np.integer):
        raise ParameterError("t must be integral")
    if t.size and (t.min() < 0 or t.max() > sched.T):
        raise ParameterError(f"t must lie in [0, {sched.T}]")
    return np.column_stack([t / sched.T, np.sqrt(sched.alpha_bars[t])])


def n_hidden(params) -> int:
    return sum(1 for k in params if k.startswith("base.W") and k != "base.W_out")


def is_base(name: str) -> bool:
    return name.startswith("base.")


def is_adapter_output(name: str) -> bool:
    return name.startswith("adapter.Z") or name.startswith("adapter.z")


def init_params(dim: int, cond_dim: int, hidden_sizes, rng, *, zero_output=True,
                adapter_init="copy") -> dict[str, np.ndarray]:
    """Fresh parameter dict; the adapter output layer is always zero."""
    hidden_sizes = tuple(int(h) for h in hidden_sizes)
    if not hidden_sizes or min(hidden_sizes) < 1:
        raise ParameterError("hidden_sizes must be a non-empty sequence of positive ints")
    params = {}
    fan_in = dim + N_TIME_FEATURES
    for l, width in enumerate(hidden_sizes, start=1):
        params[f"base.W{l}"] = rng.standard_normal((fan_in, width)) / math.sqrt(fan_in)
        params[f"base.b{l}"] = np.zeros(width)
        fan_in = width
    if zero_output:
        params["base.W_out"] = np.zeros((fan_in, dim))
    else:
        params["base.W_out"] = rng.standard_normal((fan_in, dim)) / math.sqrt(fan_in)
    params["base.b_out"] = np.zeros(dim)
    _init_adapter(params, dim, cond_dim, hidden_sizes, rng, adapter_init)
    return params


def _init_adapter(params, dim, cond_dim, hidden_sizes, rng, adapter_init):
    if adapter_init not in ("copy", "random"):
        raise ParameterError(f"adapter_init must be 'copy' or 'random', got {adapter_init!r}")
    fan_in = dim + N_TIME_FEATURES + cond_dim
    for l, width in enumerate(hidden_sizes, start=1):
        if adapter_init == "copy":
            A = np.zeros((fan_in, width))
            W = params[f"base.W{l}"]
            A[: W.shape[0]] = W
            params[f"adapter.A{l}"] = A
            params[f"adapter.c{l}"] = params[f"base.b{l}"].copy()
        else:
            params[f"adapter.A{l}"] = rng.standard_normal((fan_in, width)) / math.sqrt(fan_in)
            params[f"adapter.c{l}"] = np.zeros(width)
        params[f"adapter.Z{l}"] = np.zeros((width, width))
        params[f"adapter.z{l}"] = np.zeros(width)
        fan_in = width


def _cond_block(cond, n, cond_dim):
    if cond is None:
        return np.zeros((n, cond_dim))
    cond = np.asarray(cond, dtype=np.float64)
    if cond.ndim == 1:
        cond = np.broadcast_to(cond, (n, cond.size))
    if cond.shape != (n, cond_dim):
        raise ParameterError(f"cond has shape {cond.shape}, expected ({n}, {cond_dim})")
    return cond


def forward(params, sched, x, t, cond=None, *, use_adapter=True, cache=False):
    """Network output; with ``cache`` also the activations needed by :func:`backward`."""
    n, dim = x.shape
    if params["base.W_out"].shape[1] != dim:
        raise ParameterError(f"x has width {dim}, network expects {params['base.W_out'].shape[1]}")
    temb = time_features(sched, t, n)
    h = np.hstack([x, temb])
    L = n_hidden(params)
    store = {"h0": h}
    if use_adapter:
        cond_dim = params["adapter.A1"].shape[0] - dim - N_TIME_FEATURES
        u = np.hstack([h, _cond_block(cond, n, cond_dim)])
        store["u0"] = u
    for l in range(1, L + 1):
        p = h @ params[f"base.W{l}"] + params[f"base.b{l}"]
        h = silu(p)
        if use_adapter:
            q = u @ params[f"adapter.A{l}"] + params[f"adapter.c{l}"]
            u = silu(q)
            h = h + (u @ params[f"adapter.Z{l}"] + params[f"adapter.z{l}"])
            store[f"q{l}"], store[f"u{l}"] = q, u
        store[f"p{l}"], store[f"h{l}"] = p, h
    out = h @ params["base.W_out"] + params["base.b_out"]
    return (out, store) if cache else out


def backward(params, store, dout) -> dict[str, np.ndarray]:
    """Gradients of ``sum(dout * out)`` with respect to every parameter."""
    L = n_hidden(params)
    grads = {}
    grads["base.W_out"] = store[f"h{L}"].T @ dout
    grads["base.b_out"] = dout.sum(axis=0)
    dh = dout @ params["base.W_out"].T
    du = None
    for l in range(L, 0, -1):
        u = store[f"u{l}"]
        grads[f"adapter.Z{l}"] = u.T @ dh
        grads[f"adapter.z{l}"] = dh.sum(axis=0)
        du_l = dh @ params[f"adapter.Z{l}"].T
        du = du_l if du is None else du + du_l
        dq = du * silu_grad(store[f"q{l}"])
        grads[f"adapter.A{l}"] = store[f"u{l - 1}"].T @ dq
        grads[f"adapter.c{l}"] = dq.sum(axis=0)
        du = dq @ params[f"adapter.A{l}"].T

        dp = dh * silu_grad(store[f"p{l}"])
        grads[f"base.W{l}"] = store[f"h{l - 1}"].T @ dp
        grads[f"base.b{l}"] = dp.sum(axis=0)
        dh = dp @ params[f"base.W{l}"].T
    return grads


def squared_error_loss(params, sched, x, t, cond, eps, *, with_grads=False, locked=()):
    """Batch mean of ``||eps - net(x, t, cond)||^2``; gradients are zero for ``locked`` names."""
    out, store = forward(params, sched, x, t, cond, cache=True)
    resid = eps - out
    loss = float(np.mean(np.sum(resid * resid, axis=1)))
    if not with_grads:
        return loss
    grads = backward(params, store, -2.0 * resid / len(x))
    for name in locked:
        grads[name] = np.zeros_like(params[name])
    return loss, grads


def mlp_predict_eps(params, sched, x, t, cond=None) -> np.ndarray:
    x = check_batch(x)
    return forward(params, sched, x, t, cond)


LR_DECAYS = ("constant", "cosine")


def train_denoiser(params, data, sched, *, steps, batch_size, learning_rate, rng,
                   cond_fn=None, t_max=None, lock_base=True, lr_decay="constant") -> np.ndarray:
    """Plain SGD on the noise-prediction objective; updates ``params`` in place.

    ``data`` is a :class:`GaussianMixture` (fresh draws each step) or an (n, d)
    array sampled with replacement. ``t`` is uniform on ``{1, ..., t_max}``.
    ``cond_fn(x0, rng)`` supplies the adapter condition for each batch.
    ``lr_decay="cosine"`` anneals the step size from ``learning_rate`` to 0.
    Returns the per-step loss history.
    """
    steps = check_int(steps, "steps", low=0)
    batch_size = check_int(batch_size, "batch_size", low=1)
    if learning_rate != 0:
        check_positive(learning_rate, "learning_rate")
    if lr_decay not in LR_DECAYS:
        raise ParameterError(f"lr_decay must be one of {LR_DECAYS}, got {lr_decay!r}")
    t_max = sched.T if t_max is None else check_int(t_max, "t_max", low=1, high=sched.T)
    if not isinstance(data, GaussianMixture):
        data = check_batch(data, name="data")
    locked = tuple(k for k in params if is_base(k)) if lock_base else ()
    trainable = [k for k in params if k not in locked]
    history = np.empty(steps)
    for step in range(steps):
        if isinstance(data, GaussianMixture):
            x0 = gm_sample(data, batch_size, rng)
        else:
            x0 = data[rng.integers(0, len(data), size=batch_size)]
        t = rng.integers(1, t_max + 1, size=batch_size)
        eps = rng.standard_normal(x0.shape)
        ab = sched.alpha_bars[t][:, None]
        x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
        cond = cond_fn(x0, rng) if cond_fn is not None else None
        with np.errstate(invalid="ignore", over="ignore"):
            loss, grads = squared_error_loss(params, sched, x_t, t, cond, eps, with_grads=True)
        if not math.isfinite(loss):
            raise NumericError(f"non-finite training loss at step {step}", step=step)
        history[step] = loss
        if learning_rate:
            lr = learning_rate
            if lr_decay == "cosine":
                lr *= 0.5 * (1.0 + math.cos(math.pi * step / steps))
            for k in trainable:
                params[k] -= lr * grads[k]
        if step and step % 5000 == 0:
            logger.debug("step %d loss %.4f", step, float(history[step - 5000:step].mean()))
    return history


def grad_check(params, sched, x, t, cond=None, eps=None, *, probe_count=100, rng=None,
               lock_base=False, step=1e-5, only=None) -> float:
    """Largest relative error between backprop and central finite differences.

    Probes are drawn from the trainable parameters only (optionally narrowed
    to the names in ``only``); the denominator is ``max(|analytic|, |numeric|, 1e-8)``.
    """
    probe_count = check_int(probe_count, "probe_count", low=1)
    rng = check_rng(rng)
    x = check_batch(x)
    if eps is None:
        eps = rng.standard_normal(x.shape)
    locked = tuple(k for k in params if is_base(k)) if lock_base else ()
    _, grads = squared_error_loss(params, sched, x, t, cond, eps, with_grads=True, locked=locked)
    names = [k for k in params if k not in locked and (only is None or k in only)]
    if not names:
        raise ParameterError("no trainable parameters to probe")
    sizes = np.array([params[k].size for k in names])
    worst = 0.0
    for _ in range(probe_count):
        name = names[rng.choice(len(names), p=sizes / sizes.sum())]
        idx = np.unravel_index(rng.integers(params[name].size), params[name].shape)
        original = params[name][idx]
        params[name][idx] = original + step
        up = squared_error_loss(params, sched, x, t, cond, eps)
        params[name][idx] = original - step
        down = squared_error_loss(params, sched, x, t, cond, eps)
        params[name][idx] = original
        numeric = (up - down) / (2 * step)
        analytic = grads[name][idx]
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8))
    return worst


def save_checkpoint(path, params, sched: NoiseSchedule, meta=None) -> None:
    """Write a versioned ``.npz`` with little-endian float64 parameter arrays."""
    header = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, **(meta or {})}
    arrays = {k: np.ascontiguousarray(v, dtype="<f8") for k, v in params.items()}
    arrays["schedule.betas"] = np.ascontiguousarray(sched.betas, dtype="<f8")
    arrays["__header__"] = np.array(json.dumps(header, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Return ``(params, schedule, header)``."""
    with np.load(path, allow_pickle=False) as data:
        if "__header__" not in data.files:
            raise ParameterError(f"{path}: not a checkpoint (missing header)")
        header = json.loads(str(data["__header__"]))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ParameterError(f"{path}: unknown format {header.get('format')!r}")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ParameterError(f"{path}: unsupported checkpoint version {header.get('version')}")
        sched = NoiseSchedule(data["schedule.betas"].astype(np.float64))
        params = {k: data[k].astype(np.float64) for k in data.files
                  if k.startswith(("base.", "adapter."))}
    return params, sched, header


class AdapterDenoiser(BaseEstimator):
    """MLP noise predictor with a lockable base and a zero-initialized adapter.

    ``fit`` accepts either an (n, d) sample array or a :class:`GaussianMixture`.
    With ``lock_base=True`` only the adapter learns; call
    :meth:`reset_adapter` first to start it as a copy of the base.
    """

    def __init__(self, schedule=None, hidden_sizes=(64, 64, 64), cond_dim=0,
                 lock_base=False, adapter_init="copy", n_iter=20000, batch_size=256,
                 learning_rate=0.1, lr_decay="cosine", t_max=None, random_state=None,
                 warm_start=False):
        self.schedule = schedule
        self.hidden_sizes = hidden_sizes
        self.cond_dim = cond_dim
        self.lock_base = lock_base
        self.adapter_init = adapter_init
        self.n_iter = n_iter
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.t_max = t_max
        self.random_state = random_state
        self.warm_start = warm_start

    def _schedule(self):
        if self.schedule is None:
            return make_linear_schedule()
        if not isinstance(self.schedule, NoiseSchedule):
            raise ParameterError("schedule must be a NoiseSchedule")
        return self.schedule

    def _rng(self):
        if not hasattr(self, "_rng_"):
            self._rng_ = check_rng(self.random_state)
        return self._rng_

    def initialize(self, n_features: int):
        """Create fresh parameters without training."""
        self.schedule_ = self._schedule()
        self.n_features_in_ = check_int(n_features, "n_features", low=1)
        self.params_ = init_params(self.n_features_in_, check_int(self.cond_dim, "cond_dim", low=0),
                                   self.hidden_sizes, self._rng(), adapter_init=self.adapter_init)
        return self

    def fit(self, X, y=None, cond_fn=None):
        dim = X.dim if isinstance(X, GaussianMixture) else check_batch(X).shape[1]
        if not (self.warm_start and hasattr(self, "params_")):
            self.initialize(dim)
        elif dim != self.n_features_in_:
            raise ParameterError(f"X has {dim} features, fitted network expects {self.n_features_in_}")
        self.loss_history_ = train_denoiser(
            self.params_, X, self.schedule_, steps=self.n_iter, batch_size=self.batch_size,
            learning_rate=self.learning_rate, lr_decay=self.lr_decay, rng=self._rng(), cond_fn=cond_fn,
            t_max=self.t_max, lock_base=self.lock_base)
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise ParameterError(f"{type(self).__name__} is not initialized; call fit() first")

    def predict_eps(self, X, t, cond=None):
        self._check_fitted()
        X = check_batch(X, n_features=self.n_features_in_)
        return forward(self.params_, self.schedule_, X, t, cond)

    def predict_eps_base(self, X, t):
        """Base network alone, with no adapter contribution."""
        self._check_fitted()
        X = check_batch(X, n_features=self.n_features_in_)
        return forward(self.params_, self.schedule_, X, t, use_adapter=False)

    def reset_adapter(self, adapter_init=None, random_state=None):
        """Re-create the adapter: copy of the base (or random) with zero output layer."""
        self._check_fitted()
        rng = check_rng(random_state) if random_state is not None else self._rng()
        for k in [k for k in self.params_ if k.startswith("adapter.")]:
            del self.params_[k]
        _init_adapter(self.params_, self.n_features_in_, self.cond_dim, tuple(self.hidden_sizes),
                      rng, adapter_init or self.adapter_init)
        return self

    def grad_check(self, X, t, cond=None, eps=None, probe_count=100, random_state=None):
        self._check_fitted()
        return grad_check(self.params_, self.schedule_, X, t, cond, eps, probe_count=probe_count,
                          rng=random_state, lock_base=self.lock_base)

    def save(self, path):
        self._check_fitted()
        meta = {"hidden_sizes": list(self.hidden_sizes), "cond_dim": int(self.cond_dim),
                "n_features": int(self.n_features_in_)}
        save_checkpoint(path, self.params_, self.schedule_, meta)

    @classmethod
    def load(cls, path):
        params, sched, header = load_checkpoint(path)
        est = cls(schedule=sched, hidden_sizes=tuple(header["hidden_sizes"]),
                  cond_dim=header["cond_dim"])
        est.schedule_ = sched
        est.n_features_in_ = header["n_features"]
        est.params_ = params
        return est

    def __sklearn_is_fitted__(self):
        return hasattr(self, "params_")


def load_denoiser(path: str | Path) -> AdapterDenoiser:
    return AdapterDenoiser.load(path)
