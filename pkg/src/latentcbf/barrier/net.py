"""Stacked MLP barrier heads (dense -> layer norm -> GELU blocks, scalar head).

Each head is an independent network; heads that share an architecture are
stored stacked along a leading axis so one batched pass evaluates them all.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

DESK_HIDDEN = (64, 32, 16)
FULL_HIDDEN = (2048, 1024, 512, 256)
LN_EPS = 1e-5

_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x * _SQRT_HALF))


def gelu_grad(x, cdf=None):
    if cdf is None:
        cdf = 0.5 * (1.0 + erf(x * _SQRT_HALF))
    return cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


@dataclass
class _Cache:
    x: np.ndarray            # (N, d) input
    pre_act: list            # per layer (H, N, o) layer-norm output
    cdf: list                # per layer (H, N, o) standard normal cdf of pre_act
    xhat: list               # per layer (H, N, o) normalized pre-activation
    inv_std: list            # per layer (H, N, 1)
    acts: list               # per layer (H, N, o) GELU output


class MLPBarrier:
    """A stack of `n_heads` barrier networks with identical layer sizes.

    Parameters are held as a list of layer dicts with keys ``W`` (H, in, out),
    ``b``, ``gain``, ``shift`` (H, out), plus ``head_w`` (H, last) and
    ``head_b`` (H,).
    """

    kind = "mlp"

    def __init__(self, input_dim: int, hidden_dims=DESK_HIDDEN, n_heads: int = 1,
                 seed: int | None = 0, params: dict | None = None, dtype=np.float64):
        if input_dim < 1 or n_heads < 1:
            raise ValueError("input_dim and n_heads must be positive")
        self.input_dim = int(input_dim)
        self.hidden_dims = tuple(int(h) for h in hidden_dims)
        if not self.hidden_dims or min(self.hidden_dims) < 1:
            raise ValueError("hidden_dims must be a non-empty list of positive sizes")
        self.n_heads = int(n_heads)
        self.dtype = np.dtype(dtype)
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        self.layers = [{k: np.asarray(v, dtype=self.dtype) for k, v in layer.items()}
                       for layer in params["layers"]]
        self.head_w = np.asarray(params["head_w"], dtype=self.dtype)
        self.head_b = np.asarray(params["head_b"], dtype=self.dtype)
        self._check_shapes()

    def _init_params(self, rng: np.random.Generator) -> dict:
        H = self.n_heads
        layers = []
        fan_in = self.input_dim
        for width in self.hidden_dims:
            bound = 1.0 / math.sqrt(fan_in)
            layers.append({
                "W": rng.uniform(-bound, bound, size=(H, fan_in, width)),
                "b": rng.uniform(-bound, bound, size=(H, width)),
                "gain": np.ones((H, width)),
                "shift": np.zeros((H, width)),
            })
            fan_in = width
        bound = 1.0 / math.sqrt(fan_in)
        return {
            "layers": layers,
            "head_w": rng.uniform(-bound, bound, size=(H, fan_in)),
            "head_b": rng.uniform(-bound, bound, size=(H,)),
        }

    def _check_shapes(self):
        H = self.n_heads
        fan_in = self.input_dim
        if len(self.layers) != len(self.hidden_dims):
            raise ValueError("layer count does not match hidden_dims")
        for layer, width in zip(self.layers, self.hidden_dims):
            expected = {"W": (H, fan_in, width), "b": (H, width),
                        "gain": (H, width), "shift": (H, width)}
            for key, shape in expected.items():
                if layer[key].shape != shape:
                    raise ValueError(f"parameter {key} has shape {layer[key].shape}, expected {shape}")
            fan_in = width
        if self.head_w.shape != (H, fan_in) or self.head_b.shape != (H,):
            raise ValueError("head parameters have wrong shape")

    # -- parameters -------------------------------------------------------
    def parameters(self) -> list[np.ndarray]:
        """Flat list of parameter arrays in a fixed order (shared with gradients)."""
        out = []
        for layer in self.layers:
            out.extend([layer["W"], layer["b"], layer["gain"], layer["shift"]])
        out.extend([self.head_w, self.head_b])
        return out

    def set_parameters(self, arrays: list[np.ndarray]):
        it = iter(arrays)
        for layer in self.layers:
            for key in ("W", "b", "gain", "shift"):
                layer[key] = next(it)
        self.head_w = next(it)
        self.head_b = next(it)

    def copy(self) -> "MLPBarrier":
        return MLPBarrier(self.input_dim, self.hidden_dims, self.n_heads, params=self._param_dict(),
                          dtype=self.dtype)

    def _param_dict(self) -> dict:
        return {"layers": [{k: v.copy() for k, v in layer.items()} for layer in self.layers],
                "head_w": self.head_w.copy(), "head_b": self.head_b.copy()}

    def head(self, k: int) -> "MLPBarrier":
        """Single-head copy of head `k`."""
        if not 0 <= k < self.n_heads:
            raise IndexError(k)
        sl = slice(k, k + 1)
        params = {"layers": [{key: v[sl].copy() for key, v in layer.items()} for layer in self.layers],
                  "head_w": self.head_w[sl].copy(), "head_b": self.head_b[sl].copy()}
        return MLPBarrier(self.input_dim, self.hidden_dims, 1, params=params, dtype=self.dtype)

    @classmethod
    def stack(cls, nets: list["MLPBarrier"]) -> "MLPBarrier":
        first = nets[0]
        for net in nets[1:]:
            if net.input_dim != first.input_dim or net.hidden_dims != first.hidden_dims:
                raise ValueError("can only stack networks with identical architecture")
        params = {
            "layers": [{key: np.concatenate([n.layers[i][key] for n in nets]) for key in first.layers[i]}
                       for i in range(len(first.layers))],
            "head_w": np.concatenate([n.head_w for n in nets]),
            "head_b": np.concatenate([n.head_b for n in nets]),
        }
        return cls(first.input_dim, first.hidden_dims, sum(n.n_heads for n in nets),
                   params=params, dtype=first.dtype)

    # -- forward / backward ----------------------------------------------
    def forward(self, X: np.ndarray, keep: bool = False):
        """Evaluate all heads on a batch. Returns (values (N, H), cache or None)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ValueError(f"expected input of shape (N, {self.input_dim}), got {X.shape}")
        cache = _Cache(X, [], [], [], [], []) if keep else None
        a = X
        for layer in self.layers:
            z = np.matmul(a, layer["W"]) + layer["b"][:, None, :]
            mu = z.mean(axis=-1, keepdims=True)
            zc = z - mu
            inv_std = 1.0 / np.sqrt((zc * zc).mean(axis=-1, keepdims=True) + LN_EPS)
            xhat = zc * inv_std
            y = xhat * layer["gain"][:, None, :] + layer["shift"][:, None, :]
            cdf = 0.5 * (1.0 + erf(y * _SQRT_HALF))
            a = y * cdf
            if keep:
                cache.pre_act.append(y)
                cache.cdf.append(cdf)
                cache.xhat.append(xhat)
                cache.inv_std.append(inv_std)
                cache.acts.append(a)
        out = np.einsum("hno,ho->hn", a, self.head_w) + self.head_b[:, None]
        return out.T, cache

    def backward(self, cache: _Cache, seed: np.ndarray, want_params: bool = False,
                 want_input: str | None = "per_head"):
        """Reverse pass for the scalar sum(seed * values).

        `seed` has shape (N, H). `want_input` is "per_head" for (N, H, d)
        input gradients, "sum" for the seed-weighted sum (N, d), or None.
        Returns (param_grads or None, input_grad or None).
        """
        seed = np.asarray(seed, dtype=np.float64).T  # (H, N)
        grads = [] if want_params else None
        last = cache.acts[-1]
        if want_params:
            head_grads = [np.einsum("hn,hno->ho", seed, last), seed.sum(axis=1)]
        da = seed[:, :, None] * self.head_w[:, None, :]
        input_grad = None
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            dy = da * gelu_grad(cache.pre_act[i], cache.cdf[i])
            xhat = cache.xhat[i]
            dxhat = dy * layer["gain"][:, None, :]
            dz = cache.inv_std[i] * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
            prev = cache.acts[i - 1] if i > 0 else cache.x
            if want_params:
                dW = np.matmul(np.swapaxes(prev, -1, -2), dz)
                grads[:0] = [dW, dz.sum(axis=1), (dy * xhat).sum(axis=1), dy.sum(axis=1)]
            if i > 0:
                da = np.matmul(dz, np.swapaxes(layer["W"], -1, -2))
            elif want_input == "per_head":
                input_grad = np.swapaxes(np.matmul(dz, np.swapaxes(layer["W"], -1, -2)), 0, 1)
            elif want_input == "sum":
                input_grad = np.matmul(dz, np.swapaxes(layer["W"], -1, -2)).sum(axis=0)
        if want_params:
            grads.extend(head_grads)
        return grads, input_grad

    # -- convenience ------------------------------------------------------
    def values(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        vals, _ = self.forward(X[None, :] if single else X)
        return vals[0] if single else vals

    def values_and_jacobians(self, X):
        """Values (N, H) and input gradients (N, H, d)."""
        X = np.asarray(X, dtype=np.float64)
        vals, cache = self.forward(X, keep=True)
        _, jac = self.backward(cache, np.ones_like(vals))
        return vals, jac

    def value_and_jacobian(self, h):
        vals, jac = self.values_and_jacobians(np.asarray(h, dtype=np.float64)[None, :])
        return vals[0], jac[0]

    def weighted_gradient(self, h, weights):
        """sum_k weights[k] * grad b_k(h), with one fused reverse pass."""
        vals, cache = self.forward(np.asarray(h, dtype=np.float64)[None, :], keep=True)
        _, g = self.backward(cache, np.asarray(weights, dtype=np.float64)[None, :], want_input="sum")
        return g[0]

    def __repr__(self):
        return f"MLPBarrier(input_dim={self.input_dim}, hidden_dims={self.hidden_dims}, n_heads={self.n_heads})"
