"""A bank of K barrier heads over a common latent space."""
from __future__ import annotations

import numpy as np

from latentcbf.core import as_state


class BarrierBank:
    """Ordered collection of barrier components.

    A component is anything with ``input_dim``, ``n_heads``, ``values`` and
    ``values_and_jacobians`` (``MLPBarrier``, ``HalfSpace``, ``Sphere``).
    Heads are numbered 0..K-1 in component order.
    """

    def __init__(self, components, category_names=None):
        components = list(components)
        if not components:
            raise ValueError("a barrier bank needs at least one barrier")
        dims = {c.input_dim for c in components}
        if len(dims) != 1:
            raise ValueError(f"barriers disagree on input dimension: {sorted(dims)}")
        self.components = components
        self.input_dim = dims.pop()
        self.n_heads = sum(c.n_heads for c in components)
        if category_names is not None:
            category_names = [str(n) for n in category_names]
            if len(category_names) != self.n_heads:
                raise ValueError("need one category name per head")
        self.category_names = category_names

    def __len__(self):
        return self.n_heads

    def __repr__(self):
        return f"BarrierBank(K={self.n_heads}, d_h={self.input_dim}, components={self.components!r})"

    @classmethod
    def merge(cls, banks) -> "BarrierBank":
        components, names, any_named = [], [], False
        for i, bank in enumerate(banks):
            components.extend(bank.components)
            if bank.category_names:
                any_named = True
                names.extend(bank.category_names)
            else:
                names.extend(f"bank{i}_head{k}" for k in range(bank.n_heads))
        return cls(components, names if any_named else None)

    def head(self, k: int):
        """Single-head barrier for head index `k`."""
        if not 0 <= k < self.n_heads:
            raise IndexError(k)
        for comp in self.components:
            if k < comp.n_heads:
                return comp.head(k)
            k -= comp.n_heads
        raise IndexError(k)

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ValueError(f"expected states of shape (N, {self.input_dim}), got {X.shape}")
        return X

    def values(self, X) -> np.ndarray:
        """Barrier values, (K,) for one state or (N, K) for a batch."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            return self.values(X[None, :])[0]
        X = self._check(X)
        return np.concatenate([c.values(X) for c in self.components], axis=1)

    def values_and_jacobians(self, X):
        X = self._check(X)
        parts = [c.values_and_jacobians(X) for c in self.components]
        if len(parts) == 1:
            return parts[0]
        return (np.concatenate([p[0] for p in parts], axis=1),
                np.concatenate([p[1] for p in parts], axis=1))

    def value_and_jacobian(self, h):
        """Values (K,) and gradients (K, d) at a single state."""
        h = as_state(h, self.input_dim)
        vals, jac = self.values_and_jacobians(h[None, :])
        return vals[0], jac[0]

    def values_and_weighted_gradient(self, h, weight_fn):
        """Values b(h) (K,) and sum_k w_k grad b_k(h) with w = weight_fn(values).

        Network heads take a single fused reverse pass, so this is cheaper
        than forming the full (K, d) Jacobian.
        """
        X = as_state(h, self.input_dim)[None, :]
        vals, saved = [], []
        for comp in self.components:
            if hasattr(comp, "forward"):
                v, cache = comp.forward(X, keep=True)
                saved.append(cache)
            else:
                v, jac = comp.values_and_jacobians(X)
                saved.append(jac)
            vals.append(v[0])
        values = np.concatenate(vals)
        weights = np.asarray(weight_fn(values), dtype=np.float64)
        grad = np.zeros(self.input_dim)
        start = 0
        for comp, item in zip(self.components, saved):
            w = weights[start:start + comp.n_heads]
            start += comp.n_heads
            if not np.any(w):
                continue
            if hasattr(comp, "forward"):
                grad += comp.backward(item, w[None, :], want_input="sum")[1][0]
            else:
                grad += w @ item[0]
        return values, grad

