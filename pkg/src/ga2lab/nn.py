"""Small reverse-mode autodiff over float64 numpy arrays, plus the layers GA2 needs.

Only the operations used by the GAT stacks and the Q-network are provided:
matmul, elementwise arithmetic, indexing, reshape/transpose, concatenation,
leaky ReLU and masked softmax.
"""

from __future__ import annotations

from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

LEAKY_SLOPE = 0.2


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = "", _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, name={self.name!r})"

    # -------------------------------------------------------------- graph

    @staticmethod
    def _make(data, parents, backward) -> "Tensor":
        needs = any(p.requires_grad for p in parents)
        return Tensor(data, requires_grad=needs, _parents=parents if needs else (), _backward=backward if needs else None)

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that was not produced by a recorded forward pass")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)
        order: List[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: Dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else prev + pg

    # -------------------------------------------------------------- arithmetic

    def __add__(self, other) -> "Tensor":
        other = _as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor._make(self.data + other.data, (self, other),
                            lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        return self + (-_as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return _as_tensor(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = _as_tensor(other)
        x, y = self.data, other.data
        return Tensor._make(x * y, (self, other),
                            lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)))

    __rmul__ = __mul__

    def __matmul__(self, other) -> "Tensor":
        other = _as_tensor(other)
        x, y = self.data, other.data

        if x.ndim < 2 or y.ndim < 2:
            raise ValueError("matmul operands must be at least 2-D")

        # a stack of inputs against one 2-D weight runs as a single 2-D product
        flat = y.ndim == 2 and x.ndim > 2

        def back(g):
            if flat:
                g2 = g.reshape(-1, g.shape[-1])
                gx = (g2 @ y.T).reshape(x.shape)
                gy = x.reshape(-1, x.shape[-1]).T @ g2
            else:
                gx = g @ np.swapaxes(y, -1, -2)
                gy = np.swapaxes(x, -1, -2) @ g
            return _unbroadcast(gx, x.shape), _unbroadcast(gy, y.shape)

        out = (x.reshape(-1, x.shape[-1]) @ y).reshape(*x.shape[:-1], y.shape[-1]) if flat else x @ y
        return Tensor._make(out, (self, other), back)

    def __getitem__(self, idx) -> "Tensor":
        shape = self.shape

        def back(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return (out,)

        return Tensor._make(self.data[idx], (self,), back)

    def take(self, indices: np.ndarray, axis: int) -> "Tensor":
        ax = axis % self.ndim
        return self[(slice(None),) * ax + (np.asarray(indices),)]

    def reshape(self, *shape) -> "Tensor":
        old = self.shape
        return Tensor._make(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),))

    def swapaxes(self, a: int, b: int) -> "Tensor":
        return Tensor._make(np.swapaxes(self.data, a, b), (self,), lambda g: (np.swapaxes(g, a, b),))

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None) -> "Tensor":
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def square(self) -> "Tensor":
        x = self.data
        return Tensor._make(x * x, (self,), lambda g: (2.0 * x * g,))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    pos = x.data > 0
    scale = np.where(pos, 1.0, slope)
    return Tensor._make(x.data * scale, (x,), lambda g: (g * scale,))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]
    return Tensor._make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts),
                        lambda g: tuple(np.split(g, cuts, axis=axis)))


def masked_softmax(E: Tensor, mask: np.ndarray) -> Tensor:
    """Row softmax over entries where ``mask`` is 1; masked entries are exactly 0.

    Rows are stabilised by subtracting their max over unmasked entries.
    """
    mask = np.asarray(mask) > 0
    if not mask.any(axis=-1).all():
        raise ValueError("mask has a row with no neighbours; softmax is undefined")
    # exp(-inf) is exactly 0, so masked entries vanish without a second select
    alpha = E.data + np.where(mask, 0.0, -np.inf)
    alpha -= alpha.max(axis=-1, keepdims=True)
    np.exp(alpha, out=alpha)
    alpha /= alpha.sum(axis=-1, keepdims=True)

    def back(g):
        ga = g * alpha
        ga -= alpha * ga.sum(axis=-1, keepdims=True)
        return (ga,)

    return Tensor._make(alpha, (E,), back)


# ---------------------------------------------------------------- parameters


class Module:
    """Anything holding named parameters."""

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        out = []
        for key, val in vars(self).items():
            if isinstance(val, Tensor):
                out.append((key, val))
            elif isinstance(val, Module):
                out += [(f"{key}.{n}", p) for n, p in val.named_parameters()]
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out += [(f"{key}.{i}.{n}", p) for n, p in item.named_parameters()]
        return out

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for n, p in params.items():
            if state[n].shape != p.shape:
                raise ValueError(f"shape mismatch for {n}: {state[n].shape} vs {p.shape}")
            p.data = np.array(state[n], dtype=np.float64, copy=True)


def glorot(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True, zero: bool = False):
        w = np.zeros((n_in, n_out)) if zero else glorot(rng, (n_in, n_out), n_in, n_out)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class GATLayer(Module):
    """Multi-head graph attention with per-head ``W^k`` (F' x F) and ``a^k`` (2F').

    Output is the concatenation over heads of ``sum_j alpha_ij W h_j``; no bias.
    """

    def __init__(self, f_in: int, f_out: int, heads: int, rng: np.random.Generator, slope: float = LEAKY_SLOPE):
        self.f_in, self.f_out, self.heads, self.slope = f_in, f_out, heads, slope
        self.W = Tensor(glorot(rng, (heads, f_out, f_in), f_in, f_out), requires_grad=True)
        self.a = Tensor(glorot(rng, (heads, 2 * f_out), 2 * f_out, 1), requires_grad=True)

    def attention(self, h: Tensor, mask: np.ndarray) -> Tuple[Tensor, Tensor]:
        """Returns (alpha, Wh) with shapes (..., K, N, N) and (..., K, N, F')."""
        if h.shape[-1] != self.f_in:
            raise ValueError(f"expected {self.f_in} input features, got {h.shape[-1]}")
        n = h.shape[-2]
        if mask.shape != (n, n):
            raise ValueError(f"mask shape {mask.shape} does not match {n} nodes")
        hk = h.reshape(*h.shape[:-2], 1, n, self.f_in)
        wh = hk @ self.W.swapaxes(-1, -2)  # (..., K, N, F')
        a_src = self.a[:, : self.f_out].reshape(self.heads, self.f_out, 1)
        a_dst = self.a[:, self.f_out :].reshape(self.heads, self.f_out, 1)
        e = (wh @ a_src) + (wh @ a_dst).swapaxes(-1, -2)  # (..., K, N, N)
        alpha = masked_softmax(leaky_relu(e, self.slope), mask)
        return alpha, wh

    def __call__(self, h: Tensor, mask: np.ndarray) -> Tensor:
        alpha, wh = self.attention(h, mask)
        out = alpha @ wh  # (..., K, N, F')
        n = h.shape[-2]
        return out.swapaxes(-3, -2).reshape(*h.shape[:-2], n, self.heads * self.f_out)


    def forward_exact(self, h: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """Inference-only forward whose every reduction is independent of node order.

        Sums over neighbours are taken over value-sorted terms and projections
        avoid BLAS, so relabelling the nodes permutes the output bit for bit.
        Much slower than ``__call__``; meant for checking, not training.
        """
        h = np.asarray(h, dtype=float)
        n = h.shape[-2]
        if h.shape[-1] != self.f_in or mask.shape != (n, n):
            raise ValueError("input/mask shape mismatch")
        W, a = self.W.data, self.a.data
        wh = (h[..., None, :, None, :] * W[:, None, :, :]).sum(-1)  # (..., K, N, F')
        src = (wh * a[:, None, : self.f_out]).sum(-1)
        dst = (wh * a[:, None, self.f_out :]).sum(-1)
        e = src[..., :, None] + dst[..., None, :]
        e = np.where(e > 0, e, self.slope * e)
        keep = mask.astype(bool)
        if not keep.any(axis=-1).all():
            raise ValueError("every row of the mask needs at least one neighbour")
        e = np.where(keep, e, -np.inf)
        ex = np.exp(e - e.max(axis=-1, keepdims=True))
        alpha = ex / np.sort(ex, axis=-1).sum(-1, keepdims=True)
        terms = alpha[..., :, :, None] * wh[..., None, :, :]  # (..., K, N, N, F')
        out = np.sort(terms, axis=-2).sum(-2)
        return np.moveaxis(out, -3, -2).reshape(*h.shape[:-2], n, self.heads * self.f_out)


def gat_forward(h, mask: np.ndarray, layer: GATLayer, exact: bool = False):
    """Layer forward; ``exact=True`` returns a plain array from the order-invariant path."""
    if exact:
        return layer.forward_exact(np.asarray(h, dtype=float), mask)
    return layer(_as_tensor(h), mask)


# ---------------------------------------------------------------- optimiser


class Adam:
    """Adam with decoupled weight decay."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, weight_decay: float = 5e-4,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.weight_decay, self.betas, self.eps = lr, weight_decay, betas, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * np.square(g)
            denom = np.sqrt(v / c2)
            denom += self.eps
            upd = m / denom
            upd *= self.lr / c1
            p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= upd

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def adam_step(params: Sequence[Tensor], opt: Adam) -> None:
    opt.step()


# ---------------------------------------------------------------- gradient check


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    floor: float = 1e-7,
) -> float:
    """Max relative error between backprop and central differences.

    ``max_coords`` samples that many coordinates per parameter instead of all.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            old = flat[i]
            flat[i] = old + eps
            up = float(loss_fn().data)
            flat[i] = old - eps
            down = float(loss_fn().data)
            flat[i] = old
            num = (up - down) / (2 * eps)
            a = ga.reshape(-1)[i]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------- checkpoints


def save_archive(path, tensors: Dict[str, np.ndarray]) -> None:
    """Flat named-tensor archive: an ``.npz`` of row-major float64 arrays keyed by name."""
    np.savez(path, **{k: np.ascontiguousarray(v, dtype=np.float64) for k, v in tensors.items()})


def load_archive(path) -> Dict[str, np.ndarray]:
    with np.load(path) as data:
        return {k: data[k].copy() for k in data.files}
