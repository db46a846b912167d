"""Forward-mode automatic differentiation with vector dual numbers.

A :class:`Dual` holds a value array of shape ``S`` and a derivative array of
shape ``S + (m,)``: the partial derivatives of every entry with respect to
``m`` seed directions. Arithmetic broadcasts over ``S`` like numpy; plain
arrays and scalars act as constants.

The helpers :func:`sin`, :func:`cos`, :func:`sqrt`, :func:`stack`, ... dispatch
on the argument type so model code can run on floats or duals unchanged.
"""

from __future__ import annotations

import numpy as np


class Dual:
    __slots__ = ("val", "der")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, val, der):
        self.val = np.asarray(val, dtype=float)
        self.der = np.asarray(der, dtype=float)

    @classmethod
    def seed(cls, x) -> "Dual":
        """Independent variables: derivative is the identity over the flat index."""
        x = np.asarray(x, dtype=float)
        n = x.size
        return cls(x, np.eye(n).reshape(x.shape + (n,)))

    @classmethod
    def seed_batched(cls, x) -> "Dual":
        """Seed the last axis of ``x`` independently for every leading index."""
        x = np.asarray(x, dtype=float)
        m = x.shape[-1]
        der = np.broadcast_to(np.eye(m), x.shape + (m,)).copy()
        return cls(x, der)

    @property
    def shape(self):
        return self.val.shape

    @property
    def ndim(self):
        return self.val.ndim

    @property
    def nseed(self) -> int:
        return self.der.shape[-1]

    @property
    def T(self):
        return self.transpose()

    def __len__(self):
        return len(self.val)

    def __repr__(self):
        return f"Dual(val={self.val!r}, nseed={self.nseed})"

    def __getitem__(self, idx):
        didx = idx if isinstance(idx, tuple) else (idx,)
        if any(i is Ellipsis for i in didx):
            didx = didx + (slice(None),)
        return Dual(self.val[idx], self.der[didx])

    # arithmetic ---------------------------------------------------------
    def __neg__(self):
        return Dual(-self.val, -self.der)

    def __pos__(self):
        return self

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, _bcast_add(self, other))
        other = np.asarray(other, dtype=float)
        val = self.val + other
        return Dual(val, np.broadcast_to(self.der, val.shape + (self.nseed,)))

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val,
                        self.der * other.val[..., None] + self.val[..., None] * other.der)
        other = np.asarray(other, dtype=float)
        return Dual(self.val * other, self.der * other[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            return self * other.reciprocal()
        other = np.asarray(other, dtype=float)
        return Dual(self.val / other, self.der / other[..., None])

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def reciprocal(self):
        inv = 1.0 / self.val
        return Dual(inv, -self.der * (inv * inv)[..., None])

    def __pow__(self, p):
        if isinstance(p, Dual):
            raise TypeError("Dual exponents are not supported")
        p = float(p)
        if p == 2.0:
            return self * self
        return Dual(self.val**p, self.der * (p * self.val ** (p - 1.0))[..., None])

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    # shape ops ----------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        val = self.val.reshape(shape)
        return Dual(val, self.der.reshape(val.shape + (self.nseed,)))

    def ravel(self):
        return self.reshape(-1)

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], tuple):
            axes = axes[0]
        return Dual(self.val.transpose(axes), self.der.transpose(tuple(axes) + (self.ndim,)))

    def sum(self, axis=None):
        if axis is None:
            return Dual(self.val.sum(), self.der.reshape(-1, self.nseed).sum(axis=0))
        axis = axis if axis >= 0 else self.ndim + axis
        return Dual(self.val.sum(axis=axis), self.der.sum(axis=axis))

    def chain(self, jac) -> "Dual":
        """Re-express derivatives through an inner Jacobian.

        ``self`` carries derivatives w.r.t. ``m`` local seeds; ``jac`` (a
        ``Dual``) holds those seeds as functions of the outer variables. The
        leading (batch) axes of ``jac`` must prefix the shape of ``self``.
        """
        batch = jac.ndim - 1
        m = self.nseed
        assert jac.val.shape[-1] == m
        lead = self.val.shape[:batch]
        mid = self.val.shape[batch:]
        d = self.der.reshape(lead + (int(np.prod(mid, dtype=int)), m))
        J = jac.der  # lead + (m, n)
        out = np.einsum("...km,...mn->...kn", d, J)
        return Dual(self.val, out.reshape(self.val.shape + (J.shape[-1],)))


def _bcast_add(a: Dual, b: Dual):
    if a.ndim == b.ndim:
        return a.der + b.der
    # align value axes before the seed axis
    if a.ndim < b.ndim:
        a, b = b, a
    pad = (1,) * (a.ndim - b.ndim)
    return a.der + b.der.reshape(pad + b.der.shape)


def value(x):
    return x.val if isinstance(x, Dual) else np.asarray(x, dtype=float)


def is_dual(x) -> bool:
    return isinstance(x, Dual)


def sin(x):
    if isinstance(x, Dual):
        return Dual(np.sin(x.val), x.der * np.cos(x.val)[..., None])
    return np.sin(x)


def cos(x):
    if isinstance(x, Dual):
        return Dual(np.cos(x.val), -x.der * np.sin(x.val)[..., None])
    return np.cos(x)


def sqrt(x):
    if isinstance(x, Dual):
        r = np.sqrt(x.val)
        if np.any(r == 0.0):
            raise FloatingPointError("sqrt is not differentiable at zero")
        return Dual(r, x.der * (0.5 / r)[..., None])
    return np.sqrt(x)


def norm(x, axis=-1):
    """Euclidean norm along ``axis``."""
    return sqrt((x * x).sum(axis=axis))


def matmul(a, b):
    if isinstance(a, Dual) and isinstance(b, Dual):
        val = a.val @ b.val
        der = _matmul_der(a.der, b.val, left=True) + _matmul_der(b.der, a.val, left=False)
        return Dual(val, der)
    if isinstance(a, Dual):
        b = np.asarray(b, dtype=float)
        return Dual(a.val @ b, _matmul_der(a.der, b, left=True))
    if isinstance(b, Dual):
        a = np.asarray(a, dtype=float)
        return Dual(a @ b.val, _matmul_der(b.der, a, left=False))
    return np.asarray(a) @ np.asarray(b)


def _matmul_der(der, const, left):
    """Derivative of ``X @ C`` (left=True) or ``C @ X`` w.r.t. the seeds of X."""
    xdim = der.ndim - 1
    if left:
        if xdim == 1:
            return np.einsum("jm,...jk->...km", der, const)
        if const.ndim == 1:
            return np.einsum("...ijm,j->...im", der, const)
        return np.einsum("...ijm,...jk->...ikm", der, const)
    if xdim == 1:
        return np.einsum("...ij,jm->...im", const, der)
    if const.ndim == 1:
        return np.einsum("i,...ikm->...km", const, der)
    return np.einsum("...ij,...jkm->...ikm", const, der)


def stack(items, axis=0):
    if not any(isinstance(x, Dual) for x in items):
        return np.stack([np.asarray(x, dtype=float) for x in items], axis=axis)
    nseed = next(x.nseed for x in items if isinstance(x, Dual))
    duals = [x if isinstance(x, Dual) else constant(x, nseed) for x in items]
    ax = axis if axis >= 0 else duals[0].ndim + 1 + axis
    return Dual(np.stack([d.val for d in duals], axis=ax),
                np.stack([np.broadcast_to(d.der, d.val.shape + (nseed,)) for d in duals], axis=ax))


def concatenate(items, axis=0):
    if not any(isinstance(x, Dual) for x in items):
        return np.concatenate([np.asarray(x, dtype=float) for x in items], axis=axis)
    nseed = next(x.nseed for x in items if isinstance(x, Dual))
    duals = [x if isinstance(x, Dual) else constant(x, nseed) for x in items]
    ax = axis if axis >= 0 else duals[0].ndim + axis
    return Dual(np.concatenate([d.val for d in duals], axis=ax),
                np.concatenate([np.broadcast_to(d.der, d.val.shape + (nseed,)) for d in duals], axis=ax))


def constant(x, nseed: int) -> Dual:
    x = np.asarray(x, dtype=float)
    return Dual(x, np.zeros(x.shape + (nseed,)))


def where(cond, a, b):
    cond = np.asarray(cond)
    if not (isinstance(a, Dual) or isinstance(b, Dual)):
        return np.where(cond, a, b)
    nseed = a.nseed if isinstance(a, Dual) else b.nseed
    a = a if isinstance(a, Dual) else constant(a, nseed)
    b = b if isinstance(b, Dual) else constant(b, nseed)
    val = np.where(cond, a.val, b.val)
    der = np.where(cond[..., None], a.der, b.der)
    return Dual(val, der)


def jacobian(fn, x):
    """Value and Jacobian of a vector function at ``x`` via one forward pass."""
    out = fn(Dual.seed(x))
    if not isinstance(out, Dual):
        out = np.asarray(out, dtype=float)
        return out, np.zeros(out.shape + (np.size(x),))
    return out.val, out.der
