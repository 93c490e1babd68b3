"""Tape-based reverse-mode autodiff over dense float64 numpy arrays.

A :class:`Graph` records nodes in creation order, so the creation order is
already a topological order and every reverse pass is a simple backwards scan.
Besides the usual full ``backward`` the graph can stop a reverse pass at an
intermediate node (``backward_to``) and later resume it from there with an
arbitrary upstream gradient (``inject_grad_and_continue``). That pair is what
lets a caller edit the gradient at a shared feature before it reaches the
parameters that produced the feature.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

_graph_ids = itertools.count()


class GraphError(ValueError):
    """Raised for shape mismatches, foreign handles and other misuse."""


@dataclass(frozen=True)
class NodeRef:
    index: int
    owner: int

    def __repr__(self) -> str:
        return f"NodeRef({self.index})"


class _Node:
    __slots__ = ("op", "inputs", "value", "backward", "requires_grad", "grad")

    def __init__(self, op, inputs, value, backward, requires_grad=False):
        self.op = op
        self.inputs = inputs
        self.value = value
        self.backward = backward
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(value) if requires_grad else None


def as_tensor(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(())
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if len(shape) == 0:
        return np.asarray(grad.sum())
    # bias rows: (n, k) + (k,) or (n, k) + (1, k)
    summed = grad.sum(axis=0)
    return summed.reshape(shape)


class Graph:
    """One forward pass worth of differentiable computation."""

    def __init__(self) -> None:
        self._id = next(_graph_ids)
        self._nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    # -- bookkeeping -------------------------------------------------------

    def _push(self, op, inputs, value, backward, requires_grad=False) -> NodeRef:
        self._nodes.append(_Node(op, inputs, value, backward, requires_grad))
        return NodeRef(len(self._nodes) - 1, self._id)

    def _node(self, ref: NodeRef) -> _Node:
        if not isinstance(ref, NodeRef) or ref.owner != self._id:
            raise GraphError(f"{ref!r} was not issued by this graph")
        return self._nodes[ref.index]

    def value(self, ref: NodeRef) -> np.ndarray:
        return self._node(ref).value.copy()

    def grad(self, ref: NodeRef) -> np.ndarray:
        node = self._node(ref)
        if node.grad is None:
            raise GraphError(f"{ref!r} does not require grad")
        return node.grad.copy()

    def op_name(self, ref: NodeRef) -> str:
        return self._node(ref).op

    def inputs(self, ref: NodeRef) -> tuple[NodeRef, ...]:
        return tuple(NodeRef(i, self._id) for i in self._node(ref).inputs)

    def zero_grad(self) -> None:
        for node in self._nodes:
            if node.grad is not None:
                node.grad[...] = 0.0

    def is_ancestor(self, ancestor: NodeRef, ref: NodeRef) -> bool:
        """True if ``ancestor`` is ``ref`` or feeds into it."""
        self._node(ancestor)
        self._node(ref)
        target, start = ancestor.index, ref.index
        if target > start:
            return False
        seen = {start}
        stack = [start]
        while stack:
            i = stack.pop()
            if i == target:
                return True
            for j in self._nodes[i].inputs:
                if j >= target and j not in seen:
                    seen.add(j)
                    stack.append(j)
        return False

    # -- leaves and operations ----------------------------------------------

    def leaf(self, value, requires_grad: bool = False) -> NodeRef:
        arr = as_tensor(value).copy()
        if not np.all(np.isfinite(arr)):
            raise GraphError("leaf value contains non-finite entries")
        return self._push("leaf", (), arr, None, requires_grad)

    def matmul(self, a: NodeRef, b: NodeRef) -> NodeRef:
        av, bv = self._node(a).value, self._node(b).value
        if av.ndim not in (1, 2) or bv.ndim not in (1, 2) or av.shape[-1] != bv.shape[0]:
            raise GraphError(f"matmul shape mismatch {av.shape} @ {bv.shape}")

        def backward(g):
            if av.ndim == 1 and bv.ndim == 1:
                return g * bv, g * av
            if av.ndim == 1:
                return bv @ g, np.outer(av, g)
            if bv.ndim == 1:
                return np.outer(g, bv), av.T @ g
            return g @ bv.T, av.T @ g

        return self._push("matmul", (a.index, b.index), av @ bv, backward)

    def add(self, a: NodeRef, b: NodeRef) -> NodeRef:
        av, bv = self._node(a).value, self._node(b).value
        if av.shape != bv.shape:
            ok = bv.ndim == 0 or (
                av.ndim == 2 and (bv.shape == av.shape[1:] or bv.shape == (1, av.shape[1]))
            )
            if not ok:
                raise GraphError(f"add shape mismatch {av.shape} + {bv.shape}")
        a_shape, b_shape = av.shape, bv.shape

        def backward(g):
            return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

        return self._push("add", (a.index, b.index), av + bv, backward)

    def relu(self, a: NodeRef) -> NodeRef:
        av = self._node(a).value
        mask = av > 0
        return self._push("relu", (a.index,), np.where(mask, av, 0.0), lambda g: (g * mask,))

    def tanh(self, a: NodeRef) -> NodeRef:
        out = np.tanh(self._node(a).value)
        return self._push("tanh", (a.index,), out, lambda g: (g * (1.0 - out * out),))

    def scale(self, a: NodeRef, factor: float) -> NodeRef:
        factor = float(factor)
        out = self._node(a).value * factor
        return self._push("scale", (a.index,), out, lambda g: (g * factor,))

    def mse(self, pred: NodeRef, target) -> NodeRef:
        pv = self._node(pred).value
        tv = as_tensor(target)
        if pv.shape != tv.shape:
            raise GraphError(f"mse shape mismatch {pv.shape} vs {tv.shape}")
        diff = pv - tv
        n = diff.size

        def backward(g):
            return (g * (2.0 / n) * diff,)

        return self._push("mse", (pred.index,), np.asarray(np.mean(diff * diff)), backward)

    def softmax_ce(self, logits: NodeRef, labels) -> NodeRef:
        """Mean cross-entropy; ``labels`` is an int for a logit vector or an int array per row."""
        lv = self._node(logits).value
        single = lv.ndim == 1
        z = lv[None, :] if single else lv
        idx = np.atleast_1d(np.asarray(labels))
        if idx.dtype.kind not in "iu":
            raise GraphError("class labels must be integers")
        if idx.shape != (z.shape[0],):
            raise GraphError(f"expected {z.shape[0]} labels, got shape {idx.shape}")
        k = z.shape[1]
        if np.any(idx < 0) or np.any(idx >= k):
            raise GraphError(f"class index out of range for {k} logits")
        shifted = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1))
        rows = np.arange(z.shape[0])
        loss = np.mean(lse - shifted[rows, idx])
        probs = np.exp(shifted - lse[:, None])
        probs[rows, idx] -= 1.0
        probs /= z.shape[0]
        dz = probs[0] if single else probs

        return self._push("softmax_ce", (logits.index,), np.asarray(loss), lambda g: (g * dz,))

    # -- reverse passes -------------------------------------------------------

    def _reverse(self, start: int, seed: np.ndarray, stop: int = -1) -> dict[int, np.ndarray]:
        """Propagate ``seed`` from node ``start`` down to nodes with index >= ``stop``.

        Leaves reached (index > stop) accumulate into their grad buffers. Returns
        the adjoints of every reached node.
        """
        adj: dict[int, np.ndarray] = {start: seed}
        nodes = self._nodes
        for i in range(start, max(stop, 0) - 1, -1):
            g = adj.get(i)
            node = nodes[i]
            if g is None or node.backward is None or i == stop:
                continue
            for j, gj in zip(node.inputs, node.backward(g)):
                if j < stop:
                    continue
                prev = adj.get(j)
                adj[j] = gj if prev is None else prev + gj
        for i, g in adj.items():
            node = nodes[i]
            if node.grad is not None and i != stop:
                node.grad += g
        return adj

    def backward(self, source: NodeRef, seed: float = 1.0) -> dict[NodeRef, np.ndarray]:
        """Accumulate d(source)/d(leaf) into every requires_grad leaf.

        Returns the gradients contributed by this pass, keyed by leaf handle.
        """
        node = self._node(source)
        if node.value.size != 1:
            raise GraphError("backward source must be a scalar node")
        adj = self._reverse(source.index, np.full(node.value.shape, float(seed)))
        return self._leaf_map(adj)

    def backward_to(self, source: NodeRef, upto: NodeRef) -> np.ndarray:
        """Gradient of scalar ``source`` with respect to the value at ``upto``.

        The pass stops at ``upto``: nothing created before it is visited. Leaves
        created after ``upto`` that lie on the path still accumulate gradients.
        """
        node = self._node(source)
        if node.value.size != 1:
            raise GraphError("backward_to source must be a scalar node")
        self._node(upto)
        if not self.is_ancestor(upto, source):
            raise GraphError(f"{upto!r} is not an ancestor of {source!r}")
        adj = self._reverse(source.index, np.ones(node.value.shape), stop=upto.index)
        return adj[upto.index].copy()

    def inject_grad_and_continue(self, at: NodeRef, grad) -> dict[NodeRef, np.ndarray]:
        """Treat ``grad`` as dL/d(at) and finish the reverse pass below ``at``."""
        node = self._node(at)
        g = as_tensor(grad)
        if g.shape != node.value.shape:
            raise GraphError(f"injected gradient shape {g.shape} != {node.value.shape}")
        adj = self._reverse(at.index, g.copy())
        return self._leaf_map(adj)

    def _leaf_map(self, adj: dict[int, np.ndarray]) -> dict[NodeRef, np.ndarray]:
        return {
            NodeRef(i, self._id): g.copy()
            for i, g in sorted(adj.items())
            if self._nodes[i].grad is not None
        }
