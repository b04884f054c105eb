"""Parameter-tree helpers and a central finite-difference gradient oracle."""

from __future__ import annotations

import dataclasses
from typing import Any, Callable, Iterable

import numpy as np

from .tensor import GradTape, Tensor, backward


def named_tensors(obj: Any, prefix: str = "") -> dict[str, Tensor]:
    """Flatten dataclasses / dicts / sequences of Tensors into dotted paths."""
    out: dict[str, Tensor] = {}
    if isinstance(obj, Tensor):
        out[prefix] = obj
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            out.update(named_tensors(getattr(obj, f.name), _join(prefix, f.name)))
    elif isinstance(obj, dict):
        for k, v in obj.items():
            out.update(named_tensors(v, _join(prefix, str(k))))
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            out.update(named_tensors(v, _join(prefix, str(i))))
    return out


def _join(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


def replace_tensor(obj: Any, path: str, value: Tensor) -> Any:
    """Return a copy of ``obj`` with the tensor at ``path`` swapped for ``value``."""
    if not path:
        return value
    head, _, rest = path.partition(".")
    if dataclasses.is_dataclass(obj):
        return dataclasses.replace(obj, **{head: replace_tensor(getattr(obj, head), rest, value)})
    if isinstance(obj, dict):
        new = dict(obj)
        new[head] = replace_tensor(obj[head], rest, value)
        return new
    if isinstance(obj, (list, tuple)):
        items = list(obj)
        items[int(head)] = replace_tensor(items[int(head)], rest, value)
        return type(obj)(items) if isinstance(obj, tuple) else items
    raise KeyError(path)


def select_paths(params: Any, patterns: Iterable[str]) -> list[str]:
    names = named_tensors(params)
    pats = list(patterns)
    return [n for n in names if any(p in n for p in pats)]


def analytic_gradients(loss_fn: Callable[[Any], Tensor], params: Any, paths: list[str]) -> dict[str, np.ndarray]:
    tensors = named_tensors(params)
    with GradTape() as tape:
        tape.watch(*(tensors[p] for p in paths))
        loss = loss_fn(params)
    grads = backward(tape, loss)
    return {p: g.numpy() for p, g in zip(paths, grads)}


def numeric_gradients(
    loss_fn: Callable[[Any], Tensor], params: Any, paths: list[str], eps: float = 1e-5
) -> dict[str, np.ndarray]:
    """Central differences, one parameter entry at a time."""
    tensors = named_tensors(params)
    out = {}
    for p in paths:
        base = tensors[p].numpy()
        grad = np.zeros_like(base)
        for i in np.ndindex(base.shape):
            vals = []
            for step in (eps, -eps):
                bumped = base.copy()
                bumped[i] += step
                vals.append(loss_fn(replace_tensor(params, p, Tensor(bumped))).item())
            grad[i] = (vals[0] - vals[1]) / (2 * eps)
        out[p] = grad
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm error relative to the larger gradient magnitude."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(
    loss_fn: Callable[[Any], Tensor], params: Any, paths: list[str], eps: float = 1e-5
) -> dict[str, float]:
    """Relative error between tape and finite-difference gradients per path."""
    a = analytic_gradients(loss_fn, params, paths)
    n = numeric_gradients(loss_fn, params, paths, eps)
    return {p: relative_error(a[p], n[p]) for p in paths}
