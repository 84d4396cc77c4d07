"""Parameter-tree utilities, Adam, global-norm clipping, and a central
finite-difference gradient checker.

Model parameters live in nested dataclasses of numpy arrays; the helpers here
flatten them into ordered name->array views so the optimizer, checkpoints and
the gradient checker can treat every model uniformly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ShapeError


def named_arrays(obj, prefix: str = "") -> list[tuple[str, np.ndarray]]:
    """Depth-first (name, array) pairs over dataclasses, dicts and arrays.

    Names join nesting levels with dots; None fields are skipped.
    """
    out: list[tuple[str, np.ndarray]] = []
    if obj is None:
        return out
    if isinstance(obj, np.ndarray):
        out.append((prefix or "param", obj))
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            name = f"{prefix}.{f.name}" if prefix else f.name
            out.extend(named_arrays(getattr(obj, f.name), name))
    elif isinstance(obj, dict):
        for key, value in obj.items():
            name = f"{prefix}.{key}" if prefix else str(key)
            out.extend(named_arrays(value, name))
    return out


def map_named(fn: Callable[[str, np.ndarray], np.ndarray], obj, prefix: str = ""):
    """Rebuild a parameter tree, applying fn to every array leaf."""
    if obj is None:
        return None
    if isinstance(obj, np.ndarray):
        return fn(prefix or "param", obj)
    if dataclasses.is_dataclass(obj):
        kwargs = {}
        for f in dataclasses.fields(obj):
            name = f"{prefix}.{f.name}" if prefix else f.name
            kwargs[f.name] = map_named(fn, getattr(obj, f.name), name)
        return type(obj)(**kwargs)
    if isinstance(obj, dict):
        return {k: map_named(fn, v, f"{prefix}.{k}" if prefix else str(k)) for k, v in obj.items()}
    return obj


def zeros_like_params(obj):
    return map_named(lambda _, a: np.zeros_like(a), obj)


def copy_params(obj):
    return map_named(lambda _, a: a.copy(), obj)


def accumulate(into, delta) -> None:
    """In-place ``into += delta`` over matching parameter trees."""
    pairs_a = named_arrays(into)
    pairs_b = named_arrays(delta)
    if [n for n, _ in pairs_a] != [n for n, _ in pairs_b]:
        raise ShapeError("accumulate: parameter trees do not match")
    for (_, a), (_, b) in zip(pairs_a, pairs_b):
        a += b


def scale_arrays(obj, factor: float) -> None:
    for _, a in named_arrays(obj):
        a *= factor


def global_norm(obj) -> float:
    total = 0.0
    for _, a in named_arrays(obj):
        total += float(np.sum(a * a))
    return float(np.sqrt(total))


def clip_global_norm(grads, max_norm: float) -> float:
    """Scale all gradients in place so the global L2 norm is at most max_norm."""
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale_arrays(grads, max_norm / norm)
    return norm


@dataclass
class AdamState:
    """First/second moment estimates plus the hyperparameters they belong to."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    learning_rate: float = 1e-3

    @classmethod
    def for_params(cls, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        pairs = named_arrays(params)
        return cls(
            m={n: np.zeros_like(a) for n, a in pairs},
            v={n: np.zeros_like(a) for n, a in pairs},
            step_count=0,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
            learning_rate=learning_rate,
        )


def adam_update(params, grads, state: AdamState):
    """One bias-corrected Adam step.

    Pure: returns (new_params, new_state) of the same structure and leaves all
    inputs untouched, so identical inputs always give identical outputs.
    """
    grad_map = dict(named_arrays(grads))
    param_names = [n for n, _ in named_arrays(params)]
    if set(param_names) != set(grad_map):
        raise ShapeError("adam_update: params and grads name sets differ")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}

    def step(name: str, p: np.ndarray) -> np.ndarray:
        g = grad_map[name]
        if g.shape != p.shape:
            raise ShapeError(f"adam_update: grad {name} shape {g.shape} vs param {p.shape}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        new_m[name] = m
        new_v[name] = v
        return p - state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)

    new_params = map_named(step, params)
    new_state = AdamState(
        m=new_m,
        v=new_v,
        step_count=t,
        beta1=b1,
        beta2=b2,
        epsilon=state.epsilon,
        learning_rate=state.learning_rate,
    )
    return new_params, new_state


# ---------------------------------------------------------------------------
# Finite-difference gradient checking


@dataclass
class GradCheckReport:
    per_param: dict[str, float]
    max_rel_error: float
    worst_coordinate: str

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_rel_error < tolerance


def grad_check(loss_fn, params, eps: float, *, analytic) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    loss_fn(params) must be a deterministic scalar function of the arrays in
    ``params`` (dropout off, fixed inputs); it is checked by evaluating twice.
    ``analytic`` holds the hand-derived gradients in a matching tree. Relative
    error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
    """
    if eps is None or eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    base_a = float(loss_fn(params))
    base_b = float(loss_fn(params))
    if base_a != base_b:
        raise ValueError("grad_check: loss_fn is not deterministic")
    grad_map = dict(named_arrays(analytic))
    per_param: dict[str, float] = {}
    worst = ""
    worst_err = 0.0
    for name, arr in named_arrays(params):
        if name not in grad_map:
            raise ShapeError(f"grad_check: no analytic gradient for {name}")
        a_grad = grad_map[name]
        local_max = 0.0
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + eps
            up = float(loss_fn(params))
            arr[idx] = orig - eps
            down = float(loss_fn(params))
            arr[idx] = orig
            numeric = (up - down) / (2.0 * eps)
            a = float(a_grad[idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel > local_max:
                local_max = rel
            if rel > worst_err:
                worst_err = rel
                worst = f"{name}[{','.join(str(i) for i in idx)}]"
            it.iternext()
        per_param[name] = local_max
    return GradCheckReport(per_param=per_param, max_rel_error=worst_err, worst_coordinate=worst)
