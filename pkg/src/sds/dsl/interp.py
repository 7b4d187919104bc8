"""Vectorised interpreter for reward programs.

Values travel as ``(array, n)`` pairs: ``n == 0`` for scalars (array has the
observation's batch shape) and ``n > 0`` for vectors (trailing axis of
length ``n``).  One call therefore scores a single timestep, a rollout, or a
whole population of rollouts.
"""
from dataclasses import dataclass

import numpy as np

from ..errors import NumericError
from ..gaits import canonical_label, pair_relations
from .check import CONSTANTS
from .syntax import COMPONENTS, Attr, Bin, Call, Index, Name, Num, Unary, Vec


@dataclass
class SubRewardBreakdown:
    raw: dict        # component -> unweighted value
    weighted: dict   # component -> weight * value
    total: object

    def __getitem__(self, name):
        return self.weighted[name]

    def to_json(self):
        return {"raw": {key: float(value) for key, value in self.raw.items()},
                "weighted": {key: float(value) for key, value in self.weighted.items()},
                "total": float(self.total)}


_PAIR_CACHE = {}


def _pairs(name):
    label = canonical_label(name)
    if label not in _PAIR_CACHE:
        rel = pair_relations(label)
        _PAIR_CACHE[label] = (np.array([rel_row[0] for rel_row in rel]), np.array([rel_row[1] for rel_row in rel]),
                              np.array([rel_row[2] > 0 for rel_row in rel]))
    return _PAIR_CACHE[label]


def match_phase(contacts, template):
    """Fraction of the six leg pairs whose contact relation fits the template.

    In-phase pairs must agree, half-cycle pairs must disagree.
    """
    down = np.asarray(contacts) > 0.5
    first, second, same = _pairs(template)
    agree = down[..., first] == down[..., second]
    return np.mean(agree == same, axis=-1)


class _Evaluator:
    def __init__(self, obs):
        self.fields = obs.as_dict() if hasattr(obs, "as_dict") else dict(obs)
        self.batch = np.shape(self.fields["base_height"])

    def lift(self, value, width):
        """Broadcast a scalar to length n along a new trailing axis."""
        arr, have = value
        if have == width:
            return arr
        return np.broadcast_to(np.asarray(arr)[..., None], np.shape(arr) + (width,))

    def binary(self, lhs, rhs, fn):
        width = max(lhs[1], rhs[1])
        if width:
            return fn(self.lift(lhs, width), self.lift(rhs, width)), width
        return fn(lhs[0], rhs[0]), 0

    def ev(self, node):
        if isinstance(node, Num):
            return np.full(self.batch, node.value), 0
        if isinstance(node, Vec):
            items = [self.ev(item)[0] for item in node.items]
            return np.stack(np.broadcast_arrays(*items), axis=-1), len(items)
        if isinstance(node, Name):
            if node.id in CONSTANTS:
                return np.full(self.batch, CONSTANTS[node.id]), 0
            arr = np.asarray(self.fields[node.id], dtype=float)
            return arr, (arr.shape[-1] if arr.ndim > len(self.batch) else 0)
        if isinstance(node, Attr):
            arr, _ = self.ev(node.base)
            return arr[..., COMPONENTS[node.comp]], 0
        if isinstance(node, Index):
            arr, _ = self.ev(node.base)
            return arr[..., node.index], 0
        if isinstance(node, Unary):
            arr, width = self.ev(node.operand)
            return -arr, width
        if isinstance(node, Bin):
            lhs, rhs = self.ev(node.left), self.ev(node.right)
            fn = {"+": np.add, "-": np.subtract, "*": np.multiply, "/": np.divide}[node.op]
            return self.binary(lhs, rhs, fn)
        if isinstance(node, Call):
            return self.call(node)
        raise TypeError(node)

    def call(self, node):
        func = node.func
        if func == "match_phase":
            arr, _ = self.ev(node.args[0])
            return match_phase(arr, node.args[1].name), 0
        args = [self.ev(arg) for arg in node.args]
        if func == "abs":
            return np.abs(args[0][0]), args[0][1]
        if func == "exp":
            return np.exp(args[0][0]), args[0][1]
        if func == "square":
            return np.square(args[0][0]), args[0][1]
        if func == "sum":
            arr, width = args[0]
            return (np.sum(arr, axis=-1) if width else arr), 0
        if func == "norm":
            arr, width = args[0]
            return (np.sqrt(np.sum(np.square(arr), axis=-1)) if width else np.abs(arr)), 0
        if func in ("min", "max"):
            if len(args) == 1:
                arr, width = args[0]
                red = np.min if func == "min" else np.max
                return (red(arr, axis=-1) if width else arr), 0
            return self.binary(args[0], args[1], np.minimum if func == "min" else np.maximum)
        if func == "clip":
            width = max(arg[1] for arg in args)
            val, lo, hi = (self.lift(arg, width) if width else arg[0] for arg in args)
            return np.minimum(np.maximum(val, lo), hi), width
        raise TypeError(func)


def evaluate_raw(program, obs):
    """Unweighted component arrays with the observation's batch shape; no finiteness check."""
    ev = _Evaluator(obs)
    out = {}
    with np.errstate(all="ignore"):
        for sub in program.sub_rewards:
            arr, _ = ev.ev(sub.expr)
            out[sub.name] = np.asarray(arr, dtype=float)
    return out


def evaluate(program, obs):
    """Per-component and total reward; raises :class:`NumericError` on non-finite output."""
    raw = evaluate_raw(program, obs)
    weighted = {}
    total = 0.0
    for sub in program.sub_rewards:
        value = raw[sub.name]
        if not np.all(np.isfinite(value)):
            raise NumericError(sub.name)
        weighted[sub.name] = sub.weight * value
        total = total + weighted[sub.name]
    if np.shape(total) == ():
        raw = {comp: float(val) for comp, val in raw.items()}
        weighted = {comp: float(val) for comp, val in weighted.items()}
        total = float(total)
    return SubRewardBreakdown(raw, weighted, total)
