"""Static and runtime validation of reward programs."""
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError
from ..gaits import ALIASES, GAIT_LABELS
from .observation import FIELD_SHAPES, Observation
from .syntax import (BUILTINS, COMPONENTS, Attr, Bin, Call, Index, Name, Num, TemplateRef,
                     Unary, Vec)

CONSTANTS = {"pi": math.pi}

# The malformation classes the validator distinguishes, in report order.
CHECKS = (
    "identifiers",    # every name resolves to an observation field or constant
    "arity",          # builtin called with the right number of arguments
    "shapes",         # vector/scalar consistency, component access on vectors only
    "index_bounds",   # [i] and .x/.y/.z within the vector length
    "templates",      # match_phase(vec4, <known gait>) and gait names nowhere else
    "div_zero",       # division by an expression that is constant zero
    "scalar_result",  # every sub-reward reduces to a scalar
    "weights",        # weights finite
    "runtime_probe",  # finite on the canonical zero observation
)


def template_names():
    return {gait.lower() for gait in GAIT_LABELS} | set(ALIASES)


@dataclass
class Issue:
    check: str
    sub_reward: str
    message: str
    line: int = None
    column: int = None

    def to_json(self):
        return {"check": self.check, "sub_reward": self.sub_reward, "message": self.message,
                "line": self.line, "column": self.column}


@dataclass
class ValidationReport:
    program: str
    issues: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.issues

    @property
    def checks(self):
        failed = {issue.check for issue in self.issues}
        return {check: check not in failed for check in CHECKS}

    def failed(self, check):
        return any(issue.check == check for issue in self.issues)

    def to_json(self):
        return {"program": self.program, "ok": self.ok, "checks": self.checks,
                "issues": [issue.to_json() for issue in self.issues]}

    def summary(self):
        if self.ok:
            return "all checks passed"
        return "; ".join(f"[{issue.check}] {issue.sub_reward}: {issue.message}" for issue in self.issues)


class _Unknown(Exception):
    pass


class _ShapeChecker:
    """Infers vector length (0 = scalar) for each node, recording issues."""

    def __init__(self, sub, issues):
        self.sub = sub
        self.issues = issues

    def issue(self, check, node, message):
        span = getattr(node, "span", None)
        self.issues.append(Issue(check, self.sub, message,
                                 span.line if span else None, span.column if span else None))

    def shape(self, node):
        if isinstance(node, Num):
            return 0
        if isinstance(node, Vec):
            for item in node.items:
                if self.shape(item) != 0:
                    self.issue("shapes", item, "vector literal elements must be scalars")
            return len(node.items)
        if isinstance(node, Name):
            if node.id in FIELD_SHAPES:
                return FIELD_SHAPES[node.id]
            if node.id in CONSTANTS:
                return 0
            if node.id.lower() in template_names():
                self.issue("templates", node, f"gait name {node.id!r} only allowed in match_phase")
            else:
                self.issue("identifiers", node, f"unresolved identifier {node.id!r}")
            raise _Unknown
        if isinstance(node, TemplateRef):
            self.issue("templates", node, f"gait name {node.name!r} only allowed in match_phase")
            raise _Unknown
        if isinstance(node, Attr):
            width = self.shape(node.base)
            if node.comp not in COMPONENTS:
                self.issue("shapes", node, f"unknown component .{node.comp}")
                raise _Unknown
            if width == 0:
                self.issue("shapes", node, f"component .{node.comp} of a scalar")
                raise _Unknown
            if COMPONENTS[node.comp] >= width:
                self.issue("index_bounds", node, f".{node.comp} out of range for length {width}")
            return 0
        if isinstance(node, Index):
            width = self.shape(node.base)
            if width == 0:
                self.issue("shapes", node, "indexing a scalar")
                raise _Unknown
            if node.index >= width:
                self.issue("index_bounds", node, f"index {node.index} out of range for length {width}")
            return 0
        if isinstance(node, Unary):
            return self.shape(node.operand)
        if isinstance(node, Bin):
            left, right = self.shape(node.left), self.shape(node.right)
            if node.op == "/" and _is_const_zero(node.right):
                self.issue("div_zero", node, "division by constant zero")
            return self.broadcast(node, left, right)
        if isinstance(node, Call):
            return self.call(node)
        raise TypeError(node)

    def broadcast(self, node, *shapes):
        vec = {shp for shp in shapes if shp}
        if len(vec) > 1:
            self.issue("shapes", node, f"length mismatch {sorted(vec)}")
            raise _Unknown
        return vec.pop() if vec else 0

    def call(self, node):
        lo, hi = BUILTINS[node.func]
        if not lo <= len(node.args) <= hi:
            want = str(lo) if lo == hi else f"{lo}-{hi}"
            self.issue("arity", node, f"{node.func} takes {want} argument(s), got {len(node.args)}")
            raise _Unknown
        if node.func == "match_phase":
            contacts, template = node.args
            width = self.shape(contacts)
            if width != 4:
                self.issue("templates", contacts, "match_phase expects a length-4 contact vector")
            if not isinstance(template, TemplateRef) or template.name.lower() not in template_names():
                name = getattr(template, "name", None)
                self.issue("templates", template, f"unknown gait template {name!r}")
            return 0
        shapes = [self.shape(arg) for arg in node.args]
        if node.func in ("sum", "norm"):
            return 0
        if node.func in ("min", "max") and len(shapes) == 1:
            return 0
        return self.broadcast(node, *shapes)


def _is_const_zero(node):
    try:
        value = _const_value(node)
    except _Unknown:
        return False
    return np.all(np.asarray(value) == 0.0)


def _const_value(node):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Name) and node.id in CONSTANTS:
        return CONSTANTS[node.id]
    if isinstance(node, Unary):
        return -_const_value(node.operand)
    if isinstance(node, Bin):
        left, right = _const_value(node.left), _const_value(node.right)
        with np.errstate(all="ignore"):
            if node.op == "+":
                return left + right
            if node.op == "-":
                return left - right
            if node.op == "*":
                return left * right
            return np.divide(left, right)
    raise _Unknown


def validate(program, probe=None):
    """Return a :class:`ValidationReport`; never raises on a malformed program."""
    from .interp import evaluate

    issues = []
    for sub in program.sub_rewards:
        if not math.isfinite(sub.weight):
            issues.append(Issue("weights", sub.name, f"non-finite weight {sub.weight}"))
        checker = _ShapeChecker(sub.name, issues)
        try:
            width = checker.shape(sub.expr)
        except _Unknown:
            continue
        if width != 0:
            checker.issue("scalar_result", sub.expr, f"evaluates to a length-{width} vector, not a scalar")
    if not issues:
        obs = probe if probe is not None else Observation.zeros()
        try:
            evaluate(program, obs)
        except NumericError as exc:
            issues.append(Issue("runtime_probe", exc.component, "RuntimeProbeFailure: " + str(exc)))
        except Exception as exc:  # noqa: BLE001 - any crash on the probe is a failed probe
            issues.append(Issue("runtime_probe", "-", f"RuntimeProbeFailure: {exc!r}"))
    return ValidationReport(program.name, issues)
