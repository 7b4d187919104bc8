"""(mu + lambda) evolution strategy over gait parameters with sub-reward telemetry.

Per-individual time-mean raw component values are kept, so the objective
under any weight vector is a dot product; rescaling a weight never needs a
re-rollout.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from .dsl.interp import evaluate_raw
from .sim import LOWER, PARAM_NAMES, PHASE_SLICE, UPPER, GaitParameters, SimConfig, clamp, simulate_batch

MU = 8
LAMBDA = 32
SIGMA_FRACTION = 0.1
SIGMA_DECAY = 0.97
STRIDE = 100
GROWTH_RATIO = 10.0
GROWTH_FLOOR = 1.0
ZERO_VARIANCE = 1e-8
NUMERIC_FAILURE_FRACTION = 0.5


@dataclass
class TrainingRun:
    program_name: str
    weights: dict                       # final weights after any rescaling
    best_params: GaitParameters = None
    best_objective: float = float("-inf")
    best_components: dict = field(default_factory=dict)   # raw time-means of the best individual
    history: list = field(default_factory=list)
    rescales: list = field(default_factory=list)
    flagged_uninformative: list = field(default_factory=list)
    status: str = "budget_exhausted"
    reason: str = None
    iterations: int = 0
    best_trace: list = field(default_factory=list)        # best objective after every iteration
    epochs: list = field(default_factory=list)            # iteration at which each weight epoch starts

    @property
    def ok(self):
        return not self.status.startswith("failed")

    def to_json(self):
        return {
            "program": self.program_name, "weights": self.weights,
            "best_params": self.best_params.to_json() if self.best_params else None,
            "best_objective": _finite_or_none(self.best_objective),
            "best_components": {key: _finite_or_none(value) for key, value in self.best_components.items()},
            "history": self.history, "rescales": self.rescales,
            "flagged_uninformative": list(self.flagged_uninformative), "status": self.status,
            "reason": self.reason, "iterations": self.iterations,
            "best_trace": [_finite_or_none(value) for value in self.best_trace], "epochs": self.epochs,
        }

    @classmethod
    def from_json(cls, doc):
        bp = doc.get("best_params")
        return cls(doc["program"], doc["weights"], GaitParameters.from_json(bp) if bp else None,
                   _none_to_inf(doc.get("best_objective")),
                   {key: _none_to_inf(value) for key, value in doc.get("best_components", {}).items()},
                   doc.get("history", []), doc.get("rescales", []), doc.get("flagged_uninformative", []),
                   doc.get("status", "budget_exhausted"), doc.get("reason"), doc.get("iterations", 0),
                   [_none_to_inf(value) for value in doc.get("best_trace", [])], doc.get("epochs", [0]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)


def _finite_or_none(value):
    return float(value) if value is not None and np.isfinite(value) else None


def _none_to_inf(value):
    return float("-inf") if value is None else float(value)


def checkpoint_telemetry(breakdowns):
    """Population mean and variance (ddof 0) per component.

    ``breakdowns`` is a list of {component: value} dicts or an (N, C) array
    paired with names via a dict of arrays.
    """
    if isinstance(breakdowns, dict):
        cols = {key: np.asarray(value, dtype=float) for key, value in breakdowns.items()}
    else:
        if not breakdowns:
            raise ValueError("telemetry needs a non-empty population")
        names = list(breakdowns[0])
        cols = {key: np.array([row[key] for row in breakdowns], dtype=float) for key in names}
    return {key: {"mean": float(np.mean(value)), "var": float(np.var(value))} for key, value in cols.items()}


def rescale_unbounded(reference, current, weights, ratio=GROWTH_RATIO, floor=GROWTH_FLOOR):
    """Weight updates for components whose |mean| grew past ``ratio`` x the reference.

    ``reference`` and ``current`` map component -> mean.  Returns a list of
    (component, old_weight, new_weight, growth) tuples.
    """
    updates = []
    for name, cur in current.items():
        if name not in reference:
            continue
        ref, now = abs(reference[name]), abs(cur)
        if now <= floor:
            continue
        if ref == 0:
            growth = now          # absolute floor guards a zero reference
        elif now > ratio * ref:
            growth = now / ref
        else:
            continue
        old = weights[name]
        updates.append((name, old, old / growth, growth))
    return updates


def flag_zero_gradient(history, threshold=ZERO_VARIANCE):
    """Components whose population variance stayed below ``threshold`` at every checkpoint."""
    if not history:
        return []
    names = list(history[0]["components"])
    return [name for name in names
            if all(entry["components"].get(name, {"var": np.inf})["var"] < threshold for entry in history)]


def _sigma0():
    rng = UPPER - LOWER
    return SIGMA_FRACTION * rng


def evaluate_population(program, batch, sim_config):
    """Raw component time-means (B, C), infeasible mask, numeric-failure mask."""
    out = simulate_batch(batch, sim_config)
    raw = evaluate_raw(program, out["obs"])
    names = program.names
    n_batch = batch.shape[0]
    means = np.zeros((n_batch, len(names)))
    numeric = np.zeros(n_batch, dtype=bool)
    for col, name in enumerate(names):
        arr = np.broadcast_to(raw[name], out["obs"].base_height.shape)
        bad = ~np.all(np.isfinite(arr), axis=1)
        numeric |= bad
        with np.errstate(all="ignore"):
            means[:, col] = arr.mean(axis=1)
    infeasible = out["infeasible"]
    means[infeasible | numeric] = np.nan
    return means, infeasible, numeric & ~infeasible


def train(program, sim_config=None, budget=1000, seed=0, *, stride=STRIDE, mu=MU, lam=LAMBDA,
          objective=None, patience=None, min_iterations=100):
    """Maximise the time-mean total reward of ``program`` over gait parameters.

    ``objective`` replaces the reward/simulator pair with a direct function of
    the (B, 11) parameter batch (used for landscape tests).  With
    ``patience`` set, training stops as converged once the best objective has
    not improved for that many iterations (after ``min_iterations``).
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    sim_config = sim_config or SimConfig()
    rng = np.random.default_rng(seed)
    names = program.names if objective is None else ["objective"]
    weights = dict(program.weights) if objective is None else {"objective": 1.0}
    run = TrainingRun(program.name if objective is None else "objective", dict(weights), epochs=[0])
    sigma0 = _sigma0()

    def score(batch):
        if objective is not None:
            vals = np.asarray(objective(batch), dtype=float)
            return vals[:, None], np.zeros(len(batch), bool), np.zeros(len(batch), bool)
        return evaluate_population(program, batch, sim_config)

    def objective_of(means):
        wvec = np.array([weights[comp] for comp in names])
        with np.errstate(invalid="ignore"):
            obj = means @ wvec
        return np.where(np.isfinite(obj), obj, -np.inf)

    parents = parent_means = None
    reference = None
    best_since = (-np.inf, 0)
    for it in range(budget):
        if parents is None:
            offspring = LOWER + rng.random((lam, len(LOWER))) * (UPPER - LOWER)
            offspring[:, PHASE_SLICE] = np.mod(offspring[:, PHASE_SLICE], 1.0)
        else:
            sigma = sigma0 * SIGMA_DECAY ** it
            pick = rng.integers(0, len(parents), size=lam)
            offspring = clamp(parents[pick] + rng.standard_normal((lam, len(LOWER))) * sigma)
        means, infeasible, numeric = score(offspring)
        run.iterations = it + 1
        if numeric.sum() > NUMERIC_FAILURE_FRACTION * lam:
            run.status, run.reason = "failed", "numeric"
            bad = [comp for col, comp in enumerate(names) if np.any(~np.isfinite(means[numeric, col]))]
            run.reason = "numeric: non-finite values in " + (", ".join(bad) if bad else "reward")
            break

        pool = offspring if parents is None else np.vstack([parents, offspring])
        pool_means = means if parents is None else np.vstack([parent_means, means])
        obj = objective_of(pool_means)
        order = np.argsort(-obj, kind="stable")[:mu]
        parents, parent_means = pool[order], pool_means[order]
        best_obj = float(obj[order[0]])

        if it % stride == 0:
            ok = np.all(np.isfinite(means), axis=1)
            stats = checkpoint_telemetry({comp: means[ok, col] for col, comp in enumerate(names)}) if ok.any() else \
                {comp: {"mean": float("nan"), "var": float("nan")} for comp in names}
            current = {comp: stat["mean"] for comp, stat in stats.items() if np.isfinite(stat["mean"])}
            if objective is None and reference is not None:
                for name, old, new, growth in rescale_unbounded(reference, current, weights):
                    weights[name] = new
                    run.rescales.append({"component": name, "old_weight": old, "new_weight": new,
                                         "growth": growth, "iteration": it})
                    reference[name] = current[name]
                if run.rescales and run.rescales[-1]["iteration"] == it:
                    # new weight epoch: re-rank the elite under the new weights
                    run.epochs.append(it)
                    obj_p = objective_of(parent_means)
                    order = np.argsort(-obj_p, kind="stable")
                    parents, parent_means = parents[order], parent_means[order]
                    best_obj = float(obj_p[order[0]])
                    best_since = (-np.inf, it)
            elif reference is None:
                reference = dict(current)
            run.history.append({"iteration": it, "best_objective": _finite_or_none(best_obj),
                                "components": {comp: {"mean": _finite_or_none(stat["mean"]),
                                                      "var": _finite_or_none(stat["var"])}
                                               for comp, stat in stats.items()},
                                "infeasible": int(infeasible.sum()), "numeric_failures": int(numeric.sum())})
        run.best_trace.append(best_obj)

        if best_obj > best_since[0] + 1e-12:
            best_since = (best_obj, it)
        elif patience and it + 1 >= min_iterations and it - best_since[1] >= patience:
            run.status = "converged"
            break

    run.weights = dict(weights)
    if parents is not None:
        run.best_params = GaitParameters.from_vector(parents[0])
        run.best_objective = float(objective_of(parent_means[:1])[0])
        run.best_components = {comp: float(parent_means[0, col]) for col, comp in enumerate(names)}
    if run.ok and not np.isfinite(run.best_objective):
        run.status, run.reason = "failed", "infeasible: no parameter set satisfied leg kinematics"
    run.flagged_uninformative = flag_zero_gradient(run.history)
    return run


def summarize(run):
    """Plain-language telemetry summary used in feedback prompts."""
    lines = []
    if not run.ok:
        lines.append(f"Training failed ({run.reason}).")
    else:
        lines.append(f"Training {run.status.replace('_', ' ')} after {run.iterations} iterations; "
                     f"best objective {run.best_objective:.4f}.")
    if run.history:
        first, last = run.history[0]["components"], run.history[-1]["components"]
        for name in first:
            start, end = first[name]["mean"], last[name]["mean"]
            var = last[name]["var"]
            if start is None or end is None:
                lines.append(f"- {name}: produced non-finite values.")
                continue
            trend = "rose" if end > start + 1e-9 else "fell" if end < start - 1e-9 else "stayed flat"
            lines.append(f"- {name}: population mean {trend} from {start:.4f} to {end:.4f} (variance {var:.2e}).")
    for event in run.rescales:
        lines.append(f"- {event['component']} grew {event['growth']:.1f}x and was rescaled: weight "
                     f"{event['old_weight']:.4g} -> {event['new_weight']:.4g} at iteration {event['iteration']}.")
    for name in run.flagged_uninformative:
        lines.append(f"- {name} never varied across the population (zero gradient); consider removing it.")
    return "\n".join(lines)


__all__ = ["TrainingRun", "train", "checkpoint_telemetry", "rescale_unbounded", "flag_zero_gradient",
           "summarize", "PARAM_NAMES"]
