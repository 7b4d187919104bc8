"""Closed-loop reward evolution: generate, validate, train, evaluate, select, feed back.

Everything a run produces lives under ``<run_dir>/<run_id>/``::

    state.json            resumable snapshot, rewritten after every step
    report.json           final metrics (no absolute paths, no timestamps)
    metadata.json         wall-clock facts kept out of the report
    demo/                 demonstration grid (or frames) and hint
    transcripts/          SUS chain requests and responses
    iter_k/candidates/    program text, validation sidecars, discards
    iter_k/transcripts/   generation and evaluation exchanges
    iter_k/plots/         rollout grids and contact plots
    iter_k/traces/        contact CSVs, full trace of the iteration's best
    final/                final rollout trace and figures

A run interrupted at any point restarts from ``state.json``; finished
stages are read back instead of recomputed, so the final report is the
same bytes either way.
"""
import hashlib
import json
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dsl import extract_candidates, parse, to_source, validate
from .errors import (InputError, IterationFailed, ParamInfeasible, ParseError, PipelineFailed,
                     ScoreParseError)
from .evaluator import CRITERIA, ScoreVector, classify_gait, contact_match, gait_report, parse_score_vector, \
    sts_series
from .gaits import canonical_label
from .ingest import (KeypointTrajectory, compose_grid, compute_grid_dims, contacts_from_keypoints,
                     estimate_velocity, load_frames, overlay_keypoints, sample_frames, trajectory_clip)
from .optimizer import TrainingRun, summarize, train
from .plotting import (render_contact_plot, render_height_trace, render_score_history, render_sts,
                       render_training_curve, render_trajectory_overlay)
from .sim import ContactSequence, GaitParameters, Morphology, SimConfig, rollout_config
from .synth import demo_scale
from .vlm import TranscriptLog, make_client
from .vlm.prompts import (build_evaluation_prompt, build_evolution_prompt, build_generation_prompt,
                          gait_hint, run_sus_chain)

ABLATIONS = ("gs", "cp", "sus", "grid")
CLIENT_MODES = ("live", "fixture", "procedural")
ROLLOUT_MPU = 2.0          # simulator camera, metres per normalised unit
ROLLOUT_ZOOM = 2.5
GROUND_TOLERANCE = 0.015   # metres, foot-down threshold for keypoint contact estimates


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    demo: str = None                 # keypoint JSON
    frames: str = None               # optional video file or frame directory
    run_dir: str = "runs"
    run_id: str = "run"
    skill: str = None                # optional gait label overriding the keypoint hint
    n_candidates: int = 8
    n_iterations: int = 5
    budget: int = 120                # optimizer iterations per candidate
    patience: int = 30
    min_iterations: int = 60
    seed: int = 0
    client: str = "procedural"
    fixtures: str = None
    temperature: float = 1.0         # generation; evaluation always uses 0
    ablate: list = field(default_factory=list)
    pixels_to_meters: float = None   # None: read from the keypoint file, else 2.0
    clip_seconds: float = None       # None: the keypoint clip duration
    speed: float = None              # None: estimated from keypoints
    morphology: dict = field(default_factory=dict)
    steps: int = 1000
    elitist: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.n_candidates < 1 or self.n_iterations < 1:
            raise InputError("n_candidates and n_iterations must be >= 1")
        if self.budget < 1 or self.steps < 1:
            raise InputError("budget and steps must be >= 1")
        if self.client not in CLIENT_MODES:
            raise InputError(f"client must be one of {', '.join(CLIENT_MODES)}, got {self.client!r}")
        bad = [abl for abl in self.ablate if abl not in ABLATIONS]
        if bad:
            raise InputError(f"unknown ablation(s) {bad}; choose from {', '.join(ABLATIONS)}")
        self.ablate = sorted(set(self.ablate))
        if self.skill is not None:
            try:
                self.skill = canonical_label(self.skill)
            except KeyError as exc:
                raise InputError(str(exc)) from None
        self.workers = max(1, int(self.workers))

    @property
    def root(self):
        return Path(self.run_dir) / self.run_id

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, doc):
        known = {fld for fld in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise InputError(f"unknown config key(s): {', '.join(sorted(extra))}")
        return cls(**doc)

    @classmethod
    def load(cls, path):
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc}") from None

    def sim_config(self, speed):
        return SimConfig(steps=self.steps, command=(float(speed), 0.0, 0.0),
                         morphology=Morphology.from_json(self.morphology), meters_per_unit=ROLLOUT_MPU)


# ---------------------------------------------------------------------------
# persistent state


@dataclass
class EvolutionState:
    config: dict
    demo: dict = None
    sus: dict = None
    iterations: list = field(default_factory=list)   # per-iteration records, the last may be in progress
    rf_star: dict = None
    history: list = field(default_factory=list)       # RF* aggregate after each completed iteration
    training_cache: dict = field(default_factory=dict)  # program hash -> TrainingRun json
    score_cache: dict = field(default_factory=dict)     # program hash -> evaluation record
    finished: bool = False

    @property
    def iteration(self):
        """1-based index of the iteration in progress (or next to start)."""
        return len(self.history) + 1

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, doc):
        return cls(**doc)

    def save(self, path):
        path = Path(path)
        tmp = path.with_suffix(".tmp")
        # key order is kept: feedback prose lists sub-rewards in program order
        tmp.write_text(json.dumps(self.to_json(), indent=1))
        os.replace(tmp, path)

    @classmethod
    def load(cls, path):
        return cls.from_json(json.loads(Path(path).read_text()))


def program_hash(program):
    return hashlib.sha256(to_source(program).encode("utf-8")).hexdigest()


def _derived_seed(*parts):
    return int(hashlib.sha256(":".join(map(str, parts)).encode()).hexdigest()[:8], 16)


def _rel(path, root):
    return Path(path).resolve().relative_to(Path(root).resolve()).as_posix()


# ---------------------------------------------------------------------------
# demonstration


def prepare_demo(config, out_dir):
    """Ingest the demonstration: speed, grid size, G_v image(s), keypoint gait hint."""
    if not config.demo:
        raise InputError("config has no demonstration keypoint file")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    traj = KeypointTrajectory.load(config.demo)
    scale = config.pixels_to_meters or demo_scale(config.demo) or 2.0
    speed = config.speed or estimate_velocity(traj, scale)
    seconds = config.clip_seconds or traj.duration
    n_frames, tau, side = compute_grid_dims(seconds, speed)

    if config.frames:
        clip = load_frames(config.frames, fps=traj.fps)
    else:
        clip = trajectory_clip(traj, zoom=ROLLOUT_ZOOM * scale / ROLLOUT_MPU)
    frames = sample_frames(clip, n_frames, tau)
    gv = _write_visual(frames, "demo", out_dir, "grid", "grid" in config.ablate)
    overlays = []
    if config.frames:
        marked = [overlay_keypoints(frame.image, traj.points(min(frame.index, len(traj) - 1))) for frame in frames]
        compose_grid(marked, "demo", out_dir / "overlay.png")
        overlays = [str(out_dir / "overlay.png")]

    contacts = contacts_from_keypoints(traj, ground_tol=GROUND_TOLERANCE / scale)
    fps = traj.fps or 1.0 / float(np.median(np.diff(traj.times)))
    label, margin, _ = classify_gait(ContactSequence(contacts, 1.0 / fps))
    target = config.skill or label
    info = {"velocity": float(speed), "scale": float(scale), "seconds": float(seconds),
            "grid": {"n": n_frames, "tau": tau, "h": side}, "keypoint_label": label, "keypoint_margin": margin,
            "target": target, "gv": gv, "overlays": [str(pth) for pth in overlays],
            "hint": gait_hint(target, margin if target == label else 0.0, speed)}
    summary = {key: value for key, value in info.items() if key not in ("gv", "overlays")}
    (out_dir / "demo.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return info, traj


def _write_visual(frames, kind, out_dir, stem, individual):
    """Compose a grid PNG, or with ``individual`` write each sampled frame; return path(s)."""
    from PIL import Image

    out_dir = Path(out_dir)
    if individual:
        paths = []
        for idx, frame in enumerate(frames):
            pth = out_dir / f"{stem}_frame{idx:02d}.png"
            Image.fromarray(np.ascontiguousarray(frame.image)).save(pth)
            paths.append(str(pth))
        return paths
    pth = out_dir / f"{stem}.png"
    compose_grid(frames, kind, pth)
    return str(pth)


def sus_text(state):
    """Skill specification handed to generation: the SUS output, or the raw hint under ablation."""
    if state.sus:
        return state.sus["final_sus_prompt"]
    demo = state.demo
    return (f"Reproduce the motion shown in the demonstration grid.\n{demo['hint']}\n"
            f"Target gait: {demo['target']}\nTarget speed: {demo['velocity']:.2f} m/s")


# ---------------------------------------------------------------------------
# generation


@dataclass
class GenerationResult:
    programs: list            # [(RewardProgram, ValidationReport)]
    discards: list            # [{"slot", "stage", "error", "source"}]
    responses: list           # raw reply texts (first attempt, then the retry if any)
    retried: bool = False


def screen_response(text, count, name_prefix="cand"):
    """Parse and validate up to ``count`` fenced programs from a reply."""
    programs, discards = [], []
    for slot, source in enumerate(extract_candidates(text)[:count]):
        try:
            prog = parse(source, name=f"{name_prefix}{slot}")
        except ParseError as exc:
            discards.append({"slot": slot, "stage": "parse", "error": str(exc), "source": source})
            continue
        report = validate(prog)
        if not report.ok:
            discards.append({"slot": slot, "stage": "validate", "error": report.summary(), "source": source,
                             "report": report.to_json()})
            continue
        programs.append((prog, report))
    return programs, discards


def generate_candidates(client, build_messages, count=8, log=None, temperature=1.0, seed=None, name_prefix="cand"):
    """Request ``count`` programs; keep the valid ones.

    ``build_messages(tip)`` returns the prompt; after a reply without any
    valid program the request is repeated once with the output tip.
    """
    responses, all_discards = [], []
    for tip in (False, True):
        text = client.chat(build_messages(tip), temperature=temperature, seed=seed, log=log,
                           tag="generation_retry" if tip else "generation")
        responses.append(text)
        programs, discards = screen_response(text, count, name_prefix)
        all_discards.extend(dict(disc, attempt=len(responses)) for disc in discards)
        if programs:
            return GenerationResult(programs, all_discards, responses, retried=tip)
    raise IterationFailed(f"no valid reward program in {len(responses)} replies")


# ---------------------------------------------------------------------------
# evaluation


def rollout_summary(trace, speed):
    obs = trace.observations
    sts = sts_series(trace)
    lines = [f"resets: {trace.reset_count}",
             f"terminated at step: {trace.terminated_at if trace.terminated_at is not None else 'never'}",
             f"mean StS: {float(np.mean(sts)):.3f}",
             f"mean forward speed: {float(np.mean(obs.base_lin_vel[:, 0])):.3f} (commanded {speed:.2f}) m/s",
             f"mean base height: {float(np.mean(obs.base_height)):.3f} m "
             f"(variance {float(np.var(obs.base_height)):.2e})"]
    return "\n".join(lines)


def evaluate_candidate(client, trace, gv, config, demo_info, out_dir, stem, log=None):
    """Score one rollout; returns (ScoreVector, record).

    Builds the rollout grid and contact plot, asks the evaluator, re-asks once
    when the reply has no usable score list, then scores zero.  A rollout with
    any reset gets postural stability 0 whatever the evaluator said.
    """
    out_dir = Path(out_dir)
    speed = demo_info["velocity"]
    n_frames, tau, _ = compute_grid_dims(trace.steps * trace.dt, speed)
    frames = sample_frames(trajectory_clip(trace.keypoints, zoom=ROLLOUT_ZOOM), n_frames, tau)
    gs = _write_visual(frames, "rollout", out_dir, f"{stem}_gs", "grid" in config.ablate)
    cp = str(render_contact_plot(trace.contacts, out_dir / f"{stem}_cp", title=f"Contacts: {stem}")[0])
    summary = rollout_summary(trace, speed)

    def ask(retry_after=None):
        messages = build_evaluation_prompt(gs, cp, gv, CRITERIA, demo_info["target"], speed, summary,
                                           trace.contacts.matrix, config.ablate, retry_after)
        return client.chat(messages, temperature=0.0, seed=config.seed, log=log,
                           tag="evaluation_retry" if retry_after is not None else "evaluation")

    replies = [ask()]
    try:
        score = parse_score_vector(replies[0])
        status = "scored"
    except ScoreParseError:
        replies.append(ask(replies[0]))
        try:
            score = parse_score_vector(replies[1])
            status = "scored_on_retry"
        except ScoreParseError:
            score, status = ScoreVector.zero(), "unparseable"
    if trace.reset_count > 0:
        crit = [(name, 0 if name == "stability" else val) for name, val in score.criteria]
        score = ScoreVector(crit, sum(val for _, val in crit))
    match = contact_match(trace.contacts, demo_info["target"])
    record = {"status": status, "score": score.to_json(), "replies": replies, "summary": summary,
              "resets": trace.reset_count, "match_percent": match.percent,
              "gs": gs if isinstance(gs, str) else list(gs), "cp": cp}
    return score, record


def select_rf_star(candidates):
    """Index of the best scored candidate: aggregate, then training objective, then lower index.

    ``candidates`` is a list of (index, aggregate, objective).  Returns
    (index, degenerate) where ``degenerate`` marks an all-zero iteration.
    """
    if not candidates:
        raise ValueError("select_rf_star needs at least one scored candidate")
    best = max(candidates, key=lambda cand: (cand[1],
                                             cand[2] if cand[2] is not None and np.isfinite(cand[2]) else -np.inf,
                                             -cand[0]))
    degenerate = all(cand[1] == 0 for cand in candidates)
    return best[0], degenerate


# ---------------------------------------------------------------------------
# the loop


class Pipeline:
    """One run directory; ``run()`` resumes from whatever ``state.json`` holds."""

    def __init__(self, config, client=None, on_step=None):
        self.config = config
        self.root = config.root
        self.root.mkdir(parents=True, exist_ok=True)
        self.state_path = self.root / "state.json"
        self.client = client or make_client(config.client, seed=config.seed, fixtures=config.fixtures,
                                            n_candidates=config.n_candidates)
        self.on_step = on_step
        if self.state_path.exists():
            self.state = EvolutionState.load(self.state_path)
            if self.state.config != config.to_json():
                raise InputError(f"{self.state_path} was written by a different configuration")
        else:
            self.state = EvolutionState(config.to_json())
        self._traj = None

    # persistence -----------------------------------------------------------
    def checkpoint(self, step):
        self.state.save(self.state_path)
        if self.on_step is not None:
            self.on_step(step)

    @property
    def traj(self):
        if self._traj is None:
            self._traj = KeypointTrajectory.load(self.config.demo)
        return self._traj

    def path(self, rel):
        return str(self.root / rel)

    def gv(self):
        gv = self.state.demo["gv"]
        return [self.path(pth) for pth in gv] if isinstance(gv, list) else self.path(gv)

    # stages ------------------------------------------------------------------
    def ingest(self):
        if self.state.demo is not None:
            return
        info, self._traj = prepare_demo(self.config, self.root / "demo")
        gv = info["gv"]
        info["gv"] = [_rel(pth, self.root) for pth in gv] if isinstance(gv, list) else _rel(gv, self.root)
        info["overlays"] = [_rel(pth, self.root) for pth in info["overlays"]]
        self.state.demo = info
        self.checkpoint("ingest")

    def run_sus(self):
        if self.state.sus is not None or "sus" in self.config.ablate:
            return
        gv = self.gv()
        images = gv if isinstance(gv, list) else [gv]
        sus = run_sus_chain(self.client, images, [self.path(pth) for pth in self.state.demo["overlays"]],
                            hint=self.state.demo["hint"], log=TranscriptLog(self.root / "transcripts"),
                            temperature=0.0, seed=self.config.seed)
        self.state.sus = sus.to_json()
        (self.root / "transcripts" / "sus.json").write_text(json.dumps(self.state.sus, indent=2, sort_keys=True))
        self.checkpoint("sus")

    def iter_dir(self, iteration, sub=None):
        folder = self.root / f"iter_{iteration}"
        if sub:
            folder = folder / sub
        folder.mkdir(parents=True, exist_ok=True)
        return folder

    def _messages_for(self, iteration):
        cfg, sus = self.config, sus_text(self.state)
        rf = self.state.rf_star
        prev = self.state.iterations[-2] if len(self.state.iterations) >= 2 else None
        failure = prev["failure"] if prev and prev["status"] == "failed" else None
        if rf is None:
            if failure is None:
                return lambda tip: build_generation_prompt(sus, self._gv_list(), count=cfg.n_candidates,
                                                           steps=cfg.steps, tip=tip)
            return lambda tip: build_generation_prompt(sus + f"\n\nPrevious attempt failed: {failure}",
                                                       self._gv_list(), count=cfg.n_candidates, steps=cfg.steps,
                                                       tip=tip)
        gs = rf["gs"]
        gs = [self.path(pth) for pth in gs] if isinstance(gs, list) else self.path(gs)
        return lambda tip: build_evolution_prompt(rf["source"], rf["feedback"], gs, self.path(rf["cp"]), self.gv(),
                                                  outcome=failure, sus=sus, score=rf["aggregate"],
                                                  count=cfg.n_candidates, steps=cfg.steps, tip=tip,
                                                  ablate=cfg.ablate)

    def _gv_list(self):
        gv = self.gv()
        return gv if isinstance(gv, list) else [gv]

    def generate(self, rec):
        it_no = rec["iteration"]
        log = TranscriptLog(self.iter_dir(it_no, "transcripts"))
        try:
            result = generate_candidates(self.client, self._messages_for(it_no), self.config.n_candidates, log,
                                         self.config.temperature, self.config.seed, name_prefix=f"iter{it_no}_cand")
        except IterationFailed as exc:
            rec["status"], rec["failure"] = "failed", str(exc)
            rec["discards"] = []
            self.checkpoint("generate")
            return
        cdir = self.iter_dir(it_no, "candidates")
        candidates = []
        for idx, (prog, report) in enumerate(result.programs):
            candidates.append({"index": idx, "source": to_source(prog), "hash": program_hash(prog),
                               "elitist": False, "validation": report.to_json()})
        rf = self.state.rf_star
        if self.config.elitist and rf is not None and rf["hash"] not in {cand["hash"] for cand in candidates}:
            # free elitist slot: RF* rides along, replacing the last candidate if the set is full
            entry = {"index": 0, "source": rf["source"], "hash": rf["hash"], "elitist": True,
                     "validation": rf.get("validation")}
            if len(candidates) >= self.config.n_candidates:
                candidates = candidates[:self.config.n_candidates - 1]
            candidates.append(entry)
        for idx, cand in enumerate(candidates):
            cand["index"] = idx
            cand["name"] = f"iter{it_no}_cand{idx}"
            (cdir / f"cand{idx}.rf").write_text(cand["source"])
            (cdir / f"cand{idx}.json").write_text(json.dumps({"hash": cand["hash"], "elitist": cand["elitist"],
                                                            "validation": cand["validation"]}, indent=2,
                                                           sort_keys=True))
        for jdx, disc in enumerate(result.discards):
            (cdir / f"discard{jdx}.txt").write_text(disc["source"])
            (cdir / f"discard{jdx}.json").write_text(json.dumps({k2: val for k2, val in disc.items() if k2 != "source"},
                                                              indent=2, sort_keys=True))
        rec.update(candidates=candidates, discards=[{k2: val for k2, val in disc.items() if k2 != "source"}
                                                    for disc in result.discards],
                   responses=result.responses, retried=result.retried, status="generated")
        self.checkpoint("generate")

    def train_all(self, rec):
        cfg = self.config
        sim_cfg = cfg.sim_config(self.state.demo["velocity"])
        todo = []
        for cand in rec["candidates"]:
            if cand["hash"] not in self.state.training_cache and cand["hash"] not in {item["hash"] for item in todo}:
                todo.append(cand)

        def job(cand):
            prog = parse(cand["source"], name=cand["name"])
            return cand["hash"], train(prog, sim_cfg, cfg.budget, seed=_derived_seed(cfg.seed, cand["hash"]),
                                    patience=cfg.patience, min_iterations=min(cfg.min_iterations, cfg.budget))

        if cfg.workers > 1 and len(todo) > 1:
            with ThreadPoolExecutor(cfg.workers) as pool:
                for digest, run in pool.map(job, todo):
                    self.state.training_cache[digest] = run.to_json()
                    self.checkpoint("train")
        else:
            for cand in todo:
                digest, run = job(cand)
                self.state.training_cache[digest] = run.to_json()
                self.checkpoint("train")
        rec["status"] = "trained"
        self.checkpoint("train")

    def evaluate_all(self, rec):
        cfg, it_no = self.config, rec["iteration"]
        sim_cfg = cfg.sim_config(self.state.demo["velocity"])
        plots, traces = self.iter_dir(it_no, "plots"), self.iter_dir(it_no, "traces")
        log = TranscriptLog(self.iter_dir(it_no, "transcripts"))
        for cand in rec["candidates"]:
            if "evaluation" in cand:
                continue
            run = TrainingRun.from_json(self.state.training_cache[cand["hash"]])
            cached = self.state.score_cache.get(cand["hash"]) if cfg.elitist else None
            if cached is not None:
                cand["evaluation"] = dict(cached, cached=True)
            elif not run.ok:
                cand["evaluation"] = {"status": "skipped", "reason": run.reason,
                                   "score": ScoreVector.zero().to_json()}
            else:
                try:
                    trace = rollout_config(run.best_params, sim_cfg)
                except ParamInfeasible as exc:
                    cand["evaluation"] = {"status": "skipped", "reason": str(exc),
                                       "score": ScoreVector.zero().to_json()}
                else:
                    trace.contacts.write_csv(traces / f"cand{cand['index']}_contacts.csv")
                    _, record = evaluate_candidate(self.client, trace, self.gv(), cfg, self.state.demo, plots,
                                                   f"cand{cand['index']}", log)
                    record["gs"] = [_rel(pth, self.root) for pth in record["gs"]] if isinstance(record["gs"], list) \
                        else _rel(record["gs"], self.root)
                    record["cp"] = _rel(record["cp"], self.root)
                    cand["evaluation"] = record
                    self.state.score_cache[cand["hash"]] = record
            self.checkpoint("evaluate")
        rec["status"] = "evaluated"
        self.checkpoint("evaluate")

    def select(self, rec):
        it_no = rec["iteration"]
        scored = []
        for cand in rec["candidates"]:
            ev = cand["evaluation"]
            if ev["status"] == "skipped":
                continue
            run = self.state.training_cache[cand["hash"]]
            scored.append((cand["index"], ev["score"]["aggregate"], run["best_objective"]))
        if not scored:
            rec["status"], rec["failure"] = "failed", "no candidate finished training: " + "; ".join(
                sorted({cand["evaluation"].get("reason") or "unknown" for cand in rec["candidates"]}))
            self.checkpoint("select")
            return
        best, degenerate = select_rf_star(scored)
        cand = rec["candidates"][best]
        run = TrainingRun.from_json(self.state.training_cache[cand["hash"]])
        ev = cand["evaluation"]
        rf = {"iteration": it_no, "index": best, "name": cand["name"], "source": cand["source"], "hash": cand["hash"],
              "aggregate": ev["score"]["aggregate"], "score": ev["score"], "objective": run.best_objective,
              "params": run.best_params.to_json(), "feedback": summarize(run), "gs": ev["gs"], "cp": ev["cp"],
              "validation": cand["validation"]}
        # full trace of the iteration's best for inspection
        trace = rollout_config(run.best_params, self.config.sim_config(self.state.demo["velocity"]))
        trace.save(self.iter_dir(it_no, "traces") / "rf_star")
        render_training_curve(run, self.iter_dir(it_no, "plots") / "rf_star_training")
        self.state.rf_star = rf
        rec.update(status="complete", rf_star=best, aggregate=rf["aggregate"], degenerate=degenerate)
        self.checkpoint("select")

    def close_iteration(self, rec):
        prior = self.state.history[-1] if self.state.history else None
        if rec["status"] == "failed":
            self.state.history.append(prior if prior is not None else None)
        else:
            self.state.history.append(rec["aggregate"])
        self.checkpoint("iteration")

    def run(self):
        cfg = self.config
        if self.state.finished:
            return self.report_path
        self.ingest()
        self.run_sus()
        while len(self.state.history) < cfg.n_iterations:
            it_no = self.state.iteration
            if len(self.state.iterations) < it_no:
                self.state.iterations.append({"iteration": it_no, "status": "started"})
                self.checkpoint("start")
            rec = self.state.iterations[it_no - 1]
            if rec["status"] == "started":
                self.generate(rec)
            if rec["status"] == "generated":
                self.train_all(rec)
            if rec["status"] == "trained":
                self.evaluate_all(rec)
            if rec["status"] == "evaluated":
                self.select(rec)
            self.close_iteration(rec)
        if self.state.rf_star is None:
            raise PipelineFailed(f"all {cfg.n_iterations} iterations failed: "
                                 + "; ".join(item.get("failure", "?") for item in self.state.iterations))
        self.write_report()
        self.state.finished = True
        self.checkpoint("finish")
        return self.report_path

    # final report --------------------------------------------------------------
    @property
    def report_path(self):
        return self.root / "report.json"

    def write_report(self):
        cfg, rf, demo = self.config, self.state.rf_star, self.state.demo
        final = self.root / "final"
        final.mkdir(exist_ok=True)
        params = GaitParameters.from_json(rf["params"])
        sim_cfg = cfg.sim_config(demo["velocity"])
        trace = rollout_config(params, sim_cfg)
        trace.save(final / "trace")
        metrics = gait_report(trace, self.traj, demo["scale"], demo["target"])
        long_cfg = SimConfig(steps=3000, command=sim_cfg.command, morphology=sim_cfg.morphology,
                             meters_per_unit=ROLLOUT_MPU)
        long_resets = rollout_config(params, long_cfg).reset_count

        figures = []
        figures += render_contact_plot(trace.contacts, final / "contacts", title="Final contact sequence",
                                       max_steps=250)
        figures += render_height_trace(trace.observations.base_height, trace.dt, final / "base_height")
        figures += render_sts(sts_series(trace), trace.dt, final / "sts")
        history = [val if val is not None else 0 for val in self.state.history]
        figures += render_score_history(history, final / "score_history")
        run = TrainingRun.from_json(self.state.training_cache[rf["hash"]])
        figures += render_training_curve(run, final / "training")
        from .evaluator import body_frame

        names = [name for name in self.traj.skeleton if name in set(trace.keypoints.skeleton)]
        demo_xy, _ = body_frame(self.traj, demo["scale"], names)
        roll_xy, _ = body_frame(trace.keypoints, ROLLOUT_MPU, names)
        figures += render_trajectory_overlay(demo_xy, roll_xy, final / "trajectories")

        iterations = []
        for rec in self.state.iterations:
            entry = {"iteration": rec["iteration"], "status": rec["status"]}
            if rec["status"] == "failed":
                entry["failure"] = rec.get("failure")
            if "candidates" in rec:
                entry["valid"] = len(rec["candidates"])
                entry["discarded"] = len(rec.get("discards", []))
                entry["aggregates"] = [cand["evaluation"]["score"]["aggregate"] for cand in rec["candidates"]
                                       if "evaluation" in cand]
            if rec["status"] == "complete":
                entry.update(rf_star=rec["rf_star"], aggregate=rec["aggregate"], degenerate=rec["degenerate"])
            iterations.append(entry)
        report = {
            "demo": {key: demo[key] for key in ("velocity", "scale", "seconds", "grid", "keypoint_label",
                                          "keypoint_margin", "target")},
            "config": {key: value for key, value in cfg.to_json().items()
                       if key not in ("demo", "frames", "run_dir", "run_id", "fixtures")},
            "score_history": self.state.history,
            "iterations": iterations,
            "rf_star": {key: rf[key] for key in ("iteration", "index", "name", "source", "aggregate", "score",
                                           "objective")},
            "best_params": rf["params"],
            "metrics": {**{key: value for key, value in metrics.items()}, "reset_count_3000": long_resets},
            "figures": sorted(_rel(pth, self.root) for pth in figures),
        }
        self.report_path.write_text(json.dumps(_plain(report), indent=2, sort_keys=True) + "\n")
        meta = {"finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "client_mode": self.client.mode,
                "client_calls_this_session": self.client.calls, "python": platform.python_version(),
                "package_version": __version__}
        (self.root / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def _plain(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None, floats rounded."""
    if isinstance(obj, dict):
        return {key: _plain(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(value) for value in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        num = float(obj)
        return round(num, 10) if np.isfinite(num) else None
    return obj


def run_pipeline(config, client=None, on_step=None):
    """Run (or resume) a pipeline; returns (rf_star record, best GaitParameters, run directory)."""
    pipe = Pipeline(config, client, on_step)
    pipe.run()
    rf = pipe.state.rf_star
    return rf, GaitParameters.from_json(rf["params"]), pipe.root


__all__ = ["RunConfig", "EvolutionState", "Pipeline", "GenerationResult", "generate_candidates",
           "screen_response", "evaluate_candidate", "select_rf_star", "run_pipeline", "prepare_demo",
           "rollout_summary", "program_hash", "ABLATIONS"]
