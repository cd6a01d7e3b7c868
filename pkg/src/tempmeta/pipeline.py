"""End-to-end runs driven by one TOML file.

Stages run in the order ``synth, track, ratios, survival, features, meta,
evaluate``. Each writes into ``<workdir>/<stage>-<key>/``, where ``key``
hashes the stage's configuration and the keys of the stages it reads from,
and finishes by dropping a ``DONE`` marker. A stage whose directory already
carries the marker is skipped, so rerunning an unchanged config recomputes
nothing and editing one section only reruns the stages downstream of it.

Example config::

    workdir = "runs/demo"
    n_c = 5
    families = ["gb", "lr_l1"]
    tasks = ["clf", "reg"]
    runs = 10

    [seeds]
    tracking = 0
    protocol = 0
    crossfit = 0

    [tracking]
    c_o = 0.35

    [[synth.evaluation]]
    name = "seq_a"
    height = 160
    width = 240
    n_frames = 50
    n_random_objects = 7
    seed = 1
    degradation = { pos_noise = 0.08, score_noise = 1.2 }

Recorded sequences are given as ``[data] evaluation = [dirs]`` (and
``calibration``). Ratios and the survival model are fitted on the
calibration sequences, or on the evaluation sequences when none are given.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import stages as st
from .dataio import load_sequence, read_features, read_report, save_sequence, write_features, write_report
from .features import MAX_NC
from .meta.models import FAMILIES
from .meta.protocol import ProtocolError, run_protocol
from .survival import CoxFitError, CoxModel
from .synth import SynthConfig, generate
from .tracker import TrackingParams

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

STAGES = ("synth", "track", "ratios", "survival", "features", "meta", "evaluate")
TASKS = ("clf", "reg")
DONE = "DONE"


class PipelineError(RuntimeError):
    """A stage failed or its prerequisites are missing."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r}: {message}")
        self.stage = stage


@dataclass
class PipelineConfig:
    workdir: Path
    tracking: TrackingParams = field(default_factory=TrackingParams)
    n_c: int = 5
    families: tuple[str, ...] = FAMILIES
    tasks: tuple[str, ...] = TASKS
    runs: int = 10
    seeds: dict = field(default_factory=lambda: {"tracking": 0, "protocol": 0, "crossfit": 0})
    score_threshold: float = 0.0
    sweep_family: str = "gb"
    group_split: bool = False
    baseline: bool = True
    stages: tuple[str, ...] = STAGES
    data: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)
    report: Path | None = None

    _KEYS = {"workdir", "tracking", "n_c", "families", "tasks", "runs", "seeds", "score_threshold",
             "sweep_family", "group_split", "baseline", "stages", "data", "synth", "report"}

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "PipelineConfig":
        extra = sorted(set(d) - cls._KEYS)
        if extra:
            raise ValueError(f"unknown config keys: {extra}")
        if "workdir" not in d:
            raise ValueError("config needs a workdir")
        base = Path(".") if base is None else base

        def path(p):
            p = Path(p)
            return p if p.is_absolute() else base / p

        seeds = {"tracking": 0, "protocol": 0, "crossfit": 0}
        seeds.update(d.get("seeds", {}))
        data = {}
        for role in ("calibration", "evaluation"):
            data[role] = [path(p) for p in d.get("data", {}).get(role, [])]
        synth = {role: list(d.get("synth", {}).get(role, [])) for role in ("calibration", "evaluation")}
        cfg = cls(
            workdir=path(d["workdir"]),
            tracking=TrackingParams(**d.get("tracking", {})),
            n_c=int(d.get("n_c", 5)),
            families=tuple(d.get("families", FAMILIES)),
            tasks=tuple(d.get("tasks", TASKS)),
            runs=int(d.get("runs", 10)),
            seeds=seeds,
            score_threshold=float(d.get("score_threshold", 0.0)),
            sweep_family=d.get("sweep_family", "gb"),
            group_split=bool(d.get("group_split", False)),
            baseline=bool(d.get("baseline", True)),
            stages=tuple(d.get("stages", STAGES)),
            data=data,
            synth=synth,
            report=path(d["report"]) if "report" in d else None,
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        with open(path, "rb") as f:
            return cls.from_dict(tomllib.load(f), base=path.parent)

    def validate(self) -> None:
        bad = [s for s in self.stages if s not in STAGES]
        if bad:
            raise ValueError(f"unknown stages {bad}; choose from {list(STAGES)}")
        bad = [f for f in self.families if f not in FAMILIES]
        if bad:
            raise ValueError(f"unknown model families {bad}")
        bad = [t for t in self.tasks if t not in TASKS]
        if bad:
            raise ValueError(f"unknown tasks {bad}")
        if self.sweep_family not in FAMILIES:
            raise ValueError(f"unknown sweep family {self.sweep_family!r}")
        if not 0 <= self.n_c <= MAX_NC:
            raise ValueError(f"n_c must lie in [0, {MAX_NC}]")
        if self.runs < 1:
            raise ValueError("runs must be positive")
        if not (self.data["evaluation"] or self.synth["evaluation"]):
            raise ValueError("config names no evaluation sequences ([data] or [[synth.evaluation]])")

    def enabled(self, stage: str) -> bool:
        return stage in self.stages


def _key(*parts) -> str:
    text = json.dumps(parts, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _dir_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(q for q in root.rglob("*") if q.is_file()):
        h.update(str(p.relative_to(root)).encode())
        h.update(p.read_bytes())
    return h.hexdigest()


class _Runner:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.executed: list[str] = []
        self.keys: dict[str, str] = {}

    def stage_dir(self, stage: str) -> Path:
        return self.cfg.workdir / f"{stage}-{self.keys[stage]}"

    def run(self, stage: str, key: str, fn) -> Path:
        """Run ``fn(out_dir)`` unless the stage's artifacts are complete."""
        self.keys[stage] = key
        out = self.stage_dir(stage)
        if (out / DONE).exists():
            log.info("stage %s up to date (%s)", stage, out.name)
            return out
        if out.exists():
            shutil.rmtree(out)
        out.mkdir(parents=True)
        log.info("running stage %s -> %s", stage, out.name)
        try:
            fn(out)
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(stage, f"{type(exc).__name__}: {exc}") from exc
        (out / DONE).write_text(key + "\n")
        self.executed.append(stage)
        return out


def _check_prerequisites(cfg: PipelineConfig) -> None:
    def missing_gt(role):
        return [p for p in cfg.data[role] if not (p / "gt").is_dir()]

    for p in cfg.data["calibration"] + cfg.data["evaluation"]:
        if not (p / "pred").is_dir():
            raise PipelineError("track", f"sequence directory {p} has no pred/ subdirectory")
    for stage in ("meta", "evaluate"):
        if cfg.enabled(stage) and missing_gt("evaluation"):
            raise PipelineError(stage, f"needs ground truth, missing gt/ in {[str(p) for p in missing_gt('evaluation')]}")
    cal_role = "calibration" if (cfg.data["calibration"] or cfg.synth["calibration"]) else "evaluation"
    for stage in ("ratios", "survival"):
        if cfg.enabled(stage) and missing_gt(cal_role):
            raise PipelineError(stage, f"needs ground truth, missing gt/ in {[str(p) for p in missing_gt(cal_role)]}")
    if (cfg.enabled("meta") or cfg.enabled("evaluate")) and not cfg.enabled("features"):
        raise PipelineError("meta", "needs the features stage")


def run_pipeline(config, return_executed: bool = False):
    """Run every enabled stage and return the evaluation report bundle.

    Parameters
    ----------
    config : PipelineConfig, dict or path to a TOML file
    return_executed : bool
        Also return the names of the stages that were actually computed
        (as opposed to reused from disk).

    Raises
    ------
    PipelineError
        Naming the stage that failed. Artifacts of completed stages stay in
        place; the failing stage's directory is kept without its marker.
    """
    if isinstance(config, (str, Path)):
        cfg = PipelineConfig.load(config)
    elif isinstance(config, dict):
        cfg = PipelineConfig.from_dict(config)
    else:
        cfg = config
        cfg.validate()
    _check_prerequisites(cfg)
    cfg.workdir.mkdir(parents=True, exist_ok=True)
    r = _Runner(cfg)

    # sequences --------------------------------------------------------------
    roles = {}
    if cfg.synth["calibration"] or cfg.synth["evaluation"]:
        if not cfg.enabled("synth"):
            raise PipelineError("synth", "synthetic sequences are configured but the stage is disabled")
        try:
            synth_cfgs = {role: [SynthConfig.from_dict(d) for d in cfg.synth[role]] for role in _roles_of(cfg.synth)}
        except (TypeError, ValueError) as exc:
            raise PipelineError("synth", str(exc)) from exc

        def do_synth(out):
            for role, cfgs in synth_cfgs.items():
                for sc in cfgs:
                    seq, _ = generate(sc)
                    save_sequence(seq, out / role / sc.name)

        sd = r.run("synth", _key("synth", cfg.synth), do_synth)
        for role, cfgs in synth_cfgs.items():
            roles.setdefault(role, []).extend(sd / role / sc.name for sc in cfgs)
    for role in ("calibration", "evaluation"):
        roles.setdefault(role, []).extend(cfg.data[role])
    digests = {role: [_dir_digest(p) for p in paths] for role, paths in roles.items()}
    cal_role = "calibration" if roles["calibration"] else "evaluation"

    loaded: dict = {}

    def sequences(role):
        if role not in loaded:
            seqs = [st.prepare(load_sequence(p), cfg.score_threshold) for p in roles[role]]
            ids = [s.id for s in seqs]
            if len(set(ids)) != len(ids):
                raise ValueError(f"duplicate sequence names among {role} sequences: {ids}")
            loaded[role] = seqs
        return loaded[role]

    # tracking -----------------------------------------------------------------
    params = cfg.tracking
    track_key = _key("track", digests, asdict(params), cfg.seeds["tracking"], cfg.score_threshold)

    def do_track(out):
        for role in ("calibration", "evaluation"):
            (out / role).mkdir()
            for seq in sequences(role):
                tracked, _ = st.run_tracking(seq, params, seed=cfg.seeds["tracking"])
                _write_json(out / role / f"{seq.id}.json", st.tracks_to_dict(seq, tracked, params, cfg.seeds["tracking"]))

    if not cfg.enabled("track"):
        raise PipelineError("track", "every downstream stage needs tracking; it cannot be disabled")
    td = r.run("track", track_key, do_track)

    def tracked(role):
        out = []
        for seq in sequences(role):
            d = json.loads((td / role / f"{seq.id}.json").read_text())
            out.append((seq, *st.tracks_from_dict(seq, d)))
        return out

    # ratios and survival ----------------------------------------------------------
    ratios = None
    if cfg.enabled("ratios"):
        def do_ratios(out):
            _write_json(out / "ratios.json", {"ratios": st.ratios_from(sequences(cal_role)), "source": cal_role})

        rd = r.run("ratios", _key("ratios", digests[cal_role], cfg.score_threshold), do_ratios)
        ratios = {int(k): v for k, v in json.loads((rd / "ratios.json").read_text())["ratios"].items()}

    cox, survival_note = None, {"fitted": False, "reason": "stage disabled"}
    if cfg.enabled("survival"):
        def do_survival(out):
            try:
                model = st.fit_survival(tracked(cal_role), ratios)
            except CoxFitError as exc:
                # e.g. no track ends inside the calibration data; v is left out
                _write_json(out / "cox.json", {"skipped": str(exc)})
            else:
                _write_json(out / "cox.json", model.to_dict())

        svd = r.run("survival", _key("survival", track_key, r.keys.get("ratios")), do_survival)
        cox_d = json.loads((svd / "cox.json").read_text())
        if "skipped" in cox_d:
            survival_note = {"fitted": False, "reason": cox_d["skipped"]}
        else:
            cox = CoxModel.from_dict(cox_d)
            survival_note = {"fitted": True, "converged": cox.converged}

    # features -----------------------------------------------------------------
    if not cfg.enabled("features"):
        return _finish(cfg, r, {"survival": survival_note}, return_executed)
    feat_key = _key("features", track_key, r.keys.get("ratios"), r.keys.get("survival"), cfg.n_c)
    have_gt = all(s_dir.joinpath("gt").is_dir() for s_dir in roles["evaluation"])

    def do_features(out):
        records, targets = [], []
        for seq, trk, hist in tracked("evaluation"):
            m = st.metrics_for(seq, trk, hist, ratios, cox)
            records.extend(st.feature_records(m, cfg.n_c))
            if have_gt:
                targets.extend(st.targets_for(seq))
        write_features(records, out / "features.csv")
        if targets:
            write_features(targets, out / "targets.csv")

    fd = r.run("features", feat_key, do_features)

    def dataset():
        return st.dataset_from(read_features(fd / "features.csv"), st.load_targets(read_features(fd / "targets.csv")))

    # meta -----------------------------------------------------------------------
    bundle = {"survival": survival_note}
    if cfg.enabled("meta"):
        meta_key = _key("meta", feat_key, cfg.families, cfg.tasks, cfg.runs, cfg.seeds["protocol"],
                        cfg.group_split, cfg.baseline)

        def do_meta(out):
            ds = dataset()
            results = {}
            jobs = [(task, fam, None) for task in cfg.tasks for fam in cfg.families]
            if cfg.baseline:
                jobs += [(task, "gb", ["s"]) for task in cfg.tasks]
            for task, fam, metrics in jobs:
                name = fam if metrics is None else "score_only_gb"
                try:
                    res = run_protocol(ds, fam, task, n_c=None if metrics is None else 0, runs=cfg.runs,
                                       seed=cfg.seeds["protocol"], metrics=metrics, group_split=cfg.group_split)
                except ProtocolError as exc:
                    res = {"family": fam, "task": task, "degenerate": True, "error": str(exc)}
                results.setdefault(task, {})[name] = res
            write_report(results, out / "meta.json")

        md = r.run("meta", meta_key, do_meta)
        full = read_report(md / "meta.json")
        bundle["meta"] = {
            task: {name: {k: v for k, v in res.items() if k != "runs"} for name, res in per.items()}
            for task, per in full.items()
        }

    # evaluate -----------------------------------------------------------------------------
    if cfg.enabled("evaluate"):
        eval_key = _key("evaluate", feat_key, cfg.sweep_family, cfg.seeds["crossfit"])

        def do_evaluate(out):
            ds = dataset()
            trk = tracked("evaluation")
            write_report(st.mot_reports([(s, t) for s, t, _ in trk]), out / "mot.json")
            write_report(st.correlation_table(ds), out / "correlation.json")
            sw = st.sweep_report([s for s, _, _ in trk], ds.select(None, cfg.n_c), cfg.sweep_family,
                                 cfg.seeds["crossfit"])
            write_report(sw, out / "sweep.json")
            for mode, curve in sw["curves"].items():
                rows = [{"threshold": t, "fp": a, "fn": b} for t, a, b in zip(curve["threshold"], curve["fp"], curve["fn"])]
                write_features(rows, out / f"sweep_{mode}.csv")

        ed = r.run("evaluate", eval_key, do_evaluate)
        bundle["mot"] = read_report(ed / "mot.json")
        bundle["correlation"] = read_report(ed / "correlation.json")
        bundle["sweep"] = read_report(ed / "sweep.json")
    return _finish(cfg, r, bundle, return_executed)


def _roles_of(synth: dict):
    return [role for role in ("calibration", "evaluation") if synth.get(role)]


def _write_json(path: Path, obj) -> None:
    write_report(obj, path)


def _finish(cfg: PipelineConfig, r: _Runner, bundle: dict, return_executed: bool):
    report = {
        "seeds": dict(cfg.seeds),
        "n_c": cfg.n_c,
        "score_threshold": cfg.score_threshold,
        "tracking": asdict(cfg.tracking),
        "stages": {s: k for s, k in r.keys.items()},
        **bundle,
    }
    path = cfg.report or cfg.workdir / "report.json"
    write_report(report, path)
    report = read_report(path)
    return (report, r.executed) if return_executed else report
