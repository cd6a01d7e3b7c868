import json

import pytest

from tempmeta.dataio import save_sequence
from tempmeta.pipeline import PipelineConfig, PipelineError, run_pipeline
from tempmeta.synth import SynthConfig, generate

NOISY = dict(pos_noise=0.08, size_noise=0.12, quality_spread=0.6, mask_noise=0.15, fp_rate=0.6, score_noise=1.2,
             softness=0.6)


def synth_entry(name, seed, n=4, **deg):
    return {"name": name, "height": 100, "width": 140, "n_frames": 20, "n_random_objects": n,
            "size_range": [12, 30], "random_lifetimes": bool(deg), "seed": seed, "degradation": deg}


def config(workdir, **kw):
    d = {
        "workdir": str(workdir),
        "families": ["gb", "lr_l1"],
        "runs": 3,
        "synth": {"evaluation": [synth_entry("clean", 3)]},
    }
    d.update(kw)
    return d


def test_zero_degradation_report(tmp_path):
    rep, executed = run_pipeline(config(tmp_path / "w"), return_executed=True)
    assert executed == ["synth", "track", "ratios", "survival", "features", "meta", "evaluate"]
    assert rep["mot"]["pooled"]["MOTA"] == 1.0
    for fam in ("gb", "lr_l1"):
        r2 = rep["meta"]["reg"][fam]["summary"]["test_r2"]
        assert r2 == {"mean": 1.0, "std": 0.0, "degenerate": True}
        assert rep["meta"]["reg"][fam]["summary"]["test_sigma"]["mean"] == 0.0
        # every prediction is a true positive, so classification is undefined
        assert rep["meta"]["clf"][fam]["degenerate"] is True
    assert rep["seeds"] == {"tracking": 0, "protocol": 0, "crossfit": 0}
    assert rep["survival"]["fitted"] is False
    assert set(rep["correlation"].values()) == {None}
    assert rep["sweep"]["curves"]["score"]["fp"][0] == 0


def test_rerun_recomputes_nothing_and_bytes_match(tmp_path):
    cfg = config(tmp_path / "a", synth={"evaluation": [synth_entry("e1", 5, **NOISY), synth_entry("e2", 6, **NOISY)],
                                        "calibration": [synth_entry("c1", 7, n=9, **NOISY)]})
    rep, executed = run_pipeline(cfg, return_executed=True)
    assert "meta" in rep["sweep"]["curves"] and rep["survival"]["fitted"]
    first = (tmp_path / "a" / "report.json").read_bytes()
    rep2, executed2 = run_pipeline(cfg, return_executed=True)
    assert executed2 == [] and rep2 == rep
    assert (tmp_path / "a" / "report.json").read_bytes() == first
    cfg["workdir"] = str(tmp_path / "b")
    run_pipeline(cfg)
    assert (tmp_path / "b" / "report.json").read_bytes() == first
    assert (tmp_path / "b" / next(p.name for p in (tmp_path / "b").glob("evaluate-*")) / "sweep_meta.csv").exists()

    # a meta-only change reruns the meta stage alone
    cfg["families"] = ["gb"]
    _, executed3 = run_pipeline(cfg, return_executed=True)
    assert executed3 == ["meta"]


def test_missing_ground_truth_halts_before_any_stage(tmp_path):
    seq, _ = generate(SynthConfig(60, 80, 5, n_random_objects=2, size_range=(8, 14), seed=1))
    seq.gt = None
    save_sequence(seq, tmp_path / "nogt")
    d = {"workdir": str(tmp_path / "w"), "data": {"evaluation": [str(tmp_path / "nogt")]}}
    with pytest.raises(PipelineError) as info:
        run_pipeline(d)
    assert info.value.stage == "meta"
    assert not list((tmp_path / "w").glob("*-*"))
    # stages that need no ground truth still run
    d["stages"] = ["track", "features"]
    rep = run_pipeline(d)
    assert "meta" not in rep and set(rep["stages"]) == {"track", "features"}


def test_failing_stage_is_named_and_earlier_artifacts_kept(tmp_path):
    cfg = config(tmp_path / "w", stages=["synth", "track", "features"])
    run_pipeline(cfg)
    track_dir = next((tmp_path / "w").glob("track-*"))
    feat_dir = next((tmp_path / "w").glob("features-*"))
    (feat_dir / "DONE").unlink()
    tracks = track_dir / "evaluation" / "clean.json"
    d = json.loads(tracks.read_text())
    d["frames"]["3"] = d["frames"]["3"][1:]
    tracks.write_text(json.dumps(d))
    with pytest.raises(PipelineError, match="stage 'features'.*frame 3") as info:
        run_pipeline(cfg)
    assert info.value.stage == "features"
    assert (track_dir / "DONE").exists() and feat_dir.exists() and not (feat_dir / "DONE").exists()


def test_config_validation(tmp_path):
    with pytest.raises(ValueError, match="unknown config keys"):
        PipelineConfig.from_dict(config(tmp_path, bogus=1))
    with pytest.raises(ValueError, match="unknown model families"):
        PipelineConfig.from_dict(config(tmp_path, families=["svm"]))
    with pytest.raises(ValueError, match="no evaluation sequences"):
        PipelineConfig.from_dict({"workdir": str(tmp_path)})
    toml = tmp_path / "p.toml"
    toml.write_text('workdir = "w"\nn_c = 3\n[tracking]\nc_o = 0.5\n[[synth.evaluation]]\nheight = 50\nwidth = 50\nn_frames = 3\n')
    cfg = PipelineConfig.load(toml)
    assert cfg.workdir == tmp_path / "w" and cfg.tracking.c_o == 0.5 and cfg.n_c == 3
