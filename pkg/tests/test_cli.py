import json

import pytest

from tempmeta.cli import build_parser, main

SYNTH = """height = 100
width = 140
n_frames = 20
n_random_objects = 6
random_lifetimes = true
seed = {seed}
degradation = {{ pos_noise = 0.08, size_noise = 0.12, mask_noise = 0.15, fp_rate = 0.6, score_noise = 1.2, softness = 0.6, quality_spread = 0.6 }}
"""

COMMANDS = ("synth", "track", "gt-ratios", "features", "survival-fit", "meta-train", "evaluate", "sweep", "run")


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "s.toml").write_text(SYNTH.format(seed=11))
    assert run("synth", "--config", d / "s.toml", "--out", d / "seqA") == 0
    assert run("track", "--in", d / "seqA", "--out", d / "tA.json", "--seed", 3) == 0
    assert run("gt-ratios", "--gt", d / "seqA", "--out", d / "ratios.json") == 0
    assert run("features", "--in", d / "seqA", "--tracks", d / "tA.json", "--gt-ratios", d / "ratios.json",
               "--n-c", 5, "--out", d / "f5.csv") == 0
    assert run("survival-fit", "--features", d / "f5.csv", "--gt", d / "seqA", "--out", d / "cox.json") == 0
    assert run("features", "--in", d / "seqA", "--tracks", d / "tA.json", "--gt-ratios", d / "ratios.json",
               "--cox", d / "cox.json", "--n-c", 5, "--out", d / "f.csv", "--targets-out", d / "t.csv") == 0
    return d


def test_help_documents_every_flag():
    parser = build_parser()
    subs = parser._subparsers._group_actions[0].choices
    assert set(COMMANDS) <= set(subs)
    for name, sub in subs.items():
        for action in sub._actions:
            if action.option_strings and action.dest != "help":
                assert action.help, f"{name} {action.option_strings} lacks help"


def test_stage_commands_chain(workspace):
    d = workspace
    tracks = json.loads((d / "tA.json").read_text())
    assert tracks["seed"] == 3 and tracks["sequence"] == "seqA" and set(tracks["frames"]) == {str(t) for t in range(1, 21)}
    header = (d / "f.csv").read_text().splitlines()[0].split(",")
    assert header[:5] == ["sequence", "track_id", "frame", "local_id", "class"]
    assert header[5] == "S_0" and header[-1] == "present_5" and "v_0" in header and "r_5" in header
    cox = json.loads((d / "cox.json").read_text())
    assert {"beta", "mean", "scale"} <= set(cox)

    assert run("meta-train", "--features", d / "f.csv", "--targets", d / "t.csv", "--family", "gb", "--task",
               "clf", "--runs", 3, "--n-c", 2, "--out", d / "m.json", "--model-out", d / "model.json") == 0
    rep = json.loads((d / "m.json").read_text())
    assert len(rep["runs"]) == 3 and rep["n_c"] == 2 and rep["seed"] == 0
    assert json.loads((d / "model.json").read_text())["family"] == "gb"

    assert run("evaluate", "--mode", "mot", "--in", d / "seqA", "--tracks", d / "tA.json", "--out", d / "mot.json") == 0
    assert "pooled" in json.loads((d / "mot.json").read_text())
    assert run("evaluate", "--mode", "corr", "--features", d / "f.csv", "--targets", d / "t.csv",
               "--out", d / "corr.json") == 0
    assert -1 <= json.loads((d / "corr.json").read_text())["s"] <= 1
    assert run("evaluate", "--mode", "meta", "--features", d / "f.csv", "--targets", d / "t.csv",
               "--families", "lr_l1", "--tasks", "reg", "--runs", 2, "--out", d / "meta.json") == 0
    assert "test_r2" in json.loads((d / "meta.json").read_text())["reg"]["lr_l1"]["summary"]
    assert run("sweep", "--in", d / "seqA", "--features", d / "f.csv", "--targets", d / "t.csv",
               "--out", d / "sw.json") == 0
    lines = (d / "sw_meta.csv").read_text().splitlines()
    assert lines[0] == "threshold,fp,fn" and len(lines) == 31
    assert (d / "sw_score.csv").exists()


def test_errors_exit_nonzero_with_stage_name(workspace, capsys):
    d = workspace
    assert run("track", "--in", d / "missing", "--out", d / "x.json") == 1
    assert capsys.readouterr().err.startswith("tempmeta track: error:")
    assert run("features", "--in", d / "seqA", "--tracks", d / "nope.json", "--out", d / "q.csv") == 1
    assert "nope.json" in capsys.readouterr().err
    assert run("evaluate", "--mode", "corr", "--out", d / "c.json") == 1
    assert "--features --targets" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        run("features", "--in", d / "seqA", "--tracks", d / "tA.json", "--n-c", 11, "--out", d / "q.csv")
    assert info.value.code != 0


def test_run_subcommand(tmp_path, capsys):
    (tmp_path / "p.toml").write_text(
        'workdir = "w"\nfamilies = ["gb"]\ntasks = ["reg"]\nruns = 2\n'
        '[[synth.evaluation]]\nname = "e"\nheight = 80\nwidth = 100\nn_frames = 10\nn_random_objects = 3\n'
        'size_range = [10, 20]\nseed = 2\n'
    )
    assert run("run", "--config", tmp_path / "p.toml") == 0
    assert "stages run: synth" in capsys.readouterr().out
    assert run("run", "--config", tmp_path / "p.toml") == 0
    assert "none (all up to date)" in capsys.readouterr().out
    rep = json.loads((tmp_path / "w" / "report.json").read_text())
    assert rep["mot"]["pooled"]["MOTA"] == 1.0
    (tmp_path / "bad.toml").write_text('workdir = "w"\n[[synth.evaluation]]\nheight = 10\nwidth = 10\nn_frames = 2\nbogus = 1\n')
    assert run("run", "--config", tmp_path / "bad.toml") == 1
    assert "tempmeta run: error: stage 'synth'" in capsys.readouterr().err


def test_output_parent_directories_are_created(workspace):
    d = workspace
    assert run("track", "--in", d / "seqA", "--out", d / "new" / "deep" / "t.json") == 0
    assert (d / "new" / "deep" / "t.json").exists()
