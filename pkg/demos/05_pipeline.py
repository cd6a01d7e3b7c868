"""Drive every stage from one TOML file, then rerun it from the cache.

The same run is available from the shell as
``python -m tempmeta run --config demos/pipeline.toml``.
"""

import shutil
import tempfile
from pathlib import Path

from tempmeta.pipeline import PipelineConfig, run_pipeline

here = Path(__file__).parent
with tempfile.TemporaryDirectory() as tmp:
    shutil.copy(here / "pipeline.toml", tmp)
    cfg = PipelineConfig.load(Path(tmp) / "pipeline.toml")  # workdir resolves next to the copy
    report, ran = run_pipeline(cfg, return_executed=True)
    print("executed:", ran)
    print("pooled MOTA:", round(report["mot"]["pooled"]["MOTA"], 3))
    for task, fams in report["meta"].items():
        for fam, res in fams.items():
            if res.get("degenerate"):
                print(f"{task} {fam}: degenerate")
                continue
            key = "test_auroc" if task == "clf" else "test_r2"
            print(f"{task} {fam:13s} {key} {res['summary'][key]['mean']:.4f}")
    _, ran = run_pipeline(cfg, return_executed=True)
    print("second run executed:", ran)
