"""Per-instance metrics, the survival model and the time-series feature table.

Calibration sequences supply the class height/width ratios and the Cox
survival model. Metrics of the evaluation sequences are then stacked over
``n_c`` previous frames into one feature row per prediction.
"""

import numpy as np

from tempmeta import stages
from tempmeta.evaluation import pearson
from tempmeta.synth import Degradation, SynthConfig, generate

deg = Degradation(pos_noise=0.08, size_noise=0.12, quality_spread=0.6, mask_noise=0.15, flicker_prob=0.04,
                  fp_rate=0.6, fp_life=2.0, score_gain=8.0, score_noise=1.2, softness=0.6)


def make(seed, name):
    cfg = SynthConfig(160, 240, 50, n_random_objects=7, size_range=(12, 45), max_speed=2.5,
                      random_lifetimes=True, degradation=deg, seed=seed, name=name)
    return generate(cfg)[0]


cal = [make(100 + i, f"cal{i}") for i in range(2)]
ratios = stages.ratios_from(cal)
cox = stages.fit_survival([(s, *stages.run_tracking(s)) for s in cal], ratios)
print("height/width ratio per class:", {k: round(v, 3) for k, v in ratios.items()})
top = np.argsort(-np.abs(cox.beta))[:5]
print(f"cox model on {len(cox.beta)} covariates, largest standardised effects:")
for j in top:
    print(f"  {cox.covariate_names[j]:10s} {cox.beta[j]:+.3f}")

ev = make(200, "ev0")
tracked, history = stages.run_tracking(ev)
metrics = stages.metrics_for(ev, tracked, history, ratios, cox)
records = stages.feature_records(metrics, n_c=5)
ds = stages.dataset_from(records, stages.targets_for(ev))
print(f"{len(ds)} rows, {len(ds.feature_names)} columns, metrics: {', '.join(ds.metrics)}")
for m in ds.metrics:
    col = ds.X[:, ds.feature_names.index(f"{m}_0")]
    if np.ptp(col) > 0:
        print(f"  corr({m}, IoU) = {pearson(col, ds.target_iou):+.3f}")
