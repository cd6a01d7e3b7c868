"""Meta classification and regression of prediction quality.

Every family is fitted on ten seeded 70/10/20 splits of one feature table;
the summary holds mean and standard deviation of each test metric.
"""

from tempmeta import stages
from tempmeta.meta import FAMILIES, run_protocol
from tempmeta.synth import Degradation, SynthConfig, generate

deg = Degradation(pos_noise=0.08, size_noise=0.12, quality_spread=0.6, mask_noise=0.15, flicker_prob=0.04,
                  fp_rate=0.6, fp_life=2.0, score_gain=8.0, score_noise=1.2, softness=0.6)
seqs = [generate(SynthConfig(160, 240, 50, n_random_objects=7, size_range=(12, 45), max_speed=2.5,
                             random_lifetimes=True, degradation=deg, seed=300 + i, name=f"s{i}"))[0]
        for i in range(4)]
ratios = stages.ratios_from(seqs)
records, targets = [], []
for s in seqs:
    records += stages.feature_records(stages.metrics_for(s, *stages.run_tracking(s), ratios), n_c=3)
    targets += stages.targets_for(s)
ds = stages.dataset_from(records, targets)
print(f"{len(ds)} rows, {ds.label.mean():.0%} with IoU >= 0.5")

base = run_protocol(ds, "gb", "clf", n_c=0, metrics=["s"], runs=5)["summary"]["test_auroc"]
print(f"score only (gb)   AUROC {base['mean']:.4f} +- {base['std']:.4f}")
for fam in FAMILIES:
    clf = run_protocol(ds, fam, "clf", runs=5)["summary"]["test_auroc"]
    reg = run_protocol(ds, fam, "reg", runs=5)["summary"]["test_r2"]
    print(f"{fam:8s} n_c=3   AUROC {clf['mean']:.4f} +- {clf['std']:.4f}   R2 {reg['mean']:.4f} +- {reg['std']:.4f}")
