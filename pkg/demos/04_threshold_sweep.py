"""False positives against false negatives when thresholding on score or meta probability.

The meta probabilities are cross-fitted, so no prediction is scored by a
model that saw it during training.
"""

from tempmeta import stages
from tempmeta.synth import Degradation, SynthConfig, generate

deg = Degradation(pos_noise=0.08, size_noise=0.12, quality_spread=0.6, mask_noise=0.15, flicker_prob=0.04,
                  fp_rate=0.6, fp_life=2.0, score_gain=8.0, score_noise=1.2, softness=0.6)
seqs = [generate(SynthConfig(160, 240, 50, n_random_objects=7, size_range=(12, 45), max_speed=2.5,
                             random_lifetimes=True, degradation=deg, seed=400 + i, name=f"s{i}"))[0]
        for i in range(4)]
ratios = stages.ratios_from(seqs)
records, targets = [], []
for s in seqs:
    records += stages.feature_records(stages.metrics_for(s, *stages.run_tracking(s), ratios), n_c=5)
    targets += stages.targets_for(s)
rep = stages.sweep_report(seqs, stages.dataset_from(records, targets))

print(f"{rep['n_predictions']} predictions, {rep['n_gt']} ground-truth instances")
print(f"AP50: score {rep['ap50']['score']:.4f}, meta {rep['ap50']['meta']:.4f}")
score, meta = rep["curves"]["score"], rep["curves"]["meta"]
print(" thr    score fp/fn    meta fp/fn")
for k in range(0, len(score["threshold"]), 3):
    print(f"{score['threshold'][k]:.2f}  {score['fp'][k]:6d}/{score['fn'][k]:<6d} {meta['fp'][k]:6d}/{meta['fn'][k]:<6d}")
