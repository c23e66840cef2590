"""Train a small CNN on synthetic data, prune it three ways, retrain,
and compare final accuracy and surviving parameters.

Runs in about a minute on a laptop CPU.
"""

import flexprune as fp
from flexprune.training import RunResult, SynthSpec, TrainConfig, run_protocol, synth_dataset

RHO = 0.4

spec = SynthSpec(classes=10, n_train=800, n_test=200, size=16, noise=0.35, mode="stripes")
train, test = synth_dataset(spec, seed=100)

print(f"pruning {RHO:.0%} of prunable parameters, then retraining\n")
print(f"{'technique':12s} {'final acc':>9s} {'achieved':>9s} {'active params':>13s}")
for technique, delta in [("magnitude", 0.0), ("relevance", 1.0), ("flexrel", 0.5)]:
    net = fp.build_cnn(conv_channels=(8, 16), dense_units=64, seed=1)
    cfg = TrainConfig(
        learning_rate=0.01, batch_size=50, epochs_dense=5, epochs_pruned=10,
        technique=technique, delta=delta, rho=RHO, seed=1,
    )
    result: RunResult = run_protocol(net, train, test, cfg)
    active = sum(int(m.sum()) for m in result.net.trainable.values() for m in [m["w"]])
    print(
        f"{technique:12s} {result.log[-1].accuracy:9.3f} "
        f"{result.plan.achieved_fraction:9.3f} {active:13d}"
    )
