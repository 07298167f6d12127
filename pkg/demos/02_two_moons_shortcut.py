"""Train a plain flow model and a shortcut model on two moons, then compare few-step samplers.

Pass a step count as the first argument (default 3000 updates, about a minute).
"""
import sys

import numpy as np

from anchorflow import NoiseSchedule, StepSampler, TrainSettings, TrainState, VelocityNet, gen_2d, sample_euler, sample_fewstep, sliced_w2, train_alternating
from anchorflow.datasets import ToyDistribution

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 3000
sched = NoiseSchedule()
data = gen_2d(ToyDistribution("two_moons", 20_000, 0))
held = gen_2d(ToyDistribution("two_moons", 5_000, 1))

# dense anchors so every transition of the few-step samplers gets consistency training
dense = StepSampler(anchors=tuple(range(25, 1001, 25)))

runs = {}
for name, settings in {
    "flow matching": TrainSettings(steps=steps, objective="fm"),
    "shortcut": TrainSettings(steps=steps, mode="combined", sampler=dense),
}.items():
    state = TrainState.create(VelocityNet((2,)), settings, seed=0)
    train_alternating(state, data, settings)
    runs[name] = state.eval_net()
    print(f"trained {name}: last loss {state.history[-1][2]:.4f}")

rng = lambda: np.random.default_rng(7)
print("\nsliced W2 to held-out points (lower is better)")
print(f"  flow matching, Euler 50 : {sliced_w2(sample_euler(runs['flow matching'], 50, sched, rng(), (2,), 5000), held):.4f}")
for n in (1, 2, 4):
    fm = sliced_w2(sample_euler(runs["flow matching"], n, sched, rng(), (2,), 5000), held)
    sc = sliced_w2(sample_fewstep(runs["shortcut"], n, sched, rng(), (2,), 5000), held)
    print(f"  {n} step(s): flow matching Euler {fm:.4f}   shortcut {sc:.4f}")
