"""Walk through the shifted schedule, the halving step ladder and the span weights."""
import numpy as np

from anchorflow import NoiseSchedule, StepSampler, calibration_weight, candidate_steps, noise_span

sched = NoiseSchedule(n=1000, shift=3.0)

# the shift pushes noise levels up: half the index range already sits at sigma 0.75
for T in (0, 250, 500, 750, 1000):
    print(f"T={T:4d}  sigma={sched.sigma(T):.4f}")

# each anchor T offers K halvings of itself as step sizes
print(candidate_steps(700, 6))

sampler = StepSampler()
print("p(k) =", np.round(sampler.probs, 4))  # large steps are drawn most often
print(sampler.steps_table())

# equal index steps cover very different noise spans under the shift
for T in (1000, 750, 500, 250):
    span = noise_span(sched, T, 250)
    print(f"{T:4d} -> {T - 250:4d}: span {span:.4f}, weight {calibration_weight(sched, T, 250, 0.5):.4f}")

# an empirical check of the step-index law
T, dT, k = sampler.sample(np.random.default_rng(0), 50_000)
print("empirical p(k):", np.round(np.bincount(k) / len(k), 4))
