"""Post-hoc calibration building blocks: isotonic regression, temperature
scaling, ECE, and the calibrate-or-skip decision rule.

Run: python demos/01_calibration_basics.py
"""

import math
import random

from udistill import calibrator as cal

# --- Isotonic regression via pool-adjacent-violators ----------------------
# Four (frequency, correct) observations with one monotonicity violation:
# the pair at f=0.4 (correct) sits above the pair at f=0.5 (incorrect),
# so PAVA pools them to a shared value of 0.5.

pairs = [(0.1, 0), (0.4, 1), (0.5, 0), (0.9, 1)]
iso = cal.fit_isotonic(pairs)
print("isotonic knots:", iso.knots)
for f in (0.1, 0.4, 0.5, 0.9, 0.65):
    print(f"  c({f:.2f}) = {cal.apply(iso, f):.3f}")

# --- Recovering a known miscalibration ------------------------------------
# Simulate a model whose raw frequency f relates to correctness as f^2
# (systematic overconfidence). Isotonic regression should recover the square.

rng = random.Random(0)
sim = []
for _ in range(20_000):
    f = rng.random()
    sim.append((f, 1 if rng.random() < f * f else 0))
recovered = cal.fit_isotonic(sim)
print("\nrecovering pi(f) = f^2 from 20k noisy observations:")
print(f"{'f':>5} {'c(f)':>8} {'f^2':>8}")
for k in range(1, 10):
    f = k / 10
    print(f"{f:>5.1f} {cal.apply(recovered, f):>8.3f} {f * f:>8.3f}")

# --- Temperature scaling ---------------------------------------------------
# Data generated at T*=2 (overconfident logits); the fitted scalar should
# land near 2. Temperature scaling is the one-parameter alternative when a
# smooth parametric correction is preferred.

t_star = 2.0
sim_t = []
for _ in range(5_000):
    f = rng.uniform(0.02, 0.98)
    z = math.log(f / (1 - f)) / t_star
    sim_t.append((f, 1 if rng.random() < 1 / (1 + math.exp(-z)) else 0))
temp = cal.fit_temperature(sim_t)
print(f"\nfitted temperature: {temp.temperature:.3f} (generated at T*={t_star})")

# --- ECE and the calibrate-or-skip rule ------------------------------------
# A perfectly calibrated stream has near-zero 30-bin ECE; training data that
# measures above the 0.05 threshold triggers post-hoc calibration.

calibrated_stream = []
for _ in range(10_000):
    p = rng.random()
    calibrated_stream.append((p, 1 if rng.random() < p else 0))
print(f"\nECE of a calibrated stream: {cal.ece(calibrated_stream):.4f}")

overconfident = [(0.8, 1)] * 700 + [(0.8, 0)] * 300
print(f"ECE of an overconfident batch: {cal.ece(overconfident):.3f}")
print("decision:", cal.should_calibrate(overconfident))
mild = [(0.8, 1)] * 826 + [(0.8, 0)] * 174
print(f"ECE of a mildly-off batch: {cal.ece(mild):.3f}")
print("decision:", cal.should_calibrate(mild))
