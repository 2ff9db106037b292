"""Monte Carlo answer frequencies: sample a synthetic model repeatedly,
consolidate answers into semantic clusters, and watch the frequency
estimate sharpen as the sample count N grows.

Run: python demos/02_monte_carlo_frequencies.py
"""

import math
import statistics

from udistill import GenParams, MockModel, cluster_samples, relative_frequencies, sample_n
from udistill.synthetic import make_distortion_corpus

# 150 synthetic two-answer items; each item's gold label was drawn so that
# an answer carrying probability mass m is correct with probability m.
dataset, spec, truths = make_distortion_corpus(150, "identity", seed=2, with_reasoning=False)
client = MockModel(spec)

item, truth = dataset[0], truths[0]
print("item:", item.id)
print("true answer masses:", {k: round(v, 3) for k, v in truth.masses.items()})

samples = sample_n(item, 100, GenParams(temperature=1.0, seed=0), client)
clusters = cluster_samples(samples, item, seed=0)
table = relative_frequencies(clusters, samples.n_effective, item.id)
print("sampled frequencies at N=100:")
for entry in table.entries:
    print(f"  {entry['cluster_key']}: count={entry['count']:>3}  f={entry['f']:.3f}")

# --- error vs N -------------------------------------------------------------
# RMSE of the modal-cluster frequency against its true mass, over all items.
# Past a few hundred samples the gains flatten out, which is why a budget
# around N=100 is the practical operating point per question.

print(f"\n{'N':>5} {'RMSE':>8}")
for n in (10, 25, 50, 100, 200, 400, 800):
    devs = []
    for it, tr in zip(dataset, truths):
        ss = sample_n(it, n, GenParams(temperature=1.0, seed=1), client)
        cl = cluster_samples(ss, it, seed=0)
        top = max(cl, key=lambda c: c.count)
        devs.append(top.count / ss.n_effective - tr.masses.get(top.canonical_key, 0.0))
    rmse = math.sqrt(statistics.mean(d * d for d in devs))
    print(f"{n:>5} {rmse:>8.4f}")

print("\ncalls issued:", client.call_count)
