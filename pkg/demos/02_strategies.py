"""Compare balancing strategies on the 'standard' synthetic benchmark.

A short run (2 seeds, 60 epochs) so it finishes in about a minute; the
acceptance suite uses 5 seeds x 200 epochs. Rankings this early in training
can differ from the full-length runs.
"""
import statistics
import tempfile

from ial.harness import RunConfig, run

out = tempfile.mkdtemp(prefix="ial-demo-")
results = {}
for strategy, params in [("uniform", {}), ("fixed", {"aux_weight": 0.1}), ("uw", {}), ("ial", {})]:
    cfg = RunConfig(scenario="standard", strategy=strategy, strategy_params=params, epochs=60, seeds=(0, 1), out=out)
    summary = run(cfg).summary
    results[strategy] = summary["mean"]["primary"]

# %% Lower primary MSE is better.
for name, mse in sorted(results.items(), key=lambda kv: kv[1]):
    print(f"{name:8s} primary test MSE {mse:.4f}")
print("outputs in", out)
