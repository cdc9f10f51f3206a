"""
Five algorithms, one substrate
==============================

Same data, partition, initial weights and client batch streams; only the
training rule changes.  A linear auxiliary makes the gradient estimator cheap
to ship, which is where FSL-SAGE and CSE-FSL save bytes over SplitFed.
"""

# %%
from fslsage import RunConfig, simulate
from fslsage.metrics import bytes_to_target

base = RunConfig(T=30, aux_dims=(64, 5), aux_activations=("identity",))
target = 0.85

# %%
print(f"{'algorithm':>12} {'best acc':>9} {'MB total':>9} {'MB to 0.85':>11}")
for alg in ("fsl_sage", "cse_fsl", "splitfed_ss", "splitfed_ms", "fedavg"):
    rows = simulate(base.with_overrides(algorithm=alg))
    btt = bytes_to_target(rows, target)
    print(f"{alg:>12} {max(r.eval_accuracy for r in rows):9.3f} "
          f"{rows[-1].cumulative_bytes / 1e6:9.2f} "
          f"{'never' if btt is None else f'{btt / 1e6:.2f}':>11}")

# %% FedAvg ships the whole model twice a round, so it is cheap per round only
# when the model is small; SplitFed pays for activations and gradients at every
# local step.
