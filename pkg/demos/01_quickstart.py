"""
Quickstart: one FSL-SAGE run
============================

Four clients share a 5-class Gaussian mixture split by a Dirichlet(1) draw.
Each holds the first layer of a 20-64-64-5 network; the server holds the rest.
"""

# %%
from fslsage import CommLedger, RunConfig, simulate

cfg = RunConfig(T=20)
ledger = CommLedger()
rows = simulate(cfg, ledger)

# %% one line per round; epsilon is the gap between the auxiliary-driven and
# true client gradients on a fixed probe batch
print(f"{'round':>5} {'loss':>8} {'acc':>6} {'kB':>8} {'epsilon':>10}")
for r in rows:
    print(f"{r.round:5d} {r.train_loss:8.4f} {r.eval_accuracy:6.3f} "
          f"{r.cumulative_bytes / 1e3:8.1f} {r.epsilon_t:10.2e}")

# %% where did the bytes go?
for channel, b in sorted(ledger.bytes_by("channel").items()):
    print(f"{channel:>9}: {b / 1e3:9.1f} kB")
