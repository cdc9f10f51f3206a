"""
What alignment buys
===================

Every ``l`` rounds the server refits each client's auxiliary so that its input
gradient matches the server's on the stored cut-layer activations.  Here we
watch the estimation error right before and right after each refit, and
compare with a run that never aligns.
"""

# %%
from fslsage import RunConfig, run_fsl_sage

cfg = RunConfig(T=30, l=5)
aligned = run_fsl_sage(cfg)
never = run_fsl_sage(cfg.with_overrides(l=None))

# %%
print(f"{'round':>5} {'eps before':>11} {'eps after':>10} {'align loss':>11}")
for r in aligned:
    if r.epsilon_pre_align is not None:
        print(f"{r.round:5d} {r.epsilon_pre_align:11.3e} {r.epsilon_t:10.3e} "
              f"{r.alignment_loss:11.3e}")

# %% without refits the auxiliary keeps its random initialization
for name, rows in (("aligned", aligned), ("never", never)):
    print(f"{name:>8}: final epsilon {rows[-1].epsilon_t:.3e}, "
          f"final accuracy {rows[-1].eval_accuracy:.3f}")
