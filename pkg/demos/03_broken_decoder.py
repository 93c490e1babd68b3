"""Watch sigma and f(sigma) of an auxiliary whose decoder never trains.

The frozen head cannot fit its targets, so its loss stays high, its sigma
climbs and the encoder stops listening to it.
"""
import tempfile

from ial.harness import RunConfig, read_run_csv, run

out = tempfile.mkdtemp(prefix="ial-demo-")
curves = {}
for label, freeze in (("frozen", None), ("trained", ())):
    cfg = RunConfig(scenario="broken_decoder", strategy="ial", freeze=freeze, epochs=60, seeds=(0,), out=out, label=label)
    res = run(cfg)
    curves[label] = read_run_csv(res.directory / "seed0.csv")

# %% Print every tenth epoch of the broken task's trajectory.
print("epoch   sigma(frozen) f(frozen)   sigma(trained) f(trained)")
for a, b in zip(curves["frozen"][::10], curves["trained"][::10]):
    print(
        f"{a['epoch']:5d}   {a['aux_reg.sigma']:12.4f} {a['aux_reg.f_sigma']:9.4f}"
        f"   {b['aux_reg.sigma']:14.4f} {b['aux_reg.f_sigma']:10.4f}"
    )
