"""Transfer limits and how they depend on the load model.

First a two-bus toy whose thermal limit can be written down, then the 39-bus
transfer from generators 30, 37 and 38 into bus 20 with the load at bus 20
represented by different models.
"""
# %%
import math

from tslim import netcase, translim
from tslim.loadmodels import StaticPreset, ZipCoeffs, ZipModel, default_model
from tslim.netcase import Branch, Bus, Generator, NetworkCase
from tslim.translim import FaultTemplate, TransferStudy

# %% toy: two parallel lines of x = 0.1 each, 100 MW rating
# After one line trips the survivor must carry the load plus its own reactive
# loss P^2 x / V^2, so the sending-end MVA passes the rating a little before
# the load reaches 100 MW.
buses = (Bus(1, "Slack"), Bus(2, "PQ", p_load=0.5))
lines = tuple(Branch(1, 2, 0.0, 0.1, rating=1.0) for _ in range(2))
toy = NetworkCase(buses, lines, (Generator(1, 0.5, h=5.0, xdp=0.2, d=5.0),),
                  load_models={2: ZipModel(ZipCoeffs(1, 0, 1, 0))})
study = TransferStudy(source_gens=(1,), sink_bus=2, delta_p=10, p_cap=200, fault=FaultTemplate(t_end=0.6))
res = translim.find_limit(toy, study)
for step in res.steps:
    print(f"{step.p_level:6.0f} MW  {'feasible' if step.feasible else 'infeasible':>10}  {step.binding_criterion or ''}")
v2 = (1 + math.sqrt(1 - 4 * 0.1**2)) / 2
print(f"sending end at 100 MW after the outage: {100 * math.hypot(1, 0.1 / v2):.2f} MVA")
print(f"P_max = {res.p_max:.0f} MW ({res.binding_criterion} on {res.binding_contingency})")

# %% the 39-bus case: one study, several load models at the sink
case = netcase.builtin_case()
case_i = TransferStudy(source_gens=(30, 37, 38), sink_bus=20, delta_p=50, p_cap=2500, assume_monotone=True,
                       contingencies=("14-15", "15-16", "17-18", "3-4", "4-5", "22-23"), name="case_i")
models = {
    "clm_lite": default_model("clm_lite"),
    "40Z60P": StaticPreset("40Z60P", v_break=0.7),
    "30Z30I40P": StaticPreset("30Z30I40P", v_break=0.7),
}
limits = {}
for name, model in models.items():
    study_case = case.replace(load_models={20: model})
    try:
        limits[name] = translim.find_limit(study_case, case_i)
    except translim.BaseInfeasible as err:
        limits[name] = translim.LimitResult.from_base_failure(err, case_i.name)
    r = limits[name]
    print(f"{name:>10}: {r.p_max:.0f} MW, {r.binding_criterion} on {r.binding_contingency}")

# %% the comparison table
print(translim.trend_report({"case_i": limits}).to_text())

# %% where the dynamic load gives out: the binding outage at the first failing level
r = limits["clm_lite"]
level = r.p_max if r.below_base else r.p_max + case_i.delta_p
trajs = translim.level_trajectories(case.replace(load_models={20: models["clm_lite"]}), case_i, level)
v, _, _ = trajs[r.binding_contingency].bus_series(20)
print(f"bus 20 voltage at {level:.0f} MW after {r.binding_contingency}: "
      f"min {v.min():.3f}, final {v[-1]:.3f} p.u.")
