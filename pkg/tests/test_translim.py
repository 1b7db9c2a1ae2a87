import dataclasses
import json
import math

import numpy as np
import pytest
from scipy.optimize import brentq

from tslim import netcase, translim
from tslim.errors import BaseInfeasible, SourceCapacityExceeded, ValidationError
from tslim.loadmodels import ZipCoeffs, ZipModel
from tslim.netcase import Branch, Bus, Generator, NetworkCase
from tslim.translim import FaultTemplate, LimitResult, StepRecord, TransferStudy

from conftest import two_bus

SHORT_FAULT = FaultTemplate(t_end=0.6)


def toy(p_base_mw=50.0, x=0.05, rating_mw=100.0, n_lines=2):
    """Generator feeding a constant-impedance load over parallel identical lines.

    ``x`` is the equivalent reactance of the line group, so after one of two
    lines trips the survivor has reactance ``2 x``.
    """
    return two_bus(p_load=p_base_mw / 100, x=x, rating=rating_mw / 100, n_lines=n_lines,
                   load_model=ZipModel(ZipCoeffs(1, 0, 1, 0)))


def toy_study(delta_p=10.0, p_cap=200.0, **kw):
    return TransferStudy(source_gens=(1,), sink_bus=2, delta_p=delta_p, p_cap=p_cap, fault=SHORT_FAULT, **kw)


def rating_bound_mw(x, rating_mw):
    """Largest unity-power-factor load a single lossless line of reactance x can carry.

    Sending-end flow is P + j P^2 x / V^2 with V^2 = (1 + sqrt(1 - 4 x^2 P^2)) / 2;
    the limit solves |S_from| = rating.
    """
    r = rating_mw / 100

    def excess(p):
        v2 = (1 + math.sqrt(1 - 4 * x * x * p * p)) / 2
        return math.hypot(p, p * p * x / v2) - r

    nose = 1 / (2 * x)
    hi = min(r, nose * (1 - 1e-12))
    return 100 * brentq(excess, 1e-9, hi, xtol=1e-14)


def expected_level(p_base, delta_p, p_star, p_cap):
    n = math.floor((min(p_star, p_cap) - p_base) / delta_p + 1e-12)
    return p_base + n * delta_p


# --------------------------------------------------------------------------
# operating point


def test_scale_identity_at_base():
    case = toy()
    assert translim.scale_operating_point(case, toy_study(), 50.0) is case


def test_scale_two_equal_sources_share_equally():
    buses = (Bus(1, "Slack"), Bus(2, "PV"), Bus(3, "PQ", p_load=2.0, q_load=0.5))
    branches = (Branch(1, 3, 0, 0.1), Branch(2, 3, 0, 0.1))
    gens = (Generator(1, 1.0, name="A"), Generator(2, 1.0, name="B"))
    case = NetworkCase(buses, branches, gens)
    study = TransferStudy(source_gens=("A", "B"), sink_bus=3, delta_p=10, p_cap=500)
    scaled = translim.scale_operating_point(case, study, 300.0)
    assert [g.p_set for g in scaled.generators] == pytest.approx([1.5, 1.5])
    b = scaled.buses[2]
    assert b.q_load / b.p_load == pytest.approx(0.25, abs=1e-9)
    with pytest.raises(ValidationError):
        translim.scale_operating_point(case, study, 100.0)


def test_scale_is_proportional_to_set_points(case39):
    study = TransferStudy(source_gens=(30, 37, 38), sink_bus=20, delta_p=50, p_cap=2000)
    scaled = translim.scale_operating_point(case39, study, 780.0)
    old = {g.bus: g.p_set for g in case39.generators}
    new = {g.bus: g.p_set for g in scaled.generators}
    dp = {b: new[b] - old[b] for b in (30, 37, 38)}
    assert sum(dp.values()) == pytest.approx(1.0)
    total = sum(old[b] for b in (30, 37, 38))
    for b in (30, 37, 38):
        assert dp[b] == pytest.approx(old[b] / total)
    assert all(new[b] == old[b] for b in old if b not in (30, 37, 38))


def test_scale_respects_generator_ceiling():
    case = toy()
    gens = (dataclasses.replace(case.generators[0], p_max=0.8),)
    case = case.replace(generators=gens)
    with pytest.raises(SourceCapacityExceeded):
        translim.scale_operating_point(case, toy_study(), 90.0)


def test_p_base_must_match_case():
    with pytest.raises(ValidationError):
        translim.base_level(toy(), toy_study(p_base=60.0))


# --------------------------------------------------------------------------
# screening


def test_low_level_is_feasible_with_all_stable():
    rec = translim.assess_point(toy(), toy_study(), 50.0)
    assert rec.feasible and rec.static_ok and rec.dynamic_ok
    assert all(o.dynamic == "Stable" and o.static == "ok" for o in rec.outcomes.values())
    assert len(rec.outcomes) == 2  # the two parallel lines, labelled apart


def test_overloaded_level_binds_on_thermal():
    rec = translim.assess_point(toy(), toy_study(), 120.0)
    assert not rec.static_ok and not rec.feasible
    assert rec.binding_criterion == "Thermal"
    assert rec.worst_contingency in rec.outcomes


def test_thermal_toy_matches_analytic_rating_bound():
    x, rating = 0.05, 100.0
    res = translim.find_limit(toy(x=x, rating_mw=rating), toy_study())
    p_star = rating_bound_mw(2 * x, rating)
    assert p_star < 100.0  # reactive losses push the sending end over the rating first
    assert res.p_max == expected_level(50.0, 10.0, p_star, 200.0) == 90.0
    assert res.binding_criterion == "Thermal"


def test_thermal_toy_with_headroom_for_losses_reaches_100():
    # the surviving line (x = 0.1) sends 100.51 MVA to serve 100 MW
    assert rating_bound_mw(0.1, 101.0) > 100.0
    res = translim.find_limit(toy(x=0.05, rating_mw=101.0), toy_study())
    assert res.p_max == 100.0


def test_step_log_brackets_the_limit():
    res = translim.find_limit(toy(), toy_study())
    by_level = {s.p_level: s for s in res.steps}
    assert by_level[res.p_max].feasible
    assert not by_level[res.p_max + 10.0].feasible
    assert all(by_level[p].feasible for p in by_level if p <= res.p_max)


def test_halving_delta_p_moves_limit_by_at_most_coarse_step():
    coarse = translim.find_limit(toy(), toy_study(delta_p=10.0, static_check=True, dynamic_check=False))
    fine = translim.find_limit(toy(), toy_study(delta_p=5.0, static_check=True, dynamic_check=False))
    assert 0 <= fine.p_max - coarse.p_max <= 10.0


def test_bisect_agrees_with_sweep_on_random_toys():
    rng = np.random.default_rng(99)
    for _ in range(20):
        x = rng.uniform(0.01, 0.1)
        rating = rng.uniform(60, 250)
        p_base = rng.uniform(10, 50)
        delta_p = float(rng.choice([5.0, 10.0, 20.0]))
        case = toy(p_base_mw=p_base, x=x, rating_mw=rating)
        study = toy_study(delta_p=delta_p, p_cap=300.0, dynamic_check=False)
        sweep = translim.find_limit(case, study)
        fast = translim.find_limit(case, study, bisect=True)
        assert fast.p_max == sweep.p_max
        assert fast.binding_criterion == sweep.binding_criterion
        assert len(fast.steps) <= len(sweep.steps)
        assert sweep.p_max == pytest.approx(expected_level(p_base, delta_p, rating_bound_mw(2 * x, rating), 300.0))


def test_cap_reached_is_flagged():
    res = translim.find_limit(toy(rating_mw=1000.0), toy_study(p_cap=120.0))
    assert res.at_cap and res.p_max == 120.0 and res.binding_criterion is None


def test_islanding_outages_are_excluded():
    case = toy(n_lines=1, rating_mw=100.0)
    rec = translim.assess_point(case, toy_study(), 60.0)
    assert rec.feasible and rec.excluded == ("1-2",)
    strict = translim.assess_point(case, toy_study(exclude_islanding=False), 60.0)
    assert not strict.feasible
    # with the only line excluded, the base-case rating check still binds
    res = translim.find_limit(case, toy_study())
    assert res.binding_contingency == "base" and res.p_max == 90.0


def test_base_infeasible_is_reported():
    with pytest.raises(BaseInfeasible) as err:
        translim.find_limit(toy(p_base_mw=150.0), toy_study())
    assert err.value.record.binding_criterion == "Thermal"


def test_contingency_order_commutes(case39):
    kw = dict(source_gens=(30, 37, 38), sink_bus=20, delta_p=50, p_cap=1000, dynamic_check=False)
    a = translim.assess_point(case39, TransferStudy(contingencies=("14-15", "3-4", "22-23"), **kw), 780.0)
    b = translim.assess_point(case39, TransferStudy(contingencies=("22-23", "14-15", "4-3"), **kw), 780.0)
    assert a == b


def test_worker_pool_matches_serial():
    study = toy_study()
    a = translim.assess_point(toy(), study, 90.0, workers=1)
    b = translim.assess_point(toy(), study, 90.0, workers=2)
    assert a == b


def test_sweep_logs_nonmonotone_levels(monkeypatch):
    pattern = {50.0: True, 60.0: True, 70.0: False, 80.0: True, 90.0: False}

    def fake(case, study, p_level, workers=1):
        ok = pattern[p_level]
        return StepRecord(p_level, ok, True, ok, None if ok else "1-2", None if ok else "Thermal")

    monkeypatch.setattr(translim, "assess_point", fake)
    res = translim.find_limit(toy(), toy_study(p_cap=90.0))
    assert res.p_max == 60.0 and res.nonmonotone == [80.0]
    assert len(res.steps) == 5
    quick = translim.find_limit(toy(), toy_study(p_cap=90.0, assume_monotone=True))
    assert quick.p_max == 60.0 and len(quick.steps) == 3


def test_study_json_round_trip(tmp_path):
    study = TransferStudy(source_gens=("G8", 38), sink_bus=20, delta_p=25, p_cap=900, p_base=680,
                          tie_lines=("16-17",), contingencies=("3-4",), name="x",
                          fault=FaultTemplate(end="to", clearing=0.1))
    path = tmp_path / "study.json"
    path.write_text(json.dumps(study.to_json()))
    assert translim.load_study(path) == study
    with pytest.raises(ValidationError):
        TransferStudy(source_gens=(), sink_bus=1, delta_p=1, p_cap=2)
    with pytest.raises(ValidationError):
        FaultTemplate(end="middle")


# --------------------------------------------------------------------------
# reporting


def _result(p, cap=False, study="case"):
    return LimitResult(p, None if cap else "3-4", None if cap else "Thermal", [], at_cap=cap, study=study)


def test_trend_report_single_model():
    table = translim.trend_report({"zip": _result(900.0)})
    assert table.studies == ["case"] and table.models == ["zip"]
    assert table.to_csv().splitlines()[1] == "case,900,zip"


def test_trend_report_notes_ties_and_cap():
    table = translim.trend_report({"s": {"clm": _result(780.0), "40Z60P": _result(930.0), "30Z30I40P": _result(930.0, cap=True)}})
    assert table.ordering("s") == [["clm"], ["40Z60P", "30Z30I40P"]]
    text = table.to_text()
    assert "tie between 40Z60P, 30Z30I40P" in text
    assert "930+" in text
    assert "clm < 40Z60P = 30Z30I40P" in table.to_csv()


def test_steps_csv_and_limit_json():
    res = translim.find_limit(toy(), toy_study(dynamic_check=False))
    lines = translim.steps_csv(res).splitlines()
    assert lines[0].startswith("p_level_mw,feasible")
    assert len(lines) == len(res.steps) + 1
    doc = json.loads(translim.limit_json(res))
    assert doc["p_max_mw"] == 90.0 and doc["binding_criterion"] == "Thermal"


def test_base_failure_is_reported_below_base():
    with pytest.raises(BaseInfeasible) as err:
        translim.find_limit(toy(p_base_mw=150.0), toy_study(name="s"))
    res = LimitResult.from_base_failure(err.value, "s")
    assert res.below_base and res.p_max == 150.0 and res.binding_criterion == "Thermal"
    assert json.loads(translim.limit_json(res))["below_base"] is True
    table = translim.trend_report({"s": {"a": res, "b": _result(150.0, study="s")}})
    assert table.ordering("s") == [["a"], ["b"]]
    assert "<150" in table.to_text() and "s,<150,150,a < b" in table.to_csv()
