import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aclab.action import minimize_action
from aclab.errors import ConfigurationError, DomainError, ResolutionError
from aclab.fields import GridSpec
from aclab.harness import (
    AlwaysEvent,
    LdpRow,
    LdpTable,
    Schedule,
    SupNormExceedance,
    TerminalL2Exit,
    TerminalSignChange,
    c_lambda_distances,
    compare_with_rate,
    estimate_rare_event,
    schedule_delta,
)
from aclab.solver import SolveConfig

SPEC = GridSpec(1, 0.25, 32, 16)
CFG = SolveConfig(SPEC, C=-1.0)


class TestSchedules:
    def test_examples(self):
        assert schedule_delta(3, 1.0, 0.01) == pytest.approx(0.01)
        assert schedule_delta(3, 0.0, 0.01) == pytest.approx(0.1)
        assert schedule_delta(2, 1.0, 0.5) == pytest.approx(math.exp(-2))
        assert schedule_delta(2, 0.0, 0.25) == pytest.approx(math.exp(-2))
        assert schedule_delta(1, 1.0, 0.5) == 0.0

    @given(st.floats(0.01, 0.99), st.floats(0.1, 3.0))
    def test_defining_relations(self, eps, lam):
        assert eps / schedule_delta(3, lam, eps) == pytest.approx(lam**2, rel=1e-12)
        d2 = schedule_delta(2, lam, eps)
        if d2 > 0:
            assert eps * math.log(1 / d2) == pytest.approx(lam**2, rel=1e-12)

    def test_domain(self):
        for bad in (0.0, 1.0, -0.1):
            with pytest.raises(DomainError):
                schedule_delta(2, 1.0, bad)
        with pytest.raises(DomainError):
            schedule_delta(2, -1.0, 0.5)

    def test_unresolvable_reports_smallest_feasible_eps(self):
        spec = GridSpec(2, 0.25, 128, 32)
        with pytest.raises(ResolutionError) as err:
            schedule_delta(2, 1.0, 0.1, spec)
        m = err.value.min_eps
        assert m == pytest.approx(1 / math.log(16), rel=1e-12)
        assert schedule_delta(2, 1.0, m * 1.001, spec) > 0
        with pytest.raises(ResolutionError):
            schedule_delta(2, 1.0, m * 0.999, spec)

    def test_custom_function_overrides(self):
        s = Schedule(2, 1.0, fn=lambda eps: 0.25)
        assert s(0.1) == 0.25 and s.describe()["kind"] == "custom"
        with pytest.raises(ResolutionError):
            Schedule(2, 1.0, fn=lambda eps: 1e-3)(0.1, GridSpec(2, 0.25, 32, 16))


class TestEvents:
    def test_always_event(self):
        t = estimate_rare_event(CFG.with_(C=1.0), Schedule(1), [0.5, 0.25], AlwaysEvent(), 50)
        for r in t.rows:
            assert r.p_hat == 1.0 and r.rate == 0.0 and r.stderr == 0.0 and not r.flagged

    def test_unreachable_event_is_flagged(self):
        t = estimate_rare_event(CFG, Schedule(1), [0.01], TerminalL2Exit(10.0), 200)
        r = t.rows[0]
        assert r.flagged and r.hits == 0 and r.p_hat == 0.0
        assert r.upper == pytest.approx(1 - 0.05 ** (1 / 200))
        assert r.rate == pytest.approx(-0.01 * math.log(r.upper))
        assert "1," in t.to_csv().splitlines()[1]

    def test_event_predicates(self):
        levels = np.zeros((3, 2, 4))
        levels[0, -1] = 2.0
        levels[1, 1] = np.nan
        times = np.array([np.nan, 0.5, np.nan])
        assert list(TerminalL2Exit(1.0).hits(levels, times, GridSpec(1, 1.0, 1, 4))) == [True, True, False]
        assert list(SupNormExceedance(1.0).hits(levels, times, GridSpec(1, 1.0, 1, 4))) == [True, True, False]
        lv = np.ones((2, 2, 4))
        lv[0, -1] = -0.5
        assert list(TerminalSignChange(0.1).hits(lv, np.full(2, np.nan), GridSpec(1, 1.0, 1, 4))) == [True, False]

    def test_bad_requests(self):
        with pytest.raises(ConfigurationError):
            estimate_rare_event(CFG, Schedule(1), [0.5], AlwaysEvent(), 0)
        with pytest.raises(ConfigurationError):
            estimate_rare_event(CFG, Schedule(1), [0.5], AlwaysEvent(), 10, estimator="tilted")
        with pytest.raises(ConfigurationError):
            estimate_rare_event(CFG, Schedule(1), [0.5], AlwaysEvent(), 10, estimator="bogus")


class TestEstimators:
    def test_plain_and_tilted_agree(self):
        ev = TerminalL2Exit(0.4)
        inst = minimize_action(1, -1.0, 0.25, SPEC, event=ev)
        a = estimate_rare_event(CFG, Schedule(1), [0.25], ev, 10_000, seed=1).rows[0]
        b = estimate_rare_event(CFG, Schedule(1), [0.25], ev, 10_000, "tilted", inst, seed=2).rows[0]
        assert a.p_hat >= 0.05
        assert abs(a.p_hat - b.p_hat) < 3 * math.hypot(a.stderr, b.stderr)
        assert b.stderr < a.stderr

    def test_mirror_is_automatic_only_for_symmetric_problems(self):
        ev = TerminalL2Exit(0.4)
        inst = minimize_action(1, -1.0, 0.25, SPEC, event=ev)
        auto = estimate_rare_event(CFG, Schedule(1), [0.25], ev, 200, "tilted", inst, seed=3)
        on = estimate_rare_event(CFG, Schedule(1), [0.25], ev, 200, "tilted", inst, seed=3, mirror=True)
        off = estimate_rare_event(CFG, Schedule(1), [0.25], ev, 200, "tilted", inst, seed=3, mirror=False)
        assert auto.rows[0] == on.rows[0] and off.rows[0] != on.rows[0]
        shifted = CFG.with_(u0=np.full(16, 0.1))
        a = estimate_rare_event(shifted, Schedule(1), [0.25], ev, 200, "tilted", inst, seed=3)
        b = estimate_rare_event(shifted, Schedule(1), [0.25], ev, 200, "tilted", inst, seed=3, mirror=False)
        assert a.rows[0] == b.rows[0]

    def test_worker_count_does_not_change_results(self):
        ev = TerminalL2Exit(0.4)
        one = estimate_rare_event(CFG, Schedule(1), [0.25, 0.2], ev, 400, seed=5, chunk=100, workers=1)
        two = estimate_rare_event(CFG, Schedule(1), [0.25, 0.2], ev, 400, seed=5, chunk=100, workers=2)
        assert one.to_csv() == two.to_csv()


def _table(rates, eps=(0.4, 0.2, 0.1), trials=10**6):
    rows = []
    for e, r in zip(eps, rates):
        p = math.exp(-r / e)
        rows.append(LdpRow(e, 0.0, trials, int(p * trials), p, math.sqrt(p * (1 - p) / trials), -e * math.log(p)))
    return LdpTable(rows, {"event": "synthetic"}, "plain")


class TestCompareWithRate:
    def test_exact_exponential_has_zero_gap(self):
        rep = compare_with_rate(_table([0.7, 0.7, 0.7]), 0.7)
        assert np.allclose(rep.gaps, 0.0, atol=1e-12)
        assert rep.verdict == "consistent" and rep.shrinking

    def test_shrinking_and_growing_gaps(self):
        good = compare_with_rate(_table([1.2, 1.0, 0.85]), 0.7)
        assert good.verdict == "consistent" and good.monotone
        bad = compare_with_rate(_table([0.8, 1.0, 1.4]), 0.7)
        assert bad.verdict == "inconsistent"
        assert "verdict: inconsistent" in bad.render()
        assert json.loads(bad.to_json())["action"] == 0.7

    def test_insufficient(self):
        rep = compare_with_rate(_table([1.0], eps=(0.3,)), 0.7)
        assert rep.verdict == "insufficient"


def test_c_lambda_distances_shapes():
    spec = GridSpec(2, 0.25, 128, 32)
    out = c_lambda_distances(SolveConfig(spec, C=0.0), 0.5, [0.2, 0.1], 3, seed=1)
    assert len(out) == 2 and all(a.shape == (3,) for a in out)
    assert all(np.all(np.isfinite(a) & (a >= 0)) for a in out)
    with pytest.raises(ConfigurationError):
        c_lambda_distances(CFG, 0.5, [0.2], 2)
