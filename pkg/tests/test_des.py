import heapq
from dataclasses import replace

import numpy as np
import pytest

from mecmfg.aoi import (Policy, SystemConfig, UEProfile, busy_fractions, exogenous_rates_finite,
                        weighted_aoi, yg_aoi)
from mecmfg.des import (ARRIVAL, BUFFER, ES_SERVICE, LOCAL_SERVICE, ROUTE, SimConfig, _streams,
                        replicate, simulate)
from mecmfg.errors import InvalidConfig

SINGLE = SystemConfig(num_ues=1, es_rate=5.0, profiles=(UEProfile((1.0, 3.0, 6.0)),))
ALL_LOCAL = Policy((1.0, 1.0, 1.0), 2.0)


def single(policy=ALL_LOCAL, **kw):
    return SimConfig(SINGLE, (policy,), **kw)


class Stream:
    """Reads a generator in the same chunks as the simulator."""

    def __init__(self, gen, purpose):
        self.gen, self.purpose, self.buf, self.i = gen, purpose, None, BUFFER

    def next(self):
        if self.i >= BUFFER:
            self.buf = self.gen.random(BUFFER) if self.purpose == ROUTE else self.gen.standard_exponential(BUFFER)
            self.i = 0
        self.i += 1
        return self.buf[self.i - 1]


def reference(cfg: SimConfig):
    """Plain heapq simulation of the same model, event budget only."""
    n = cfg.system.num_ues
    lam = np.array([p.arrival_rates for p in cfg.profiles()])
    streams = [Stream(g, k % 4) for k, g in enumerate(_streams(cfg.rng_seed, n))]
    s = lambda o, c, purpose: streams[(o * 3 + c) * 4 + purpose]
    heap, seq = [], 0
    for o in range(n):
        for c in range(3):
            heap.append((s(o, c, ARRIVAL).next() / lam[o, c], seq, ("arr", o, c)))
            seq += 1
    heapq.heapify(heap)
    server = [None] * (n + 1)  # (owner, cls, gen, token)
    fresh = np.zeros((n, 3))
    delivered_gen = [[[] for _ in range(3)] for _ in range(n)]
    area = np.zeros((n, 3))
    busy = np.zeros((n + 1, 3))
    last = 0.0
    warm = int(round(cfg.warmup_fraction * cfg.events))
    end = warm + (cfg.events - warm) // cfg.batches * cfg.batches
    start = None
    events = 0
    token = 0
    if warm == 0:
        start = 0.0
    while True:
        now, _, ev = heapq.heappop(heap)
        if ev[0] == "done" and (server[ev[1]] is None or server[ev[1]][3] != ev[2]):
            continue  # preempted: stale completion
        assert now >= last
        dt = now - last
        if start is not None:
            area += dt * (last - fresh) + 0.5 * dt * dt
            for k, job in enumerate(server):
                if job is not None:
                    busy[k, job[1]] += dt
        last = now
        if ev[0] == "arr":
            _, o, c = ev
            local = s(o, c, ROUTE).next() < cfg.policies[o].p[c]
            k, rate, purpose = (o, cfg.policies[o].mu0, LOCAL_SERVICE) if local else (n, cfg.system.es_rate, ES_SERVICE)
            job = server[k]
            if job is None or c <= job[1]:
                token += 1
                server[k] = (o, c, now, token)
                heapq.heappush(heap, (now + s(o, c, purpose).next() / rate, seq, ("done", k, token)))
                seq += 1
            heapq.heappush(heap, (now + s(o, c, ARRIVAL).next() / lam[o, c], seq, ev))
            seq += 1
        else:
            o, c, gen, _ = server[ev[1]]
            server[ev[1]] = None
            if gen > fresh[o, c]:
                assert not delivered_gen[o][c] or gen > delivered_gen[o][c][-1]
                assert now - gen >= 0
                delivered_gen[o][c].append(gen)
                fresh[o, c] = gen
        events += 1
        if events == warm:
            start = now
        if events == end:
            total = now - start
            return area / total, busy[:n] / total


def test_matches_reference_simulator():
    sysc = SystemConfig(num_ues=3, es_rate=4.0)
    pols = (Policy((0.6, 0.5, 0.6), 0.7), Policy((0.2, 0.9, 0.1), 1.5), Policy((1.0, 0.0, 0.5), 0.3))
    cfg = SimConfig(sysc, pols, events=60000, rng_seed=11)
    stats = simulate(cfg)
    aoi, busy = reference(cfg)
    np.testing.assert_allclose(stats.aoi, aoi, rtol=1e-9)
    np.testing.assert_allclose(stats.local_busy, busy, rtol=1e-9, atol=1e-12)


def test_single_ue_red_all_local():
    stats = simulate(single(events=10 ** 7))
    assert stats.aoi[0, 0] == pytest.approx(1.5, rel=0.02)


def test_single_ue_all_local_yellow_green_match_pipeline():
    # values derived by the linear solve on the degenerate chains
    stats = simulate(single(events=10 ** 7))
    np.testing.assert_allclose(stats.aoi[0, 1:], (1.6666666666666665, 3.333333333333334), rtol=0.02)


def test_fig4_symmetric_matches_analytic(fig4, fig4_policy):
    stats = simulate(SimConfig(fig4, (fig4_policy,) * 10, events=10 ** 7))
    prof = fig4.profiles[0]
    br = weighted_aoi(exogenous_rates_finite([(fig4_policy, prof)] * 10, 0), fig4_policy, prof, fig4)
    np.testing.assert_allclose(stats.aoi.mean(axis=0), br.per_class, rtol=0.02)


def test_yellow_chain_matches_simulation():
    # UE 0 sees: own yellow 3 (half local), other yellow at ES 2, red at ES 1 in
    # total (0.4 own + 0.6 other), own local red 0.6
    sysc = SystemConfig(num_ues=2, es_rate=10.0,
                        profiles=(UEProfile((1.0, 3.0, 1.0), weight=0.5), UEProfile((0.6, 2.0, 1e-9), weight=0.5)))
    pols = (Policy((0.6, 0.5, 1.0), 0.7), Policy((0.0, 0.0, 0.0), 1.0))
    stats = simulate(SimConfig(sysc, pols, profile_index=(0, 1), events=10 ** 7))
    assert stats.aoi[0, 1] == pytest.approx(yg_aoi(3, 0.5, 2, 1, 0.6, 0.7, 10), rel=0.02)


@pytest.mark.parametrize("cls", [0, 1, 2], ids=["red", "yellow", "green"])
def test_busy_fraction_matches_formula_local_only(cls):
    stats = simulate(single(events=10 ** 7))
    formula = busy_fractions(ALL_LOCAL, SINGLE.profiles[0])
    assert stats.local_busy[0, cls] == pytest.approx(formula[cls], rel=0.01)


def test_busy_fraction_matches_priority_queue_occupancy():
    # a preemptive-priority single server is busy with classes <= a for
    # Lambda_a / (Lambda_a + mu0) of the time (Lambda_a: cumulative local load)
    stats = simulate(single(events=10 ** 7))
    cum = np.cumsum([1.0, 3.0, 6.0])
    exact = np.diff(np.r_[0.0, cum / (cum + 2.0)])
    np.testing.assert_allclose(stats.local_busy[0], exact, rtol=0.01)


def test_zero_length_horizon_rejected():
    with pytest.raises(InvalidConfig):
        simulate(single(horizon=0.0))
    with pytest.raises(InvalidConfig):
        simulate(single())
    with pytest.raises(InvalidConfig):
        simulate(single(horizon=10.0, events=100))


def test_horizon_mode():
    stats = simulate(single(horizon=2.0e4))
    assert stats.elapsed == pytest.approx(0.9 * 2.0e4)
    assert stats.aoi[0, 0] == pytest.approx(1.5, rel=0.05)


def test_stats_invariants(fig4, fig4_policy):
    stats = simulate(SimConfig(fig4, (fig4_policy,) * 10, events=200000))
    assert (stats.aoi > 0).all()
    assert ((stats.local_busy >= 0) & (stats.local_busy <= 1)).all()
    assert stats.local_busy.sum(axis=1).max() <= 1 + 1e-12
    assert stats.es_busy.sum() <= 1 + 1e-12
    assert (stats.preempted > 0).all() and (stats.delivered > 0).all()


def test_replicate_one_equals_simulate():
    cfg = single(events=50000, rng_seed=4)
    a, b = replicate(cfg, 1).mean, simulate(cfg)
    for k, v in a.as_dict().items():
        np.testing.assert_array_equal(v, getattr(b, k))


def test_identical_seeds_identical_output():
    cfg = single(events=50000, rng_seed=9)
    a, b = simulate(cfg), simulate(cfg)
    for k, v in a.as_dict().items():
        np.testing.assert_array_equal(v, getattr(b, k))
    c = simulate(replace(cfg, rng_seed=10))
    assert not np.array_equal(a.aoi, c.aoi)


def test_standard_error_shrinks_like_sqrt_r():
    cfg = single(events=20000)
    se5 = replicate(cfg, 5).stderr["aoi"][0, 0]
    se30 = replicate(cfg, 30).stderr["aoi"][0, 0]
    ratio = se5 / se30
    assert np.sqrt(6) / 2 <= ratio <= 2 * np.sqrt(6)


def test_es_red_occupancy_nonincreasing_in_local_probability(fig4):
    fractions = []
    for pr in (0.0, 0.25, 0.5, 0.75, 1.0):
        pol = Policy((pr, 0.5, 0.6), 0.7)
        fractions.append(simulate(SimConfig(fig4, (pol,) * 10, events=300000, rng_seed=5)).es_busy[0])
    assert all(b <= a for a, b in zip(fractions, fractions[1:]))


def test_changing_one_rate_keeps_other_streams():
    # common random numbers: the red stream of UE 0 is untouched by green's rate
    base = SystemConfig(num_ues=1, es_rate=5.0, profiles=(UEProfile((1.0, 3.0, 6.0)),))
    other = SystemConfig(num_ues=1, es_rate=5.0, profiles=(UEProfile((1.0, 3.0, 9.0)),))
    pol = Policy((1.0, 1.0, 1.0), 2.0)
    a = simulate(SimConfig(base, (pol,), horizon=5000.0))
    b = simulate(SimConfig(other, (pol,), horizon=5000.0))
    assert a.aoi[0, 0] == b.aoi[0, 0]
