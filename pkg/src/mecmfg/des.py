"""Event-driven simulation of N UEs sharing one edge server.

Every local processor and the edge server hold at most one packet. An
arrival of the same or a more urgent class preempts (and discards) the
packet in service; a less urgent arrival is dropped. On completion the
owner's age for that class falls to ``now - generation_time`` if the packet
is fresher than anything delivered before.

Randomness comes from one numpy stream per (UE, class, purpose), so
changing one rate leaves the other streams untouched. The hot loop is a
numba kernel driven from Python; it returns whenever a stream buffer runs
dry and is resumed after the refill.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numba
import numpy as np
from scipy import stats

from .aoi import Policy, SystemConfig
from .errors import InvalidConfig

ARRIVAL, ROUTE, LOCAL_SERVICE, ES_SERVICE = range(4)
BUFFER = 1 << 14
NUM_BATCHES = 20


@dataclass(frozen=True)
class SimConfig:
    system: SystemConfig
    policies: tuple  # one Policy per UE
    profile_index: tuple = ()  # profile of each UE; default: all profile 0
    horizon: float | None = None
    events: int | None = None
    warmup_fraction: float = 0.1
    rng_seed: int = 0
    batches: int = NUM_BATCHES

    def problems(self) -> list[str]:
        out = list(self.system.problems())
        n = self.system.num_ues
        if len(self.policies) != n:
            out.append(f"sim.policies: expected {n} policies, got {len(self.policies)}")
        idx = self.profile_index or (0,) * n
        if len(idx) != n or any(not 0 <= j < len(self.system.profiles) for j in idx):
            out.append("sim.profile_index: one valid profile index per UE required")
        else:
            for i, pol in enumerate(self.policies):
                out.extend(pol.problems(self.system.profiles[idx[i]].f_max, f"sim.policies[{i}]"))
        if (self.horizon is None) == (self.events is None):
            out.append("sim: exactly one of horizon / events must be set")
        elif self.horizon is not None and not self.horizon > 0:
            out.append(f"sim.horizon: must be > 0, got {self.horizon}")
        elif self.events is not None and not self.events > 0:
            out.append(f"sim.events: must be > 0, got {self.events}")
        if not 0 <= self.warmup_fraction < 1:
            out.append(f"sim.warmup_fraction: must be in [0, 1), got {self.warmup_fraction}")
        if not self.batches >= 2:
            out.append(f"sim.batches: need at least 2, got {self.batches}")
        return out

    def profiles(self):
        idx = self.profile_index or (0,) * self.system.num_ues
        return [self.system.profiles[j] for j in idx]


@dataclass
class SimStats:
    aoi: np.ndarray  # (N, 3) time-average age
    aoi_halfwidth: np.ndarray  # (N, 3) 95% batch-means half-width
    delivered: np.ndarray  # (N, 3) accepted deliveries
    preempted: np.ndarray  # (N, 3) packets discarded while in service
    dropped: np.ndarray  # (N, 3) arrivals refused by a busier server
    local_busy: np.ndarray  # (N, 3) fraction of time the UE's processor serves class a
    local_busy_halfwidth: np.ndarray
    es_busy: np.ndarray  # (3,)
    power: np.ndarray  # (N,) eta * mu0^3 * busy fraction
    elapsed: float
    events: int

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@numba.njit(cache=True)
def _less(t, q, a, b):
    return t[a] < t[b] or (t[a] == t[b] and q[a] < q[b])


@numba.njit(cache=True)
def _sift_up(heap, pos, t, q, i):
    while i > 0:
        parent = (i - 1) >> 1
        if _less(t, q, heap[i], heap[parent]):
            a, b = heap[i], heap[parent]
            heap[i], heap[parent] = b, a
            pos[b], pos[a] = i, parent
            i = parent
        else:
            break


@numba.njit(cache=True)
def _sift_down(heap, pos, t, q, i):
    n = heap.shape[0]
    while True:
        left = 2 * i + 1
        if left >= n:
            break
        best = left
        right = left + 1
        if right < n and _less(t, q, heap[right], heap[left]):
            best = right
        if _less(t, q, heap[best], heap[i]):
            a, b = heap[i], heap[best]
            heap[i], heap[best] = b, a
            pos[b], pos[a] = i, best
            i = best
        else:
            break


@numba.njit(cache=True)
def _schedule(heap, pos, t, q, iv, slot, when):
    t[slot] = when
    q[slot] = iv[3]
    iv[3] += 1
    i = pos[slot]
    _sift_up(heap, pos, t, q, i)
    _sift_down(heap, pos, t, q, pos[slot])


@numba.njit(cache=True)
def _flush(now, b, fresh, age_last, area, srv_busy, srv_cls, srv_last, busy):
    n = fresh.shape[0]
    for o in range(n):
        for c in range(3):
            last = age_last[o, c]
            area[b, o, c] += 0.5 * (now - last) * (now + last - 2.0 * fresh[o, c])
            age_last[o, c] = now
    for s in range(srv_busy.shape[0]):
        if srv_busy[s]:
            busy[b, s, srv_cls[s]] += now - srv_last[s]
        srv_last[s] = now


@numba.njit(cache=True)
def _run(lam, p, mu0, mu, heap, pos, t, q, iv, fv, bounds,
         srv_busy, srv_owner, srv_cls, srv_gen, srv_last,
         fresh, age_last, area, busy, delivered, preempted, dropped, bstart,
         buf, ptr):
    """Advance the simulation. iv = [batch, events, stop_mode, seq, nbatches];
    fv = [now]. Returns 0 when finished, k + 1 when stream k needs a refill,
    -1 on an ordering violation, -2 on an illegal preemption."""
    n = lam.shape[0]
    es = n
    boundary_slot = 4 * n + 1
    nbuf = buf.shape[1]
    while True:
        slot = heap[0]
        now = t[slot]
        if now < fv[0]:
            return -1
        if slot < 3 * n:
            o = slot // 3
            c = slot % 3
            base = slot * 4
            for k in range(4):
                if ptr[base + k] >= nbuf:
                    return base + k + 1
        b = iv[0]
        fv[0] = now
        if slot == boundary_slot:
            _flush(now, b, fresh, age_last, area, srv_busy, srv_cls, srv_last, busy)
            iv[0] += 1
            if iv[0] > iv[4]:
                return 0
            bstart[iv[0]] = now
            _schedule(heap, pos, t, q, iv, boundary_slot, bounds[iv[0]])
            continue
        if slot < 3 * n:
            o = slot // 3
            c = slot % 3
            base = slot * 4
            u = buf[base + ROUTE, ptr[base + ROUTE]]
            ptr[base + ROUTE] += 1
            if u < p[o, c]:
                srv = o
                rate = mu0[o]
                stream = base + LOCAL_SERVICE
            else:
                srv = es
                rate = mu
                stream = base + ES_SERVICE
            if srv_busy[srv] == 0 or c <= srv_cls[srv]:
                if srv_busy[srv]:
                    if c > srv_cls[srv]:
                        return -2
                    busy[b, srv, srv_cls[srv]] += now - srv_last[srv]
                    preempted[b, srv_owner[srv], srv_cls[srv]] += 1
                srv_busy[srv] = 1
                srv_owner[srv] = o
                srv_cls[srv] = c
                srv_gen[srv] = now
                srv_last[srv] = now
                e = buf[stream, ptr[stream]]
                ptr[stream] += 1
                if rate > 0.0:
                    _schedule(heap, pos, t, q, iv, 3 * n + srv, now + e / rate)
                else:
                    _schedule(heap, pos, t, q, iv, 3 * n + srv, np.inf)
            else:
                dropped[b, o, c] += 1
            e = buf[base + ARRIVAL, ptr[base + ARRIVAL]]
            ptr[base + ARRIVAL] += 1
            _schedule(heap, pos, t, q, iv, slot, now + e / lam[o, c])
        else:
            srv = slot - 3 * n
            o = srv_owner[srv]
            c = srv_cls[srv]
            busy[b, srv, c] += now - srv_last[srv]
            srv_busy[srv] = 0
            srv_last[srv] = now
            g = srv_gen[srv]
            if g > fresh[o, c]:
                last = age_last[o, c]
                area[b, o, c] += 0.5 * (now - last) * (now + last - 2.0 * fresh[o, c])
                age_last[o, c] = now
                fresh[o, c] = g
                delivered[b, o, c] += 1
            _schedule(heap, pos, t, q, iv, slot, np.inf)
        iv[1] += 1
        if iv[2] == 1 and iv[1] == bounds[iv[0]]:
            _flush(now, b, fresh, age_last, area, srv_busy, srv_cls, srv_last, busy)
            iv[0] += 1
            if iv[0] > iv[4]:
                return 0
            bstart[iv[0]] = now


def _streams(seed, n):
    out = []
    for o in range(n):
        for c in range(3):
            for purpose in range(4):
                ss = np.random.SeedSequence(entropy=seed, spawn_key=(o, c, purpose))
                out.append(np.random.Generator(np.random.PCG64(ss)))
    return out


def _fill(gen, purpose, size):
    return gen.random(size) if purpose == ROUTE else gen.standard_exponential(size)


def simulate(config: SimConfig) -> SimStats:
    problems = config.problems()
    if problems:
        raise InvalidConfig("; ".join(problems))
    sysc = config.system
    n = sysc.num_ues
    profiles = config.profiles()
    lam = np.array([prof.arrival_rates for prof in profiles], dtype=float)
    p = np.array([pol.p for pol in config.policies], dtype=float)
    mu0 = np.array([pol.mu0 for pol in config.policies], dtype=float)
    eta = np.array([prof.eta for prof in profiles], dtype=float)
    nb = config.batches

    gens = _streams(config.rng_seed, n)
    nstreams = len(gens)
    buf = np.empty((nstreams, BUFFER))
    for k, g in enumerate(gens):
        buf[k] = _fill(g, k % 4, BUFFER)
    ptr = np.zeros(nstreams, dtype=np.int64)

    # slots: 3n arrival streams, n + 1 servers, one batch-boundary slot
    nslots = 4 * n + 2
    t = np.full(nslots, np.inf)
    q = np.zeros(nslots, dtype=np.int64)
    heap = np.arange(nslots, dtype=np.int64)
    pos = np.arange(nslots, dtype=np.int64)
    iv = np.zeros(5, dtype=np.int64)
    iv[4] = nb
    fv = np.zeros(1)

    if config.horizon is not None:
        warm = config.warmup_fraction * config.horizon
        bounds = warm + (config.horizon - warm) * np.arange(nb + 1) / nb
        bounds[0] = warm
        iv[2] = 0
        ibounds = np.zeros(nb + 1, dtype=np.int64)
    else:
        warm_events = int(round(config.warmup_fraction * config.events))
        per = (config.events - warm_events) // nb
        if per < 1 or warm_events < 0:
            raise InvalidConfig("sim.events: too few events for the batch layout")
        ibounds = warm_events + per * np.arange(nb + 1, dtype=np.int64)
        bounds = np.full(nb + 1, np.inf)
        iv[2] = 1
    for slot in range(3 * n):
        o, c = divmod(slot, 3)
        k = slot * 4 + ARRIVAL
        t[slot] = buf[k, 0] / lam[o, c]
        ptr[k] = 1
    for slot in range(nslots):
        q[slot] = slot
    iv[3] = nslots
    if iv[2] == 0:
        t[4 * n + 1] = bounds[0]
    for i in range(nslots - 1, -1, -1):
        _sift_down(heap, pos, t, q, i)
    if iv[2] == 1 and ibounds[0] == 0:
        iv[0] = 1

    srv_busy = np.zeros(n + 1, dtype=np.int64)
    srv_owner = np.zeros(n + 1, dtype=np.int64)
    srv_cls = np.zeros(n + 1, dtype=np.int64)
    srv_gen = np.zeros(n + 1)
    srv_last = np.zeros(n + 1)
    fresh = np.zeros((n, 3))
    age_last = np.zeros((n, 3))
    area = np.zeros((nb + 1, n, 3))
    busy = np.zeros((nb + 1, n + 1, 3))
    delivered = np.zeros((nb + 1, n, 3), dtype=np.int64)
    preempted = np.zeros((nb + 1, n, 3), dtype=np.int64)
    dropped = np.zeros((nb + 1, n, 3), dtype=np.int64)
    bstart = np.zeros(nb + 2)
    bstart[1] = bounds[0] if iv[2] == 0 else 0.0

    kernel_bounds = bounds if iv[2] == 0 else ibounds
    while True:
        code = _run(lam, p, mu0, sysc.es_rate, heap, pos, t, q, iv, fv, kernel_bounds,
                    srv_busy, srv_owner, srv_cls, srv_gen, srv_last,
                    fresh, age_last, area, busy, delivered, preempted, dropped, bstart,
                    buf, ptr)
        if code == 0:
            break
        if code < 0:
            raise RuntimeError(f"simulation invariant violated (code {code})")
        k = code - 1
        buf[k] = _fill(gens[k], k % 4, BUFFER)
        ptr[k] = 0

    end = fv[0]
    bstart[nb + 1] = end
    lengths = np.diff(bstart[1:nb + 2])
    per_batch_aoi = area[1:] / lengths[:, None, None]
    per_batch_busy = busy[1:] / lengths[:, None, None]
    total = lengths.sum()
    aoi = area[1:].sum(axis=0) / total
    busy_frac = busy[1:].sum(axis=0) / total
    tq = stats.t.ppf(0.975, nb - 1)
    hw = lambda x: tq * x.std(axis=0, ddof=1) / np.sqrt(nb)
    local_busy = busy_frac[:n]
    return SimStats(
        aoi=aoi,
        aoi_halfwidth=hw(per_batch_aoi),
        delivered=delivered[1:].sum(axis=0),
        preempted=preempted[1:].sum(axis=0),
        dropped=dropped[1:].sum(axis=0),
        local_busy=local_busy,
        local_busy_halfwidth=hw(per_batch_busy)[:n],
        es_busy=busy_frac[n],
        power=eta * mu0 ** 3 * local_busy.sum(axis=1),
        elapsed=float(total),
        events=int(iv[1]),
    )


@dataclass
class ReplicatedStats:
    runs: list
    mean: SimStats
    stderr: dict = field(default_factory=dict)

    def interval(self, name, level=0.95):
        """Two-sided t-interval across replications for statistic ``name``."""
        r = len(self.runs)
        m = getattr(self.mean, name)
        if r < 2:
            return m, m
        tq = stats.t.ppf(0.5 + level / 2, r - 1)
        return m - tq * self.stderr[name], m + tq * self.stderr[name]


_AVERAGED = ("aoi", "aoi_halfwidth", "local_busy", "local_busy_halfwidth", "es_busy", "power")
_SUMMED = ("delivered", "preempted", "dropped")


def replicate(config: SimConfig, replications: int) -> ReplicatedStats:
    if replications < 1:
        raise InvalidConfig("replications must be >= 1")
    runs = [simulate(replace(config, rng_seed=config.rng_seed + r)) for r in range(replications)]
    if replications == 1:
        return ReplicatedStats(runs, runs[0], {k: np.full_like(np.asarray(getattr(runs[0], k), dtype=float), np.nan)
                                                for k in _AVERAGED})
    mean = {k: np.mean([getattr(s, k) for s in runs], axis=0) for k in _AVERAGED}
    se = {k: np.std([getattr(s, k) for s in runs], axis=0, ddof=1) / np.sqrt(replications) for k in _AVERAGED}
    summed = {k: np.sum([getattr(s, k) for s in runs], axis=0) for k in _SUMMED}
    agg = SimStats(**mean, **summed, elapsed=float(sum(s.elapsed for s in runs)),
                   events=int(sum(s.events for s in runs)))
    return ReplicatedStats(runs, agg, se)


def symmetric_config(system: SystemConfig, policy: Policy, **kw) -> SimConfig:
    return SimConfig(system, (policy,) * system.num_ues, **kw)
