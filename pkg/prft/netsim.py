"""
Deterministic discrete-event network: reliable authenticated point-to-point channels,
seeded delay models, partition schedules, and the run loop that drives the agents.
"""
import hashlib
import heapq
import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from prft.core import BOTTOM, InvariantViolation, MessageType, Role, message_size, verify_message

logger = logging.getLogger(__name__)

DELIVER = 0
TIMER = 1


@dataclass(frozen=True)
class Synchronous:
    """ Delays uniform in [1, bound]. """
    bound: int = 10

    def sample(self, rng, now):
        return int(rng.integers(1, self.bound + 1))


@dataclass(frozen=True)
class PartiallySynchronous:
    """
    Before gst, delays are drawn up to pre_gst_ceiling (or fixed to pre_gst_delay);
    from gst on they are uniform in [1, post_bound].
    """
    gst: int = 0
    post_bound: int = 10
    pre_gst_ceiling: int = 100
    pre_gst_delay: Optional[int] = None

    def sample(self, rng, now):
        if now < self.gst:
            if self.pre_gst_delay is not None:
                return self.pre_gst_delay
            return int(rng.integers(1, self.pre_gst_ceiling + 1))
        return int(rng.integers(1, self.post_bound + 1))


@dataclass(frozen=True)
class Asynchronous:
    """ Finite geometric delays with the given mean; no bound holds. """
    mean: float = 10.0

    def sample(self, rng, now):
        return int(rng.geometric(1.0 / max(self.mean, 1.0)))


def delay_model(kind, net_bound=10, gst=0, pre_gst_ceiling=100, async_mean=10.0, pre_gst_delay=None):
    """
    Build a delay model from its config name.

    Args:
        kind (str): 'sync', 'psync' or 'async'
    """
    if kind == 'sync':
        return Synchronous(net_bound)
    if kind == 'psync':
        return PartiallySynchronous(gst, net_bound, pre_gst_ceiling, pre_gst_delay)
    if kind == 'async':
        return Asynchronous(async_mean)
    raise ValueError(f'unknown delay model {kind!r}')


@dataclass(frozen=True)
class PartitionSchedule:
    """ intervals: (t_start, t_end, groups); players in no group are unrestricted. """
    intervals: tuple = ()

    def __post_init__(self):
        for t_start, t_end, groups in self.intervals:
            if t_end < t_start:
                raise ValueError(f'partition interval ends before it starts: {t_start}:{t_end}')
            seen = set()
            for g in groups:
                if seen & set(g):
                    raise ValueError(f'partition groups overlap on {sorted(seen & set(g))}')
                seen |= set(g)

    def adjust(self, src, dst, now, deliver_at):
        for t_start, t_end, groups in self.intervals:
            if not t_start <= now < t_end:
                continue
            g_src = next((i for i, g in enumerate(groups) if src in g), None)
            g_dst = next((i for i, g in enumerate(groups) if dst in g), None)
            if g_src is not None and g_dst is not None and g_src != g_dst:
                deliver_at = max(t_end, deliver_at)
        return deliver_at


class EventQueue:
    """ Time-ordered events; ties broken by insertion sequence. """

    def __init__(self):
        self._heap = []
        self._seq = itertools.count()

    def __len__(self):
        return len(self._heap)

    def push(self, time, kind, target, payload):
        heapq.heappush(self._heap, (time, next(self._seq), kind, target, payload))

    def pop(self):
        time, _, kind, target, payload = heapq.heappop(self._heap)
        return time, kind, target, payload


@dataclass
class RunTrace:
    """ Event log of one run. Analysis reads nothing else. """
    meta: dict
    events: list = field(default_factory=list)
    truncated: bool = False

    def add(self, time, rec):
        rec = dict(rec)
        rec['i'] = len(self.events)
        rec['t'] = time
        self.events.append(rec)
        return rec['i']

    def to_jsonl(self):
        lines = [json.dumps({'kind': 'meta', **self.meta}, sort_keys=True)]
        lines += [json.dumps(e, sort_keys=True) for e in self.events]
        lines.append(json.dumps({'kind': 'end', 'truncated': self.truncated}, sort_keys=True))
        return '\n'.join(lines) + '\n'

    @classmethod
    def from_jsonl(cls, text):
        records = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not records or records[0].get('kind') != 'meta':
            raise ValueError('trace does not start with a meta record')
        meta = {k: v for k, v in records[0].items() if k != 'kind'}
        truncated = False
        events = []
        for rec in records[1:]:
            if rec.get('kind') == 'end':
                truncated = bool(rec.get('truncated'))
            else:
                events.append(rec)
        return cls(meta, events, truncated)

    def trace_hash(self):
        return hashlib.sha256(self.to_jsonl().encode('utf-8')).hexdigest()

    def of_kind(self, *kinds):
        return [e for e in self.events if e['kind'] in kinds]

    @property
    def honest(self):
        return [p for p, role in enumerate(self.meta['roles']) if role == Role.HONEST.value]

    def final_chains(self):
        """ player -> list of finalize events, in ledger order """
        chains = {p: [] for p in range(self.meta['n'])}
        for e in self.of_kind('finalize'):
            chains[e['actor']].append(e)
        return chains

    def stashed(self):
        """ player -> set of players it stashed """
        out = {p: set() for p in range(self.meta['n'])}
        for e in self.of_kind('stash'):
            out[e['actor']].update(e['guilty'])
        return out


class Network:
    """
    Reliable point-to-point channels. Every send is checked for forgery and recorded.

    Attributes:
        n (int): number of players
        delays: delay model with a sample(rng, now) method
        partitions (PartitionSchedule)
        rng (np.random.Generator): the only randomness of a run
        kappa (int): nominal signature size for byte accounting
        quorum (int): n - t0, the certificate size protocol-following senders must reach
        checked (set): players held to the protocol on every send
    """

    def __init__(self, n, delays, partitions, rng, registry, queue, trace, kappa=64, quorum=None, checked=()):
        self.n = n
        self.delays = delays
        self.partitions = partitions
        self.rng = rng
        self.registry = registry
        self.queue = queue
        self.trace = trace
        self.kappa = kappa
        self.quorum = n if quorum is None else quorum
        self.checked = frozenset(checked)
        self.broadcasts = set()
        self.sends = 0
        self.bytes = 0

    def _check_protocol(self, actor, msg):
        """ Senders in `checked` carry full certificates and send each variant once per round. """
        here = len(self.trace.events)
        certified = msg.variant in (MessageType.COMMIT, MessageType.REVEAL, MessageType.COMMIT_VIEW)
        if certified and msg.digest != BOTTOM and len(msg.certificate) < self.quorum:
            raise InvariantViolation(f'player {actor} sent a {msg.variant.value} certified by '
                                     f'{len(msg.certificate)} < {self.quorum} messages', here)
        key = (actor, msg.round, msg.variant)
        if key in self.broadcasts:
            raise InvariantViolation(f'player {actor} sent {msg.variant.value} twice in round {msg.round}', here)
        self.broadcasts.add(key)

    def send(self, actor, outbound, now):
        """ Schedule one delivery per recipient; the sender gets its own broadcast immediately. """
        msg = outbound.msg
        if not outbound.relay and msg.sender != actor:
            raise InvariantViolation(f'player {actor} sent a message signed as {msg.sender}', len(self.trace.events))
        if not verify_message(self.registry, msg):
            raise InvariantViolation(f'player {actor} sent an unverifiable {msg.variant.value}',
                                     len(self.trace.events))
        if actor in self.checked and not outbound.relay:
            self._check_protocol(actor, msg)
        if outbound.recipients is None:
            recipients = [p for p in range(self.n) if p != actor]
            self.queue.push(now, DELIVER, actor, msg)
        else:
            recipients = [p for p in outbound.recipients if p != actor]
            if actor in outbound.recipients and not outbound.relay:
                self.queue.push(now, DELIVER, actor, msg)
        size = message_size(msg, self.kappa)
        self.sends += len(recipients)
        self.bytes += size * len(recipients)
        self.trace.add(now, {'kind': 'send', 'actor': actor, 'round': msg.round, 'variant': msg.variant.value,
                             'digest': msg.digest.hex() if msg.digest is not None else None,
                             'count': len(recipients), 'bytes': size * len(recipients),
                             'to': None if outbound.recipients is None else recipients})
        for p in recipients:
            deliver_at = now + self.delays.sample(self.rng, now)
            deliver_at = self.partitions.adjust(actor, p, now, deliver_at)
            self.queue.push(deliver_at, DELIVER, p, msg)


def run(scenario, seed):
    """
    Drive every agent of a scenario until all honest replicas pass the last round,
    or the time limit cuts the run short.

    Args:
        scenario: a ScenarioConfig
        seed (int): seed of every random choice in the run

    Returns:
        RunTrace
    """
    n = scenario.n
    rng = np.random.default_rng([seed, n])
    trace = RunTrace(meta={'scenario': scenario.name, 'seed': seed, 'config_hash': scenario.config_hash(),
                           'n': n, 't0': scenario.t0, 'roles': [r.role.value for r in scenario.player_roles()],
                           'thetas': [r.theta for r in scenario.player_roles()],
                           'rounds': scenario.rounds, 'cr_window': scenario.cr_window,
                           'gst': scenario.gst if scenario.delay_model == 'psync' else 0,
                           'delta': scenario.delta, 'kappa': scenario.kappa,
                           'txs': [tx.to_record() for tx in scenario.transactions()]})
    queue = EventQueue()
    agents, registry = scenario.build_agents(seed)
    honest = [p for p, r in enumerate(scenario.player_roles()) if r.role is Role.HONEST]
    deviating = scenario.strategy_map()
    checked = [p for p in honest if p not in deviating]
    net = Network(n, scenario.delays(), scenario.partition_schedule(), rng, registry, queue, trace,
                  kappa=scenario.kappa, quorum=n - scenario.t0, checked=checked)
    honest = honest or list(range(n))
    armed = {}

    def settle(p, outbound, now):
        agent = agents[p]
        for ev in agent.drain_events():
            trace.add(now, ev)
        for o in outbound:
            net.send(p, o, now)
        deadline = agent.state.timer_deadline
        if deadline is not None and armed.get(p) != deadline:
            armed[p] = deadline
            queue.push(deadline, TIMER, p, deadline)

    for p in range(n):
        settle(p, agents[p].start_round(0), 0)

    while queue:
        now, kind, target, payload = queue.pop()
        if now > scenario.time_limit:
            trace.truncated = True
            break
        agent = agents[target]
        if kind == DELIVER:
            trace.add(now, {'kind': 'deliver', 'actor': target, 'from': payload.sender,
                            'round': payload.round, 'variant': payload.variant.value})
            out = agent.receive(payload, now)
        else:
            if agent.state.timer_deadline != payload:
                continue
            out = agent.on_timeout(now)
        settle(target, out, now)
        if all(agents[p].state.round >= scenario.rounds for p in honest):
            break
    else:
        trace.truncated = True

    trace.meta['sends'] = net.sends
    trace.meta['bytes'] = net.bytes
    logger.debug('%s seed %d: %d events, %d sends, truncated=%s', scenario.name, seed, len(trace.events),
                 net.sends, trace.truncated)
    return trace
