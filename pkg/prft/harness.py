"""
Scenario configuration, robustness checking, message metrics and the suite runner.
"""
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from functools import partial
from typing import Optional

import numpy as np
import pandas as pd
from scipy import stats

from prft import gametheory
from prft.adversary import Agent, Strategy, StrategyKind, build_controller
from prft.core import (ConfigError, InvariantViolation, MessageType, PlayerRole, PrftError, Role, Transaction,
                       canonical_bytes, effective_theta, role_counts)
from prft.crypto_sim import setup
from prft.engine import Replica
from prft.netsim import PartitionSchedule, RunTrace, delay_model, run

logger = logging.getLogger(__name__)

CLAUSES = ('validity', 'agreement', 'ordering', 'liveness', 'censorship')

# Stated complexity of accountable and non-accountable protocols, next to which measured slopes are reported
COMPLEXITY_TABLE = pd.DataFrame(
    [('pBFT', 'O(n^3)', 'O(kappa n^4)', False, 3, 4),
     ('HotStuff', 'O(n^2)', 'O(kappa n^3)', False, 2, 3),
     ('Polygraph', 'O(n^3)', 'O(kappa n^4)', True, 3, 4),
     ('pRFT', 'O(n^3)', 'O(kappa n^4)', True, 3, 4)],
    columns=['protocol', 'messages', 'bytes', 'accountable', 'message_exponent', 'byte_exponent'])

ACCOUNTING_NOTE = ('measured: point-to-point sends per round (broadcast = n - 1 sends); '
                   'stated figures aggregate over reliable-broadcast amplification, a factor n apart')


class SuiteAbort(PrftError):
    """ An invariant broke inside a run; names the run and the event. """

    def __init__(self, scenario, seed, event_index, reason):
        super().__init__(f'{scenario} seed {seed}, event {event_index}: {reason}')
        self.scenario = scenario
        self.seed = seed
        self.event_index = event_index


@dataclass(frozen=True)
class ScenarioConfig:
    """
    One scenario, run once per seed. None-valued fields are resolved by `validate`.

    Player ids: honest players first, then rational, then byzantine.
    """
    name: str = 'scenario'
    n: int = 5
    t0: Optional[int] = None
    t: int = 0
    k: int = 0
    theta: int = 1
    thetas: tuple = ()
    byzantine: Optional[tuple] = None
    rational: Optional[tuple] = None
    byzantine_strategy: str = 'Pi0'
    rational_strategy: str = 'Pi0'
    strategies: tuple = ()
    collusion: Optional[tuple] = None
    partition_a: tuple = ()
    partition_b: tuple = ()
    censored: tuple = ()
    strategy_phases: Optional[tuple] = None
    n_txs: int = 8
    tx_size: int = 250
    block_size: int = 4
    delay_model: str = 'sync'
    net_bound: int = 10
    gst: int = 0
    pre_gst_ceiling: int = 100
    pre_gst_delay: Optional[int] = None
    async_mean: float = 10.0
    partition: tuple = ()
    delta: Optional[int] = None
    rounds: int = 10
    time_limit: Optional[int] = None
    seeds: tuple = tuple(range(20))
    alpha: float = 1.0
    L: float = 10.0
    discount: float = 0.9
    kappa: int = 64
    strict_step5: bool = False
    cr_window: int = 3
    expect_fail: tuple = ()

    # ------------------------------------------------------------------ construction

    @classmethod
    def from_dict(cls, params):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(params) - known)
        if unknown:
            raise ConfigError([f'unknown key {key!r}' for key in unknown])
        return cls(**params).validate()

    def validate(self):
        """ Resolve defaults and check the scenario. Returns the resolved config; raises ConfigError. """
        violations = []
        n = self.n
        if n < 1:
            raise ConfigError([f'n must be positive, got {n}'])
        t0 = -(-n // 4) - 1 if self.t0 is None else self.t0
        if not 0 <= t0 < n:
            violations.append(f't0 must be in [0, n), got {t0}')
        if self.t > t0:
            violations.append('t exceeds t0')
        if self.t < 0 or self.k < 0:
            violations.append('t and k must be non-negative')
        if self.k + self.t >= n:
            violations.append('k + t must be below n')
        byzantine = tuple(range(n - self.t, n)) if self.byzantine is None else tuple(self.byzantine)
        rational = (tuple(range(n - self.t - self.k, n - self.t)) if self.rational is None
                    else tuple(self.rational))
        if len(byzantine) != self.t:
            violations.append(f'{len(byzantine)} byzantine ids for t={self.t}')
        if len(rational) != self.k:
            violations.append(f'{len(rational)} rational ids for k={self.k}')
        if set(byzantine) & set(rational):
            violations.append(f'players both byzantine and rational: {sorted(set(byzantine) & set(rational))}')
        if any(not 0 <= p < n for p in byzantine + rational):
            violations.append('player id out of range')
        if self.theta not in (0, 1, 2, 3):
            violations.append(f'theta must be in 0..3, got {self.theta}')
        for p, theta in self.thetas:
            if p not in rational:
                violations.append(f'theta override for player {p}, who is not rational')
            if theta not in (0, 1, 2, 3):
                violations.append(f'theta of player {p} must be in 0..3, got {theta}')
        if not 0 < self.discount < 1:
            violations.append(f'discount must be in (0, 1), got {self.discount}')
        if self.alpha <= 0 or self.L < 0:
            violations.append('alpha must be positive and L non-negative')
        if self.rounds < 1 or self.block_size < 1 or self.cr_window < 1:
            violations.append('rounds, block_size and cr_window must be positive')
        if self.delay_model not in ('sync', 'psync', 'async'):
            violations.append(f'unknown delay model {self.delay_model!r}')
        unknown_clauses = set(self.expect_fail) - set(CLAUSES)
        if unknown_clauses:
            violations.append(f'unknown robustness clauses {sorted(unknown_clauses)}')
        delta = 4 * self.net_bound if self.delta is None else self.delta
        time_limit = 400 * delta * self.rounds if self.time_limit is None else self.time_limit
        if violations:
            raise ConfigError(violations)

        resolved = replace(self, t0=t0, byzantine=byzantine, rational=rational, delta=delta, time_limit=time_limit)
        try:
            for strategy in resolved.strategy_map().values():
                strategy.validate()
            resolved.partition_schedule()
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError([str(e)])
        return resolved

    # ------------------------------------------------------------------ roles and strategies

    def player_roles(self):
        roles = []
        for p in range(self.n):
            if p in self.byzantine:
                roles.append(PlayerRole(Role.BYZANTINE, 3))
            elif p in self.rational:
                roles.append(PlayerRole(Role.RATIONAL, dict(self.thetas).get(p, self.theta)))
            else:
                roles.append(PlayerRole(Role.HONEST, 0))
        return roles

    def rational_players(self):
        return list(self.rational)

    def effective_theta(self):
        return effective_theta(self.player_roles())

    def _strategy_name(self, p):
        for player, strategy in self.strategies:
            if player == p:
                return strategy
        if p in self.byzantine:
            return self.byzantine_strategy
        if p in self.rational:
            if dict(self.thetas).get(p, self.theta) == 0:
                return 'Pi0'
            return self.rational_strategy
        return 'Pi0'

    def _deviates(self, p):
        strategy = self._strategy_name(p)
        if isinstance(strategy, Strategy):
            return strategy.kind is not StrategyKind.PI0
        return strategy != 'Pi0'

    def strategy_map(self):
        """ player -> Strategy for every player whose strategy is not Pi0 """
        deviating = [p for p in range(self.n) if self._deviates(p)]
        colluders = set(self.collusion if self.collusion is not None else deviating)
        outsiders = [p for p in range(self.n) if p not in colluders]
        half = len(outsiders) // 2
        side_a = self.partition_a or tuple(outsiders[:half])
        side_b = self.partition_b or tuple(outsiders[half:])
        out = {}
        for p in range(self.n):
            strategy = self._strategy_name(p)
            if isinstance(strategy, Strategy):
                if strategy.kind is not StrategyKind.PI0:
                    out[p] = strategy
            elif strategy != 'Pi0':
                out[p] = Strategy.named(strategy, partition_a=side_a, partition_b=side_b,
                                        censored=self.censored, phases=self._phases())
        return out

    def _phases(self):
        if self.strategy_phases is None:
            return None
        return frozenset(MessageType(p) for p in self.strategy_phases)

    def with_strategy(self, player, strategy):
        """ Same scenario with one player's strategy replaced. """
        kept = tuple((p, s) for p, s in self.strategies if p != player)
        return replace(self, strategies=kept + ((player, strategy),))

    def colluders(self):
        if self.collusion is not None:
            return tuple(self.collusion)
        return tuple(p for p in range(self.n) if self._deviates(p))

    # ------------------------------------------------------------------ run inputs

    def transactions(self):
        return [Transaction(f'tx-{i}', self.tx_size, censored=f'tx-{i}' in self.censored) for i in range(self.n_txs)]

    def delays(self):
        return delay_model(self.delay_model, net_bound=self.net_bound, gst=self.gst,
                           pre_gst_ceiling=self.pre_gst_ceiling, async_mean=self.async_mean,
                           pre_gst_delay=self.pre_gst_delay)

    def partition_schedule(self):
        return PartitionSchedule(tuple((start, end, tuple(tuple(g) for g in groups))
                                       for start, end, groups in self.partition))

    def utility_params(self):
        return gametheory.UtilityParams(alpha=self.alpha, L=self.L, delta=self.discount)

    def build_agents(self, seed):
        registry, keys = setup(self.n, self.kappa, seed)
        strategies = self.strategy_map()
        controller = build_controller(strategies, members=self.colluders())
        controller.keys = {p: keys[p] for p in controller.members}
        txs = self.transactions()
        agents = [Agent(Replica(p, self.n, self.t0, keys[p], registry, self.delta, block_size=self.block_size,
                                strict_step5=self.strict_step5, collateral=self.L, mempool=txs), controller)
                  for p in range(self.n)]
        return agents, registry

    def to_record(self):
        rec = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == 'strategies':
                value = [[p, s if isinstance(s, str) else _strategy_record(s)] for p, s in value]
            elif isinstance(value, tuple):
                value = json.loads(json.dumps(value))
            rec[f.name] = value
        return rec

    def config_hash(self):
        return hashlib.sha256(canonical_bytes(self.to_record())).hexdigest()[:16]


def _strategy_record(s):
    return {'kind': s.kind.value, 'phases': sorted(p.value for p in s.phases),
            'a': sorted(s.partition_a), 'b': sorted(s.partition_b), 'Z': sorted(s.censored)}


# ------------------------------------------------------------------ robustness

@dataclass
class RobustnessReport:
    validity: bool = True
    agreement: bool = True
    ordering: bool = True
    liveness: bool = True
    censorship: bool = True
    provisional: frozenset = frozenset()
    details: list = field(default_factory=list)

    @property
    def passed(self):
        return all(getattr(self, c) for c in CLAUSES)

    def failed(self):
        return [c for c in CLAUSES if not getattr(self, c)]

    def to_record(self):
        rec = {c: getattr(self, c) for c in CLAUSES}
        rec['provisional'] = sorted(self.provisional)
        return rec


def check_robustness(trace: RunTrace, c=0, cr_window=None):
    """
    Evaluate validity, agreement, c-strict ordering, eventual liveness and censorship
    resistance from the trace alone.

    Args:
        trace (RunTrace)
        c (int): number of trailing blocks dropped before comparing chains
        cr_window (int): censorship and progress horizon, in leader rotations

    Returns:
        RobustnessReport
    """
    n = trace.meta['n']
    rounds = trace.meta['rounds']
    cr_window = trace.meta.get('cr_window', 3) if cr_window is None else cr_window
    horizon = n * cr_window
    honest = trace.honest
    chains = {p: events for p, events in trace.final_chains().items() if p in honest}
    report = RobustnessReport()
    provisional = set()

    by_height = {}
    for p, events in chains.items():
        for e in events:
            by_height.setdefault(e['height'], {})[p] = e['digest']
    for height, digests in sorted(by_height.items()):
        if len(set(digests.values())) > 1:
            report.agreement = False
            report.details.append({'clause': 'agreement', 'height': height, 'digests': digests})

    digests = {p: [e['digest'] for e in events] for p, events in chains.items()}
    players = sorted(digests)
    for i, p in enumerate(players):
        for q in players[i + 1:]:
            a = digests[p][:max(len(digests[p]) - c, 0)]
            b = digests[q][:max(len(digests[q]) - c, 0)]
            shorter = min(len(a), len(b))
            if a[:shorter] != b[:shorter]:
                report.ordering = False
                report.details.append({'clause': 'ordering', 'players': [p, q]})

    # blocks of rounds past the run length may still be in flight when the run stops
    finalized = {e['digest'] for events in chains.values() for e in events if e['block_round'] < rounds}
    for p, chain in digests.items():
        missing = finalized - set(chain)
        if missing:
            report.liveness = False
            report.details.append({'clause': 'liveness', 'player': p, 'missing': sorted(missing)})
    block_rounds = sorted({e['block_round'] for events in chains.values() for e in events})
    if rounds >= horizon:
        for start in range(0, rounds - horizon + 1):
            if not any(start <= r < start + horizon for r in block_rounds):
                report.liveness = False
                report.details.append({'clause': 'liveness', 'no_block_from_round': start})
                break
    elif not block_rounds:
        provisional.add('liveness')

    proposals = {}
    for e in trace.of_kind('send'):
        if e['variant'] == 'Propose' and e['actor'] in honest and e['actor'] == e['round'] % n:
            proposals[e['round']] = e['digest']
    for events in chains.values():
        for e in events:
            expected = proposals.get(e['block_round'])
            if expected is not None and e['digest'] != expected:
                report.validity = False
                report.details.append({'clause': 'validity', 'round': e['block_round'], 'digest': e['digest']})

    included = {}
    for events in chains.values():
        for e in events:
            for tx in e['txs']:
                included[tx] = min(included.get(tx, e['block_round']), e['block_round'])
    for tx in trace.meta.get('txs', []):
        seen = included.get(tx[0])
        if seen is None or seen >= horizon:
            if seen is None and rounds < horizon:
                provisional.add('censorship')
                continue
            report.censorship = False
            report.details.append({'clause': 'censorship', 'tx': tx[0]})

    if trace.truncated:
        provisional |= {'liveness', 'censorship'}
    report.provisional = frozenset(provisional)
    return report


# ------------------------------------------------------------------ metrics

@dataclass
class MessageMetrics:
    """ Per-round sends and bytes of one run, over the rounds every honest replica completed. """
    per_round: pd.DataFrame
    total_sends: int
    total_bytes: int

    @classmethod
    def from_trace(cls, trace):
        sends = pd.DataFrame(trace.of_kind('send'), columns=['round', 'variant', 'count', 'bytes'])
        sends = sends[sends['round'] < trace.meta['rounds']]
        per_round = sends.groupby('round')[['count', 'bytes']].sum().rename(columns={'count': 'sends'})
        return cls(per_round, int(sends['count'].sum()), int(sends['bytes'].sum()))

    @property
    def mean_sends(self):
        return float(self.per_round['sends'].mean()) if len(self.per_round) else 0.0

    @property
    def mean_bytes(self):
        return float(self.per_round['bytes'].mean()) if len(self.per_round) else 0.0


def phase_table(trace):
    """ Table-4 analogue: messages and bytes per message variant, per round. """
    sends = pd.DataFrame(trace.of_kind('send'), columns=['round', 'variant', 'count', 'bytes'])
    sends = sends[sends['round'] < trace.meta['rounds']]
    table = sends.groupby('variant')[['count', 'bytes']].sum() / max(trace.meta['rounds'], 1)
    return table.rename(columns={'count': 'messages'})


def loglog_slope(ns, values):
    """
    Slope of log(values) against log(ns).

    Returns:
        slope, standard error
    """
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    slope, _ = np.polyfit(x, y, 1)
    fit = stats.linregress(x, y)
    return float(slope), float(fit.stderr)


# ------------------------------------------------------------------ suite

def run_one(config: ScenarioConfig, seed, out_dir=None):
    """
    Run one (scenario, seed) and reduce it to a flat record.

    Raises:
        SuiteAbort: an invariant broke during the run
    """
    try:
        trace = run(config, seed)
    except InvariantViolation as e:
        raise SuiteAbort(config.name, seed, e.event_index, str(e)) from e
    report = check_robustness(trace, cr_window=config.cr_window)
    metrics = MessageMetrics.from_trace(trace)
    honest = trace.honest
    stashed = trace.stashed()
    wrongly = sorted({g for p in honest for g in stashed[p] if g in honest})
    params = config.utility_params()
    utilities = {p: gametheory.discounted_utility(p, trace, params) for p in config.rational_players()}
    state = gametheory.classify_state(trace)
    n_honest, n_byzantine, n_rational = role_counts(config.player_roles())
    heights = [len(v) for p, v in trace.final_chains().items() if p in honest]
    record = {'scenario': config.name, 'seed': seed, 'config_hash': config.config_hash(),
              'n': config.n, 't': config.t, 'k': config.k, 'theta': config.effective_theta(),
              'players': {'honest': n_honest, 'byzantine': n_byzantine, 'rational': n_rational},
              'trace_hash': trace.trace_hash(),
              'truncated': trace.truncated, 'blocks': min(heights) if heights else 0,
              'sends_per_round': metrics.mean_sends, 'bytes_per_round': metrics.mean_bytes,
              'stashed': sorted({g for p in honest for g in stashed[p]}), 'false_accusations': wrongly,
              'state': state.label.value, 'rational_utility': utilities,
              'unexpected_failures': [c for c in report.failed() if c not in config.expect_fail]}
    record.update(report.to_record())
    if out_dir is not None:
        path = os.path.join(out_dir, 'traces')
        os.makedirs(path, exist_ok=True)
        with open(os.path.join(path, f'{config.name}-{seed}.jsonl'), 'w') as f:
            f.write(trace.to_jsonl())
    logger.info('%s seed %d: %d blocks, state %s, failed %s', config.name, seed, record['blocks'],
                record['state'], report.failed())
    return record


def run_pair(pair, out_dir=None):
    config, seed = pair
    return run_one(config, seed, out_dir=out_dir)


@dataclass
class SuiteReport:
    records: pd.DataFrame

    @property
    def passed(self):
        if self.records.empty:
            return True
        unexpected = self.records['unexpected_failures'].map(len) > 0
        accused = self.records['false_accusations'].map(len) > 0
        return not bool((unexpected | accused).any())


def run_suite(configs, out_dir=None, max_workers=1, verbose=False):
    """
    Run every scenario on every one of its seeds.

    Args:
        configs (list): ScenarioConfig objects
        out_dir (str): where traces are written; None keeps them in memory only
        max_workers (int): worker processes; 1 runs inline
        verbose (bool): log every replica step while the suite runs

    Returns:
        SuiteReport, records ordered by (config order, seed)
    """
    package_logger = logging.getLogger('prft')
    level = package_logger.level
    if verbose:
        package_logger.setLevel(logging.DEBUG)
    start = time.time()
    pairs = [(config, seed) for config in configs for seed in config.seeds]
    try:
        if max_workers == 1 or len(pairs) < 2:
            records = [run_pair(pair, out_dir=out_dir) for pair in pairs]
        else:
            with ProcessPoolExecutor(max_workers=max_workers) as executor:
                records = list(executor.map(partial(run_pair, out_dir=out_dir), pairs))
    finally:
        package_logger.setLevel(level)
    logger.info('suite of %d runs done in %0.1f s', len(pairs), time.time() - start)
    return SuiteReport(pd.DataFrame(records))


def complexity_sweep(ns=(5, 9, 13, 17), seeds=(0,), rounds=4, max_workers=1):
    """
    Honest synchronous runs with an empty mempool, one scenario per n.

    Returns:
        DataFrame of per-n mean sends and bytes per round, and a DataFrame of the fitted slopes
    """
    configs = [ScenarioConfig(name=f'complexity-n{n}', n=n, n_txs=0, rounds=rounds, seeds=tuple(seeds)).validate()
               for n in ns]
    records = run_suite(configs, max_workers=max_workers).records
    per_n = records.groupby('n')[['sends_per_round', 'bytes_per_round']].mean().reset_index()
    slopes = []
    for metric in ('sends_per_round', 'bytes_per_round'):
        slope, stderr = loglog_slope(per_n['n'], per_n[metric])
        slopes.append({'metric': metric, 'slope': slope, 'stderr': stderr})
    return per_n, pd.DataFrame(slopes)


def emit_report(bundle: SuiteReport, out_dir, fmt='records', slopes=None):
    """
    Write the suite records.

    Args:
        bundle (SuiteReport)
        out_dir (str): output directory, created if needed
        fmt (str): 'records' (line-delimited JSON) or 'table' (fixed-width text)
        slopes (DataFrame): fitted complexity slopes to print next to COMPLEXITY_TABLE

    Returns:
        path of the written file
    """
    os.makedirs(out_dir, exist_ok=True)
    records = bundle.records
    if fmt == 'records':
        path = os.path.join(out_dir, 'report.jsonl')
        rows = []
        for rec in records.to_dict(orient='records'):
            for metric, value in rec.items():
                if metric in ('scenario', 'seed', 'config_hash'):
                    continue
                rows.append({'scenario': rec['scenario'], 'seed': rec['seed'], 'config_hash': rec['config_hash'],
                             'metric': metric, 'value': value})
        pd.DataFrame(rows, columns=['scenario', 'seed', 'config_hash', 'metric', 'value']).to_json(
            path, orient='records', lines=True)
        return path
    if fmt != 'table':
        raise ValueError(f'unknown report format {fmt!r}')
    path = os.path.join(out_dir, 'report.txt')
    parts = []
    if not records.empty:
        summary = records.groupby('scenario', sort=False).agg(
            runs=('seed', 'count'), blocks=('blocks', 'mean'), sends_per_round=('sends_per_round', 'mean'),
            bytes_per_round=('bytes_per_round', 'mean'),
            **{c: (c, 'mean') for c in CLAUSES})
        parts.append(summary.to_string())
        utilities = records[['scenario', 'seed', 'state', 'rational_utility']]
        parts.append(utilities.to_string(index=False))
    parts.append(COMPLEXITY_TABLE.to_string(index=False))
    if slopes is not None:
        parts.append(slopes.to_string(index=False))
    parts.append(ACCOUNTING_NOTE)
    with open(path, 'w') as f:
        f.write('\n\n'.join(parts) + '\n')
    return path


def load_report(path):
    """ Rebuild a SuiteReport from a records file written by emit_report. """
    rows = pd.read_json(path, orient='records', lines=True, dtype=False, convert_dates=False)
    if rows.empty:
        return SuiteReport(pd.DataFrame())
    wide = rows.set_index(['scenario', 'seed', 'config_hash', 'metric'])['value'].unstack('metric').reset_index()
    wide.columns.name = None
    wide = wide.infer_objects()
    return SuiteReport(wide)


def output_dir():
    return os.environ.get('PRFT_OUTPUT_DIR', './prft_output')
