import os

import numpy as np
import pandas as pd
import pytest

from prft import harness
from prft.__main__ import main
from prft.adversary import StrategyKind
from prft.config import load_config, load_suite, parse_config
from prft.core import ConfigError, MessageType
from prft.harness import ScenarioConfig, check_robustness, loglog_slope
from prft.netsim import RunTrace, run


# ------------------------------------------------------------------ configuration

def test_validate_resolves_defaults():
    config = ScenarioConfig(n=10, t=2, k=1).validate()
    assert config.t0 == 2
    assert config.byzantine == (8, 9)
    assert config.rational == (7,)
    assert config.delta == 40
    assert config.time_limit == 400 * 40 * config.rounds
    roles = [r.role.value for r in config.player_roles()]
    assert roles.count('honest') == 7


@pytest.mark.parametrize('params, message', [
    ({'n': 10, 't0': 2, 't': 3}, 't exceeds t0'),
    ({'n': 5, 'theta': 7}, 'theta'),
    ({'n': 5, 'discount': 1.0}, 'discount'),
    ({'n': 5, 'delay_model': 'lossy'}, 'delay model'),
    ({'n': 5, 'expect_fail': ('safety',)}, 'clauses'),
])
def test_validate_rejects(params, message):
    with pytest.raises(ConfigError) as err:
        ScenarioConfig(**params).validate()
    assert any(message in v for v in err.value.violations)


def test_unknown_field():
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({'n': 5, 'speed': 3})


def test_default_double_sign_partition():
    config = ScenarioConfig(n=10, t=2, byzantine_strategy='PiDS').validate()
    strategies = config.strategy_map()
    assert set(strategies) == {8, 9}
    ds = strategies[8]
    assert ds.kind is StrategyKind.PI_DS
    assert ds.partition_a == frozenset(range(4))
    assert ds.partition_b == frozenset(range(4, 8))
    assert config.colluders() == (8, 9)


def test_strategy_phases_and_overrides():
    config = ScenarioConfig(n=9, k=2, rational_strategy='PiAbs', strategy_phases=('Vote',),
                            strategies=((0, 'ViewChangeStorm'),)).validate()
    strategies = config.strategy_map()
    assert strategies[7].phases == frozenset({MessageType.VOTE})
    assert strategies[0].kind is StrategyKind.VIEW_CHANGE_STORM


def test_per_player_theta():
    config = ScenarioConfig(n=10, k=3, theta=1, rational_strategy='PiAbs', thetas=((7, 0), (9, 3))).validate()
    assert config.rational == (7, 8, 9)
    assert [r.theta for r in config.player_roles()][7:] == [0, 1, 3]
    assert config.effective_theta() == 3
    # a theta-0 rational player follows the protocol
    assert set(config.strategy_map()) == {8, 9}
    with pytest.raises(ConfigError):
        ScenarioConfig(n=10, k=3, thetas=((2, 3),)).validate()
    assert parse_config('theta.7 = 0\ntheta.9 = 3\n')['thetas'] == ((7, 0), (9, 3))


def test_config_hash_tracks_content():
    a = ScenarioConfig(n=5).validate()
    assert a.config_hash() == ScenarioConfig(n=5).validate().config_hash()
    assert a.config_hash() != ScenarioConfig(n=6).validate().config_hash()


def test_parse_config():
    params = parse_config("""
        # a comment
        name = demo
        n = 10
        seeds = 0..2, 7
        censored = tx-0, tx-3
        strict_step5 = yes
        partition = 0:100 | 0,1 | 2,3
        strategy.4 = PiAbs
    """)
    assert params['seeds'] == (0, 1, 2, 7)
    assert params['censored'] == ('tx-0', 'tx-3')
    assert params['strict_step5'] is True
    assert params['partition'] == ((0, 100, ((0, 1), (2, 3))),)
    assert params['strategies'] == ((4, 'PiAbs'),)


def test_parse_config_lists_every_bad_line():
    with pytest.raises(ConfigError) as err:
        parse_config('n = ten\ncolour = red\njust words\n', source='bad.cfg')
    assert len(err.value.violations) == 3
    assert err.value.violations[0].startswith('bad.cfg:1')


def test_load_suite(tmp_path):
    (tmp_path / 'b_second.cfg').write_text('n = 5\nrounds = 2\n')
    (tmp_path / 'a_first.cfg').write_text('n = 9\nt = 2\nbyzantine_strategy = PiAbs\n')
    configs = load_suite(tmp_path)
    assert [c.name for c in configs] == ['a_first', 'b_second']
    assert load_config(tmp_path / 'b_second.cfg').rounds == 2


def test_shipped_configs_load():
    root = os.path.join(os.path.dirname(__file__), os.pardir, 'configs')
    configs = load_suite(root)
    assert 'forced_fork' in [c.name for c in configs]


# ------------------------------------------------------------------ robustness on hand-built traces

def _trace(chains, rounds=4, txs=(('tx-0', 250, False),), n=4, cr_window=1, truncated=False):
    """ chains: player -> [(digest, block_round, txs)]; leader r % n proposes the first digest seen for r. """
    meta = {'n': n, 'rounds': rounds, 'cr_window': cr_window, 'roles': ['honest'] * n, 'thetas': [0] * n,
            'txs': [list(tx) for tx in txs]}
    events = []
    proposed = {}
    for p, chain in chains.items():
        for height, (digest, block_round, block_txs) in enumerate(chain, start=1):
            proposed.setdefault(block_round, digest)
            events.append({'kind': 'finalize', 'actor': p, 'round': block_round, 'digest': digest,
                           'height': height, 'block_round': block_round, 'txs': list(block_txs)})
    for r, digest in sorted(proposed.items()):
        events.append({'kind': 'send', 'actor': r % n, 'round': r, 'variant': 'Propose', 'digest': digest,
                       'count': n - 1, 'bytes': 100 * (n - 1), 'to': None})
    return RunTrace(meta, events, truncated)


GOOD = [('d0', 0, ['tx-0']), ('d1', 1, []), ('d2', 2, []), ('d3', 3, [])]


def test_clean_trace_passes():
    report = check_robustness(_trace({p: GOOD for p in range(4)}))
    assert report.passed
    assert report.provisional == frozenset()


def test_fork_breaks_agreement_and_ordering():
    forked = GOOD[:1] + [('x1', 1, [])] + GOOD[2:]
    report = check_robustness(_trace({0: GOOD, 1: GOOD, 2: GOOD, 3: forked}))
    assert not report.agreement
    assert not report.ordering
    assert {'agreement', 'ordering'} <= set(report.failed())


def test_ordering_ignores_the_last_c_blocks():
    tail = GOOD[:3] + [('x3', 3, [])]
    chains = {0: GOOD, 1: GOOD, 2: GOOD, 3: tail}
    assert not check_robustness(_trace(chains), c=0).ordering
    report = check_robustness(_trace(chains), c=1)
    assert report.ordering
    assert not report.agreement


def test_missing_block_breaks_liveness():
    report = check_robustness(_trace({0: GOOD, 1: GOOD, 2: GOOD, 3: GOOD[:3]}))
    assert not report.liveness
    assert report.ordering


def test_progress_gap_breaks_liveness():
    chains = {p: GOOD[:2] for p in range(4)}
    assert not check_robustness(_trace(chains, rounds=8)).liveness


def test_block_other_than_the_honest_proposal_breaks_validity():
    trace = _trace({p: GOOD for p in range(4)})
    for e in trace.events:
        if e['kind'] == 'send' and e['round'] == 2:
            e['digest'] = 'other'
    assert not check_robustness(trace).validity


def test_censorship():
    txs = (('tx-0', 250, False), ('tx-9', 250, True))
    assert not check_robustness(_trace({p: GOOD for p in range(4)}, txs=txs)).censorship
    short = _trace({p: GOOD[:2] for p in range(4)}, rounds=2, txs=txs)
    report = check_robustness(short)
    assert report.censorship
    assert 'censorship' in report.provisional


def test_truncated_run_is_provisional():
    report = check_robustness(_trace({p: GOOD for p in range(4)}, truncated=True))
    assert {'liveness', 'censorship'} <= report.provisional


# ------------------------------------------------------------------ metrics and reports

def test_loglog_slope():
    ns = np.array([5, 9, 13, 17])
    slope, stderr = loglog_slope(ns, 3.0 * ns ** 2)
    assert slope == pytest.approx(2.0)
    assert stderr == pytest.approx(0.0, abs=1e-9)


def test_run_one_record():
    config = ScenarioConfig(name='small', n=5, rounds=3, seeds=(0,)).validate()
    record = harness.run_one(config, 0)
    assert record['blocks'] >= 3
    assert record['state'] == 'HonestExec'
    assert record['theta'] == 0
    assert record['players'] == {'honest': 5, 'byzantine': 0, 'rational': 0}
    assert record['unexpected_failures'] == []
    assert record['false_accusations'] == []
    assert record['sends_per_round'] > 0


def test_metrics_and_phase_table():
    config = ScenarioConfig(name='metrics', n=5, rounds=2, n_txs=0, seeds=(0,)).validate()
    trace = run(config, 0)
    metrics = harness.MessageMetrics.from_trace(trace)
    assert metrics.mean_sends > 0
    assert metrics.mean_bytes > metrics.mean_sends
    table = harness.phase_table(trace)
    assert {'Propose', 'Vote', 'Commit', 'Reveal', 'Final'} <= set(table.index)


def test_report_round_trip(tmp_path):
    configs = [ScenarioConfig(name='tiny', n=5, rounds=2, seeds=(0, 1)).validate()]
    bundle = harness.run_suite(configs, out_dir=str(tmp_path))
    assert bundle.passed
    assert len(bundle.records) == 2
    assert (tmp_path / 'traces' / 'tiny-0.jsonl').exists()
    path = harness.emit_report(bundle, str(tmp_path))
    loaded = harness.load_report(path)
    assert loaded.passed
    assert sorted(loaded.records['seed']) == [0, 1]
    table = harness.emit_report(loaded, str(tmp_path), fmt='table')
    assert 'pRFT' in open(table).read()
    with pytest.raises(ValueError):
        harness.emit_report(bundle, str(tmp_path), fmt='xml')


def test_expected_failures_do_not_fail_the_suite():
    clean = {'unexpected_failures': [], 'false_accusations': []}
    assert harness.SuiteReport(pd.DataFrame([clean, clean])).passed
    assert not harness.SuiteReport(pd.DataFrame([clean, {**clean, 'unexpected_failures': ['agreement']}])).passed
    assert not harness.SuiteReport(pd.DataFrame([{**clean, 'false_accusations': [2]}])).passed


# ------------------------------------------------------------------ command line

def test_cli_run_and_check(tmp_path, monkeypatch):
    monkeypatch.setenv('PRFT_OUTPUT_DIR', str(tmp_path / 'out'))
    cfg = tmp_path / 'cli.cfg'
    cfg.write_text('n = 5\nrounds = 2\nseeds = 0\n')
    assert main(['run', str(cfg)]) == 0
    assert (tmp_path / 'out' / 'report.jsonl').exists()
    assert main(['check', str(tmp_path / 'out' / 'traces' / 'cli-0.jsonl')]) == 0
    assert main(['report', str(tmp_path / 'out' / 'report.jsonl')]) == 0


def test_cli_config_error(tmp_path, monkeypatch):
    monkeypatch.setenv('PRFT_OUTPUT_DIR', str(tmp_path / 'out'))
    cfg = tmp_path / 'bad.cfg'
    cfg.write_text('n = 10\nt0 = 2\nt = 3\n')
    assert main(['run', str(cfg)]) == 2
