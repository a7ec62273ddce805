"""
Economic layer: system-state classification of a run, the payoff table, discounted
utilities, the quorum-threshold bounds and their attack constructions, the baiting
threshold of TRAP-style protocols, DSIC deviation runs and the pure-equilibrium enumerator.
"""
import itertools
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from prft.core import ConfigError, SystemStateLabel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class UtilityParams:
    """
    Attributes:
        alpha (float): payoff magnitude
        L (float): collateral per player
        delta (float): discount factor
        theta (int): type used for every player; None uses each player's own type
    """
    alpha: float = 1.0
    L: float = 10.0
    delta: float = 0.9
    theta: Optional[int] = None

    def validate(self):
        violations = []
        if self.alpha <= 0:
            violations.append(f'alpha must be positive, got {self.alpha}')
        if not 0 < self.delta < 1:
            violations.append(f'discount must be in (0, 1), got {self.delta}')
        if self.L < 0:
            violations.append(f'collateral must be non-negative, got {self.L}')
        if self.theta is not None and self.theta not in (0, 1, 2, 3):
            violations.append(f'theta must be in 0..3, got {self.theta}')
        if violations:
            raise ConfigError(violations)
        return self


@dataclass(frozen=True)
class TrapGameParams:
    n: int
    t0: int
    t: int
    k: int
    G: float = 1.0
    R: float = 0.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f'the fork gain is shared by k >= 1 rational players, got k={self.k}')


# theta -> states it profits from
_PREFERRED = {
    3: {SystemStateLabel.NP, SystemStateLabel.CP, SystemStateLabel.FORK},
    2: {SystemStateLabel.CP, SystemStateLabel.FORK},
    1: {SystemStateLabel.FORK},
    0: set(),
}


def payoff_f(state, theta, alpha=1.0):
    """ f(sigma, theta): 0 on honest execution, +alpha on a preferred state, -alpha otherwise. """
    if theta not in _PREFERRED:
        raise ValueError(f'theta must be in 0..3, got {theta}')
    if state is SystemStateLabel.HONEST_EXEC:
        return 0.0
    return alpha if state in _PREFERRED[theta] else -alpha


# ------------------------------------------------------------------ state classification

@dataclass(frozen=True)
class ClassifiedState:
    label: SystemStateLabel
    provisional: bool = False


def _honest_finals(trace, last_round=None):
    honest = set(trace.honest)
    return [e for e in trace.of_kind('finalize')
            if e['actor'] in honest and (last_round is None or e['block_round'] <= last_round)]


def censored_ids(trace):
    return {tx[0] for tx in trace.meta.get('txs', []) if tx[2]}


def classify_state(trace, horizon=None, Z=None):
    """
    Realized system state over a window of rounds. Precedence Fork > NP > CP > HonestExec.

    Args:
        trace (RunTrace)
        horizon (tuple): (first_round, last_round), inclusive; defaults to the whole run
        Z (set): censored transaction ids; defaults to the transactions flagged censored

    Returns:
        ClassifiedState
    """
    if horizon is None:
        horizon = (0, trace.meta['rounds'] - 1)
    first, last = horizon
    if Z is None:
        Z = censored_ids(trace)
    finals = _honest_finals(trace, last)

    by_height = {}
    for e in finals:
        by_height.setdefault(e['height'], set()).add(e['digest'])
    if any(len(d) > 1 for d in by_height.values()):
        label = SystemStateLabel.FORK
    elif not any(first <= e['block_round'] <= last for e in finals):
        label = SystemStateLabel.NP
    else:
        included = {tx for e in finals for tx in e['txs']}
        label = SystemStateLabel.CP if set(Z) - included else SystemStateLabel.HONEST_EXEC
    return ClassifiedState(label, provisional=trace.truncated)


def round_state(trace, r, Z=None):
    """
    sigma of round r over the last n rounds: NP only when no block of the window is final, CP while a censored
    transaction is still missing.
    """
    n = trace.meta['n']
    return classify_state(trace, (max(r - n + 1, 0), r), Z)


# ------------------------------------------------------------------ utilities

def stash_round(trace, player):
    """ First round in which an honest replica stashed player, or None. """
    honest = set(trace.honest)
    rounds = [e['expose_round'] for e in trace.of_kind('stash') if e['actor'] in honest and player in e['guilty']]
    return min(rounds) if rounds else None


def _theta_of(trace, player, params):
    if params.theta is not None:
        return params.theta
    return trace.meta['thetas'][player]


def round_utility(player, trace, r, params=UtilityParams()):
    """ f(sigma_r, theta) - L * D, where D = 1 only in the round the player is first stashed. """
    f = payoff_f(round_state(trace, r).label, _theta_of(trace, player, params), params.alpha)
    penalty = params.L if stash_round(trace, player) == r else 0.0
    return f - penalty


def discount(utilities, delta, tail=0.0):
    """
    sum_r delta^r u_r over the given rounds, plus the tail repeated forever after them.

    Args:
        utilities (array): per-round utilities u_0 .. u_{R-1}
        delta (float): discount factor in (0, 1)
        tail (float): per-round utility assumed for every round after R - 1
    """
    if not 0 < delta < 1:
        raise ConfigError([f'discount must be in (0, 1), got {delta}'])
    u = np.asarray(utilities, dtype=float)
    weights = delta ** np.arange(len(u))
    return float(np.dot(weights, u) + delta ** len(u) * tail / (1 - delta))


def discounted_utility(player, trace, params=UtilityParams()):
    params.validate()
    rounds = trace.meta['rounds']
    utilities = [round_utility(player, trace, r, params) for r in range(rounds)]
    tail = 0.0
    if rounds:
        tail = payoff_f(round_state(trace, rounds - 1).label, _theta_of(trace, player, params), params.alpha)
    return discount(utilities, params.delta, tail)


# ------------------------------------------------------------------ quorum threshold

@dataclass(frozen=True)
class TauInterval:
    lo: int
    hi: int

    @property
    def feasible(self):
        return self.lo <= self.hi

    def __contains__(self, tau):
        return self.lo <= tau <= self.hi


def tau_bounds(n, t0):
    """ [floor((n + t0) / 2) + 1, n - t0]; empty when infeasible. """
    if not 1 <= t0 < n:
        raise ValueError(f'need 1 <= t0 < n, got n={n}, t0={t0}')
    return TauInterval((n + t0) // 2 + 1, n - t0)


@dataclass(frozen=True)
class TauAttack:
    """ kind: 'liveness' or 'agreement'; side_a, side_b: honest players on each side of the split. """
    kind: str
    side_a: int
    side_b: int


def tau_attack(n, t0, tau):
    """
    Counterexample for a quorum threshold tau, or None when tau is safe against both
    constructions: t0 byzantine players abstain (liveness), or a byzantine leader splits
    the honest players in two halves and the byzantine players vote on both sides (agreement).
    """
    honest = n - t0
    if tau > honest:
        return TauAttack('liveness', honest, 0)
    side_a = (honest + 1) // 2
    side_b = honest - side_a
    if side_b + t0 >= tau:
        return TauAttack('agreement', side_a, side_b)
    return None


def tau_bruteforce(n, t0):
    """
    Exhaustive search over every split of the honest players and every byzantine vote
    allocation (abstain, side A, side B, both).

    Returns:
        dict tau -> None (safe) or the kind of counterexample found
    """
    honest = list(range(n - t0))
    result = {}
    for tau in range(1, n + 1):
        found = None
        if len(honest) < tau:
            found = 'liveness'
        else:
            for size in range(len(honest) + 1):
                for side_a in itertools.combinations(honest, size):
                    a = len(side_a)
                    b = len(honest) - a
                    for alloc in itertools.combinations_with_replacement(('none', 'a', 'b', 'both'), t0):
                        votes_a = a + sum(c in ('a', 'both') for c in alloc)
                        votes_b = b + sum(c in ('b', 'both') for c in alloc)
                        if votes_a >= tau and votes_b >= tau:
                            found = 'agreement'
                            break
                    if found:
                        break
                if found:
                    break
        result[tau] = found
    return result


# ------------------------------------------------------------------ baiting threshold

@dataclass(frozen=True)
class BaitingThreshold:
    m_min: int
    unilateral_sufficient: bool


def trap_min_baiters(params: TrapGameParams):
    """ Smallest m with m > t0 + (k + t - n) / 2, never below 0. """
    m_min = max((2 * params.t0 + params.k + params.t - params.n) // 2 + 1, 0)
    return BaitingThreshold(m_min, m_min <= 1)


def fork_feasible(n, t0, t, k, baiters):
    """ Whether some split of the non-colluding players gives both sides n - t0 votes with `baiters` defecting. """
    outside = list(range(n - t - k))
    forkers = k - baiters + t
    for size in range(len(outside) + 1):
        for side_a in itertools.combinations(outside, size):
            if len(side_a) + forkers >= n - t0 and len(outside) - len(side_a) + forkers >= n - t0:
                return True
    return False


def trap_min_baiters_bruteforce(params: TrapGameParams):
    """ Smallest number of baiters, over every baiter subset of K, that rules out a fork; None if none does. """
    rational = range(params.k)
    for m in range(params.k + 1):
        if all(not fork_feasible(params.n, params.t0, params.t, params.k, len(baiters))
               for baiters in itertools.combinations(rational, m)):
            return m
    return None


def trap_fork_is_equilibrium(params: TrapGameParams):
    """ Following the fork pays G/k; baiting pays R only when a single baiter can stop the fork. """
    threshold = trap_min_baiters(params)
    u_fork = params.G / params.k
    u_bait = params.R if threshold.unilateral_sufficient else 0.0
    return u_fork > u_bait


# ------------------------------------------------------------------ DSIC

def dsic_deviation(scenario, player, deviation, seeds=None, params=None):
    """
    Run a scenario with `player` honest and deviating, every other strategy fixed.

    Args:
        scenario (ScenarioConfig)
        player (int): the deviating player
        deviation (Strategy)
        seeds (iterable): defaults to the scenario seeds
        params (UtilityParams): defaults to the scenario's

    Returns:
        pandas.DataFrame with one row per seed: u_honest, u_dev, stash_round, dominated
    """
    from prft.adversary import PI0
    from prft.netsim import run

    params = params or scenario.utility_params()
    seeds = scenario.seeds if seeds is None else seeds
    honest_side = scenario.with_strategy(player, PI0)
    deviating = scenario.with_strategy(player, deviation)
    rows = []
    for seed in seeds:
        u_honest = discounted_utility(player, run(honest_side, seed), params)
        trace = run(deviating, seed)
        u_dev = discounted_utility(player, trace, params)
        rows.append({'scenario': scenario.name, 'seed': seed, 'player': player,
                     'deviation': deviation.kind.value, 'u_honest': u_honest, 'u_dev': u_dev,
                     'stash_round': stash_round(trace, player), 'dominated': u_dev <= u_honest + 1e-12})
    return pd.DataFrame(rows)


def dsic_grid(ns=(5, 9, 13)):
    """ (n, t, k) with t <= ceil(n/4) - 1, k >= 1 and k + t < n/2. """
    grid = []
    for n in ns:
        t0 = -(-n // 4) - 1
        for t in range(t0 + 1):
            for k in range(1, n):
                if 2 * (k + t) < n:
                    grid.append((n, t, k))
    return grid


def dsic_sweep(ns=(5, 9, 13), seeds=range(20), deviations=('PiAbs', 'PiDS'), byzantine_strategies=('Pi0',),
               grid=None, rounds=10, params=UtilityParams(theta=1)):
    """
    Unilateral deviation of the first rational player over the DSIC grid, once per
    strategy of the byzantine players. Other rational players follow the protocol.

    Args:
        ns (tuple): player counts, expanded by dsic_grid unless `grid` is given
        byzantine_strategies (tuple): strategy names the t byzantine players play
        grid (list): explicit (n, t, k) triples
        rounds (int): rounds per run

    Returns:
        pandas.DataFrame, one row per (scenario, seed, deviation)
    """
    from prft.adversary import Strategy
    from prft.harness import ScenarioConfig

    frames = []
    for n, t, k in (dsic_grid(ns) if grid is None else grid):
        for byzantine in byzantine_strategies if t else ('Pi0',):
            scenario = ScenarioConfig(name=f'dsic-n{n}-t{t}-k{k}-{byzantine}', n=n, t=t, k=k, theta=1,
                                      seeds=tuple(seeds), rounds=rounds, byzantine_strategy=byzantine,
                                      rational_strategy='Pi0').validate()
            deviator = scenario.rational_players()[0]
            others = [p for p in range(n) if p != deviator]
            half = len(others) // 2
            for name in deviations:
                deviation = Strategy.named(name, partition_a=others[:half], partition_b=others[half:])
                frame = dsic_deviation(scenario, deviator, deviation, seeds=seeds, params=params)
                frame.insert(0, 'n', n)
                frame.insert(1, 't', t)
                frame.insert(2, 'k', k)
                frame.insert(3, 'byzantine', byzantine)
                frames.append(frame)
                logger.info('dsic n=%d t=%d k=%d byzantine %s, %s: %d/%d dominated', n, t, k, byzantine, name,
                            int(frame['dominated'].sum()), len(frame))
    if not frames:
        return pd.DataFrame()
    return pd.concat(frames, ignore_index=True)


# ------------------------------------------------------------------ normal-form games

# Three-player game: player 1 picks A/B, player 2 picks a/b, player 3 picks alpha/beta
TABLE3_STRATEGIES = (('A', 'B'), ('a', 'b'), ('alpha', 'beta'))
TABLE3 = {
    ('A', 'a', 'alpha'): (1, 1, 1),
    ('A', 'a', 'beta'): (1, 1, 0),
    ('A', 'b', 'alpha'): (1, 0, 1),
    ('A', 'b', 'beta'): (-2, 2, 2),
    ('B', 'a', 'alpha'): (0, 1, 1),
    ('B', 'a', 'beta'): (1, -2, 1),
    ('B', 'b', 'alpha'): (2, 2, -2),
    ('B', 'b', 'beta'): (0, 0, 0),
}


def pure_nash_equilibria(payoffs, strategies):
    """
    Profiles where no player gains by a unilateral change.

    Args:
        payoffs (dict): profile tuple -> payoff tuple
        strategies (sequence): per player, the available actions

    Returns:
        list of profiles, in enumeration order
    """
    equilibria = []
    for profile in itertools.product(*strategies):
        stable = True
        for i, options in enumerate(strategies):
            for alt in options:
                if alt == profile[i]:
                    continue
                other = profile[:i] + (alt,) + profile[i + 1:]
                if payoffs[other][i] > payoffs[profile][i]:
                    stable = False
                    break
            if not stable:
                break
        if stable:
            equilibria.append(profile)
    return equilibria


def pareto_dominant(payoffs, profiles):
    """ Profiles among `profiles` that no other one weakly improves for all and strictly for some. """
    def dominates(x, y):
        px, py = payoffs[x], payoffs[y]
        return all(a >= b for a, b in zip(px, py)) and any(a > b for a, b in zip(px, py))

    return [p for p in profiles if not any(dominates(q, p) for q in profiles if q != p)]


def nic_table3_fixture():
    """ Returns (equilibria, pareto-preferred equilibria) of the three-player example. """
    equilibria = pure_nash_equilibria(TABLE3, TABLE3_STRATEGIES)
    return equilibria, pareto_dominant(TABLE3, equilibria)


# ------------------------------------------------------------------ tolerance bounds

CONSENSUS_BOUNDS = pd.DataFrame(
    [('Synchronous', '2c < n', '2t < n', 't < n/2, k < n/2'),
     ('Partially-synchronous', '2c < n', '3t < n', 't < n/4, t + k < n/2'),
     ('Asynchronous', 'c < n/3', 't < n/3', 't < n/3')],
    columns=['network', 'CFT(c)', 'BFT(t)', 'RFT(t,k)'])


def consensus_bounds():
    """ Tolerance table per network model and threat model; the partially synchronous RFT cell is pRFT's. """
    return CONSENSUS_BOUNDS.copy()


def within_prft_threat_model(n, t, k):
    return 4 * t < n and 2 * (t + k) < n
