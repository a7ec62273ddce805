"""
Strategies of rational and byzantine players and the collusion controller that
coordinates them.

Every player, honest or not, runs the honest `engine.Replica`; a strategy is a
transformation of the replica's outbound messages (`act`), plus the few extra messages
a strategy originates itself (twin proposals, view-change storms).
"""
import logging
from dataclasses import dataclass, field, replace
from enum import Enum

from prft.core import Block, ConfigError, Message, MessageType, Transaction, leader_of, sign_message
from prft.engine import Outbound

logger = logging.getLogger(__name__)

# messages that keep rounds moving; every strategy still takes part in them
_ROUND_CHANGE = frozenset({MessageType.VIEW_CHANGE, MessageType.COMMIT_VIEW, MessageType.EXPOSE})

DEFAULT_ABSTAIN_PHASES = frozenset({MessageType.PROPOSE, MessageType.VOTE, MessageType.COMMIT,
                                    MessageType.REVEAL, MessageType.FINAL})
DEFAULT_DOUBLE_SIGN_PHASES = frozenset({MessageType.PROPOSE, MessageType.VOTE, MessageType.COMMIT})


class StrategyKind(Enum):
    PI0 = 'Pi0'
    PI_ABS = 'PiAbs'
    PI_DS = 'PiDS'
    PI_PC = 'PiPC'
    VIEW_CHANGE_STORM = 'ViewChangeStorm'


@dataclass(frozen=True)
class Strategy:
    """
    Attributes:
        kind (StrategyKind)
        phases (frozenset): message variants the strategy acts on (PiAbs, PiDS)
        partition_a (frozenset): PiDS targets of the original messages
        partition_b (frozenset): PiDS targets of the twin messages
        censored (frozenset): PiPC transaction ids kept out of colluding blocks
    """
    kind: StrategyKind = StrategyKind.PI0
    phases: frozenset = frozenset()
    partition_a: frozenset = frozenset()
    partition_b: frozenset = frozenset()
    censored: frozenset = frozenset()

    def validate(self):
        violations = []
        if self.kind is StrategyKind.PI_DS:
            if not self.partition_b:
                violations.append('PiDS needs a nonempty partition B')
            overlap = self.partition_a & self.partition_b
            if overlap:
                violations.append(f'PiDS partitions overlap on {sorted(overlap)}')
        if self.kind is StrategyKind.PI_PC and not self.censored:
            violations.append('PiPC needs a nonempty censored set Z')
        if violations:
            raise ConfigError(violations)
        return self

    @classmethod
    def named(cls, name, partition_a=(), partition_b=(), censored=(), phases=None):
        kind = StrategyKind(name)
        if phases is None:
            phases = {StrategyKind.PI_ABS: DEFAULT_ABSTAIN_PHASES,
                      StrategyKind.PI_DS: DEFAULT_DOUBLE_SIGN_PHASES}.get(kind, frozenset())
        return cls(kind=kind, phases=frozenset(phases), partition_a=frozenset(partition_a),
                   partition_b=frozenset(partition_b), censored=frozenset(censored))


PI0 = Strategy()


@dataclass
class CollusionController:
    """
    Shared plan of the collusion K u T.

    Attributes:
        members (frozenset): colluding players
        joint_strategy (Strategy): strategy every member plays by default
        overrides (dict): player -> Strategy, for unilateral deviations
        twins (dict): round -> twin Propose header seen by partition B
        twin_blocks (dict): round -> twin Block
        twin_certs (dict): (round, variant) -> player -> twin message
        keys (dict): member -> KeyPair; the collusion signs with its own members' keys only
    """
    members: frozenset = frozenset()
    joint_strategy: Strategy = PI0
    overrides: dict = field(default_factory=dict)
    twins: dict = field(default_factory=dict)
    twin_blocks: dict = field(default_factory=dict)
    twin_certs: dict = field(default_factory=dict)
    keys: dict = field(default_factory=dict, repr=False)

    def strategy_of(self, player):
        if player in self.overrides:
            return self.overrides[player]
        if player in self.members:
            return self.joint_strategy
        return PI0

    def flip(self, player, strategy):
        """ Switch exactly one member to another strategy. """
        self.overrides[player] = strategy.validate()
        return self

    def colludes(self, player):
        return player in self.members

    def twin_block(self, round_, base):
        """ Block with digest h_b != h_a: the base block plus a fabricated transaction. """
        twin = self.twin_blocks.get(round_)
        if twin is None:
            txs = tuple(base.txs) if base is not None else ()
            twin = Block(round=round_, proposer=base.proposer if base is not None else -1,
                         parent_digest=base.parent_digest if base is not None else b'',
                         txs=txs + (Transaction(f'fork-{round_}'),))
            self.twin_blocks[round_] = twin
        return twin

    def twin_message(self, variant, round_, member, twin_block, proposal):
        """
        Twin of member's message of the given variant, over twin_block. Certificates of twin
        Commits and Reveals hold the twins of every member that the collusion holds a key for.
        """
        signed = self.twin_certs.setdefault((round_, variant), {})
        if member in signed:
            return signed[member]
        carried = _carried(variant)
        cert = ()
        if carried is not None:
            cert = tuple(self.twin_message(carried, round_, m, twin_block, proposal) for m in sorted(self.keys))
        msg = Message(variant=variant, round=round_, sender=member, digest=twin_block.digest, proposal=proposal,
                      certificate=cert)
        signed[member] = sign_message(self.keys[member], msg)
        return signed[member]


class Agent:
    """
    A replica driven by a strategy. Exposes the replica interface `netsim` calls.

    Attributes:
        replica (Replica): the honest state machine underneath
        controller (CollusionController): shared collusion plan
    """

    def __init__(self, replica, controller: CollusionController):
        self.replica = replica
        self.controller = controller
        self.storm_rounds = set()
        strategy = self.strategy
        if strategy.kind is StrategyKind.PI_PC:
            censored = strategy.censored
            replica.tx_filter = lambda tx: tx.id not in censored and not tx.censored

    @property
    def me(self):
        return self.replica.me

    @property
    def state(self):
        return self.replica.state

    @property
    def strategy(self):
        return self.controller.strategy_of(self.me)

    def __repr__(self):
        return f'Agent({self.replica!r}, {self.strategy.kind.value})'

    def drain_events(self):
        return self.replica.drain_events()

    def start_round(self, now):
        return self.act(self.replica.start_round(now))

    def receive(self, msg, now):
        return self.act(self.replica.receive(msg, now))

    def on_timeout(self, now):
        return self.act(self.replica.on_timeout(now))

    def act(self, outbound):
        """ Transform what the honest replica would send into what this strategy sends. """
        kind = self.strategy.kind
        if kind is StrategyKind.PI0:
            return outbound
        if kind is StrategyKind.PI_ABS:
            return [o for o in outbound if o.msg.variant not in self.strategy.phases]
        if kind is StrategyKind.PI_PC:
            return self._partial_censorship(outbound)
        if kind is StrategyKind.PI_DS:
            return self._double_sign(outbound)
        return self._storm(outbound)

    def _partial_censorship(self, outbound):
        n = self.replica.n
        out = []
        for o in outbound:
            if o.msg.variant not in _ROUND_CHANGE and not self.controller.colludes(leader_of(o.msg.round, n)):
                continue
            out.append(o)
        return out

    def _storm(self, outbound):
        out = [o for o in outbound if o.msg.variant in _ROUND_CHANGE]
        round_ = self.state.round
        if round_ not in self.storm_rounds and MessageType.VIEW_CHANGE not in self.state.sent:
            self.storm_rounds.add(round_)
            out.append(Outbound(self.replica.sign(MessageType.VIEW_CHANGE, phase=self.state.phase)))
        return out

    def _double_sign(self, outbound):
        strategy = self.strategy
        forking = MessageType.PROPOSE in strategy.phases
        everyone = range(self.replica.n)
        side_b = tuple(p for p in everyone if p in strategy.partition_b)
        side_a = tuple(p for p in everyone if p not in strategy.partition_b)
        out = []
        for o in outbound:
            msg = o.msg
            if (forking and msg.variant in (MessageType.VIEW_CHANGE, MessageType.COMMIT_VIEW)
                    and self.controller.colludes(leader_of(msg.round, self.replica.n))):
                # a forking collusion never asks to leave its own rounds
                continue
            if msg.variant not in strategy.phases or o.recipients is not None or o.relay:
                out.append(o)
                continue
            twin = self._twin(msg)
            if twin is None:
                out.append(o)
                continue
            out.append(Outbound(msg, recipients=side_a))
            out.append(Outbound(twin, recipients=side_b))
        return out

    def _twin(self, msg):
        """ Same message signed over the twin digest h_b, or None if there is no twin for it. """
        replica = self.replica
        ctl = self.controller
        round_ = msg.round
        if msg.variant is MessageType.PROPOSE:
            twin_block = ctl.twin_block(round_, msg.block)
            twin = sign_message(replica.key, replace(msg, digest=twin_block.digest, block=twin_block,
                                                     signature=None))
            ctl.twins[round_] = twin.header()
            logger.debug('player %d: twin proposal %s in round %d', self.me, twin_block.digest.hex()[:8], round_)
            return twin
        if msg.digest is None:
            return None
        twin_block = ctl.twin_block(round_, replica.blocks.get(msg.digest))
        proposal = ctl.twins.get(round_, msg.proposal)
        return ctl.twin_message(msg.variant, round_, self.me, twin_block, proposal)


def _carried(variant):
    """ Variant of the messages a certificate of this variant carries, or None. """
    return {MessageType.COMMIT: MessageType.VOTE, MessageType.REVEAL: MessageType.COMMIT}.get(variant)


def build_controller(strategies, members=None):
    """
    Collusion controller from a player -> Strategy map.

    Args:
        strategies (dict): player -> Strategy for every non-honest-behaving player
        members (iterable): colluders; defaults to every player with a non-Pi0 strategy

    Returns:
        CollusionController
    """
    for s in strategies.values():
        s.validate()
    if members is None:
        members = {p for p, s in strategies.items() if s.kind is not StrategyKind.PI0}
    members = frozenset(members)
    kinds = {strategies[p] for p in members if p in strategies}
    joint = next(iter(kinds)) if len(kinds) == 1 else PI0
    overrides = {p: s for p, s in strategies.items() if s != joint or p not in members}
    return CollusionController(members=members, joint_strategy=joint, overrides=overrides)
