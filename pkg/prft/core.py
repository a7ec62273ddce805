"""
Shared vocabulary of the simulator: players and their roles, transactions, blocks,
the eight protocol messages, system-state labels, and the canonical byte encoding
that signatures cover.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property
from typing import TYPE_CHECKING, Iterable, Optional

from prft.crypto_sim import KeyPair, KeyRegistry, Signature, sign, verify

if TYPE_CHECKING:
    from prft.pof import ProofOfFraud

PlayerId = int

DIGEST_SIZE = 32
# One byte long, so it can never equal a 32-byte block digest
BOTTOM = b'\x00'
GENESIS_DIGEST = hashlib.sha256(b'prft-genesis').digest()

# Byte accounting (message sizes are nominal, signatures count kappa bytes each)
HEADER_BYTES = 16
PHASE_BYTES = 1


class PrftError(Exception):
    """Root of the package exceptions."""


class ConfigError(PrftError, ValueError):

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__('; '.join(self.violations))


class InvalidProofError(PrftError, ValueError):
    pass


class InvariantViolation(PrftError, AssertionError):

    def __init__(self, message, event_index=None):
        self.event_index = event_index
        super().__init__(message if event_index is None else f'{message} (event {event_index})')


class Role(Enum):
    HONEST = 'honest'
    BYZANTINE = 'byzantine'
    RATIONAL = 'rational'


@dataclass(frozen=True)
class PlayerRole:
    role: Role
    theta: int = 0

    def __post_init__(self):
        if self.theta not in (0, 1, 2, 3):
            raise ValueError(f'theta must be in 0..3, got {self.theta}')

    @property
    def utility_theta(self):
        # Honest players score like theta=0, byzantine like theta=3
        if self.role is Role.HONEST:
            return 0
        if self.role is Role.BYZANTINE:
            return 3
        return self.theta


def effective_theta(roles: Iterable[PlayerRole]) -> int:
    """ Type of the rational set: max theta over the nonempty rational classes (0 without rationals). """
    thetas = [r.theta for r in roles if r.role is Role.RATIONAL]
    return max(thetas) if thetas else 0


def role_counts(roles):
    counts = {role: 0 for role in Role}
    for r in roles:
        counts[r.role] += 1
    return counts[Role.HONEST], counts[Role.BYZANTINE], counts[Role.RATIONAL]


class SystemStateLabel(Enum):
    NP = 'NP'
    CP = 'CP'
    FORK = 'Fork'
    HONEST_EXEC = 'HonestExec'


class MessageType(Enum):
    PROPOSE = 'Propose'
    VOTE = 'Vote'
    COMMIT = 'Commit'
    REVEAL = 'Reveal'
    EXPOSE = 'Expose'
    FINAL = 'Final'
    VIEW_CHANGE = 'ViewChange'
    COMMIT_VIEW = 'CommitView'


class Phase(Enum):
    PROPOSE = 'Propose'
    VOTE = 'Vote'
    COMMIT = 'Commit'
    REVEAL = 'Reveal'
    VIEW_CHANGE_WAIT = 'ViewChangeWait'


def leader_of(r, n):
    """ Leader of round r. 0-based form of the rotation l = 1 + (r mod n). """
    if n < 1 or r < 0:
        raise ValueError(f'invalid round/player count: r={r}, n={n}')
    return r % n


@dataclass(frozen=True)
class Transaction:
    id: str
    payload_size: int = 250
    censored: bool = False

    def to_record(self):
        return [self.id, self.payload_size, self.censored]

    @classmethod
    def from_record(cls, rec):
        return cls(rec[0], int(rec[1]), bool(rec[2]))


@dataclass(frozen=True)
class Block:
    round: int
    proposer: PlayerId
    parent_digest: bytes
    txs: tuple = ()

    @cached_property
    def digest(self):
        return block_digest(self)

    @property
    def tx_ids(self):
        return [tx.id for tx in self.txs]

    def to_record(self):
        return {'round': self.round,
                'proposer': self.proposer,
                'parent': self.parent_digest.hex(),
                'txs': [tx.to_record() for tx in self.txs]}

    @classmethod
    def from_record(cls, rec):
        return cls(round=rec['round'], proposer=rec['proposer'], parent_digest=bytes.fromhex(rec['parent']),
                   txs=tuple(Transaction.from_record(tx) for tx in rec['txs']))


def canonical_bytes(record):
    """ Stable byte encoding of a JSON-compatible record: sorted keys, no whitespace. """
    return json.dumps(record, sort_keys=True, separators=(',', ':')).encode('utf-8')


def block_digest(block: Block) -> bytes:
    """ h = H(Block || r). The round is part of the hashed record. """
    return hashlib.sha256(canonical_bytes(block.to_record())).digest()


@dataclass(frozen=True)
class Message:
    """
    One signed protocol message. Variant-specific payload:

        Propose:    block, digest (h_l)
        Vote:       digest (h_i), proposal (s_l^pro, the leader's signed Propose header)
        Commit:     digest (h_* or BOTTOM), proposal, certificate (V_i: Votes)
        Reveal:     digest (h_tc), proposal, certificate (W_i: Commits)
        Expose:     proof (D_i)
        Final:      digest (h_l), proposal
        ViewChange: phase
        CommitView: certificate (ViewChanges)

    The signature covers every field except `block`, which the digest already binds.
    """
    variant: MessageType
    round: int
    sender: PlayerId
    digest: Optional[bytes] = None
    block: Optional[Block] = None
    proposal: Optional['Message'] = None
    certificate: tuple = ()
    proof: Optional['ProofOfFraud'] = None
    phase: Optional[Phase] = None
    signature: Optional[Signature] = None

    @cached_property
    def signing_bytes(self):
        return canonical_bytes(self.to_record(signed=False, with_block=False))

    def header(self):
        """ Same message without the block body. Signature stays valid. """
        if self.block is None:
            return self
        return replace(self, block=None)

    def to_record(self, signed=True, with_block=True):
        rec = {'v': self.variant.value, 'r': self.round, 's': self.sender}
        if self.digest is not None:
            rec['d'] = self.digest.hex()
        if with_block and self.block is not None:
            rec['b'] = self.block.to_record()
        if self.proposal is not None:
            rec['p'] = self.proposal.to_record(with_block=False)
        if self.certificate:
            rec['c'] = [m.to_record(with_block=False) for m in self.certificate]
        if self.proof is not None:
            rec['f'] = [[a.to_record(with_block=False), b.to_record(with_block=False)]
                        for a, b in self.proof.pair_messages()]
        if self.phase is not None:
            rec['ph'] = self.phase.value
        if signed and self.signature is not None:
            rec['sig'] = self.signature.to_record()
        return rec

    @classmethod
    def from_record(cls, rec):
        proof = None
        if 'f' in rec:
            from prft.pof import ConflictPair, ProofOfFraud
            proof = ProofOfFraud(tuple(ConflictPair(cls.from_record(a), cls.from_record(b)) for a, b in rec['f']))
        return cls(variant=MessageType(rec['v']),
                   round=rec['r'],
                   sender=rec['s'],
                   digest=bytes.fromhex(rec['d']) if 'd' in rec else None,
                   block=Block.from_record(rec['b']) if 'b' in rec else None,
                   proposal=cls.from_record(rec['p']) if 'p' in rec else None,
                   certificate=tuple(cls.from_record(m) for m in rec.get('c', [])),
                   proof=proof,
                   phase=Phase(rec['ph']) if 'ph' in rec else None,
                   signature=Signature.from_record(rec['sig']) if 'sig' in rec else None)


def encode_message(msg: Message) -> bytes:
    return canonical_bytes(msg.to_record())


def decode_message(data: bytes) -> Message:
    return Message.from_record(json.loads(data.decode('utf-8')))


def sign_message(key: KeyPair, msg: Message) -> Message:
    if key.owner != msg.sender:
        raise ValueError(f'key of player {key.owner} cannot sign for player {msg.sender}')
    return replace(msg, signature=sign(key, msg.signing_bytes))


def verify_message(registry: KeyRegistry, msg: Message) -> bool:
    sig = msg.signature
    if sig is None or sig.signer != msg.sender:
        return False
    return verify(registry, sig, msg.signing_bytes)


def message_size(msg: Message, kappa=64) -> int:
    """
    Nominal wire size in bytes. Own signature and every embedded signature count kappa;
    certificate entries count as (signature, digest, proposal signature) triplets and are
    not expanded recursively.
    """
    entry = 2 * kappa + DIGEST_SIZE
    size = HEADER_BYTES + kappa
    if msg.digest is not None:
        size += DIGEST_SIZE
    if msg.proposal is not None:
        size += kappa
    if msg.block is not None:
        size += sum(tx.payload_size for tx in msg.block.txs)
    if msg.phase is not None:
        size += PHASE_BYTES
    if msg.variant is MessageType.COMMIT_VIEW:
        size += len(msg.certificate) * (kappa + PHASE_BYTES)
    else:
        size += len(msg.certificate) * entry
    if msg.proof is not None:
        size += 2 * entry * len(msg.proof.pairs)
    return size
