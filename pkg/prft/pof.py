"""
Proof-of-Fraud: conflicting-signature evidence, its construction from a signature
table, its verification, and the collateral ledger that burns a deposit once a
verified proof names its owner.
"""
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping

from prft.core import InvalidProofError, Message, verify_message

logger = logging.getLogger(__name__)

# row (reporter bundle) -> column (signer) -> signed message
SignatureTable = Mapping[Hashable, Mapping[int, Message]]


def conflicts(a: Message, b: Message) -> bool:
    """ Same signer, same round, same phase, different signed digests. """
    return (a.sender == b.sender and a.round == b.round and a.variant is b.variant
            and a.digest is not None and b.digest is not None and a.digest != b.digest)


@dataclass(frozen=True)
class ConflictPair:
    sig_a: Message
    sig_b: Message

    def __post_init__(self):
        if not conflicts(self.sig_a, self.sig_b):
            raise ValueError('messages do not conflict')

    @property
    def signer(self):
        return self.sig_a.sender

    @classmethod
    def of(cls, a, b):
        # Orientation by digest so that equal evidence gives equal pairs
        a, b = sorted((a.header(), b.header()), key=lambda m: m.digest)
        return cls(a, b)


@dataclass(frozen=True)
class ProofOfFraud:
    pairs: tuple = ()

    @property
    def accused(self):
        return frozenset(p.signer for p in self.pairs)

    def __len__(self):
        return len(self.accused)

    def pair_messages(self):
        return [(p.sig_a, p.sig_b) for p in self.pairs]


def merge_proofs(proofs: Iterable[ProofOfFraud]) -> ProofOfFraud:
    """ One pair per accused signer, first occurrence wins. """
    pairs = {}
    for proof in proofs:
        for p in proof.pairs:
            pairs.setdefault(p.signer, p)
    return ProofOfFraud(tuple(pairs[s] for s in sorted(pairs)))


def construct_proof(table: SignatureTable, t0: int) -> ProofOfFraud:
    """
    Pairwise scan of the signature table: for every ordered pair of rows (i, j), compare
    the entries of every signer k present in both. A signer is accused once. The scan
    returns as soon as t0 + 1 signers are accused, after finishing the current row pair.

    Args:
        table: row -> signer -> signed message, for one round and phase
        t0 (int): byzantine tolerance

    Returns:
        ProofOfFraud
    """
    found = []
    accused = set()
    rows = sorted(table)
    for i in rows:
        for j in rows:
            if i == j:
                continue
            row_i, row_j = table[i], table[j]
            for k in sorted(set(row_i) & set(row_j)):
                if k in accused:
                    continue
                if conflicts(row_i[k], row_j[k]):
                    found.append(ConflictPair.of(row_i[k], row_j[k]))
                    accused.add(k)
            if len(accused) >= t0 + 1:
                return ProofOfFraud(tuple(found))
    return ProofOfFraud(tuple(found))


def brute_force_accused(table: SignatureTable) -> frozenset:
    """ Reference scan: every signer with two distinct digests for one (round, phase). """
    digests = defaultdict(set)
    for row in table.values():
        for signer, msg in row.items():
            if msg.digest is not None:
                digests[(signer, msg.round, msg.variant)].add(msg.digest)
    return frozenset(key[0] for key, seen in digests.items() if len(seen) > 1)


def verify_pof(pof: ProofOfFraud, registry, t0: int) -> frozenset:
    """
    Check every pair and the threshold.

    Returns:
        the accused (guilty) set

    Raises:
        InvalidProofError: a pair fails verification, or fewer than t0 + 1 are accused
    """
    for pair in pof.pairs:
        a, b = pair.sig_a, pair.sig_b
        if not conflicts(a, b):
            raise InvalidProofError(f'pair for player {a.sender} is not a conflict')
        if not (verify_message(registry, a) and verify_message(registry, b)):
            raise InvalidProofError(f'pair for player {a.sender} does not verify')
    accused = pof.accused
    if len(accused) < t0 + 1:
        raise InvalidProofError(f'{len(accused)} accused, need at least {t0 + 1}')
    return accused


@dataclass
class CollateralLedger:
    balances: dict = field(default_factory=dict)
    stashed: dict = field(default_factory=dict)

    @classmethod
    def deposit(cls, players, collateral):
        return cls({p: collateral for p in players}, {p: False for p in players})

    def stash(self, guilty):
        for p in sorted(guilty):
            if not self.stashed.get(p, False):
                logger.debug('stash collateral of player %d (%s)', p, self.balances.get(p))
            self.balances[p] = 0
            self.stashed[p] = True
        return self

    @property
    def stashed_players(self):
        return frozenset(p for p, flag in self.stashed.items() if flag)


def stash(ledger: CollateralLedger, guilty) -> CollateralLedger:
    """ Burn the collateral of every guilty player. Idempotent. """
    return ledger.stash(guilty)
