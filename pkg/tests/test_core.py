from dataclasses import replace

import numpy as np
import pytest

from prft.core import (BOTTOM, DIGEST_SIZE, GENESIS_DIGEST, HEADER_BYTES, Block, ConfigError, InvariantViolation,
                       Message, MessageType, Phase, PlayerRole, Role, Transaction, canonical_bytes, decode_message,
                       effective_theta, encode_message, leader_of, message_size, role_counts, sign_message,
                       verify_message)
from prft.crypto_sim import setup


def _block(txs=('tx-0', 'tx-1'), round_=0):
    return Block(round=round_, proposer=leader_of(round_, 5), parent_digest=GENESIS_DIGEST,
                 txs=tuple(Transaction(t) for t in txs))


def test_leader_rotation():
    assert [leader_of(r, 4) for r in range(6)] == [0, 1, 2, 3, 0, 1]
    with pytest.raises(ValueError):
        leader_of(-1, 4)


def test_block_digest_binds_round_and_txs():
    a = _block()
    assert len(a.digest) == DIGEST_SIZE
    assert a.digest == _block().digest
    assert a.digest != _block(round_=1).digest
    assert a.digest != _block(txs=('tx-0',)).digest
    assert BOTTOM != a.digest


def test_block_record_preserves_digest():
    a = _block()
    assert Block.from_record(a.to_record()).digest == a.digest


def test_roles():
    roles = [PlayerRole(Role.HONEST), PlayerRole(Role.RATIONAL, 2), PlayerRole(Role.RATIONAL, 1),
             PlayerRole(Role.BYZANTINE, 3)]
    assert effective_theta(roles) == 2
    assert effective_theta([PlayerRole(Role.HONEST)]) == 0
    assert role_counts(roles) == (1, 1, 2)
    assert roles[3].utility_theta == 3
    with pytest.raises(ValueError):
        PlayerRole(Role.RATIONAL, 4)


def test_signed_message_survives_encoding():
    registry, keys = setup(5)
    block = _block()
    propose = sign_message(keys[0], Message(MessageType.PROPOSE, 0, 0, digest=block.digest, block=block))
    vote = sign_message(keys[1], Message(MessageType.VOTE, 0, 1, digest=block.digest, proposal=propose.header()))
    decoded = decode_message(encode_message(vote))
    assert decoded == vote
    assert verify_message(registry, decoded)


def test_block_body_is_not_signed():
    registry, keys = setup(5)
    block = _block()
    propose = sign_message(keys[0], Message(MessageType.PROPOSE, 0, 0, digest=block.digest, block=block))
    assert verify_message(registry, propose.header())


def test_forged_sender_does_not_verify():
    registry, keys = setup(5)
    msg = Message(MessageType.VIEW_CHANGE, 3, 2, phase=Phase.VOTE)
    with pytest.raises(ValueError):
        sign_message(keys[1], msg)
    signed = sign_message(keys[2], msg)
    assert verify_message(registry, signed)
    tampered = Message(MessageType.VIEW_CHANGE, 4, 2, phase=Phase.VOTE, signature=signed.signature)
    assert not verify_message(registry, tampered)
    assert not verify_message(registry, msg)


def test_message_size_accounting():
    kappa = 64
    entry = 2 * kappa + DIGEST_SIZE
    vc = Message(MessageType.VIEW_CHANGE, 0, 1, phase=Phase.VOTE)
    assert message_size(vc, kappa) == HEADER_BYTES + kappa + 1
    vote = Message(MessageType.VOTE, 0, 1, digest=b'x' * 32, proposal=vc)
    assert message_size(vote, kappa) == HEADER_BYTES + kappa + DIGEST_SIZE + kappa
    commit = Message(MessageType.COMMIT, 0, 1, digest=b'x' * 32, proposal=vc, certificate=(vote,) * 3)
    assert message_size(commit, kappa) == message_size(vote, kappa) + 3 * entry
    block = _block()
    propose = Message(MessageType.PROPOSE, 0, 0, digest=block.digest, block=block)
    assert message_size(propose, kappa) == HEADER_BYTES + kappa + DIGEST_SIZE + 2 * 250


def test_errors():
    err = ConfigError(['a', 'b'])
    assert err.violations == ['a', 'b']
    assert isinstance(err, ValueError)
    assert 'event 7' in str(InvariantViolation('fork', event_index=7))


# ------------------------------------------------------------------ randomized corpora

N_FUZZ = 10_000
FUZZED = [MessageType.PROPOSE, MessageType.VOTE, MessageType.COMMIT, MessageType.REVEAL, MessageType.FINAL,
          MessageType.VIEW_CHANGE, MessageType.COMMIT_VIEW]


def _random_block(rng, n):
    round_ = int(rng.integers(0, 1000))
    ids = rng.integers(0, 50, size=int(rng.integers(0, 5)))
    txs = tuple(Transaction(f'tx-{int(i)}', int(rng.integers(1, 500))) for i in ids)
    return Block(round=round_, proposer=leader_of(round_, n), parent_digest=rng.bytes(32), txs=txs)


def _random_message(rng, keys, n):
    variant = FUZZED[int(rng.integers(len(FUZZED)))]
    round_ = int(rng.integers(0, 1000))
    sender = int(rng.integers(n))
    if variant is MessageType.PROPOSE:
        block = replace(_random_block(rng, n), round=round_, proposer=sender)
        return sign_message(keys[sender], Message(variant, round_, sender, digest=block.digest, block=block))
    if variant in (MessageType.VIEW_CHANGE, MessageType.COMMIT_VIEW):
        phase = list(Phase)[int(rng.integers(len(Phase)))]
        certificate = ()
        if variant is MessageType.COMMIT_VIEW:
            certificate = tuple(sign_message(keys[s], Message(MessageType.VIEW_CHANGE, round_, s, phase=phase))
                                for s in range(int(rng.integers(0, n + 1))))
            phase = None
        return sign_message(keys[sender], Message(variant, round_, sender, phase=phase, certificate=certificate))
    digest = rng.bytes(32)
    leader = leader_of(round_, n)
    proposal = sign_message(keys[leader], Message(MessageType.PROPOSE, round_, leader, digest=digest))
    certificate = ()
    if variant in (MessageType.COMMIT, MessageType.REVEAL):
        carried = MessageType.VOTE if variant is MessageType.COMMIT else MessageType.COMMIT
        certificate = tuple(sign_message(keys[s], Message(carried, round_, s, digest=digest, proposal=proposal))
                            for s in range(int(rng.integers(0, n + 1))))
    return sign_message(keys[sender], Message(variant, round_, sender, digest=digest, proposal=proposal,
                                              certificate=certificate))


def test_random_messages_survive_encoding():
    n = 5
    registry, keys = setup(n)
    rng = np.random.default_rng(7)
    for _ in range(N_FUZZ):
        msg = _random_message(rng, keys, n)
        decoded = decode_message(encode_message(msg))
        assert decoded == msg
        assert verify_message(registry, decoded)
        assert all(verify_message(registry, m) for m in decoded.certificate)


def test_block_digests_do_not_collide_and_bind_the_round():
    rng = np.random.default_rng(11)
    blocks = [_random_block(rng, 5) for _ in range(N_FUZZ)]
    by_record = {}
    for block in blocks:
        by_record.setdefault(canonical_bytes(block.to_record()), block.digest)
    assert len(set(by_record.values())) == len(by_record)
    for block in blocks[:1000]:
        moved = replace(block, round=block.round + 1)
        assert moved.digest != block.digest
        assert moved.digest not in (BOTTOM, GENESIS_DIGEST)
