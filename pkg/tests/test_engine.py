import hashlib
from collections import deque

import pytest

from prft.core import (BOTTOM, GENESIS_DIGEST, Block, InvariantViolation, Message, MessageType, Phase, Transaction,
                       sign_message)
from prft.crypto_sim import setup
from prft.engine import Ledger, Replica
from prft.pof import construct_proof

N = 5
T0 = 1
DELTA = 40


@pytest.fixture
def pki():
    return setup(N)


def _replicas(pki, mempool=None):
    registry, keys = pki
    return [Replica(p, N, T0, keys[p], registry, DELTA, mempool=mempool) for p in range(N)]


def _pump(replicas, pending, until_round=1, now=0, sent=None):
    """ Deliver everything at once, breadth first, dropping messages of rounds >= until_round. """
    queue = deque(pending)
    while queue:
        src, o = queue.popleft()
        if o.msg.round >= until_round:
            continue
        if sent is not None:
            sent.append((src, o.msg.variant))
        targets = range(len(replicas)) if o.recipients is None else o.recipients
        for p in targets:
            for nxt in replicas[p].receive(o.msg, now):
                queue.append((p, nxt))


def _start(replicas, now=0):
    return [(p, o) for p, r in enumerate(replicas) for o in r.start_round(now)]


def _propose(keys, round_, txs=(), parent=GENESIS_DIGEST):
    leader = round_ % N
    block = Block(round=round_, proposer=leader, parent_digest=parent, txs=tuple(Transaction(t) for t in txs))
    return sign_message(keys[leader], Message(MessageType.PROPOSE, round_, leader, digest=block.digest, block=block))


def _variants(outbound):
    return [o.msg.variant for o in outbound]


def test_ledger_keeps_a_single_chain():
    ledger = Ledger()
    b1 = Block(round=0, proposer=0, parent_digest=GENESIS_DIGEST)
    b2 = Block(round=1, proposer=1, parent_digest=b1.digest)
    assert not ledger.add_tentative(b2)
    assert ledger.add_tentative(b1)
    assert ledger.tentative == b1
    assert ledger.height == 0
    ledger.finalize(b1)
    assert ledger.tip == b1.digest
    assert ledger.tentative is None
    with pytest.raises(InvariantViolation):
        ledger.finalize(Block(round=2, proposer=2, parent_digest=GENESIS_DIGEST))
    ledger.finalize(b2)
    assert ledger.height == 2
    assert ledger.prefix(1) == [b1]
    assert ledger.prefix(5) == []


def test_rollback_drops_only_the_tentative_block():
    ledger = Ledger()
    b1 = Block(round=0, proposer=0, parent_digest=GENESIS_DIGEST)
    ledger.add_tentative(b1)
    assert ledger.rollback() == b1
    assert ledger.rollback() is None
    assert ledger.height == 0


def test_replica_rejects_foreign_key(pki):
    registry, keys = pki
    with pytest.raises(ValueError):
        Replica(1, N, T0, keys[2], registry, DELTA)


def test_honest_round_finalizes_the_leader_block(pki):
    mempool = [Transaction(f'tx-{i}') for i in range(6)]
    replicas = _replicas(pki, mempool=mempool)
    _pump(replicas, _start(replicas))
    digests = set()
    for r in replicas:
        assert r.state.round == 1
        assert r.state.ledger.height == 1
        digests.add(r.state.ledger.tip)
    assert len(digests) == 1
    block = replicas[0].state.ledger.final_blocks[0]
    assert block.proposer == 0
    assert block.tx_ids == ['tx-0', 'tx-1', 'tx-2', 'tx-3']
    kinds = [e['kind'] for e in replicas[3].drain_events()]
    assert kinds.index('tentative') < kinds.index('finalize') < kinds.index('round_end')


def test_second_round_skips_included_transactions(pki):
    mempool = [Transaction(f'tx-{i}') for i in range(6)]
    replicas = _replicas(pki, mempool=mempool)
    _pump(replicas, _start(replicas), until_round=2)
    assert all(r.state.ledger.height == 2 for r in replicas)
    assert replicas[2].state.ledger.final_blocks[1].tx_ids == ['tx-4', 'tx-5']


def test_leader_equivocation_triggers_view_change(pki):
    registry, keys = pki
    replica = _replicas(pki)[1]
    out = replica.receive(_propose(keys, 0, txs=('a',)), 0)
    assert _variants(out) == [MessageType.VOTE]
    out = replica.receive(_propose(keys, 0, txs=('b',)), 1)
    assert MessageType.VIEW_CHANGE in _variants(out)
    assert any(e['kind'] == 'equivocation' for e in replica.drain_events())


def test_propose_from_non_leader_is_ignored(pki):
    registry, keys = pki
    replica = _replicas(pki)[1]
    block = Block(round=0, proposer=3, parent_digest=GENESIS_DIGEST)
    forged = sign_message(keys[3], Message(MessageType.PROPOSE, 0, 3, digest=block.digest, block=block))
    assert replica.receive(forged, 0) == []
    assert replica.state.proposal is None


def test_timeout_in_vote_phase_commits_bottom(pki):
    registry, keys = pki
    replica = _replicas(pki)[2]
    replica.receive(_propose(keys, 0), 0)
    out = replica.on_timeout(DELTA)
    commits = [o.msg for o in out if o.msg.variant is MessageType.COMMIT]
    assert len(commits) == 1
    assert commits[0].digest == BOTTOM
    assert MessageType.VIEW_CHANGE in _variants(out)


def test_view_change_moves_to_next_round(pki):
    registry, keys = pki
    replica = _replicas(pki)[0]
    vcs = {p: sign_message(keys[p], Message(MessageType.VIEW_CHANGE, 0, p, phase=Phase.PROPOSE)) for p in range(4)}
    for p in (1, 2, 3):
        out = replica.receive(vcs[p], 5)
        assert MessageType.COMMIT_VIEW not in _variants(out)
    # buffered until the replica reaches round 1
    assert replica.receive(_propose(keys, 1), 6) == []

    own = [o.msg for o in replica.on_timeout(DELTA) if o.msg.variant is MessageType.VIEW_CHANGE]
    assert len(own) == 1
    out = replica.receive(own[0], DELTA)
    commit_views = [o.msg for o in out if o.msg.variant is MessageType.COMMIT_VIEW]
    assert len(commit_views) == 1
    assert replica.state.phase is Phase.VIEW_CHANGE_WAIT

    cert = tuple(vcs[p] for p in range(4))
    out = replica.receive(commit_views[0], DELTA)
    for p in (1, 2):
        out = replica.receive(sign_message(keys[p], Message(MessageType.COMMIT_VIEW, 0, p, certificate=cert)), DELTA)
        assert replica.state.round == 0
    out = replica.receive(sign_message(keys[3], Message(MessageType.COMMIT_VIEW, 0, 3, certificate=cert)), DELTA)
    assert replica.state.round == 1
    assert replica.state.ledger.height == 0
    # the buffered round-1 proposal is voted on as soon as the round starts
    assert [o.msg.round for o in out if o.msg.variant is MessageType.VOTE] == [1]


def test_strict_step5_waits_for_one_more_commit_view(pki):
    registry, keys = pki
    replica = Replica(0, N, T0, keys[0], registry, DELTA, strict_step5=True)
    cert = tuple(sign_message(keys[p], Message(MessageType.VIEW_CHANGE, 0, p, phase=Phase.PROPOSE))
                 for p in range(4))
    for p in (1, 2, 3):
        replica.receive(sign_message(keys[p], Message(MessageType.COMMIT_VIEW, 0, p, certificate=cert)), DELTA)
    # the first valid CommitView already made the replica send its own
    assert replica.state.committed_view
    assert len(replica.state.cv_msgs) == 3
    replica.receive(sign_message(keys[0], Message(MessageType.COMMIT_VIEW, 0, 0, certificate=cert)), DELTA)
    assert replica.state.round == 0
    replica.receive(sign_message(keys[4], Message(MessageType.COMMIT_VIEW, 0, 4, certificate=cert)), DELTA)
    assert replica.state.round == 1


def test_one_double_signer_does_not_stop_the_final(pki):
    registry, keys = pki
    replicas = _replicas(pki)
    pending = _start(replicas)
    # player 4 also commits to bottom, which conflicts with its commit to the block
    bottom = sign_message(keys[4], Message(MessageType.COMMIT, 0, 4, digest=BOTTOM))
    assert replicas[0].receive(bottom, 0) == []
    sent = []
    _pump(replicas, pending, sent=sent)
    assert (0, MessageType.FINAL) in sent
    assert MessageType.EXPOSE not in {variant for _, variant in sent}
    assert replicas[0].state.ledger.height == 1
    assert replicas[0].collateral.stashed_players == frozenset()


def test_commit_view_with_short_certificate_is_rejected(pki):
    registry, keys = pki
    replica = _replicas(pki)[0]
    cert = tuple(sign_message(keys[p], Message(MessageType.VIEW_CHANGE, 0, p, phase=Phase.VOTE)) for p in (1, 2))
    out = replica.receive(sign_message(keys[1], Message(MessageType.COMMIT_VIEW, 0, 1, certificate=cert)), 0)
    assert out == []
    assert replica.state.cv_msgs == {}


def _double_vote_proof(keys, signers, round_=0):
    h_a, h_b = hashlib.sha256(b'a').digest(), hashlib.sha256(b'b').digest()
    table = {0: {}, 1: {}}
    for s in signers:
        table[0][s] = sign_message(keys[s], Message(MessageType.VOTE, round_, s, digest=h_a))
        table[1][s] = sign_message(keys[s], Message(MessageType.VOTE, round_, s, digest=h_b))
    return construct_proof(table, T0)


def test_valid_expose_stashes_and_aborts_the_round(pki):
    registry, keys = pki
    replica = _replicas(pki)[1]
    proof = _double_vote_proof(keys, (3, 4))
    expose = sign_message(keys[2], Message(MessageType.EXPOSE, 0, 2, proof=proof))
    replica.receive(expose, 3)
    assert replica.collateral.stashed_players == {3, 4}
    assert replica.state.round == 1
    kinds = {e['kind']: e for e in replica.drain_events()}
    assert kinds['stash']['guilty'] == [3, 4]
    assert 'expose_abort' in kinds


def test_expose_below_threshold_is_rejected(pki):
    registry, keys = pki
    replica = _replicas(pki)[1]
    proof = _double_vote_proof(keys, (4,))
    replica.receive(sign_message(keys[2], Message(MessageType.EXPOSE, 0, 2, proof=proof)), 3)
    assert replica.collateral.stashed_players == frozenset()
    assert replica.state.round == 0


def test_past_round_expose_still_stashes(pki):
    registry, keys = pki
    replica = _replicas(pki)[1]
    replica.state.new_round()
    proof = _double_vote_proof(keys, (3, 4), round_=0)
    replica.receive(sign_message(keys[2], Message(MessageType.EXPOSE, 0, 2, proof=proof)), 3)
    assert replica.collateral.stashed_players == {3, 4}
    assert replica.state.round == 1


def test_double_votes_seen_directly_produce_an_expose(pki):
    registry, keys = pki
    replica = _replicas(pki)[0]
    proposals = [_propose(keys, 0, txs=(t,)) for t in ('a', 'b')]
    exposes = []
    for s in (2, 3):
        for prop in proposals:
            vote = sign_message(keys[s], Message(MessageType.VOTE, 0, s, digest=prop.digest,
                                                 proposal=prop.header()))
            exposes += [o.msg for o in replica.receive(vote, 1) if o.msg.variant is MessageType.EXPOSE]
    assert len(exposes) == 1
    assert exposes[0].proof.accused >= {2, 3}
