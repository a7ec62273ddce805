"""
The pRFT replica state machine: Propose, Vote, Commit and Reveal phases, tentative
and final consensus, per-phase timers, and the view-change sub-protocol.

A Replica never touches the network. Every handler takes the received message and
the current simulation time and returns the list of Outbound messages to send;
`netsim` delivers them and calls `on_timeout` when `state.timer_deadline` passes.
"""
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from prft.core import (BOTTOM, GENESIS_DIGEST, Block, InvariantViolation, Message, MessageType, Phase,
                       block_digest, leader_of, sign_message, verify_message)
from prft.pof import CollateralLedger, InvalidProofError, ProofOfFraud, construct_proof, merge_proofs, verify_pof

logger = logging.getLogger(__name__)

# Evidence table row slots for certificates, per carrying message
_SLOT_COMMIT_CERT = 1_000
_SLOT_REVEAL_CERT = 2_000
_SLOT_VOTE_PROPOSAL = 3_000


class LedgerStatus(Enum):
    TENTATIVE = 'Tentative'
    FINAL = 'Final'


@dataclass
class LedgerEntry:
    block: Block
    status: LedgerStatus


class Ledger:
    """ Single chain of blocks. Final blocks are never replaced; at most one Tentative block sits on top. """

    def __init__(self):
        self.blocks = []

    @property
    def final_blocks(self):
        return [e.block for e in self.blocks if e.status is LedgerStatus.FINAL]

    @property
    def tip(self):
        finals = self.final_blocks
        return finals[-1].digest if finals else GENESIS_DIGEST

    @property
    def height(self):
        return len(self.final_blocks)

    @property
    def tentative(self):
        if self.blocks and self.blocks[-1].status is LedgerStatus.TENTATIVE:
            return self.blocks[-1].block
        return None

    def contains(self, digest):
        return any(e.block.digest == digest for e in self.blocks if e.status is LedgerStatus.FINAL)

    def tx_ids(self):
        return {tx.id for b in self.final_blocks for tx in b.txs}

    def add_tentative(self, block):
        self.rollback()
        if block.parent_digest != self.tip:
            return False
        self.blocks.append(LedgerEntry(block, LedgerStatus.TENTATIVE))
        return True

    def rollback(self):
        """ Drop a Tentative block. Returns it, or None. """
        tentative = self.tentative
        if tentative is not None:
            self.blocks.pop()
        return tentative

    def finalize(self, block):
        if block.parent_digest != self.tip:
            raise InvariantViolation(f'block {block.digest.hex()[:8]} does not extend the ledger tip')
        tentative = self.tentative
        if tentative is not None and tentative.digest == block.digest:
            self.blocks[-1].status = LedgerStatus.FINAL
        else:
            self.rollback()
            self.blocks.append(LedgerEntry(block, LedgerStatus.FINAL))

    def prefix(self, c):
        """ C^{|c}: the final chain without its last c blocks. """
        finals = self.final_blocks
        return finals[:max(len(finals) - c, 0)]


@dataclass
class Outbound:
    """ A message to send. recipients=None broadcasts; relay=True forwards a message signed by someone else. """
    msg: Message
    recipients: Optional[tuple] = None
    relay: bool = False


@dataclass
class ReplicaState:
    me: int
    round: int = 0
    phase: Phase = Phase.PROPOSE
    votes: dict = field(default_factory=lambda: defaultdict(dict))
    commits: dict = field(default_factory=lambda: defaultdict(dict))
    reveals: dict = field(default_factory=lambda: defaultdict(dict))
    M_i: dict = field(default_factory=dict)
    D_i: ProofOfFraud = field(default_factory=ProofOfFraud)
    F_i: dict = field(default_factory=lambda: defaultdict(dict))
    vc_msgs: dict = field(default_factory=lambda: defaultdict(dict))
    cv_msgs: dict = field(default_factory=dict)
    ledger: Ledger = field(default_factory=Ledger)
    timer_deadline: Optional[int] = None
    # round-scoped bookkeeping
    proposal: Optional[Message] = None
    pending_proposal: Optional[Message] = None
    evidence: dict = field(default_factory=lambda: defaultdict(lambda: defaultdict(dict)))
    seen_digests: dict = field(default_factory=lambda: defaultdict(set))
    conflicted: set = field(default_factory=set)
    sent: set = field(default_factory=set)
    vc_forwarded: set = field(default_factory=set)
    committed_view: bool = False
    finalized: bool = False

    def new_round(self):
        self.round += 1
        self.phase = Phase.PROPOSE
        self.votes = defaultdict(dict)
        self.commits = defaultdict(dict)
        self.reveals = defaultdict(dict)
        self.M_i = {}
        self.D_i = ProofOfFraud()
        self.F_i = defaultdict(dict)
        self.vc_msgs = defaultdict(dict)
        self.cv_msgs = {}
        self.proposal = None
        self.pending_proposal = None
        self.evidence = defaultdict(lambda: defaultdict(dict))
        self.seen_digests = defaultdict(set)
        self.conflicted = set()
        self.sent = set()
        self.vc_forwarded = set()
        self.committed_view = False
        self.finalized = False


class Replica:
    """
    One player running pRFT.

    Attributes:
        n (int): number of players
        t0 (int): byzantine tolerance; quorums are n - t0
        key (KeyPair): this player's signing key
        registry (KeyRegistry): verification handles of all players
        delta (int): per-phase waiting time, in ticks
        block_size (int): maximum number of transactions per proposed block
        strict_step5 (bool): require > n - t0 CommitViews instead of >= n - t0
        collateral (float): deposit L of every player in the local collateral ledger
        mempool (list): transactions input to this player, FIFO
        tx_filter (callable): optional predicate a leader applies when selecting transactions
    """

    def __init__(self, me, n, t0, key, registry, delta, block_size=4, strict_step5=False, collateral=10.0,
                 mempool=None, tx_filter: Optional[Callable] = None):
        if key.owner != me:
            raise ValueError(f'replica {me} got the key of player {key.owner}')
        self.n = n
        self.t0 = t0
        self.quorum = n - t0
        self.key = key
        self.registry = registry
        self.delta = delta
        self.block_size = block_size
        self.strict_step5 = strict_step5
        self.state = ReplicaState(me=me)
        self.collateral = CollateralLedger.deposit(range(n), collateral)
        self.mempool = list(mempool or [])
        self.tx_filter = tx_filter
        self.blocks = {}
        self.late_finals = defaultdict(dict)
        self.future = defaultdict(list)
        self.events = []

    @property
    def me(self):
        return self.state.me

    def __repr__(self):
        return f'Replica(me={self.me}, round={self.state.round}, phase={self.state.phase.value})'

    # ------------------------------------------------------------------ helpers

    def _log(self, kind, **fields):
        rec = {'kind': kind, 'actor': self.me, 'round': self.state.round}
        rec.update(fields)
        self.events.append(rec)

    def drain_events(self):
        events, self.events = self.events, []
        return events

    def sign(self, variant, **payload):
        """ Sign a message of this replica for the current round and mark the variant as sent. """
        msg = Message(variant=variant, round=self.state.round, sender=self.me, **payload)
        self.state.sent.add(variant)
        return sign_message(self.key, msg)

    def _arm(self, now):
        self.state.timer_deadline = now + self.delta

    def _enter(self, phase, now):
        if self.state.phase is not phase:
            self.state.phase = phase
            self._log('phase', phase=phase.value)
        self._arm(now)

    def _evidence(self, offender, reason):
        self._log('evidence', offender=offender, reason=reason)
        logger.debug('replica %d: evidence against %d in round %d: %s', self.me, offender, self.state.round, reason)

    def _record(self, variant, row, msg):
        """ Put a verified signed message into the evidence table of its phase. """
        st = self.state
        table = st.evidence[variant]
        if msg.digest is not None:
            seen = st.seen_digests[(variant, msg.sender)]
            seen.add(msg.digest)
            if len(seen) > 1:
                st.conflicted.add(msg.sender)
        if row is not None:
            table[row].setdefault(msg.sender, msg)
            return
        slot = 0
        while True:
            held = table[(self.me, slot)].get(msg.sender)
            if held is None:
                table[(self.me, slot)][msg.sender] = msg
                return
            if held.digest == msg.digest:
                return
            slot += 1

    def _valid_proposal(self, proposal, round_, digest=None):
        return (proposal is not None and proposal.variant is MessageType.PROPOSE
                and proposal.round == round_ and proposal.sender == leader_of(round_, self.n)
                and (digest is None or proposal.digest == digest)
                and verify_message(self.registry, proposal))

    def _valid_vote(self, vote, digest):
        return (vote.variant is MessageType.VOTE and vote.round == self.state.round and vote.digest == digest
                and verify_message(self.registry, vote) and self._valid_proposal(vote.proposal, vote.round, digest))

    def _valid_commit(self, commit, digest):
        return (commit.variant is MessageType.COMMIT and commit.round == self.state.round
                and commit.digest == digest and verify_message(self.registry, commit))

    @staticmethod
    def _distinct(msgs):
        return len({m.sender for m in msgs}) == len(msgs)

    def _select_txs(self, mempool):
        included = self.state.ledger.tx_ids()
        selected = []
        for tx in mempool:
            if len(selected) >= self.block_size:
                break
            if tx.id in included or (self.tx_filter is not None and not self.tx_filter(tx)):
                continue
            selected.append(tx)
        return tuple(selected)

    # ------------------------------------------------------------------ rounds

    def start_round(self, now, mempool=None):
        """ Enter the Propose phase of the current round; the leader proposes. Replays buffered messages. """
        st = self.state
        st.phase = Phase.PROPOSE
        self._arm(now)
        self._log('round_start', leader=leader_of(st.round, self.n))
        out = []
        if self.me == leader_of(st.round, self.n):
            txs = self._select_txs(self.mempool if mempool is None else mempool)
            block = Block(round=st.round, proposer=self.me, parent_digest=st.ledger.tip, txs=txs)
            out.append(Outbound(self.sign(MessageType.PROPOSE, digest=block.digest, block=block)))
        for msg in self.future.pop(st.round, []):
            out.extend(self.receive(msg, now))
        return out

    def _advance(self, now, reason):
        st = self.state
        if st.ledger.rollback() is not None:
            self._log('rollback', reason=reason)
        self._log('round_end', reason=reason)
        logger.debug('replica %d: round %d ends (%s)', self.me, st.round, reason)
        st.new_round()
        return self.start_round(now)

    # ------------------------------------------------------------------ dispatch

    def receive(self, msg: Message, now):
        """ Verify, route by round, then hand to the phase handler. """
        st = self.state
        if not verify_message(self.registry, msg):
            self._evidence(msg.sender, f'bad signature on {msg.variant.value}')
            return []
        if msg.round > st.round:
            self.future[msg.round].append(msg)
            return []
        if msg.round < st.round:
            if msg.variant is MessageType.FINAL:
                return self._late_final(msg, now)
            if msg.variant is MessageType.EXPOSE:
                self._apply_expose(msg)
            return []
        handler = {
            MessageType.PROPOSE: self.on_propose,
            MessageType.VOTE: self.on_vote,
            MessageType.COMMIT: self.on_commit,
            MessageType.REVEAL: self.on_reveal,
            MessageType.EXPOSE: self.on_expose,
            MessageType.FINAL: self.on_final,
            MessageType.VIEW_CHANGE: self.on_view_change,
            MessageType.COMMIT_VIEW: self.on_commit_view,
        }[msg.variant]
        return handler(msg, now)

    # ------------------------------------------------------------------ phases

    def on_propose(self, msg, now):
        st = self.state
        if msg.sender != leader_of(st.round, self.n):
            self._evidence(msg.sender, 'propose from non-leader')
            return []
        block = msg.block
        if (block is None or block.round != st.round or block.proposer != msg.sender
                or block_digest(block) != msg.digest):
            self._evidence(msg.sender, 'propose digest mismatch')
            return []
        self.blocks[msg.digest] = block
        self._record(MessageType.PROPOSE, None, msg.header())
        if st.proposal is not None:
            if st.proposal.digest != msg.digest:
                return self._equivocation(now)
            return []
        if st.committed_view or st.finalized:
            return []
        if block.parent_digest != st.ledger.tip:
            st.pending_proposal = msg.header()
            self._log('pending_proposal', digest=msg.digest.hex())
            return self._progress(now)
        return self._accept_proposal(msg.header(), now)

    def _accept_proposal(self, header, now):
        st = self.state
        st.proposal = header
        st.pending_proposal = None
        out = []
        if MessageType.VOTE not in st.sent:
            out.append(Outbound(self.sign(MessageType.VOTE, digest=header.digest, proposal=header)))
            self._enter(Phase.VOTE, now)
        out.extend(self._progress(now))
        return out

    def _equivocation(self, now):
        st = self.state
        self._log('equivocation', offender=leader_of(st.round, self.n))
        out = self._check_evidence(now)
        out.extend(self._send_view_change(Phase.PROPOSE, now))
        return out

    def on_vote(self, msg, now):
        st = self.state
        self._record(MessageType.VOTE, None, msg)
        out = []
        if not self._valid_proposal(msg.proposal, st.round, msg.digest):
            self._evidence(msg.sender, 'vote without matching leader proposal')
            out.extend(self._check_evidence(now))
            return out
        self._record(MessageType.PROPOSE, (msg.sender, _SLOT_VOTE_PROPOSAL), msg.proposal)
        st.votes[msg.digest][msg.sender] = msg
        leader_split = st.proposal is not None and st.proposal.digest != msg.digest
        out.extend(self._check_evidence(now))
        if leader_split and st.round == msg.round:
            out.extend(self._equivocation(now))
        if st.round == msg.round:
            out.extend(self._progress(now))
        return out

    def on_commit(self, msg, now):
        st = self.state
        self._record(MessageType.COMMIT, None, msg)
        cert = msg.certificate
        if msg.digest == BOTTOM:
            valid = not cert
        else:
            valid = (len(cert) >= self.quorum and self._distinct(cert)
                     and all(self._valid_vote(v, msg.digest) for v in cert))
        if not valid:
            self._evidence(msg.sender, 'commit with invalid vote certificate')
            return self._check_evidence(now)
        for vote in cert:
            self._record(MessageType.VOTE, (msg.sender, _SLOT_COMMIT_CERT), vote)
        st.commits[msg.digest][msg.sender] = msg
        out = self._check_evidence(now)
        if st.round == msg.round:
            out.extend(self._progress(now))
        return out

    def on_reveal(self, msg, now):
        st = self.state
        cert = msg.certificate
        valid = (msg.digest != BOTTOM and len(cert) >= self.quorum and self._distinct(cert)
                 and all(self._valid_commit(c, msg.digest) for c in cert))
        if not valid:
            self._evidence(msg.sender, 'reveal with invalid commit certificate')
            return []
        st.M_i[msg.sender] = cert
        st.reveals[msg.digest][msg.sender] = msg
        for commit in cert:
            self._record(MessageType.COMMIT, (msg.sender, _SLOT_REVEAL_CERT), commit)
        out = self._check_evidence(now)
        if st.round == msg.round:
            out.extend(self._progress(now))
        return out

    def on_final(self, msg, now):
        st = self.state
        if not self._valid_proposal(msg.proposal, msg.round, msg.digest):
            self._evidence(msg.sender, 'final without matching leader proposal')
            return []
        st.F_i[msg.digest][msg.sender] = msg
        return self._progress(now)

    def on_expose(self, msg, now):
        st = self.state
        if not self._apply_expose(msg):
            return []
        if st.finalized or msg.round != st.round:
            return []
        self._log('expose_abort', guilty=sorted(msg.proof.accused))
        return self._advance(now, 'expose')

    def _apply_expose(self, msg):
        if msg.proof is None:
            self._evidence(msg.sender, 'expose without proof')
            return False
        try:
            guilty = verify_pof(msg.proof, self.registry, self.t0)
        except InvalidProofError as e:
            self._evidence(msg.sender, f'rejected expose: {e}')
            return False
        fresh = sorted(p for p in guilty if not self.collateral.stashed.get(p, False))
        if fresh:
            self.collateral.stash(fresh)
            self._log('stash', guilty=fresh, expose_round=msg.round)
        return True

    # ------------------------------------------------------------------ thresholds

    def _check_evidence(self, now):
        """ Rebuild D_i from every phase table; expose once more than t0 signers are caught. """
        st = self.state
        # construct_proof only accuses signers with two digests, so fewer than t0 + 1 cannot expose
        if len(st.conflicted) <= self.t0 or MessageType.EXPOSE in st.sent:
            return []
        st.D_i = merge_proofs(construct_proof(table, self.t0) for _, table in sorted(
            st.evidence.items(), key=lambda kv: kv[0].value))
        if len(st.D_i) > self.t0 and MessageType.EXPOSE not in st.sent and not st.finalized:
            self._log('expose_sent', guilty=sorted(st.D_i.accused))
            return [Outbound(self.sign(MessageType.EXPOSE, proof=st.D_i))]
        return []

    def _proposal_for(self, digest):
        """ A verified leader Propose header for digest, taken from any certificate that carries one. """
        st = self.state
        candidates = [st.proposal]
        candidates += [v.proposal for v in st.votes.get(digest, {}).values()]
        for commit in st.commits.get(digest, {}).values():
            candidates += [v.proposal for v in commit.certificate]
        for reveal in st.reveals.get(digest, {}).values():
            for commit in reveal.certificate:
                candidates += [v.proposal for v in commit.certificate]
        candidates += [f.proposal for f in st.F_i.get(digest, {}).values()]
        for proposal in candidates:
            if self._valid_proposal(proposal, st.round, digest):
                return proposal
        return None

    def _extends_tip(self, digest):
        block = self.blocks.get(digest)
        return block is not None and block.parent_digest == self.state.ledger.tip

    def _progress(self, now):
        """ Fire every threshold that the current tallies reach, in phase order. """
        st = self.state
        out = []
        if st.committed_view or st.finalized:
            return out
        if st.proposal is None and st.pending_proposal is not None:
            if st.pending_proposal.digest in self.blocks and self._extends_tip(st.pending_proposal.digest):
                return self._accept_proposal(st.pending_proposal, now)

        if MessageType.COMMIT not in st.sent:
            for digest, votes in sorted(st.votes.items()):
                if len(votes) >= self.quorum:
                    cert = tuple(votes[s] for s in sorted(votes))
                    proposal = cert[0].proposal
                    out.append(Outbound(self.sign(MessageType.COMMIT, digest=digest, proposal=proposal,
                                                   certificate=cert)))
                    self._enter(Phase.COMMIT, now)
                    break

        if MessageType.REVEAL not in st.sent:
            for digest, commits in sorted(st.commits.items()):
                if digest != BOTTOM and len(commits) >= self.quorum:
                    block = self.blocks.get(digest)
                    if block is not None and st.ledger.add_tentative(block):
                        self._log('tentative', digest=digest.hex(), height=st.ledger.height)
                    cert = tuple(commits[s] for s in sorted(commits))
                    proposal = self._proposal_for(digest)
                    out.append(Outbound(self.sign(MessageType.REVEAL, digest=digest, proposal=proposal,
                                                   certificate=cert)))
                    self._enter(Phase.REVEAL, now)
                    break

        if MessageType.FINAL not in st.sent and MessageType.COMMIT_VIEW not in st.sent \
                and MessageType.EXPOSE not in st.sent:
            for digest, reveals in sorted(st.reveals.items()):
                if len(reveals) >= self.quorum and self._extends_tip(digest):
                    proposal = self._proposal_for(digest)
                    if proposal is not None:
                        out.append(Outbound(self.sign(MessageType.FINAL, digest=digest, proposal=proposal)))
                        break

        for digest, finals in sorted(st.F_i.items()):
            if len(finals) > self.n / 2 and self._extends_tip(digest):
                out.extend(self._finalize(digest, now))
                break
        return out

    def _finalize(self, digest, now):
        st = self.state
        block = self.blocks[digest]
        st.ledger.finalize(block)
        st.finalized = True
        self._log('finalize', digest=digest.hex(), height=st.ledger.height, block_round=block.round,
                  txs=block.tx_ids, adopted=False)
        logger.debug('replica %d: final block %s at height %d', self.me, digest.hex()[:8], st.ledger.height)
        out = []
        if MessageType.FINAL not in st.sent:
            proposal = self._proposal_for(digest)
            out.append(Outbound(self.sign(MessageType.FINAL, digest=digest, proposal=proposal)))
        out.extend(self._advance(now, 'final'))
        return out

    def _late_final(self, msg, now):
        """ Finals of a past round: adopt the block once more than n/2 signed it and it extends the tip. """
        if not self._valid_proposal(msg.proposal, msg.round, msg.digest):
            return []
        if self.state.ledger.contains(msg.digest):
            return []
        self.late_finals[(msg.round, msg.digest)][msg.sender] = msg
        adopted = False
        progress = True
        while progress:
            progress = False
            for (round_, digest), finals in sorted(self.late_finals.items()):
                if len(finals) > self.n / 2 and self._extends_tip(digest):
                    self.state.ledger.finalize(self.blocks[digest])
                    block = self.blocks[digest]
                    self._log('finalize', digest=digest.hex(), height=self.state.ledger.height,
                              block_round=block.round, txs=block.tx_ids, adopted=True)
                    del self.late_finals[(round_, digest)]
                    adopted = progress = True
                    break
        if not adopted:
            return []
        return self._progress(now)

    # ------------------------------------------------------------------ view change

    def on_timeout(self, now):
        st = self.state
        self._log('timeout', phase=st.phase.value)
        self._arm(now)
        if st.committed_view or st.finalized:
            return []
        out = []
        if st.phase in (Phase.PROPOSE, Phase.VOTE) and MessageType.COMMIT not in st.sent \
                and MessageType.VOTE in st.sent:
            out.append(Outbound(self.sign(MessageType.COMMIT, digest=BOTTOM, proposal=st.proposal)))
        out.extend(self._send_view_change(st.phase, now))
        return out

    def _send_view_change(self, phase, now):
        st = self.state
        if MessageType.VIEW_CHANGE in st.sent or MessageType.FINAL in st.sent or st.finalized:
            return []
        self._log('view_change_sent', phase=phase.value)
        return [Outbound(self.sign(MessageType.VIEW_CHANGE, phase=phase))]

    def _vc_signers(self):
        signers = {}
        for (_, round_), msgs in sorted(self.state.vc_msgs.items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
            if round_ == self.state.round:
                for s, m in msgs.items():
                    signers.setdefault(s, m)
        return signers

    def on_view_change(self, msg, now):
        st = self.state
        if msg.phase is None:
            self._evidence(msg.sender, 'view change without phase')
            return []
        same_phase = st.vc_msgs[(msg.phase, msg.round)]
        same_phase[msg.sender] = msg
        out = []
        if msg.sender != self.me and len(same_phase) >= self.quorum and msg.sender not in st.vc_forwarded:
            st.vc_forwarded.add(msg.sender)
            out.extend(Outbound(m, recipients=(msg.sender,), relay=True)
                       for s, m in sorted(same_phase.items()) if s != msg.sender)
        out.extend(self._maybe_commit_view(now))
        return out

    def _maybe_commit_view(self, now, certificate=None):
        st = self.state
        if MessageType.COMMIT_VIEW in st.sent or MessageType.FINAL in st.sent or st.finalized:
            return []
        if certificate is None:
            signers = self._vc_signers()
            if self.me not in signers or len(signers) < self.quorum:
                return []
            certificate = tuple(signers[s] for s in sorted(signers))
        st.committed_view = True
        self._enter(Phase.VIEW_CHANGE_WAIT, now)
        self._log('commit_view_sent')
        out = [Outbound(self.sign(MessageType.COMMIT_VIEW, certificate=certificate))]
        return out

    def on_commit_view(self, msg, now):
        st = self.state
        cert = msg.certificate
        valid = (len(cert) >= self.quorum and self._distinct(cert)
                 and all(m.variant is MessageType.VIEW_CHANGE and m.round == st.round
                         and verify_message(self.registry, m) for m in cert))
        if not valid:
            self._evidence(msg.sender, 'commit-view with invalid view-change set')
            return []
        st.cv_msgs[msg.sender] = msg
        out = self._maybe_commit_view(now, certificate=cert)
        needed = self.quorum + 1 if self.strict_step5 else self.quorum
        if len(st.cv_msgs) >= needed and not st.finalized:
            self._log('view_change')
            out.extend(self._advance(now, 'view_change'))
        return out
