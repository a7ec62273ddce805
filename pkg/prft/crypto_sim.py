"""
Simulated PKI. Signatures are keyed-digest tags: only the holder of a player's secret
tag can produce a tag that verifies for that player. kappa is the nominal signature
size used for byte accounting.
"""
import hashlib
import hmac
import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_KAPPA = 64


@dataclass(frozen=True)
class KeyPair:
    owner: int
    secret_tag: bytes

    def __repr__(self):
        return f'KeyPair(owner={self.owner})'


@dataclass(frozen=True)
class Signature:
    signer: int
    digest: bytes
    tag: bytes
    size_kappa: int = DEFAULT_KAPPA

    def to_record(self):
        return [self.signer, self.digest.hex(), self.tag.hex(), self.size_kappa]

    @classmethod
    def from_record(cls, rec):
        return cls(int(rec[0]), bytes.fromhex(rec[1]), bytes.fromhex(rec[2]), int(rec[3]))


class KeyRegistry:
    """
    Public verification handles of all players, fixed after setup.

    The verification handle of a player is, inside the simulation, the same secret the
    trusted setup handed to that player; only the registry and the owner ever hold it.
    """

    def __init__(self, handles, kappa=DEFAULT_KAPPA):
        self._handles = dict(handles)
        self.kappa = kappa

    @property
    def players(self):
        return sorted(self._handles)

    def __contains__(self, player):
        return player in self._handles

    def __len__(self):
        return len(self._handles)

    def check(self, signer, data, tag):
        handle = self._handles.get(signer)
        if handle is None:
            return False
        return hmac.compare_digest(_tag(handle, data), tag)


def _tag(secret, data):
    return hmac.new(secret, data, hashlib.sha256).digest()


def setup(n, kappa=DEFAULT_KAPPA, seed=0):
    """
    Trusted setup before round 0.

    Args:
        n (int): number of players
        kappa (int): nominal signature size in bytes
        seed (int): seed of the generator drawing the secret tags

    Returns:
        registry (KeyRegistry), keys (dict player -> KeyPair)
    """
    if n < 1:
        raise ValueError(f'need at least one player, got n={n}')
    rng = np.random.default_rng([seed, 0x5EED])
    keys = {i: KeyPair(i, rng.bytes(32)) for i in range(n)}
    registry = KeyRegistry({i: k.secret_tag for i, k in keys.items()}, kappa=kappa)
    logger.debug('setup: %d key pairs, kappa=%d', n, kappa)
    return registry, keys


def sign(key: KeyPair, data: bytes, kappa=DEFAULT_KAPPA) -> Signature:
    return Signature(signer=key.owner, digest=hashlib.sha256(data).digest(),
                     tag=_tag(key.secret_tag, data), size_kappa=kappa)


def verify(registry: KeyRegistry, sig: Signature, data: bytes) -> bool:
    """ False on tampered bytes, wrong signer or unknown signer. Never raises. """
    if sig.digest != hashlib.sha256(data).digest():
        return False
    return registry.check(sig.signer, data, sig.tag)
