import pytest

from prft.crypto_sim import KeyRegistry, setup, sign, verify


def test_setup_is_seeded():
    _, keys_a = setup(4, seed=3)
    _, keys_b = setup(4, seed=3)
    _, keys_c = setup(4, seed=4)
    assert keys_a[2].secret_tag == keys_b[2].secret_tag
    assert keys_a[2].secret_tag != keys_c[2].secret_tag
    assert len({k.secret_tag for k in keys_a.values()}) == 4


def test_sign_verify():
    registry, keys = setup(4)
    sig = sign(keys[1], b'payload')
    assert sig.signer == 1
    assert verify(registry, sig, b'payload')
    assert not verify(registry, sig, b'payload!')


def test_cannot_sign_for_another_player():
    registry, keys = setup(4)
    sig = sign(keys[1], b'payload')
    forged = type(sig)(signer=2, digest=sig.digest, tag=sig.tag)
    assert not verify(registry, forged, b'payload')


def test_unknown_signer():
    registry, keys = setup(3)
    _, other = setup(5, seed=9)
    assert 4 not in registry
    assert not verify(registry, sign(other[4], b'x'), b'x')
    assert len(KeyRegistry({})) == 0


def test_setup_needs_players():
    with pytest.raises(ValueError):
        setup(0)


def test_verification_keeps_no_state():
    registry, keys = setup(4)
    before = dict(vars(registry))
    for i in range(1000):
        payload = b'payload-%d' % i
        assert verify(registry, sign(keys[i % 4], payload), payload)
    assert vars(registry) == before
    sig = sign(keys[0], b'payload')
    assert verify(registry, sig, b'payload')
    tampered = type(sig)(signer=0, digest=sig.digest, tag=bytes(len(sig.tag)))
    assert not verify(registry, tampered, b'payload')
