"""Cryptographic primitives used by the protocol.

* key agreement: ECDH on P-256 followed by HKDF-SHA256 with a context label
* authenticated encryption: AES-256-GCM, ``nonce || ciphertext || tag``
* t-out-of-n secret sharing: bytewise Shamir over GF(2^8)
* secure randomness: ``os.urandom``, or a seeded stream in simulation mode
* seed expansion: AES-128-CTR keyed by a 16-byte seed

Elliptic-curve and AEAD code comes from ``cryptography``; nothing here
reimplements those primitives.
"""

from __future__ import annotations

import hashlib
import os
import random
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Protocol

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from . import kernels
from .errors import AuthenticationError, ConfigError, ConfigErrorCode, SecAggError
from .modfield import MAX_MODULUS, FieldVector

SEED_BYTES = 16
KEY_BYTES = 32
NONCE_BYTES = 12
SCALAR_BYTES = 32
PUBLIC_KEY_BYTES = 65  # uncompressed SEC1 point

MASK_CONTEXT = b"secaggplus/v1/mask-seed"
ENCRYPTION_CONTEXT = b"secaggplus/v1/share-encryption"

_CURVE = ec.SECP256R1()
_CURVE_ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551


class CryptoError(SecAggError, ValueError):
    pass


class ShareError(CryptoError):
    pass


# --------------------------------------------------------------------------
# Randomness
# --------------------------------------------------------------------------


class Randomness(Protocol):
    def token_bytes(self, n: int) -> bytes: ...


class SystemRandomness:
    """OS entropy. The default everywhere outside simulation."""

    def token_bytes(self, n: int) -> bytes:
        return os.urandom(n)


class SeededRandomness:
    """Reproducible byte stream for simulations. Not for production secrets."""

    def __init__(self, seed: int | bytes | str) -> None:
        if isinstance(seed, str):
            seed = seed.encode()
        if isinstance(seed, bytes):
            seed = int.from_bytes(hashlib.sha256(seed).digest(), "big")
        self._seed = seed
        self._rng = random.Random(seed)

    def token_bytes(self, n: int) -> bytes:
        return self._rng.randbytes(n)

    def child(self, label: str | int) -> SeededRandomness:
        """Independent stream derived from this handle's seed and ``label``."""
        return SeededRandomness(f"{self._seed}/{label}")


_SYSTEM = SystemRandomness()


def secure_random_seed(rng: Randomness | None = None) -> bytes:
    seed = (rng or _SYSTEM).token_bytes(SEED_BYTES)
    if len(seed) != SEED_BYTES:
        raise CryptoError("entropy source returned a short read")
    return seed


def _check_seed(seed: bytes) -> None:
    if len(seed) != SEED_BYTES:
        raise CryptoError(f"seed must be {SEED_BYTES} bytes, got {len(seed)}")


# --------------------------------------------------------------------------
# Key agreement
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class KeyPair:
    secret_scalar: bytes = field(repr=False)
    public_point: bytes

    @cached_property
    def private_key(self) -> ec.EllipticCurvePrivateKey:
        return _private_key_from_scalar(self.secret_scalar)


def _private_key_from_scalar(scalar: bytes) -> ec.EllipticCurvePrivateKey:
    if len(scalar) != SCALAR_BYTES:
        raise CryptoError(f"secret scalar must be {SCALAR_BYTES} bytes")
    value = int.from_bytes(scalar, "big")
    if not 0 < value < _CURVE_ORDER:
        raise CryptoError("secret scalar out of range for P-256")
    return ec.derive_private_key(value, _CURVE)


def _encode_public(key: ec.EllipticCurvePublicKey) -> bytes:
    return key.public_bytes(Encoding.X962, PublicFormat.UncompressedPoint)


def _keypair_from_private(priv: ec.EllipticCurvePrivateKey) -> KeyPair:
    scalar = priv.private_numbers().private_value.to_bytes(SCALAR_BYTES, "big")
    pair = KeyPair(scalar, _encode_public(priv.public_key()))
    pair.__dict__["private_key"] = priv
    return pair


def keypair_from_scalar(scalar: bytes) -> KeyPair:
    return _keypair_from_private(_private_key_from_scalar(scalar))


def generate_keypair(rng_seed: bytes | None = None) -> KeyPair:
    """Fresh P-256 key pair; deterministic when ``rng_seed`` is given."""
    if rng_seed is None:
        return _keypair_from_private(ec.generate_private_key(_CURVE))
    _check_seed(rng_seed)
    # 48 bytes reduced mod (order - 1) keeps the scalar distribution within 2^-128 of uniform
    okm = HKDF(hashes.SHA256(), 48, salt=None, info=b"secaggplus/v1/keygen").derive(rng_seed)
    value = int.from_bytes(okm, "big") % (_CURVE_ORDER - 1) + 1
    return _keypair_from_private(ec.derive_private_key(value, _CURVE))


def load_public_key(public: bytes) -> ec.EllipticCurvePublicKey:
    try:
        return ec.EllipticCurvePublicKey.from_encoded_point(_CURVE, bytes(public))
    except (ValueError, TypeError) as exc:
        raise CryptoError(f"malformed public key: {exc}") from exc


def key_agree(my_secret: KeyPair | bytes, their_public: bytes, context: bytes) -> bytes:
    """ECDH shared point run through HKDF with ``context`` as the info label."""
    priv = my_secret.private_key if isinstance(my_secret, KeyPair) else _private_key_from_scalar(my_secret)
    peer = load_public_key(their_public)
    try:
        shared = priv.exchange(ec.ECDH(), peer)
    except ValueError as exc:
        raise CryptoError(f"key agreement failed: {exc}") from exc
    return HKDF(hashes.SHA256(), KEY_BYTES, salt=None, info=context).derive(shared)


# --------------------------------------------------------------------------
# Authenticated encryption
# --------------------------------------------------------------------------


def aead_encrypt(key: bytes, plaintext: bytes, rng: Randomness | None = None) -> bytes:
    if len(key) != KEY_BYTES:
        raise CryptoError(f"AEAD key must be {KEY_BYTES} bytes")
    nonce = (rng or _SYSTEM).token_bytes(NONCE_BYTES)
    return nonce + AESGCM(key).encrypt(nonce, plaintext, None)


def aead_decrypt(key: bytes, ciphertext: bytes) -> bytes:
    if len(key) != KEY_BYTES:
        raise CryptoError(f"AEAD key must be {KEY_BYTES} bytes")
    if len(ciphertext) < NONCE_BYTES + 16:
        raise AuthenticationError("ciphertext too short")
    nonce, body = ciphertext[:NONCE_BYTES], ciphertext[NONCE_BYTES:]
    try:
        return AESGCM(key).decrypt(nonce, body, None)
    except InvalidTag:
        raise AuthenticationError("ciphertext failed authentication") from None


# --------------------------------------------------------------------------
# Shamir secret sharing over GF(256)
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SecretShare:
    index: int
    payload: bytes = field(repr=False)

    def to_bytes(self) -> bytes:
        return bytes([self.index]) + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> SecretShare:
        if len(data) < 2 or data[0] == 0:
            raise ShareError("malformed share encoding")
        return cls(data[0], bytes(data[1:]))


def _check_split_params(share_num: int, threshold: int) -> None:
    if not 1 <= share_num <= 255:
        raise ConfigError(ConfigErrorCode.INVALID_SHARE_NUM, f"share_num must be in [1, 255], got {share_num}")
    if not 1 <= threshold <= share_num:
        raise ConfigError(
            ConfigErrorCode.INVALID_THRESHOLD,
            f"threshold must be in [1, share_num={share_num}], got {threshold}",
        )


def shamir_split(
    secret: bytes, share_num: int, threshold: int, rng: Randomness | None = None
) -> list[SecretShare]:
    if not secret:
        raise ShareError("secret must be non-empty")
    _check_split_params(share_num, threshold)
    coeffs = (rng or _SYSTEM).token_bytes(len(secret) * (threshold - 1))
    rows = kernels.gf256_eval_shares(bytes(secret), coeffs, share_num)
    width = len(secret)
    return [SecretShare(i + 1, rows[i * width : (i + 1) * width]) for i in range(share_num)]


def shamir_reconstruct(shares: Iterable[SecretShare], threshold: int) -> bytes:
    shares = list(shares)
    if threshold < 1:
        raise ShareError("threshold must be >= 1")
    if len(shares) < threshold:
        raise ShareError(f"need {threshold} shares, got {len(shares)}")
    indices = [s.index for s in shares]
    if len(set(indices)) != len(indices):
        raise ShareError("duplicate share indices")
    if any(not 1 <= i <= 255 for i in indices):
        raise ShareError("share index out of range")
    widths = {len(s.payload) for s in shares}
    if len(widths) != 1:
        raise ShareError("share payload lengths differ")
    used = shares[:threshold]
    xs = bytes(s.index for s in used)
    ys = b"".join(s.payload for s in used)
    return kernels.gf256_interpolate_zero(xs, ys)


# --------------------------------------------------------------------------
# Seed expansion
# --------------------------------------------------------------------------


def prg_stream(seed: bytes, nbytes: int) -> bytes:
    _check_seed(seed)
    enc = Cipher(algorithms.AES(seed), modes.CTR(bytes(16))).encryptor()
    return enc.update(bytes(nbytes)) + enc.finalize()


def _check_prg_args(length: int, modulus: int) -> None:
    if length < 1:
        raise CryptoError("PRG length must be >= 1")
    if not 2 <= modulus <= MAX_MODULUS:
        raise CryptoError(f"PRG modulus must be in [2, 2^62], got {modulus}")


def prg_expand(seed: bytes, length: int, modulus: int) -> FieldVector:
    """Deterministic mask: 8 keystream bytes per element, reduced mod ``modulus``."""
    _check_prg_args(length, modulus)
    return FieldVector(kernels.reduce_stream(prg_stream(seed, 8 * length), modulus), modulus)


def prg_accumulate(acc: FieldVector, seed: bytes, sign: int) -> None:
    """In place: ``acc += sign * prg_expand(seed, len(acc), acc.modulus)``."""
    _check_prg_args(len(acc), acc.modulus)
    kernels.accumulate_stream(acc.values, prg_stream(seed, 8 * len(acc)), acc.modulus, sign)


def derive_seed(key: bytes) -> bytes:
    """Pairwise mask seed from an agreed 32-byte key."""
    return key[:SEED_BYTES]

