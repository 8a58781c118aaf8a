"""Touchlink key transport and network-layer AES-CCM*.

Key transport: the transaction and response identifiers are expanded to a
16-byte block (tid, tid, rid, rid as big-endian words), encrypted with
AES-ECB under the master key to give the transport key, which in turn
AES-ECB-encrypts the network key.

Network frames use CCM* with a 4-byte MIC. The 13-byte nonce is
src_short (2, LE) | frame_counter (4, LE) | security level (1) | six
zero bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESCCM

KEY_LEN = 16
MIC_LEN = 4
SECURITY_LEVEL = 0x05  # ENC-MIC-32
TRANSACTION_LIFETIME_US = 8_000_000


class CryptoError(Exception):
    pass


class ZeroTransactionId(CryptoError, ValueError):
    pass


class IntegrityFailure(CryptoError):
    pass


@dataclass(frozen=True)
class Key128:
    data: bytes

    def __post_init__(self):
        if not isinstance(self.data, bytes) or len(self.data) != KEY_LEN:
            raise ValueError(f"a key is exactly {KEY_LEN} bytes")

    @classmethod
    def from_hex(cls, text: str) -> Key128:
        text = text.strip()
        if len(text) != 2 * KEY_LEN:
            raise ValueError(f"key must be {2 * KEY_LEN} hex characters, got {len(text)}")
        return cls(bytes.fromhex(text))

    @classmethod
    def zero(cls) -> Key128:
        return cls(bytes(KEY_LEN))

    def hex(self) -> str:
        return self.data.hex()

    def __str__(self) -> str:
        return self.hex()


@dataclass(frozen=True)
class TransactionContext:
    transaction_id: int
    response_id: int
    expires_at: int | None = None  # None: not time-bounded (offline use)

    def __post_init__(self):
        if self.transaction_id == 0:
            raise ZeroTransactionId("transaction_id must be nonzero")

    @classmethod
    def opened(cls, transaction_id: int, response_id: int, now: int) -> TransactionContext:
        return cls(transaction_id, response_id, now + TRANSACTION_LIFETIME_US)

    def expired(self, now: int) -> bool:
        return self.expires_at is not None and now > self.expires_at


def _ecb(key: bytes, block: bytes, decrypt: bool = False) -> bytes:
    cipher = Cipher(algorithms.AES(key), modes.ECB())
    op = cipher.decryptor() if decrypt else cipher.encryptor()
    return op.update(block) + op.finalize()


def expand_ids(transaction_id: int, response_id: int) -> bytes:
    if transaction_id == 0:
        raise ZeroTransactionId("transaction_id must be nonzero")
    return struct.pack(">IIII", transaction_id, transaction_id, response_id, response_id)


def derive_transport_key(master: Key128, ctx: TransactionContext) -> Key128:
    return Key128(_ecb(master.data, expand_ids(ctx.transaction_id, ctx.response_id)))


def wrap_network_key(master: Key128, ctx: TransactionContext, network_key: Key128) -> bytes:
    return _ecb(derive_transport_key(master, ctx).data, network_key.data)


def unwrap_network_key(master: Key128, ctx: TransactionContext, ciphertext: bytes) -> Key128:
    if len(ciphertext) != KEY_LEN:
        raise ValueError("wrapped key must be 16 bytes")
    return Key128(_ecb(derive_transport_key(master, ctx).data, bytes(ciphertext), decrypt=True))


def ccm_nonce(src_short: int, frame_counter: int) -> bytes:
    return struct.pack("<HIB", src_short, frame_counter, SECURITY_LEVEL) + bytes(6)


def ccm_encrypt(
    network_key: Key128, src_short: int, frame_counter: int, payload: bytes, aad: bytes = b""
) -> tuple[bytes, int]:
    """Encrypt ``payload``; returns (ciphertext, mic) with the MIC as a u32."""
    sealed = AESCCM(network_key.data, tag_length=MIC_LEN).encrypt(
        ccm_nonce(src_short, frame_counter), bytes(payload), aad or None
    )
    return sealed[:-MIC_LEN], int.from_bytes(sealed[-MIC_LEN:], "little")


def ccm_decrypt(
    network_key: Key128, src_short: int, frame_counter: int, ciphertext: bytes, mic: int, aad: bytes = b""
) -> bytes:
    sealed = bytes(ciphertext) + mic.to_bytes(MIC_LEN, "little")
    try:
        return AESCCM(network_key.data, tag_length=MIC_LEN).decrypt(
            ccm_nonce(src_short, frame_counter), sealed, aad or None
        )
    except InvalidTag:
        raise IntegrityFailure("MIC check failed") from None
