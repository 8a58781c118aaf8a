"""Independent reference implementations used as test oracles.

Plain-Python AES-128 (encryption only, straight from the FIPS-197
description) and CCM per RFC 3610 built on top of it. Slow, but it shares
no code with the library's cryptography backend.
"""


def _xtime(a):
    a <<= 1
    return (a ^ 0x11B) & 0xFF if a & 0x100 else a


def _mul(a, b):
    out = 0
    while b:
        if b & 1:
            out ^= a
        a = _xtime(a)
        b >>= 1
    return out


def _sbox():
    box = [0] * 256
    for x in range(256):
        # multiplicative inverse in GF(2^8), 0 maps to 0
        inv = 0 if x == 0 else next(y for y in range(1, 256) if _mul(x, y) == 1)
        s = inv
        for shift in range(1, 5):
            s ^= ((inv << shift) | (inv >> (8 - shift))) & 0xFF
        box[x] = s ^ 0x63
    return box


SBOX = _sbox()


def _expand_key(key):
    words = [list(key[i:i + 4]) for i in range(0, 16, 4)]
    rcon = 1
    for i in range(4, 44):
        w = list(words[i - 1])
        if i % 4 == 0:
            w = w[1:] + w[:1]
            w = [SBOX[b] for b in w]
            w[0] ^= rcon
            rcon = _xtime(rcon)
        words.append([a ^ b for a, b in zip(words[i - 4], w)])
    return [sum(words[r * 4:r * 4 + 4], []) for r in range(11)]


def aes128_encrypt(key: bytes, block: bytes) -> bytes:
    assert len(key) == 16 and len(block) == 16
    rounds = _expand_key(key)
    s = [b ^ k for b, k in zip(block, rounds[0])]
    for rnd in range(1, 11):
        s = [SBOX[b] for b in s]
        # state is column-major: byte index = 4 * column + row
        s = [s[(4 * ((c + r) % 4)) + r] for c in range(4) for r in range(4)]
        if rnd != 10:
            mixed = []
            for c in range(4):
                a = s[4 * c:4 * c + 4]
                mixed += [
                    _mul(a[0], 2) ^ _mul(a[1], 3) ^ a[2] ^ a[3],
                    a[0] ^ _mul(a[1], 2) ^ _mul(a[2], 3) ^ a[3],
                    a[0] ^ a[1] ^ _mul(a[2], 2) ^ _mul(a[3], 3),
                    _mul(a[0], 3) ^ a[1] ^ a[2] ^ _mul(a[3], 2),
                ]
            s = mixed
        s = [b ^ k for b, k in zip(s, rounds[rnd])]
    return bytes(s)


def _xor(a, b):
    return bytes(x ^ y for x, y in zip(a, b))


def ccm_seal(key: bytes, nonce: bytes, payload: bytes, aad: bytes, tag_len: int = 4) -> bytes:
    """RFC 3610 CCM; returns ciphertext || tag."""
    L = 15 - len(nonce)
    flags = (0x40 if aad else 0) | (((tag_len - 2) // 2) << 3) | (L - 1)
    b0 = bytes([flags]) + nonce + len(payload).to_bytes(L, "big")
    mac = aes128_encrypt(key, b0)
    blocks = b""
    if aad:
        assert len(aad) < 0xFF00
        blocks += len(aad).to_bytes(2, "big") + aad
        blocks += bytes(-len(blocks) % 16)
    blocks += payload + bytes(-len(payload) % 16)
    for i in range(0, len(blocks), 16):
        mac = aes128_encrypt(key, _xor(mac, blocks[i:i + 16]))

    def ctr(i):
        return aes128_encrypt(key, bytes([L - 1]) + nonce + i.to_bytes(L, "big"))

    stream = b"".join(ctr(i) for i in range(1, len(payload) // 16 + 2))
    ciphertext = _xor(payload, stream[:len(payload)])
    tag = _xor(mac[:tag_len], ctr(0)[:tag_len])
    return ciphertext + tag
