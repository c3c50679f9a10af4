"""Signature abstraction with a documented canonical content encoding.

Canonical byte layout (both signature back ends sign the same bytes):

    encode(None)          = b"N"
    encode(bool b)        = b"Y" | b"Z"                     (true | false)
    encode(int i)         = b"I" + u32(len(d)) + d          d = ascii decimal
    encode(str s)         = b"S" + u32(len(u)) + u          u = utf-8 bytes
    encode(bytes b)       = b"B" + u32(len(b)) + b
    encode(sequence xs)   = b"T" + u32(len(xs)) + concat(encode(x) for x in xs)

    u32 = 4-byte big-endian unsigned length prefix.

Structured objects (certificates, chains) are encoded via their tuple form.
The signed digest of content c is sha256(encode(c)), hex.

The default back end is a simulation-enforced token scheme: tokens are a
keyed hash of (signer, digest), and verification additionally requires the
(signer, digest) pair to be present in the scheme's mint registry.  The
adversary has no operation that mints tokens for honest signers, so honest
signatures are unforgeable by construction.  An Ed25519 back end (real
public-key cryptography) is available behind the same interface for
end-to-end realism; acceptance runs use the token scheme.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Any

from .errors import ProtocolViolation


def encode(obj: Any) -> bytes:
    if obj is None:
        return b"N"
    if obj is True:
        return b"Y"
    if obj is False:
        return b"Z"
    if isinstance(obj, int):
        d = str(obj).encode("ascii")
        return b"I" + struct.pack(">I", len(d)) + d
    if isinstance(obj, str):
        u = obj.encode("utf-8")
        return b"S" + struct.pack(">I", len(u)) + u
    if isinstance(obj, bytes):
        return b"B" + struct.pack(">I", len(obj)) + obj
    if isinstance(obj, (tuple, list)):
        parts = [encode(x) for x in obj]
        return b"T" + struct.pack(">I", len(obj)) + b"".join(parts)
    canonical = getattr(obj, "canonical", None)
    if canonical is not None:
        return encode(canonical())
    raise TypeError(f"cannot canonically encode {type(obj).__name__}")


def digest(content: Any) -> str:
    return hashlib.sha256(encode(content)).hexdigest()


@dataclass(frozen=True)
class Signature:
    """An authenticator binding a signer to a content digest."""

    signer: int
    message_digest: str
    token: str

    def canonical(self):
        return ("sig", self.signer, self.message_digest, self.token)


_SCALARS = (str, int, bytes, type(None), bool)


class SimTokenScheme:
    """Deterministic in-simulation signatures, unforgeable by construction.

    verify() demands both a correct token and that this very scheme minted
    a signature for (signer, digest); forged tokens fail even if an
    adversary reproduced the keyed hash.
    """

    name = "sim-token"

    def __init__(self, seed: int):
        self._secret = hashlib.sha256(b"byzpred-scheme" + str(seed).encode()).digest()
        self._minted = set()
        self._digest_memo = {}

    def _digest(self, content: Any) -> str:
        # Flat scalar tuples (vote/commit/committee contents) repeat across
        # all signers and verifiers; deep structures are hashed directly.
        if (
            type(content) is tuple
            and len(content) <= 4
            and all(isinstance(x, _SCALARS) for x in content)
        ):
            dig = self._digest_memo.get(content)
            if dig is None:
                dig = digest(content)
                self._digest_memo[content] = dig
            return dig
        return digest(content)

    def _token(self, signer: int, dig: str) -> str:
        return hashlib.sha256(self._secret + str(signer).encode() + dig.encode()).hexdigest()[:32]

    def sign(self, signer: int, content: Any) -> Signature:
        dig = self._digest(content)
        self._minted.add((signer, dig))
        return Signature(signer=signer, message_digest=dig, token=self._token(signer, dig))

    def verify(self, sig: Any, signer: int, content: Any) -> bool:
        if not isinstance(sig, Signature):
            return False
        dig = self._digest(content)
        return (
            sig.signer == signer
            and sig.message_digest == dig
            and (signer, dig) in self._minted
            and sig.token == self._token(signer, dig)
        )


class Ed25519Scheme:
    """Real public-key plug-in (optional); same interface, same signed bytes."""

    name = "ed25519"

    def __init__(self, seed: int, n: int):
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

        self._keys = {}
        self._pubs = {}
        for pid in range(1, n + 1):
            raw = hashlib.sha256(b"byzpred-ed25519" + str(seed).encode() + str(pid).encode()).digest()
            key = Ed25519PrivateKey.from_private_bytes(raw)
            self._keys[pid] = key
            self._pubs[pid] = key.public_key()

    def sign(self, signer: int, content: Any) -> Signature:
        dig = digest(content)
        token = self._keys[signer].sign(dig.encode("ascii")).hex()
        return Signature(signer=signer, message_digest=dig, token=token)

    def verify(self, sig: Any, signer: int, content: Any) -> bool:
        from cryptography.exceptions import InvalidSignature

        if not isinstance(sig, Signature) or sig.signer != signer:
            return False
        dig = digest(content)
        if sig.message_digest != dig:
            return False
        try:
            self._pubs[signer].verify(bytes.fromhex(sig.token), dig.encode("ascii"))
            return True
        except (InvalidSignature, ValueError, KeyError):
            return False


class SignOracle:
    """Per-process signing capability: signs only as the bound identity."""

    __slots__ = ("_scheme", "pid")

    def __init__(self, scheme, pid: int):
        self._scheme = scheme
        self.pid = pid

    def sign(self, content: Any) -> Signature:
        return self._scheme.sign(self.pid, content)

    def verify(self, sig: Any, signer: int, content: Any) -> bool:
        return self._scheme.verify(sig, signer, content)
