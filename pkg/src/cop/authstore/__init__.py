"""Authenticated remote computation over a Merkle-authenticated key-value store."""

from .ads import (
    AuthKVStore,
    MerkleHasher,
    Proof,
    VersionedStores,
    ads_verify,
    authexec,
    root_from_path,
)
from .protocol import (
    AuthBroadcastMessage,
    AuthClient,
    AuthCommitMessage,
    AuthReplyMessage,
    AuthServer,
    ProofStep,
)

__all__ = [
    "AuthBroadcastMessage", "AuthClient", "AuthCommitMessage", "AuthKVStore",
    "AuthReplyMessage", "AuthServer", "MerkleHasher", "Proof", "ProofStep",
    "VersionedStores", "ads_verify", "authexec", "root_from_path",
]
