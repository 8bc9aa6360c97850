"""Clustered Byzantine fault tolerant replication with online reconfiguration.

Deterministic replica state machines, a seeded network simulator, Byzantine
strategies and invariant checkers.
"""

from .core import (Certificate, Configuration, InvalidConfiguration, ReconfigRequest, SignatureToken, Txn,
                   fault_threshold, quorum_size, sender_set, validate_certificate)

__all__ = [
    "Certificate", "Configuration", "InvalidConfiguration", "ReconfigRequest", "SignatureToken", "Txn",
    "fault_threshold", "quorum_size", "sender_set", "validate_certificate",
]
