"""Exception hierarchy shared by every hsskit module."""


class HSSError(Exception):
    """Base class for all errors raised by hsskit."""


class ParameterError(HSSError):
    """Invalid or unsatisfiable key-generation parameters."""


class GenerationTimeout(ParameterError):
    """Prime search exhausted its attempt bound."""


class PlaintextRangeError(HSSError):
    pass


class DecryptionError(HSSError):
    """Ciphertext does not decrypt under the given key (foreign or corrupted)."""


class ModulusMismatchError(HSSError):
    pass


class TableCoverageError(HSSError):
    pass


class ShareContextError(HSSError):
    """Shares from different arithmetic contexts (or roles) were combined."""


class DDLogError(HSSError):
    """Divisive share whose residue mod N is not invertible."""


class RecoveryError(HSSError):
    """The data owner could not recover a plaintext from result shares."""


class SessionError(HSSError):
    pass


class WireError(HSSError):
    """Malformed frame or payload."""


class RoleViolation(HSSError):
    """A party tried to send something its role is not allowed to send."""


class ProtocolOrderError(HSSError):
    pass


class TransportError(HSSError):
    pass
