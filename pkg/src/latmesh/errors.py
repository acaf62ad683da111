"""Exception hierarchy shared by every latmesh component."""


class LatmeshError(Exception):
    """Base class for all latmesh errors."""


# configuration

class MalformedConfig(LatmeshError):
    """The config document is not valid JSON or has the wrong shape."""


class InvalidConfig(LatmeshError):
    """The config parsed but violates an invariant."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


# wire

class WireError(LatmeshError):
    pass


class PayloadTooLarge(WireError):
    pass


class BadTag(WireError):
    pass


class Truncated(WireError):
    pass


# probe node

class ForeignEcho(LatmeshError):
    """An echo addressed to another sender reached this node."""


class BufferClosed(LatmeshError):
    pass


class SinkFailure(LatmeshError):
    pass


class BindFailure(LatmeshError):
    pass


class PeerUnreachable(LatmeshError):
    pass


class ControlError(LatmeshError):
    """An error reported over the control channel.

    ``code`` is the wire name of the error (``IllegalState``, ``BadCommand``,
    ``PeersNotReady`` ...).
    """

    code = "ControlError"

    def __init__(self, message="", **details):
        super().__init__(message or self.code)
        self.details = details


class BadCommand(ControlError):
    code = "BadCommand"


class IllegalState(ControlError):
    code = "IllegalState"


class PeersNotReady(ControlError):
    code = "PeersNotReady"


CONTROL_ERRORS = {cls.code: cls for cls in (BadCommand, IllegalState, PeersNotReady)}


# controller

class ClusterError(LatmeshError):
    """One or more nodes failed a cluster-wide command.

    ``failures`` maps node id to the exception raised for that node.
    """

    def __init__(self, verb, failures, results=None):
        names = ", ".join(f"{nid}: {exc!r}" for nid, exc in sorted(failures.items()))
        super().__init__(f"{verb} failed on {len(failures)} node(s): {names}")
        self.verb = verb
        self.failures = failures
        self.results = results or {}


class NodeUnreachable(LatmeshError):
    def __init__(self, node_id, reason=""):
        super().__init__(f"node {node_id} unreachable{': ' + reason if reason else ''}")
        self.node_id = node_id


class DigestMismatch(LatmeshError):
    def __init__(self, node_id, expected, got):
        super().__init__(f"node {node_id} acknowledged digest {got}, expected {expected}")
        self.node_id = node_id


class ShortRead(LatmeshError):
    pass


# analysis

class ParseError(LatmeshError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class UnknownNode(LatmeshError):
    pass


class EmptySamples(LatmeshError):
    pass


class InsufficientSamples(LatmeshError):
    pass


class ZeroVariance(LatmeshError):
    pass


class TopologyMismatch(LatmeshError):
    pass


# simulation

class UnknownLink(LatmeshError):
    pass
