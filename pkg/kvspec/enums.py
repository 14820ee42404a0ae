import enum


class Tags(enum.Enum):
    """Enumeration of route tags."""

    PUBLIC = "Public"
    ANALYTICS = "Analytics"


class Prefixes(enum.Enum):
    """The prefixes for the different API endpoints."""

    PING = "/ping"
    ANALYZE = "/analyze"


class Scenario(enum.Enum):
    """Deployment settings: where the full KV lives and which link reloads it."""

    LONG_CONTEXT = "long-context"
    REMOTE_PREFIX = "remote-prefix"


class AcceptanceKind(enum.Enum):
    """How the token acceptance rate of the drafter is modelled."""

    PER_TOKEN_IID = "per-token-iid"
    TABULATED = "tabulated"


class IterationTimeMode(enum.Enum):
    DERIVED = "derived"
    FIXED = "fixed"


class AcceptanceRealization(enum.Enum):
    """Whether accepted lengths are drawn per round or replaced by their expectation."""

    SAMPLED = "sampled"
    DETERMINISTIC_MEAN = "deterministic-mean"


class Schedule(enum.Enum):
    """Ways of interleaving drafting and verification across a batch."""

    STAGGERED = "staggered"
    LOCKSTEP = "lockstep"
    SEQUENTIAL_VERIFY = "sequential-verify"
    FULL_KV_BASELINE = "full-kv-baseline"


class SessionMode(enum.Enum):
    SPECULATIVE = "Speculative"
    WAITING = "Waiting"
    NON_SPECULATING = "NonSpeculating"


class EventKind(enum.Enum):
    """Simulator event kinds, declared in tie-break order."""

    REQUEST_ARRIVAL = "request-arrival"
    TRANSFER_COMPLETE = "transfer-complete"
    ITERATION_TICK = "iteration-tick"
    VERIFY_COMPLETE = "verify-complete"
    REQUEST_DONE = "request-done"

    @property
    def order(self) -> int:
        return _EVENT_ORDER[self]


_EVENT_ORDER = {kind: idx for idx, kind in enumerate(EventKind)}


class ServingPath(enum.Enum):
    """The per-request serving paths of the inter-request throughput program."""

    B1 = "B1"
    B2 = "B2"
    P1_CACHED = "P1-cached"
    P1_STATELESS = "P1-stateless"
    P2_CACHED = "P2-cached"
    P2_STATELESS = "P2-stateless"


class CompressorKind(enum.Enum):
    DROP_UNIFORM = "drop-uniform"
    DROP_WINDOW = "drop-window"
    QUANT_UNIFORM = "quant-uniform"

    @property
    def is_dropping(self) -> bool:
        return self in (CompressorKind.DROP_UNIFORM, CompressorKind.DROP_WINDOW)


class CompressorMode(enum.Enum):
    """Offline compressors run once per context; online ones also act every iteration."""

    OFFLINE = "offline"
    ONLINE = "online"


class AnalyzeMode(enum.Enum):
    INTRA = "intra"
    INTER = "inter"
    COMPOSE = "compose"
