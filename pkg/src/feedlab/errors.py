"""Exception types shared across the platform."""


class FeedlabError(Exception):
    """Base class for all platform errors."""


class UnknownFormat(FeedlabError):
    """No payload adapter registered under the given format id."""


class MalformedPayload(FeedlabError):
    """Payload bytes could not be decoded into a feed page.

    Carries the byte offset of the first problem when known.
    """

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class PlanInvalid(FeedlabError):
    """A transform plan violates one of its invariants."""


class DuplicatePostId(FeedlabError):
    """An inserted candidate collides with a post id already on the page."""


class PositionOutOfRange(FeedlabError):
    """An insertion position exceeds the page length plus prior insertions."""


class RemoteUnreachable(FeedlabError):
    """The remote scorer or rewriter endpoint could not be reached."""


class TemplateInvalid(FeedlabError):
    """A post generation template is unusable."""


class PlatformUnreachable(FeedlabError):
    """The (mock) platform did not answer after retries."""


class AuthFailed(FeedlabError):
    """Participant token does not resolve to an enrolled, consented participant."""


class UnknownRegistration(FeedlabError):
    """No registration with that id."""


class DuplicateRecruitmentId(FeedlabError):
    """A registration already exists for this recruitment id (resumed, not fatal)."""


class NoPersistentEntry(FeedlabError):
    """The claim request carried no recognizable persistent entry token."""


class NotConsented(FeedlabError):
    """Config requested for a registration without a recorded accept."""


class WeightsInvalid(FeedlabError):
    """Condition arm weights do not form a probability distribution."""


class StorageFull(FeedlabError):
    """The event log refused an append because its size cap was reached."""


class SchemaViolation(FeedlabError):
    """A record payload does not match the schema for its kind."""


class SpecInvalid(FeedlabError):
    """An inventory spec violates its invariants."""


class InvalidCursor(FeedlabError):
    """A pagination cursor does not decode or points outside the inventory."""


class BackendUnreachable(FeedlabError):
    """The simulator could not reach the backend under test."""
