"""Exception types shared across the toolkit."""


class StoreError(Exception):
    """Base class for all store-format errors."""


class InputTooShortError(StoreError):
    """Fewer bytes supplied than a fixed-layout read requires."""


class OutOfBoundsError(StoreError):
    """A fixed-offset field read past the end of the buffer."""


class NotAStoreError(StoreError):
    """Offset 0 of the input does not carry the header-page signature."""


class UnsupportedVersionError(NotAStoreError):
    """The input looks like a store of a different generation (not V2)."""


class NotAHeaderError(StoreError):
    pass


class NotAMapError(StoreError):
    pass


class DecompressError(StoreError):
    """A record page payload failed to inflate (corrupt zlib stream)."""


class NoPlausibleWalkError(StoreError):
    """Inflated bytes fit neither record-walk layout."""


class SpecError(StoreError):
    """A synthetic store spec violates its own constraints."""


class SpecTooLargeError(SpecError):
    """The spec needs more data pages than one map page can describe."""


class UnknownTargetError(StoreError):
    """A simulator event names a file or folder that is not live."""


class UsageError(StoreError):
    """Bad command line; maps to exit code 1."""
