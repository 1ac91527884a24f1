"""Exception hierarchy shared by all tarspot modules."""


class TarspotError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(TarspotError):
    """An argument violated a documented precondition (wrong channel,
    mismatched dimensions, invalid configuration)."""


class DegenerateInputError(TarspotError):
    """Input is structurally valid but has no meaningful answer
    (empty validation set, zero-area leaf mask, empty manifest)."""


class ManifestError(TarspotError):
    """A dataset manifest could not be parsed or validated."""


class ManifestSchemaError(ManifestError):
    """Manifest JSON does not match the expected schema."""


class ManifestReferenceError(ManifestError):
    """An annotation references an image id that does not exist."""


class UnsupportedSegmentationError(ManifestError):
    """Segmentation uses a format this reader deliberately rejects
    (e.g. polygon lists)."""


class RleDecodeError(ManifestError):
    """Run-length counts are inconsistent with the declared mask size."""


class DetectorError(TarspotError):
    """Base class for detector failures."""


class DetectorProcessError(DetectorError):
    """External detector process exited with a nonzero status."""


class DetectorTimeoutError(DetectorError):
    """External detector process exceeded its time budget."""


class DetectorProtocolError(DetectorError):
    """External detector produced a malformed or missing response file."""
