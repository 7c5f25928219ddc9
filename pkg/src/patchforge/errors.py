"""Exception hierarchy shared by all patchforge modules."""


class PatchforgeError(Exception):
    """Base class for all patchforge errors."""


# --- slide model ---------------------------------------------------------- #

class UnknownFormat(PatchforgeError):
    """URI does not point to a supported slide container."""


class CorruptMetadata(PatchforgeError):
    """Pyramid metadata is internally inconsistent beyond tolerance."""


class OutOfBounds(PatchforgeError):
    """Requested region falls outside the slide or level."""


class DecodeError(PatchforgeError):
    """Pixel data could not be decoded."""


# --- resampling ----------------------------------------------------------- #

class CropTooLarge(PatchforgeError):
    """Crop size exceeds the image dimensions."""


# --- tissue detection ----------------------------------------------------- #

class NoTissue(PatchforgeError):
    """Tissue mask is empty after cleanup."""


# --- sampling ------------------------------------------------------------- #

class InsufficientTissue(PatchforgeError):
    """Rejection sampling exhausted its attempt budget."""


class MissingAnnotation(PatchforgeError):
    """Tumor slide has no annotation to crop labels from."""


class IllegalLabel(PatchforgeError):
    """Mask contains a value outside the declared label set."""


class InsufficientSlides(PatchforgeError):
    """An organ has fewer slides than the subset requests."""


class InsufficientPatches(PatchforgeError):
    """A slide has fewer patches than the subset requests."""


# --- splits --------------------------------------------------------------- #

class EmptyCorpus(PatchforgeError):
    """No slides to split."""


class MissingGrade(PatchforgeError):
    """Stratified split requires an ISUP grade on every slide."""


class MissingOrigin(PatchforgeError):
    """Source-constrained split requires an origin tag on every slide."""


# --- statistics ----------------------------------------------------------- #

class ChannelMismatch(PatchforgeError):
    """Image channel count does not match the accumulator."""


class EmptyAccumulator(PatchforgeError):
    """Statistics requested from an accumulator with no samples."""


# --- augmentation --------------------------------------------------------- #

class ConfigConflict(PatchforgeError):
    """Augmentation inputs contradict the configuration."""


# --- ViT geometry ---------------------------------------------------------- #

class ShapeMismatch(PatchforgeError):
    """Token sequence shape does not match the declared grid."""


class NotDivisible(PatchforgeError):
    """Input extent is not a multiple of the patch size."""


class OutOfRange(PatchforgeError):
    """Layer index outside the valid range."""


class InvalidSchedule(PatchforgeError):
    """Learning-rate schedule parameters are inconsistent."""


# --- manifests / CLI ------------------------------------------------------- #

class UnknownPreset(PatchforgeError):
    """No preset registered under that name."""


class ConfigError(PatchforgeError):
    """Compile configuration failed schema or semantic validation."""


class ManifestError(PatchforgeError):
    """Manifest file is malformed."""
