import enum


class SizeBucket(str, enum.Enum):
    VERY_TINY = "very_tiny"
    TINY = "tiny"
    SMALL = "small"
    OTHER = "other"


class BackgroundKind(str, enum.Enum):
    FLAT = "flat"
    GRADIENT = "gradient"
    NOISE = "noise"
    TEXTURED = "textured"


class ShapeKind(str, enum.Enum):
    DISC = "disc"
    RECTANGLE = "rectangle"
    CROSS = "cross"


class NormKind(str, enum.Enum):
    BATCH = "batch"
    GROUP = "group"


class PyramidLevel(str, enum.Enum):
    P2 = "P2"
    P3 = "P3"


class DiffFlavor(str, enum.Enum):
    PIXEL = "pixel"
    HIGH_FREQUENCY = "high_frequency"


class DgfeMode(str, enum.Enum):
    ATTENTION = "attention"
    CONCAT = "concat"
    MULTIPLY = "multiply"
    OFF = "off"


class ThresholdMode(str, enum.Enum):
    LEARNABLE = "learnable"
    FIXED = "fixed"
    NONE = "none"


class ResizeMode(str, enum.Enum):
    MAXPOOL = "maxpool"
    NEAREST = "nearest"
    BILINEAR = "bilinear"


class DetectorMode(str, enum.Enum):
    BASELINE = "baseline"
    SRTOD = "srtod"


class ClsLossKind(str, enum.Enum):
    FOCAL = "focal"
    BCE = "bce"
