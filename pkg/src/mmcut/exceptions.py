"""Exception types raised by the segmentation engine."""


class MMCutError(Exception):
    """Base class for all engine errors."""


class EmptyShape(MMCutError, ValueError):
    """A mask has no foreground or no background, so its boundary is undefined."""


class DegenerateShape(MMCutError, ValueError):
    """A mask is too small for its moments to define an orientation."""


class NonFiniteEnergy(MMCutError, FloatingPointError):
    pass


class NonFiniteWeight(MMCutError, FloatingPointError):
    pass


class InsufficientTemplates(MMCutError, ValueError):
    """Bandwidth selection needs at least two templates unless beta is given."""


class EmptyRegion(MMCutError, ValueError):
    pass


class UnsupportedFormat(MMCutError, ValueError):
    pass
