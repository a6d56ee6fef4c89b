"""Exception hierarchy for taolink.

Everything raised on purpose derives from :class:`TaoLinkError`.  Input
problems (bad files, dangling references) derive from :class:`InputError`
and configuration problems from :class:`ConfigError`; the command line maps
the two families onto exit codes 1 and 2.
"""


class TaoLinkError(Exception):
    pass


class InputError(TaoLinkError):
    pass


class ConfigError(TaoLinkError, ValueError):
    pass


# -- vectors ---------------------------------------------------------------

class ZeroVectorError(TaoLinkError, ValueError):
    pass


class DimensionMismatchError(TaoLinkError, ValueError):
    pass


class NoEmbeddingsError(TaoLinkError):
    pass


# -- files -----------------------------------------------------------------

class ParseError(InputError):
    pass


class RefError(InputError):
    pass


class HeaderMismatchError(InputError):
    pass


class OverlapError(InputError):
    pass


# -- tracking --------------------------------------------------------------

class EmptyGalleryError(TaoLinkError):
    pass


class MissingEmbeddingError(InputError):
    pass


class UnknownVideoError(InputError, KeyError):
    pass


class SingularInnovationError(TaoLinkError, ArithmeticError):
    pass


class MissingMeanEmbeddingError(TaoLinkError):
    pass


class EmptyWhitelistError(ConfigError):
    pass


# -- evaluation / generation -----------------------------------------------

class VideoMismatchError(TaoLinkError, ValueError):
    pass


class GridMismatchError(InputError):
    pass


class SpecError(ConfigError):
    pass
