"""Exception hierarchy.

Every error carries a short machine-readable ``code`` so reports and the
command line can surface it without parsing messages.
"""


class GWEmigError(Exception):
    code = "ERROR"


class InvalidParam(GWEmigError, ValueError):
    code = "INVALID_PARAM"


class NonNormalizable(GWEmigError, ValueError):
    code = "NON_NORMALIZABLE"


class NotSupercritical(GWEmigError, ValueError):
    code = "NOT_SUPERCRITICAL"


class NotDeterministic(GWEmigError, ValueError):
    code = "NOT_DETERMINISTIC"


class StateSpaceTooLarge(GWEmigError, RuntimeError):
    code = "STATE_SPACE_TOO_LARGE"


class ZeroFactor(GWEmigError, ValueError):
    code = "ZERO_FACTOR"


class OutOfRange(GWEmigError, ValueError):
    code = "OUT_OF_RANGE"


class SearchExhausted(GWEmigError, RuntimeError):
    code = "SEARCH_EXHAUSTED"


class TruncationTooTight(GWEmigError, RuntimeError):
    code = "TRUNCATION_TOO_TIGHT"


class DepthTooShallow(GWEmigError, RuntimeError):
    code = "DEPTH_TOO_SHALLOW"


class OutOfScope(GWEmigError, ValueError):
    code = "OUT_OF_SCOPE"
