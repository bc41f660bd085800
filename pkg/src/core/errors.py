"""
Exception hierarchy shared by every pipeline stage
"""
from typing import Optional, Sequence


class GsPropError(Exception):
    """Base error; exit_code is the CLI contract"""

    exit_code = 2

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class UsageError(GsPropError):
    exit_code = 1


class ConfigError(UsageError):
    pass


class DataError(GsPropError):
    exit_code = 2


class SceneFormatError(DataError):
    """Malformed Gaussian PLY; carries where parsing stopped"""

    def __init__(self, message: str, offset: Optional[int] = None, property_name: Optional[str] = None):
        details = []
        if property_name is not None:
            details.append(f"property={property_name}")
        if offset is not None:
            details.append(f"offset={offset}")
        suffix = f" ({', '.join(details)})" if details else ""
        super().__init__(f"{message}{suffix}")
        self.offset = offset
        self.property_name = property_name


class CameraFormatError(DataError):
    pass


class MaskError(DataError):
    pass


class LibraryError(DataError):
    pass


class MaterialNotFoundError(DataError):
    def __init__(self, name: str):
        super().__init__(f"No material matches {name!r}")
        self.name = name


class UnresolvedSceneError(DataError):
    """Raised when Gaussians without a material reach a stage that needs one"""

    def __init__(self, message: str, indices: Sequence[int] = ()):
        indices = list(indices)
        if indices:
            shown = ", ".join(str(i) for i in indices[:10])
            more = "" if len(indices) <= 10 else f" (+{len(indices) - 10} more)"
            message = f"{message}: unresolved Gaussian indices {shown}{more}"
        super().__init__(message)
        self.indices = indices


class PhysicsInputError(DataError):
    pass


class CalibrationError(DataError):
    pass


class MetricInputError(DataError):
    pass


class ViewUnusableError(DataError):
    pass


class PreconditionError(DataError):
    pass


class EndpointError(GsPropError):
    exit_code = 3


class AuthError(EndpointError):
    pass


class TransportError(EndpointError):
    pass


class RateLimitError(EndpointError):
    def __init__(self, message: str, retry_after: Optional[float] = None):
        super().__init__(message)
        self.retry_after = retry_after


class AnswerParseError(EndpointError):
    pass
