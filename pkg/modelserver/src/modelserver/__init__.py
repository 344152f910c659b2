"""Reference HTTP server for the image-backend wire protocol."""

from .adapters import AdapterError, AdapterSet, load_adapters
from .app import WIRE_VERSION, ApiError, create_app
from .codec import CodecError
from .config import CAPABILITIES, ServerConfig
from .conformance import Check, ConformanceReport, EndpointReport, conformance_suite

__version__ = "0.1.0"

__all__ = [
    "AdapterError",
    "AdapterSet",
    "ApiError",
    "CAPABILITIES",
    "Check",
    "CodecError",
    "ConformanceReport",
    "EndpointReport",
    "ServerConfig",
    "WIRE_VERSION",
    "conformance_suite",
    "create_app",
    "load_adapters",
    "__version__",
]
