"""Server configuration."""

from dataclasses import dataclass, field
from typing import Mapping

CAPABILITIES = ("generate", "segment", "inpaint", "embed")
MODES = ("stub", "real")


@dataclass(frozen=True)
class ServerConfig:
    """Where to listen and which model adapters to mount.

    In ``stub`` mode every capability is served by deterministic built-in
    implementations and no model assets are required.  In ``real`` mode each
    capability loads the adapter named in ``adapters`` (a ``module:attribute``
    reference); a capability whose adapter fails to load is downgraded and
    advertised as unavailable rather than failing startup.
    """

    host: str = "127.0.0.1"
    port: int = 8035
    mode: str = "stub"
    adapters: Mapping[str, str] = field(default_factory=dict)
    device: str | None = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 1 <= self.port <= 65535:
            raise ValueError(f"port out of range: {self.port}")
        unknown = set(self.adapters) - set(CAPABILITIES)
        if unknown:
            raise ValueError(f"unknown capabilities in adapter map: {sorted(unknown)}")
        if self.mode == "stub" and self.adapters:
            raise ValueError("stub mode does not take adapter overrides")
