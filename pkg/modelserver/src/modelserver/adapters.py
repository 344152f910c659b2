"""Adapter loading: which implementation serves each capability.

Stub mode mounts the built-in deterministic implementations for all four
capabilities.  Real mode resolves each capability's ``module:attribute``
reference from the config; a reference that fails to resolve downgrades that
capability (it is advertised as unavailable and its endpoint reports a
capability error) instead of failing startup.
"""

import importlib
from dataclasses import dataclass
from typing import Callable

from . import stub
from .config import CAPABILITIES, ServerConfig


class AdapterError(Exception):
    """An adapter reference could not be resolved or constructed."""


@dataclass(frozen=True)
class AdapterSet:
    """Resolved per-capability callables; None means not mounted."""

    name: str
    generate: Callable | None
    segment: Callable | None
    inpaint: Callable | None
    embed_texts: Callable | None
    embed_images: Callable | None
    embedding_dim: int | None
    notes: tuple[str, ...] = ()

    def capabilities(self) -> dict:
        return {
            "name": self.name,
            "generate": self.generate is not None,
            "segment": self.segment is not None,
            "inpaint": self.inpaint is not None,
            "embed": self.embed_texts is not None,
            "embedding_dim": self.embedding_dim,
        }


def _stub_set() -> AdapterSet:
    return AdapterSet(
        name="modelserver-stub",
        generate=stub.generate,
        segment=stub.segment,
        inpaint=stub.inpaint,
        embed_texts=stub.embed_texts,
        embed_images=stub.embed_images,
        embedding_dim=stub.EMBED_DIM,
    )


def _resolve(reference: str, device: str | None):
    """Load ``module:attribute``; call it with the device hint if callable
    into a factory-produced adapter, otherwise use the attribute directly."""
    module_name, _, attr = reference.partition(":")
    if not module_name or not attr:
        raise AdapterError(f"adapter reference must be module:attribute, got {reference!r}")
    try:
        module = importlib.import_module(module_name)
    except ImportError as exc:
        raise AdapterError(f"cannot import {module_name!r}: {exc}") from exc
    try:
        return getattr(module, attr)
    except AttributeError as exc:
        raise AdapterError(f"{module_name!r} has no attribute {attr!r}") from exc


def load_adapters(config: ServerConfig) -> AdapterSet:
    if config.mode == "stub":
        return _stub_set()

    base = _stub_set()
    mounted: dict = {
        "generate": None,
        "segment": None,
        "inpaint": None,
        "embed_texts": None,
        "embed_images": None,
    }
    dim: int | None = None
    notes: list[str] = []
    for capability in CAPABILITIES:
        reference = config.adapters.get(capability)
        if reference is None:
            notes.append(f"{capability}: no adapter configured")
            continue
        if reference == "stub":
            if capability == "embed":
                mounted["embed_texts"] = base.embed_texts
                mounted["embed_images"] = base.embed_images
                dim = base.embedding_dim
            else:
                mounted[capability] = getattr(base, capability)
            continue
        try:
            adapter = _resolve(reference, config.device)
            if capability == "embed":
                mounted["embed_texts"] = adapter.embed_texts
                mounted["embed_images"] = adapter.embed_images
                dim = int(adapter.embedding_dim)
            else:
                mounted[capability] = adapter
        except (AdapterError, AttributeError, TypeError, ValueError) as exc:
            notes.append(f"{capability}: downgraded ({exc})")
    return AdapterSet(
        name="modelserver-real",
        generate=mounted["generate"],
        segment=mounted["segment"],
        inpaint=mounted["inpaint"],
        embed_texts=mounted["embed_texts"],
        embed_images=mounted["embed_images"],
        embedding_dim=dim,
        notes=tuple(notes),
    )
