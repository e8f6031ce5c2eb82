"""Flat key-value run configuration shared by the CLI and the harnesses."""

from __future__ import annotations

import io
from dataclasses import dataclass, fields

from .core import PriceGrid

__all__ = ["RunConfig", "parse_config", "write_config"]

_INT_KEYS = {"T", "H", "seed"}
_FLOAT_KEYS = {"q", "Q", "step", "kappa_bar", "confidence_z"}


@dataclass(frozen=True)
class RunConfig:
    """Resolved run parameters. Unknown keys are rejected at parse time."""

    q: float = 0.0
    Q: float = 200.0
    step: float = 1.0
    T: int = 50
    H: int = 1
    kappa_bar: float = 1.0
    confidence_z: float = 1.96
    seed: int = 0

    def __post_init__(self) -> None:
        if self.T < 2:
            raise ValueError(f"T must be >= 2, got {self.T}")
        if self.H < 1:
            raise ValueError(f"H must be >= 1, got {self.H}")
        if self.kappa_bar < 0:
            raise ValueError("kappa_bar must be >= 0")
        if self.confidence_z < 0:
            raise ValueError("confidence_z must be >= 0")
        self.grid()  # validates q/Q/step

    def grid(self) -> PriceGrid:
        return PriceGrid(q=self.q, Q=self.Q, step=self.step)

    def items(self) -> list[tuple[str, object]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)]


def parse_config(source: str | io.TextIOBase, **overrides: object) -> RunConfig:
    """Parse ``key = value`` lines; '#' starts a comment; unknown keys error."""
    close = False
    if isinstance(source, (str, bytes)):
        handle = open(source, "r")
        close = True
    else:
        handle = source
    values: dict[str, object] = {}
    try:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"bad config line {lineno}: {raw.rstrip()!r}")
            key, _, text = line.partition("=")
            key, text = key.strip(), text.strip()
            if key in _INT_KEYS:
                values[key] = int(text)
            elif key in _FLOAT_KEYS:
                values[key] = float(text)
            else:
                raise ValueError(f"unknown config key {key!r} at line {lineno}")
    finally:
        if close:
            handle.close()
    values.update(overrides)
    return RunConfig(**values)  # type: ignore[arg-type]


def write_config(cfg: RunConfig, destination: str | io.TextIOBase) -> None:
    close = False
    if isinstance(destination, (str, bytes)):
        handle = open(destination, "w")
        close = True
    else:
        handle = destination
    try:
        for key, value in cfg.items():
            handle.write(f"{key} = {value}\n")
    finally:
        if close:
            handle.close()
