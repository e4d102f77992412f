from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

from .models import DEFAULT_ENUMERATION_CAP

METHODS = ("bma-exact", "bma-mc3", "ivbma")


@dataclass(frozen=True)
class PriorConfig:
    """Zellner g-prior on slopes; ``g=None`` means unit information (g = n)."""

    g: float | None = None

    def __post_init__(self):
        if self.g is not None and not self.g > 0:
            raise ValueError(f"g must be positive, got {self.g}")

    @property
    def mode(self) -> str:
        return "g=n" if self.g is None else "g-fixed"

    def resolve(self, n: int) -> float:
        return float(n) if self.g is None else float(self.g)

    @classmethod
    def parse(cls, text: str | float | None) -> PriorConfig:
        if text is None or (isinstance(text, str) and text.strip().lower() in ("n", "unit", "")):
            return cls()
        return cls(float(text))


@dataclass(frozen=True)
class SamplerConfig:
    iterations: int = 100_000
    burn_in: int = 10_000
    seed: int = 0
    g: float | None = None
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP
    thinning: int = 10
    # retained-draw store is bounded; thinning is raised when exceeded
    max_draws: int = 5_000

    def __post_init__(self):
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.iterations <= self.burn_in:
            raise ValueError(
                f"iterations ({self.iterations}) must exceed burn_in ({self.burn_in})"
            )
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if self.max_draws < 1:
            raise ValueError("max_draws must be >= 1")

    @property
    def prior(self) -> PriorConfig:
        return PriorConfig(self.g)

    @property
    def effective_thinning(self) -> int:
        kept = self.iterations - self.burn_in
        return max(self.thinning, -(-kept // self.max_draws))

    @property
    def retained(self) -> int:
        return (self.iterations - self.burn_in) // self.effective_thinning


@dataclass(frozen=True)
class RunConfig:
    data: str
    roster: str
    method: str = "ivbma"
    iterations: int = 100_000
    burn_in: int = 10_000
    thinning: int = 10
    seed: int = 0
    g: float | None = None
    subsample: tuple[str, ...] | None = None
    out: str = "out"
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP
    max_draws: int = 5_000

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        self.sampler()  # validates the iteration fields

    def sampler(self) -> SamplerConfig:
        return SamplerConfig(
            iterations=self.iterations,
            burn_in=self.burn_in,
            seed=self.seed,
            g=self.g,
            enumeration_cap=self.enumeration_cap,
            thinning=self.thinning,
            max_draws=self.max_draws,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["subsample"] = list(self.subsample) if self.subsample is not None else None
        return d

    def config_hash(self) -> str:
        # output directory does not influence results
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def read_country_list(text: str) -> tuple[str, ...]:
    """Subsample filter from a file path (one id per line) or a comma list."""
    path = Path(text)
    try:
        is_file = "," not in text and path.is_file()
    except OSError:  # e.g. a comma list longer than the OS path limit
        is_file = False
    if is_file:
        lines = path.read_text(encoding="utf-8").splitlines()
        items = [ln.split("#", 1)[0].strip() for ln in lines]
    else:
        items = [s.strip() for s in text.split(",")]
    return tuple(s for s in items if s)
