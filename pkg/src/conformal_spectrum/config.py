"""Run configuration: a flat TOML file of scalar and list values."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import tomli

from .exceptions import ConfigurationError

SURFACES = ("sphere", "torus")
LOWER_MODES = {"zero": 0.0, "negative_half": -0.5}
STARTS = ("uniform", "jitter")
U64_MAX = 2**64 - 1


@dataclass
class RunConfig:
    """Every knob of one end-to-end run.  See ``docs/config.md`` for the file format."""

    surface: str = "sphere"
    level: int = 4
    radius: float = 1.0
    nx: int = 64
    ny: int = 64
    width: float = 1.0
    height: float = 1.0
    k: int = 1
    caps: list = field(default_factory=lambda: [4.0, 8.0, 16.0, 32.0])
    lower_bound: str = "zero"
    budget: int = 150
    window: float = 0.02
    eig_tol: float = 1e-10
    seed: int = 0
    start: str = "uniform"
    jitter: float = 0.05
    threshold: float = 0.05
    quant_tol: float = 0.15
    membership_tol: float = 0.1
    cert_tol: float = 1e-2
    cert_window: float = 0.05
    class_table: Optional[list] = None
    bootstrap_budget: Optional[int] = None
    out: str = "out"

    @property
    def lower_value(self) -> float:
        return LOWER_MODES[self.lower_bound]

    def validate(self) -> "RunConfig":
        def bad(msg):
            raise ConfigurationError(msg)

        if self.surface not in SURFACES:
            bad(f"surface must be one of {SURFACES}, got {self.surface!r}")
        if self.lower_bound not in LOWER_MODES:
            bad(f"lower_bound must be one of {tuple(LOWER_MODES)}, got {self.lower_bound!r}")
        if self.start not in STARTS:
            bad(f"start must be one of {STARTS}, got {self.start!r}")
        for name in ("level", "nx", "ny", "k", "budget", "seed"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool):
                bad(f"{name} must be an integer, got {v!r}")
        if self.k < 1:
            bad("k must be >= 1")
        if self.budget < 1:
            bad("budget must be >= 1")
        if not 0 <= self.seed <= U64_MAX:
            bad("seed must be an unsigned 64-bit integer")
        if self.surface == "sphere" and not 0 <= self.level <= 8:
            bad("level must lie in [0, 8]")
        if self.surface == "torus" and (self.nx < 3 or self.ny < 3):
            bad("nx and ny must be >= 3")
        for name in ("radius", "width", "height", "window", "eig_tol", "jitter",
                     "threshold", "quant_tol", "membership_tol", "cert_tol", "cert_window"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
                bad(f"{name} must be a positive number, got {v!r}")
            setattr(self, name, float(v))
        if self.eig_tol > 1e-2:
            bad("eig_tol must not exceed 1e-2")
        if not isinstance(self.caps, list) or not self.caps:
            bad("caps must be a nonempty list")
        if any(isinstance(c, bool) or not isinstance(c, (int, float)) for c in self.caps):
            bad("caps must be numbers")
        self.caps = [float(c) for c in self.caps]
        if any(c <= 0 for c in self.caps):
            bad("caps must be positive")
        if any(b <= a for a, b in zip(self.caps, self.caps[1:])):
            bad("caps must be strictly increasing")
        area = (4 * 3.141592653589793 * self.radius**2) if self.surface == "sphere" else self.width * self.height
        if self.caps[0] * area <= 1.0:
            bad(f"first cap must exceed 1/area = {1 / area:.6g}")
        if self.lower_value * area >= 1.0:
            bad("lower bound leaves no unit-mass density")
        if self.class_table is not None:
            if not isinstance(self.class_table, list) or len(self.class_table) != self.k - 1:
                bad("class_table must list k-1 values (indices 1..k-1)")
            self.class_table = [float(v) for v in self.class_table]
        if self.bootstrap_budget is not None and (
            not isinstance(self.bootstrap_budget, int) or self.bootstrap_budget < 1
        ):
            bad("bootstrap_budget must be a positive integer")
        if not isinstance(self.out, str) or not self.out:
            bad("out must be a nonempty path string")
        return self

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def parse_config(text: str) -> RunConfig:
    """Parse and validate a flat TOML document; tables are rejected."""
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"config syntax error: {exc}") from None
    known = {f.name for f in dataclasses.fields(RunConfig)}
    for key, value in data.items():
        if isinstance(value, dict):
            raise ConfigurationError(f"config must be flat; [{key}] tables are not allowed")
        if key not in known:
            raise ConfigurationError(f"unknown config key {key!r}")
    return RunConfig(**data).validate()


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config: {exc}") from None
    return parse_config(text)
