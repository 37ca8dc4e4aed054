"""Experiment configuration: flat ``key = value`` text with ``#`` comments."""
from dataclasses import dataclass, fields

from .problems import PRESETS

ULTRAWEAK, MILD = "ultraweak", "mild-baseline"
STANDARD, ENRICHED = "standard", "enriched"
UNIFORM, ADAPTIVE = "uniform", "adaptive"

MAX_TRIAL_DEGREE = 3
MAX_REFERENCE_DEGREE = 4


class ConfigError(ValueError):
    """Invalid configuration text or value."""


@dataclass(frozen=True)
class ExperimentConfig:
    formulation: str = ULTRAWEAK
    trial_degree: int = 0
    test_enrichment: str = STANDARD
    refinement: str = UNIFORM
    theta: float = 0.6
    dof_budget: int = 10000
    compute_gamma: bool = False
    compute_reference: bool = True
    reference_degree: int = 4
    data: str = "paper-corner"
    output: str = "results.csv"

    def __post_init__(self):
        self.validate()

    @property
    def test_shift(self):
        return 1 if self.test_enrichment == ENRICHED else 0

    def validate(self):
        def bad(key, msg):
            raise ConfigError(f"{key}: {msg}")

        if self.formulation not in (ULTRAWEAK, MILD):
            bad("formulation", f"expected {ULTRAWEAK} or {MILD}, got {self.formulation!r}")
        if not 0 <= self.trial_degree <= MAX_TRIAL_DEGREE:
            bad("trial_degree", f"must lie in 0..{MAX_TRIAL_DEGREE}")
        if self.test_enrichment not in (STANDARD, ENRICHED):
            bad("test_enrichment", f"expected {STANDARD} or {ENRICHED}")
        if self.refinement not in (UNIFORM, ADAPTIVE):
            bad("refinement", f"expected {UNIFORM} or {ADAPTIVE}")
        if not 0 < self.theta <= 1:
            bad("theta", "must lie in (0, 1]")
        if self.dof_budget < 1:
            bad("dof_budget", "must be positive")
        if not self.trial_degree < self.reference_degree <= MAX_REFERENCE_DEGREE:
            bad("reference_degree",
                f"must exceed trial_degree and be at most {MAX_REFERENCE_DEGREE}")
        if self.data not in PRESETS:
            bad("data", f"unknown preset {self.data!r}; choose from {sorted(PRESETS)}")
        if self.formulation == MILD:
            if self.data != "manufactured-smooth":
                bad("formulation", "mild-baseline needs homogeneous data "
                    "(data = manufactured-smooth)")
            if self.compute_gamma:
                bad("compute_gamma", "not defined for mild-baseline")
        if not self.output:
            bad("output", "empty path")


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(key, raw, lineno):
    kind = _TYPES[key]
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        if kind in (bool, "bool"):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
    except ValueError:
        raise ConfigError(f"line {lineno}: {key}: cannot parse {raw!r} "
                          f"as {getattr(kind, '__name__', kind)}") from None
    return raw


def parse_config(text):
    """Parse configuration text into a validated :class:`ExperimentConfig`."""
    values, where = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw, lineno)
        where[key] = lineno
    try:
        return ExperimentConfig(**values)
    except ConfigError as exc:
        key = str(exc).split(":", 1)[0]
        if key in where:
            raise ConfigError(f"line {where[key]}: {exc}") from None
        raise


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
