"""Key-value run configuration.

A config file holds one ``key = value`` pair per line; ``#`` starts a
comment.  Matrices use the semicolon/comma rational text format, lists are
comma separated, and ``r``, ``p`` and dilation factors are parsed exactly
(``0.5`` and ``1/2`` are the same value).  Example::

    family = canonical
    n = 2
    r = 1/2
    p = 1
    atoms = 20
    dilations = 1/4, 1, 4
    output = uniform.csv
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Mapping

from ..exactlin import (FamilySpec, canonical_family, parse_matrix, random_family,
                        worked_example_family)

__all__ = ["ConfigError", "ExperimentConfig", "parse_config_text", "load_config"]

FAMILY_KINDS = ("canonical", "random", "worked-example", "inline")


class ConfigError(ValueError):
    """Malformed configuration; carries the offending line and field."""

    def __init__(self, message: str, *, line: int | None = None, key: str | None = None,
                 source: str = "config"):
        self.line = line
        self.key = key
        self.message = message
        where = source if line is None else f"{source}:{line}"
        what = f" field '{key}'" if key else ""
        super().__init__(f"{where}:{what} {message}")


def parse_config_text(text: str, source: str = "config") -> dict[str, tuple[str, int]]:
    """``{key: (raw value, line number)}``; duplicate or malformed lines are errors."""
    out: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=lineno,
                              source=source)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("missing key before '='", line=lineno, source=source)
        if key in out:
            raise ConfigError(f"duplicate key (first set on line {out[key][1]})", line=lineno,
                              key=key, source=source)
        out[key] = (value, lineno)
    return out


def load_config(path) -> "ExperimentConfig":
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read: {exc.strerror}", source=str(path)) from exc
    return ExperimentConfig.from_entries(parse_config_text(text, str(path)), source=str(path))


def _fraction(text: str) -> Fraction:
    return Fraction(text.strip())


def _fraction_list(text: str) -> tuple[Fraction, ...]:
    items = [s for s in text.split(",") if s.strip()]
    if not items:
        raise ValueError("empty list")
    return tuple(_fraction(s) for s in items)


def _int_list(text: str) -> tuple[int, ...]:
    items = [s for s in text.split(",") if s.strip()]
    if not items:
        raise ValueError("empty list")
    return tuple(int(s) for s in items)


def _optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none") else float(text)


def _optional_str(text: str) -> str | None:
    return text.strip() or None


_PARSERS = {
    "family": str.strip,
    "n": int,
    "partition": _int_list,
    "family_seed": int,
    "r": _fraction,
    "p": _fraction_list,
    "atoms": int,
    "dilations": _fraction_list,
    "samples": int,
    "tol": float,
    "threshold": float,
    "q_perturbed": _optional_float,
    "seed": int,
    "output": _optional_str,
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to replay an experiment.

    ``family`` is one of ``canonical`` (coordinate projections of the given
    ``partition``), ``random`` (drawn with ``family_seed``),
    ``worked-example`` (the built-in 3x3 family) or ``inline`` (matrices
    ``A1``, ``A2``, ... given as text).  ``q_perturbed`` replaces the
    critical ``q`` in the index-criticality run of the scaling experiment.
    """

    family: str = "canonical"
    n: int = 2
    partition: tuple[int, ...] | None = None
    family_seed: int = 0
    matrices: tuple[str, ...] = ()
    r: Fraction = Fraction(1, 2)
    p: tuple[Fraction, ...] = (Fraction(1),)
    atoms: int = 20
    dilations: tuple[Fraction, ...] = (Fraction(1, 4), Fraction(1, 2), Fraction(1),
                                       Fraction(2), Fraction(4))
    samples: int = 1000
    tol: float = 1e-3
    threshold: float = 10.0
    q_perturbed: float | None = None
    seed: int = 0
    output: str | None = None
    _lines: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        def fail(key, msg):
            raise ConfigError(msg, line=self._lines.get(key), key=key)

        if self.family not in FAMILY_KINDS:
            fail("family", f"unknown family {self.family!r}; expected one of {FAMILY_KINDS}")
        if self.family == "worked-example":
            object.__setattr__(self, "n", 3)
        if self.family == "inline":
            if not self.matrices:
                fail("family", "inline family needs matrices A1, A2, ...")
            try:
                object.__setattr__(self, "n", parse_matrix(self.matrices[0]).rows)
            except ValueError as exc:
                fail("A1", str(exc))
        if self.n < 1:
            fail("n", f"dimension must be positive, got {self.n}")
        part = self.partition
        if part is None:
            part = (1,) * (len(self.matrices) if self.family == "inline" else self.n)
            object.__setattr__(self, "partition", part)
        if sum(part) != self.n or min(part) < 1:
            fail("partition", f"{part} is not a partition of n={self.n}")
        if not 0 < self.r < 1:
            fail("r", f"need 0 < r < 1, got {self.r}")
        for p in self.p:
            if not 0 < p < 1 / self.r:
                fail("p", f"need 0 < p < 1/r = {1 / self.r}, got {p}")
        if self.atoms < 1:
            fail("atoms", f"need at least one atom, got {self.atoms}")
        if not self.dilations or min(self.dilations) <= 0:
            fail("dilations", "dilation factors must be positive")
        if self.samples < 1:
            fail("samples", f"sample budget must be positive, got {self.samples}")
        if not self.tol > 0:
            fail("tol", f"tolerance must be positive, got {self.tol}")
        if not self.threshold > 1:
            fail("threshold", f"ratio threshold must exceed 1, got {self.threshold}")
        if self.q_perturbed is not None and not self.q_perturbed > 0:
            fail("q_perturbed", f"must be positive, got {self.q_perturbed}")

    @classmethod
    def from_entries(cls, entries: Mapping[str, tuple[str, int | None]],
                     source: str = "config") -> "ExperimentConfig":
        """Build from ``{key: (raw value, line)}`` as returned by :func:`parse_config_text`."""
        kwargs, lines, mats = {}, {}, {}
        for key, (raw, line) in entries.items():
            if key[:1] == "A" and key[1:].isdigit():
                mats[int(key[1:])] = raw
                lines[key] = line
                continue
            parser = _PARSERS.get(key)
            if parser is None:
                raise ConfigError(f"unknown key; known keys are {sorted(_PARSERS)} and A1, A2, ...",
                                  line=line, key=key, source=source)
            try:
                kwargs[key] = parser(raw)
            except (ValueError, ZeroDivisionError) as exc:
                raise ConfigError(f"cannot parse {raw!r}: {exc}", line=line, key=key,
                                  source=source) from exc
            lines[key] = line
        if mats:
            if sorted(mats) != list(range(1, len(mats) + 1)):
                raise ConfigError(f"matrix keys must be A1..A{len(mats)} without gaps",
                                  key="A" + str(max(mats)), source=source)
            kwargs["matrices"] = tuple(mats[k] for k in sorted(mats))
            kwargs.setdefault("family", "inline")
        try:
            return cls(**kwargs, _lines=lines)
        except ConfigError as exc:
            raise ConfigError(exc.message, line=exc.line, key=exc.key, source=source) from None

    @classmethod
    def from_mapping(cls, values: Mapping[str, str], source: str = "arguments") -> "ExperimentConfig":
        return cls.from_entries({k: (v, None) for k, v in values.items()}, source=source)

    def family_spec(self) -> FamilySpec:
        if self.family == "canonical":
            return canonical_family(self.partition)
        if self.family == "random":
            return random_family(self.n, self.partition, self.family_seed)
        if self.family == "worked-example":
            return worked_example_family()
        try:
            return FamilySpec.from_text(list(self.matrices), self.partition)
        except ValueError as exc:
            raise ConfigError(str(exc), key="A1", line=self._lines.get("A1")) from exc

    def q_for(self, p: Fraction) -> Fraction:
        """Critical exponent ``1/q = 1/p - r``."""
        return 1 / (1 / Fraction(p) - self.r)

    def params(self) -> dict[str, str]:
        """Replayable parameter record (exact values as text)."""
        out = {}
        for f in fields(self):
            if f.name.startswith("_"):
                continue
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                sep = " | " if f.name == "matrices" else ","
                out[f.name] = sep.join(str(x) for x in v)
            else:
                out[f.name] = "" if v is None else str(v)
        return out

