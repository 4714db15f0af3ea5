"""Principal strata: the ``"01|00*"`` mini-language and its combinatorics.

A stratum label lists, for each intermediate variable ``D_k``, the pair
``d_k(0) d_k(1)`` of potential values under control and treatment; ``|``
separates variables and a trailing ``*`` asserts the exclusion restriction.
So with one intermediate variable ``"00"`` are never-takers, ``"01"``
compliers and ``"11"`` always-takers.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .exceptions import IncompatibleDataError, StrataError

__all__ = [
    "StratumLabel",
    "StrataSpec",
    "CellMap",
    "parse_strata",
    "d_of",
    "compatible",
    "cell_map",
]

_LABEL_RE = re.compile(r"^([01]{2})((?:\|[01]{2})*)(\*?)$")
ARMS = (0, 1)


@dataclass(frozen=True)
class StratumLabel:
    name: str
    pairs: tuple[tuple[int, int], ...]

    @property
    def K(self) -> int:
        return len(self.pairs)

    @property
    def code(self) -> str:
        return "|".join(f"{a}{b}" for a, b in self.pairs)

    def d(self, z: int) -> tuple[int, ...]:
        return tuple(p[z] for p in self.pairs)

    @property
    def monotone(self) -> bool:
        return all(a <= b for a, b in self.pairs)

    @property
    def assignment_invariant(self) -> bool:
        """True when D(s, 0) == D(s, 1), i.e. exclusion restriction can bind."""
        return self.d(0) == self.d(1)


@dataclass(frozen=True)
class StrataSpec:
    strata: tuple[StratumLabel, ...]
    er_flags: tuple[bool, ...]
    reference_index: int = 0

    def __post_init__(self):
        if not self.strata:
            raise StrataError("at least one stratum is required")
        if len(self.er_flags) != len(self.strata):
            raise StrataError("er_flags must have one entry per stratum")
        if not 0 <= self.reference_index < len(self.strata):
            raise StrataError(f"reference_index {self.reference_index} out of range")
        codes = [s.code for s in self.strata]
        if len(set(codes)) != len(codes):
            raise StrataError(f"duplicate stratum labels in {codes}")
        if len({s.name for s in self.strata}) != len(self.strata):
            raise StrataError("duplicate stratum names")
        if len({s.K for s in self.strata}) != 1:
            raise StrataError("all strata must describe the same number of intermediate variables")

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.strata]

    @property
    def K(self) -> int:
        return self.strata[0].K

    def __len__(self) -> int:
        return len(self.strata)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown stratum {name!r}; have {self.names}") from None


@dataclass(frozen=True)
class CellMap:
    """Map from (stratum, arm) to a Y-model parameter cell."""

    cells: np.ndarray  # (n_strata, 2) int
    names: tuple[str, ...]

    @property
    def n_cells(self) -> int:
        return len(self.names)

    def __getitem__(self, key: tuple[int, int]) -> int:
        s, z = key
        return int(self.cells[s, z])


def parse_strata(
    entries: Mapping[str, str],
    er: Mapping[str, bool] | Sequence[bool] | None = None,
) -> StrataSpec:
    """Build a :class:`StrataSpec` from a ``name -> label`` mapping.

    ``er`` optionally gives the exclusion-restriction flags explicitly (by name
    or positionally); it must agree with any asterisks present.

    >>> spec = parse_strata({"n": "00*", "c": "01", "a": "11*"})
    >>> spec.er_flags
    (True, False, True)
    """
    if not entries:
        raise StrataError("no strata given")
    labels, star = [], []
    for name, text in entries.items():
        if not isinstance(text, str):
            raise StrataError(f"stratum {name!r}: label must be a string, got {text!r}")
        m = _LABEL_RE.match(text.replace(" ", ""))
        if m is None:
            raise StrataError(f"stratum {name!r}: malformed label {text!r} "
                              "(expected e.g. '01', '00|11' or '11*')")
        chunks = [m.group(1)] + [c for c in m.group(2).split("|") if c]
        pairs = tuple((int(c[0]), int(c[1])) for c in chunks)
        labels.append(StratumLabel(str(name), pairs))
        star.append(bool(m.group(3)))
    if len({l.K for l in labels}) != 1:
        raise StrataError("strata labels disagree on the number of intermediate variables")

    flags = list(star)
    if er is not None:
        if isinstance(er, Mapping):
            unknown = set(er) - set(entries)
            if unknown:
                raise StrataError(f"ER given for unknown strata {sorted(unknown)}")
            explicit = [bool(er.get(l.name, star[i])) for i, l in enumerate(labels)]
        else:
            explicit = [bool(v) for v in er]
            if len(explicit) != len(labels):
                raise StrataError(f"ER vector has length {len(explicit)}, expected {len(labels)}")
        for l, s, e in zip(labels, star, explicit):
            if s and not e:
                raise StrataError(f"stratum {l.name!r}: asterisk asserts ER but the ER vector denies it")
        flags = explicit

    for l, f in zip(labels, flags):
        if f and not l.assignment_invariant:
            warnings.warn(
                f"exclusion restriction on stratum {l.name!r} ({l.code}) has no effect: "
                "its intermediate variables differ between arms",
                stacklevel=2,
            )
    return StrataSpec(tuple(labels), tuple(flags), 0)


def d_of(s: StratumLabel, z: int) -> tuple[int, ...]:
    """Intermediate-variable values a unit of stratum ``s`` shows under arm ``z``."""
    if z not in ARMS:
        raise ValueError(f"arm must be 0 or 1, got {z!r}")
    return s.d(z)


def compatible(spec: StrataSpec, z: int, d_obs: Sequence[int]) -> tuple[int, ...]:
    """Ordinals of the strata whose D(s, z) equals the observed ``d_obs``."""
    d_obs = tuple(int(v) for v in np.atleast_1d(d_obs))
    if len(d_obs) != spec.K:
        raise ValueError(f"d_obs has length {len(d_obs)}, expected {spec.K}")
    out = tuple(i for i, s in enumerate(spec.strata) if d_of(s, z) == d_obs)
    if not out:
        raise IncompatibleDataError(
            f"no declared stratum produces Z={z}, D={''.join(map(str, d_obs))}; "
            "the data contradict the strata assumptions"
        )
    return out


def cell_map(spec: StrataSpec) -> CellMap:
    """Collapse (stratum, arm) pairs into Y-model parameter cells.

    Arms of a stratum share a cell exactly when ER is assumed for it and its
    intermediate values coincide across arms.
    """
    cells = np.empty((len(spec), 2), dtype=np.intp)
    names: list[str] = []
    for i, (s, er) in enumerate(zip(spec.strata, spec.er_flags)):
        if er and s.assignment_invariant:
            cells[i, :] = len(names)
            names.append(s.name)
        else:
            for z in ARMS:
                cells[i, z] = len(names)
                names.append(f"{s.name}:{z}")
    return CellMap(cells, tuple(names))


def compatibility_matrix(spec: StrataSpec, z: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Boolean (n_units, n_strata) mask of strata compatible with each unit.

    Raises :class:`IncompatibleDataError` naming the first unit whose observed
    pattern no stratum explains.
    """
    z = np.asarray(z, dtype=int)
    d = np.asarray(d, dtype=int).reshape(len(z), spec.K)
    mask = np.zeros((len(z), len(spec)), dtype=bool)
    for zz in ARMS:
        for s_idx, s in enumerate(spec.strata):
            mask[:, s_idx] |= (z == zz) & np.all(d == np.array(s.d(zz)), axis=1)
    empty = ~mask.any(axis=1)
    if empty.any():
        i = int(np.flatnonzero(empty)[0])
        compatible(spec, int(z[i]), d[i])  # raises with the pattern
    return mask
