"""R-style model formulas: parsing, rendering, design matrices and role binding.

The grammar is the subset used by ``lm()``/``lme4``::

    Z + D1 + D2 ~ X1 * X2 + I(X1^2) + log(W) - 1 + (1 + X1 | C)

Categorical columns are treatment coded with the lexicographically first level
as reference; the intercept column, when present, is always first.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .exceptions import DataError, FormulaError

__all__ = [
    "Term",
    "RandomEffectTerm",
    "FormulaAst",
    "RandomBlock",
    "DesignMatrix",
    "RoleBinding",
    "parse_formula",
    "render_formula",
    "build_design",
    "bind_roles",
    "read_csv",
    "TRANSFORMS",
]

INTERCEPT = "(Intercept)"
TRANSFORMS = ("identity", "square", "log", "exp")

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<name>[A-Za-z_][A-Za-z0-9_.]*)|(?P<number>\d+(?:\.\d*)?)|(?P<op>[~+\-*:()|^]))"
)


@dataclass(frozen=True)
class Term:
    """One fixed-effect term: a variable, a transformed variable or an interaction."""

    kind: str
    vars: tuple[str, ...]
    transform_tag: str | None = None

    def __post_init__(self):
        if self.kind == "interaction" and len(self.vars) < 2:
            raise ValueError("an interaction needs at least two variables")
        if self.kind in ("main", "transform") and len(self.vars) != 1:
            raise ValueError(f"a {self.kind} term takes exactly one variable")
        if self.kind == "transform" and self.transform_tag not in TRANSFORMS:
            raise ValueError(f"unknown transform {self.transform_tag!r}")

    @property
    def key(self):
        if self.kind == "interaction":
            return ("interaction", frozenset(self.vars), None)
        return (self.kind, self.vars, self.transform_tag)

    def render(self) -> str:
        if self.kind == "main":
            return self.vars[0]
        if self.kind == "interaction":
            return ":".join(self.vars)
        v = self.vars[0]
        return {"square": f"I({v}^2)", "log": f"log({v})", "exp": f"exp({v})",
                "identity": f"I({v})"}[self.transform_tag]


@dataclass(frozen=True)
class RandomEffectTerm:
    inner_terms: tuple[Term, ...]
    inner_intercept: bool
    group_var: str

    def render(self) -> str:
        parts = [t.render() for t in self.inner_terms]
        if not self.inner_intercept:
            parts = ["0"] + parts
        elif not parts:
            parts = ["1"]
        return f"({' + '.join(parts)} | {self.group_var})"


@dataclass(frozen=True)
class FormulaAst:
    lhs_vars: tuple[str, ...]
    fixed_terms: tuple[Term, ...]
    has_intercept: bool = True
    random_terms: tuple[RandomEffectTerm, ...] = ()

    @property
    def variables(self) -> list[str]:
        """Every right-hand-side variable, in first-appearance order."""
        out: list[str] = []
        for t in self.fixed_terms:
            out.extend(t.vars)
        for r in self.random_terms:
            for t in r.inner_terms:
                out.extend(t.vars)
            out.append(r.group_var)
        return list(dict.fromkeys(out))

    def __str__(self) -> str:
        return render_formula(self)


# --------------------------------------------------------------------------- parsing


@dataclass
class _Tok:
    kind: str
    value: str
    offset: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            off = len(text[:pos].encode()) + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise FormulaError(f"unexpected character {text[pos:].lstrip()[:1]!r}", off, text)
        kind = m.lastgroup
        start = m.start(kind)
        toks.append(_Tok(kind, m.group(kind), len(text[:start].encode())))
        pos = m.end()
    toks.append(_Tok("end", "", len(text.encode())))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg: str, tok: _Tok | None = None) -> FormulaError:
        tok = tok or self.tok
        return FormulaError(msg, tok.offset, self.text)

    def advance(self) -> _Tok:
        t = self.tok
        self.i += 1
        return t

    def expect(self, kind: str, value: str | None = None) -> _Tok:
        t = self.tok
        if t.kind != kind or (value is not None and t.value != value):
            want = value or kind
            got = t.value or "end of formula"
            raise self.error(f"expected {want!r}, found {got!r}")
        return self.advance()

    def at_op(self, *values: str) -> bool:
        return self.tok.kind == "op" and self.tok.value in values

    # formula := lhs '~' rhs
    def formula(self) -> FormulaAst:
        tildes = [t for t in self.toks if t.kind == "op" and t.value == "~"]
        if len(tildes) != 1:
            off = tildes[1].offset if len(tildes) > 1 else 0
            raise FormulaError("a formula must contain exactly one '~'", off, self.text)
        lhs = [self.expect("name").value]
        while self.at_op("+"):
            self.advance()
            lhs.append(self.expect("name").value)
        if len(set(lhs)) != len(lhs):
            raise self.error("duplicate variable on the left-hand side")
        self.expect("op", "~")
        terms, intercept, randoms = self.sum(in_random=False)
        self.expect("end")
        return FormulaAst(tuple(lhs), terms, intercept, tuple(randoms))

    def sum(self, in_random: bool):
        terms: list[Term] = []
        seen: set = set()
        randoms: list[RandomEffectTerm] = []
        intercept = True
        sign = "+"
        if self.at_op("+", "-"):
            sign = self.advance().value
        while True:
            tok = self.tok
            if tok.kind == "number":
                self.advance()
                if tok.value not in ("0", "1"):
                    raise self.error("only 0 or 1 may appear as a constant term", tok)
                intercept = (tok.value == "1") == (sign == "+")
            elif self.at_op("("):
                if in_random:
                    raise self.error("nested random-effect parentheses are not supported")
                if sign == "-":
                    raise self.error("random-effect terms cannot be removed", tok)
                randoms.append(self.random_term())
            else:
                if sign == "-":
                    raise self.error("only the intercept may be removed with '-'", tok)
                for t in self.product():
                    if t.key not in seen:
                        seen.add(t.key)
                        terms.append(t)
            if self.at_op("+", "-"):
                sign = self.advance().value
                continue
            break
        return tuple(terms), intercept, randoms

    def random_term(self) -> RandomEffectTerm:
        self.expect("op", "(")
        terms, intercept, _ = self.sum(in_random=True)
        if not self.at_op("|"):
            raise self.error("parenthesised groups are only supported as '(terms | group)'")
        self.advance()
        group = self.expect("name").value
        if self.at_op("("):
            raise self.error("nested random-effect parentheses are not supported")
        self.expect("op", ")")
        if not terms and not intercept:
            raise self.error("random-effect term has no columns")
        return RandomEffectTerm(terms, intercept, group)

    def product(self) -> list[Term]:
        groups: list[list[tuple[str, str | None]]] = [[self.factor()]]
        while self.at_op("*", ":"):
            op = self.advance().value
            atom = self.factor()
            if op == ":":
                groups[-1].append(atom)
            else:
                groups.append([atom])
        out: list[Term] = []
        idx = range(len(groups))
        for size in range(1, len(groups) + 1):
            for combo in itertools.combinations(idx, size):
                atoms = [a for g in combo for a in groups[g]]
                out.append(self._make_term(atoms))
        return out

    def _make_term(self, atoms: list[tuple[str, str | None]]) -> Term:
        if len(atoms) == 1:
            name, tag = atoms[0]
            if tag is None or tag == "identity":
                return Term("main", (name,))
            return Term("transform", (name,), tag)
        if any(tag not in (None, "identity") for _, tag in atoms):
            raise self.error("transformed variables cannot appear inside interactions")
        names = tuple(dict.fromkeys(n for n, _ in atoms))
        if len(names) == 1:
            return Term("main", names)
        return Term("interaction", names)

    def factor(self) -> tuple[str, str | None]:
        tok = self.tok
        if tok.kind != "name":
            raise self.error(f"expected a variable, found {tok.value or 'end of formula'!r}")
        self.advance()
        if not self.at_op("("):
            return tok.value, None
        fn = tok.value
        if fn not in ("I", "log", "exp"):
            raise self.error(f"unknown transform {fn!r}; supported: I(v), I(v^2), log(v), exp(v)", tok)
        self.advance()
        var = self.expect("name").value
        tag = {"I": "identity", "log": "log", "exp": "exp"}[fn]
        if self.at_op("^"):
            caret = self.advance()
            if fn != "I":
                raise self.error("powers are only supported inside I()", caret)
            power = self.expect("number")
            if power.value != "2":
                raise self.error(f"unknown transform I({var}^{power.value})", power)
            tag = "square"
        self.expect("op", ")")
        return var, tag


def parse_formula(text: str) -> FormulaAst:
    """Parse an R-style formula.

    ``a*b`` expands to ``a + b + a:b``; ``+ 0`` or ``- 1`` drops the intercept;
    ``(expr | g)`` is a random-effect term with an implicit intercept that
    ``(expr - 1 | g)`` or ``(0 + expr | g)`` removes.

    Raises
    ------
    FormulaError
        On syntax errors (with the byte offset), unknown transforms or nested
        random-effect parentheses.
    """
    if not isinstance(text, str):
        raise FormulaError("formula must be a string")
    return _Parser(text).formula()


def render_formula(ast: FormulaAst) -> str:
    """Inverse of :func:`parse_formula` up to whitespace and term expansion."""
    parts = [t.render() for t in ast.fixed_terms]
    parts += [r.render() for r in ast.random_terms]
    if ast.has_intercept:
        rhs = " + ".join(parts) or "1"
    else:
        rhs = " + ".join(parts) + " - 1" if parts else "0"
    return f"{' + '.join(ast.lhs_vars)} ~ {rhs}"


# ------------------------------------------------------------------------ design matrices


@dataclass(frozen=True)
class RandomBlock:
    """Columns of one random-effect term and the unit-to-cluster map."""

    group_var: str
    levels: tuple
    group_index: np.ndarray
    values: np.ndarray
    column_names: tuple[str, ...]

    @property
    def n_groups(self) -> int:
        return len(self.levels)

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class DesignMatrix:
    values: np.ndarray
    column_names: tuple[str, ...]
    has_intercept: bool
    random: tuple[RandomBlock, ...] = ()

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_fixed(self) -> int:
        return self.values.shape[1]

    @property
    def n_columns(self) -> int:
        return self.n_fixed + sum(b.width for b in self.random)

    @property
    def group_index(self) -> np.ndarray | None:
        return self.random[0].group_index if self.random else None

    @property
    def re_columns(self) -> list[tuple[int, int]]:
        spans, start = [], self.n_fixed
        for b in self.random:
            spans.append((start, start + b.width))
            start += b.width
        return spans

    def take(self, rows: np.ndarray) -> "DesignMatrix":
        """Row subset (used by the bootstrap)."""
        return DesignMatrix(
            self.values[rows], self.column_names, self.has_intercept,
            tuple(RandomBlock(b.group_var, b.levels, b.group_index[rows], b.values[rows],
                              b.column_names) for b in self.random),
        )


def is_categorical(col: pd.Series) -> bool:
    return not (pd.api.types.is_numeric_dtype(col) or pd.api.types.is_bool_dtype(col))


def _levels(col: pd.Series) -> list:
    return sorted(pd.unique(col), key=lambda v: str(v))


def _column(data: pd.DataFrame, var: str) -> pd.Series:
    if var not in data.columns:
        raise DataError(f"variable {var!r} not found in data (columns: {list(data.columns)})")
    col = data[var]
    if col.isna().any():
        raise DataError(f"column {var!r} has missing values")
    return col


def _numeric(data: pd.DataFrame, var: str) -> np.ndarray:
    col = _column(data, var)
    if is_categorical(col):
        raise DataError(f"column {var!r} is categorical where a numeric column is required")
    x = col.to_numpy(dtype=float)
    if not np.all(np.isfinite(x)):
        raise DataError(f"column {var!r} has non-finite values")
    return x


def _atom_columns(data: pd.DataFrame, var: str) -> tuple[list[str], np.ndarray]:
    col = _column(data, var)
    if is_categorical(col):
        levels = _levels(col)
        if len(levels) < 2:
            raise DataError(f"categorical variable {var!r} has a single level")
        vals = col.to_numpy()
        mats = [(vals == lvl).astype(float) for lvl in levels[1:]]
        names = [f"{var}[T.{lvl}]" for lvl in levels[1:]]
        return names, np.column_stack(mats) if mats else np.empty((len(col), 0))
    return [var], _numeric(data, var)[:, None]


def _term_columns(term: Term, data: pd.DataFrame) -> tuple[list[str], np.ndarray]:
    if term.kind == "main":
        return _atom_columns(data, term.vars[0])
    if term.kind == "transform":
        x = _numeric(data, term.vars[0])
        with np.errstate(all="ignore"):
            v = {"identity": x, "square": x**2, "log": np.log(x), "exp": np.exp(x)}[term.transform_tag]
        if not np.all(np.isfinite(v)):
            raise DataError(f"{term.render()} produces non-finite values")
        return [term.render()], v[:, None]
    names, mat = [""], np.ones((len(data), 1))
    for var in term.vars:
        n2, m2 = _atom_columns(data, var)
        names = [f"{a}:{b}" if a else b for a in names for b in n2]
        mat = (mat[:, :, None] * m2[:, None, :]).reshape(len(data), -1)
    return names, mat


def _fixed_columns(terms: Iterable[Term], intercept: bool, data: pd.DataFrame):
    n = len(data)
    names: list[str] = [INTERCEPT] if intercept else []
    blocks: list[np.ndarray] = [np.ones((n, 1))] if intercept else []
    for t in terms:
        nm, m = _term_columns(t, data)
        names += nm
        blocks.append(m)
    values = np.hstack(blocks) if blocks else np.empty((n, 0))
    return tuple(names), np.ascontiguousarray(values, dtype=float)


def build_design(ast: FormulaAst, data: pd.DataFrame) -> DesignMatrix:
    """Numeric design matrix for the right-hand side of ``ast``.

    Columns are the intercept (if any) followed by each term's columns in
    declaration order; interactions are elementwise products of their parents'
    columns. Each random-effect term becomes a :class:`RandomBlock`.
    """
    names, values = _fixed_columns(ast.fixed_terms, ast.has_intercept, data)
    blocks = []
    for r in ast.random_terms:
        gcol = _column(data, r.group_var)
        levels = tuple(_levels(gcol))
        lookup = {lvl: j for j, lvl in enumerate(levels)}
        gidx = np.fromiter((lookup[v] for v in gcol.to_numpy()), dtype=np.intp, count=len(gcol))
        rnames, rvals = _fixed_columns(r.inner_terms, r.inner_intercept, data)
        blocks.append(RandomBlock(r.group_var, levels, gidx, rvals, rnames))
    return DesignMatrix(values, names, ast.has_intercept, tuple(blocks))


# ----------------------------------------------------------------------------- roles


@dataclass(frozen=True)
class RoleBinding:
    treatment: str
    intermediates: tuple[str, ...]
    outcome: str
    event: str | None = None

    @property
    def n_intermediates(self) -> int:
        return len(self.intermediates)


def _check_binary(data: pd.DataFrame, var: str, role: str) -> None:
    col = _column(data, var)
    if is_categorical(col):
        raise DataError(f"{role} {var!r} must be binary 0/1, found categorical values")
    vals = col.to_numpy(dtype=float)
    bad = ~np.isin(vals, (0.0, 1.0))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DataError(f"{role} {var!r} must be binary 0/1 (unit {i} has {vals[i]!r})")


def bind_roles(
    s_ast: FormulaAst,
    y_ast: FormulaAst,
    family=None,
    data: pd.DataFrame | None = None,
    treatment: str | Sequence[str] | None = None,
) -> RoleBinding:
    """Name the treatment, intermediate, outcome and event-indicator columns.

    The S-formula left-hand side is ``Z + D_1 + ... + D_K``; the Y-formula's is
    ``Y`` or, for survival families, ``Y + delta``. ``treatment`` may be given
    to assert which column is the treatment; more than one is an error.
    """
    from .families import FamilySpec

    if treatment is not None and not isinstance(treatment, str):
        treatment = list(treatment)
        if len(treatment) != 1:
            raise FormulaError(f"multiple treatment variables {treatment} are not allowed; "
                               "recode them into a single treatment column")
        treatment = treatment[0]
    if len(s_ast.lhs_vars) < 2:
        raise FormulaError("the S-formula needs the treatment and at least one intermediate "
                           "variable on its left-hand side, e.g. 'Z + D ~ X'")
    if treatment is not None and treatment != s_ast.lhs_vars[0]:
        raise FormulaError(f"treatment {treatment!r} must be the first S-formula response "
                           f"(found {s_ast.lhs_vars[0]!r})")
    fam = FamilySpec.coerce(family) if family is not None else None
    survival = fam is not None and fam.is_survival
    if survival:
        if len(y_ast.lhs_vars) != 2:
            raise FormulaError("survival outcomes need 'Y + delta' on the Y-formula left-hand side")
    elif len(y_ast.lhs_vars) != 1:
        raise FormulaError("the Y-formula takes exactly one response variable")
    binding = RoleBinding(
        treatment=s_ast.lhs_vars[0],
        intermediates=tuple(s_ast.lhs_vars[1:]),
        outcome=y_ast.lhs_vars[0],
        event=y_ast.lhs_vars[1] if survival else None,
    )
    if data is not None:
        _check_binary(data, binding.treatment, "treatment")
        for d in binding.intermediates:
            _check_binary(data, d, "intermediate variable")
        _column(data, binding.outcome)
        if binding.event is not None:
            _check_binary(data, binding.event, "event indicator")
    return binding


def read_csv(path) -> pd.DataFrame:
    """Load a CSV with a header row; missing cells are an error."""
    try:
        df = pd.read_csv(path)
    except FileNotFoundError:
        raise
    except Exception as exc:  # pandas raises a zoo of parser errors
        raise DataError(f"cannot parse {path}: {exc}") from exc
    missing = [c for c in df.columns if df[c].isna().any()]
    if missing:
        raise DataError(f"{path}: missing cells in columns {missing}")
    return df
