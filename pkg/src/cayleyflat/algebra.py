"""Finite binary operations stored as Cayley tables.

Elements are the dense indices ``0..n-1``; ``cells[a, b]`` holds ``a∘b``.
Group constructors, Latin-square checks, isotopies and the isotopy-to-group
decision procedure live here, together with the brute-force oracles used to
cross-check them.
"""
from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "CayleyTable", "Isotopy",
    "InvalidSizeError", "InvalidIsotopyError", "NotLatinError",
    "NoSuchSquareError", "SizeLimitError",
    "cyclic_group", "direct_product", "dihedral_group",
    "is_latin", "is_associative", "has_identity", "is_group",
    "apply_isotopy", "principal_loop_isotope", "is_isotopic_to_group",
    "exhaustive_isotopy_check", "random_latin_square",
    "find_nonassociative_quasigroup", "random_isotopy",
    "table_to_json", "table_from_json", "table_to_text", "table_from_text",
    "save_table", "load_table",
]


class InvalidSizeError(ValueError):
    pass


class InvalidIsotopyError(ValueError):
    pass


class NotLatinError(ValueError):
    pass


class NoSuchSquareError(ValueError):
    pass


class SizeLimitError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CayleyTable:
    """An ``n×n`` operation table. ``cells[a, b] = a∘b``."""

    cells: np.ndarray

    def __post_init__(self):
        cells = np.array(self.cells, dtype=np.int64)
        if cells.ndim != 2 or cells.shape[0] != cells.shape[1] or cells.shape[0] == 0:
            raise InvalidSizeError(f"cells must be a non-empty square array, got shape {cells.shape}")
        n = cells.shape[0]
        if cells.min() < 0 or cells.max() >= n:
            raise ValueError(f"entries must lie in 0..{n - 1}")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @property
    def n(self) -> int:
        return self.cells.shape[0]

    def __getitem__(self, ab):
        return int(self.cells[ab])

    def __eq__(self, other):
        if not isinstance(other, CayleyTable):
            return NotImplemented
        return self.cells.shape == other.cells.shape and bool(np.array_equal(self.cells, other.cells))

    def __hash__(self):
        return hash(self.cells.tobytes())

    def __repr__(self):
        return f"CayleyTable(n={self.n}, cells={self.cells.tolist()})"

    def delta(self, a: int, b: int, c: int) -> int:
        """Structure-tensor entry: 1 iff ``a∘b = c``."""
        return int(self.cells[a, b] == c)


@dataclass(frozen=True)
class Isotopy:
    """Row, column and symbol relabelings ``(f, g, h)``.

    Acting on a table: ``result[a][b] = h(t[f(a)][g(b)])``.
    """

    f: tuple
    g: tuple
    h: tuple

    def __post_init__(self):
        perms = [tuple(int(x) for x in p) for p in (self.f, self.g, self.h)]
        n = len(perms[0])
        for p in perms:
            if len(p) != n or sorted(p) != list(range(n)):
                raise InvalidIsotopyError(f"not a permutation of 0..{n - 1}: {p}")
        object.__setattr__(self, "f", perms[0])
        object.__setattr__(self, "g", perms[1])
        object.__setattr__(self, "h", perms[2])

    @property
    def n(self) -> int:
        return len(self.f)

    @classmethod
    def identity(cls, n: int) -> "Isotopy":
        p = tuple(range(n))
        return cls(p, p, p)

    def inverse(self) -> "Isotopy":
        return Isotopy(*(tuple(np.argsort(p).tolist()) for p in (self.f, self.g, self.h)))


def cyclic_group(n: int) -> CayleyTable:
    if n < 1:
        raise InvalidSizeError(f"cyclic group needs n >= 1, got {n}")
    r = np.arange(n)
    return CayleyTable((r[:, None] + r[None, :]) % n)


def direct_product(t1: CayleyTable, t2: CayleyTable) -> CayleyTable:
    """Componentwise product, pair ``(a1, a2)`` stored at index ``a1*n2 + a2``."""
    for t in (t1, t2):
        if not is_latin(t):
            raise NotLatinError("direct_product expects Latin inputs")
    n1, n2 = t1.n, t2.n
    i = np.arange(n1 * n2)
    a1, a2 = i // n2, i % n2
    cells = t1.cells[a1[:, None], a1[None, :]] * n2 + t2.cells[a2[:, None], a2[None, :]]
    return CayleyTable(cells)


def dihedral_group(m: int) -> CayleyTable:
    """Symmetries of the regular m-gon, order ``2m``.

    Element ``(s, k)`` is stored at ``s*m + k`` and stands for ``r^k f^s``
    (rotation after an optional flip).  Composition:
    ``(s1, k1)(s2, k2) = (s1 xor s2, k1 + (-1)^s1 k2 mod m)``.
    """
    if m < 3:
        raise InvalidSizeError(f"dihedral group needs m >= 3, got {m}")
    n = 2 * m
    cells = np.empty((n, n), dtype=np.int64)
    for x in range(n):
        s1, k1 = divmod(x, m)
        for y in range(n):
            s2, k2 = divmod(y, m)
            k = (k1 + (k2 if s1 == 0 else -k2)) % m
            cells[x, y] = (s1 ^ s2) * m + k
    return CayleyTable(cells)


def is_latin(t: CayleyTable) -> bool:
    n = t.n
    full = np.arange(n)
    rows = np.sort(t.cells, axis=1)
    cols = np.sort(t.cells, axis=0)
    return bool((rows == full[None, :]).all() and (cols == full[:, None]).all())


def is_associative(t: CayleyTable) -> bool:
    c = t.cells
    # (a∘b)∘x versus a∘(b∘x) for every triple, vectorised over x
    left = c[c[:, :, None], np.arange(t.n)[None, None, :]]
    right = c[np.arange(t.n)[:, None, None], c[None, :, :]]
    return bool((left == right).all())


def has_identity(t: CayleyTable):
    """Return the two-sided identity element, or None."""
    full = np.arange(t.n)
    for e in range(t.n):
        if np.array_equal(t.cells[e], full) and np.array_equal(t.cells[:, e], full):
            return e
    return None


def is_group(t: CayleyTable) -> bool:
    return is_latin(t) and is_associative(t) and has_identity(t) is not None


def apply_isotopy(t: CayleyTable, iso: Isotopy) -> CayleyTable:
    if not isinstance(iso, Isotopy):
        iso = Isotopy(*iso)
    if iso.n != t.n:
        raise InvalidIsotopyError(f"isotopy acts on {iso.n} points, table has {t.n}")
    if not is_latin(t):
        raise NotLatinError("apply_isotopy expects a Latin square")
    f, g, h = (np.asarray(p) for p in (iso.f, iso.g, iso.h))
    return CayleyTable(h[t.cells[f[:, None], g[None, :]]])


def principal_loop_isotope(t: CayleyTable, r: int = 0, c: int = 0) -> CayleyTable:
    """Loop isotope ``x∘'y = R⁻¹(x) ∘ L⁻¹(y)`` with identity ``t[r][c]``.

    ``R(x) = x∘c`` and ``L(y) = r∘y`` are the right translation by column
    ``c`` and the left translation by row ``r``.
    """
    if not is_latin(t):
        raise NotLatinError("principal_loop_isotope expects a Latin square")
    right = t.cells[:, c]
    left = t.cells[r, :]
    f = np.argsort(right)
    g = np.argsort(left)
    return apply_isotopy(t, Isotopy(f, g, range(t.n)))


def is_isotopic_to_group(t: CayleyTable) -> bool:
    # a loop isotopic to a group is itself a group (Albert), so one
    # principal isotope is enough
    if not is_latin(t):
        raise NotLatinError("is_isotopic_to_group expects a Latin square")
    return is_associative(principal_loop_isotope(t, 0, 0))


def exhaustive_isotopy_check(t: CayleyTable, g: CayleyTable) -> bool:
    """Brute-force search for an isotopy carrying ``t`` onto ``g``.

    Enumerates row and column permutations; the symbol permutation is then
    forced by row 0 and checked on the rest of the square.  Limited to
    ``n <= 5``.
    """
    if t.n != g.n:
        return False
    n = t.n
    if n > 5:
        raise SizeLimitError(f"exhaustive isotopy search is limited to n <= 5, got {n}")
    if not (is_latin(t) and is_latin(g)):
        raise NotLatinError("exhaustive_isotopy_check expects Latin squares")
    tc = t.cells.tolist()
    gc = g.cells.tolist()
    perms = list(itertools.permutations(range(n)))
    for f in perms:
        rows = [tc[f[a]] for a in range(n)]
        for col in perms:
            # h must send rows[0][col[b]] to gc[0][b]
            h = [0] * n
            first = rows[0]
            for b in range(n):
                h[first[col[b]]] = gc[0][b]
            ok = True
            for a in range(1, n):
                ra, ga = rows[a], gc[a]
                for b in range(n):
                    if h[ra[col[b]]] != ga[b]:
                        ok = False
                        break
                if not ok:
                    break
            if ok:
                return True
    return False


def random_latin_square(n: int, seed: int) -> CayleyTable:
    """Latin square built row by row with randomized backtracking.

    Each row is a random permutation avoiding the symbols already used in
    its columns.  A Latin rectangle always extends by one row (Hall), so the
    backtracking is confined to the row being built.
    """
    if n < 1:
        raise InvalidSizeError(f"n must be >= 1, got {n}")
    rng = random.Random(seed)
    used = [set() for _ in range(n)]
    rows = []
    for _ in range(n):
        row = _random_row(n, used, rng)
        for j, s in enumerate(row):
            used[j].add(s)
        rows.append(row)
    return CayleyTable(rows)


def _random_row(n, used_by_col, rng):
    row = [-1] * n
    taken = set()
    # one shuffled candidate list per depth, consumed as we backtrack
    options = [None] * n
    j = 0
    while j < n:
        if options[j] is None:
            cand = [s for s in range(n) if s not in taken and s not in used_by_col[j]]
            rng.shuffle(cand)
            options[j] = cand
        if row[j] >= 0:
            taken.discard(row[j])
            row[j] = -1
        if options[j]:
            row[j] = options[j].pop()
            taken.add(row[j])
            j += 1
        else:
            options[j] = None
            j -= 1
            if j < 0:
                raise RuntimeError("row extension failed; column constraints are inconsistent")
    return row


def find_nonassociative_quasigroup(n: int, seed: int, max_tries: int = 10_000) -> CayleyTable:
    """A Latin square of order ``n`` that is not isotopic to any group."""
    if n < 5:
        raise NoSuchSquareError(f"every Latin square of order {n} < 5 is isotopic to a group")
    rng = random.Random(seed)
    for _ in range(max_tries):
        t = random_latin_square(n, rng.getrandbits(63))
        if not is_isotopic_to_group(t):
            return t
    raise NoSuchSquareError(f"no non-group isotope found in {max_tries} samples")


def random_isotopy(n: int, seed: int) -> Isotopy:
    rng = random.Random(seed)
    perms = []
    for _ in range(3):
        p = list(range(n))
        rng.shuffle(p)
        perms.append(p)
    return Isotopy(*perms)


# serialization

def table_to_json(t: CayleyTable) -> str:
    return json.dumps({"n": t.n, "cells": t.cells.tolist()})


def table_from_json(text: str) -> CayleyTable:
    obj = json.loads(text)
    t = CayleyTable(obj["cells"])
    if t.n != obj["n"]:
        raise InvalidSizeError(f"header says n={obj['n']} but cells are {t.n}x{t.n}")
    return t


def table_to_text(t: CayleyTable) -> str:
    lines = [str(t.n)] + [" ".join(str(int(x)) for x in row) for row in t.cells]
    return "\n".join(lines) + "\n"


def table_from_text(text: str) -> CayleyTable:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    n = int(lines[0])
    rows = [[int(x) for x in ln.split()] for ln in lines[1:]]
    if len(rows) != n or any(len(r) != n for r in rows):
        raise InvalidSizeError(f"expected {n} rows of {n} integers")
    return CayleyTable(rows)


def save_table(t: CayleyTable, path) -> None:
    path = Path(path)
    text = table_to_json(t) if path.suffix == ".json" else table_to_text(t)
    path.write_text(text)


def load_table(path) -> CayleyTable:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        return table_from_json(text)
    return table_from_text(text)
