"""Candidate function libraries and sparse candidate models.

A library is an ordered list of monomials, each stored as an exponent
vector over the state variables. A candidate model pairs a library with a
``(D, q)`` coefficient matrix and the boolean mask of its active terms.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from math import comb
from typing import Sequence

import numpy as np

DEFAULT_VARIABLE_NAMES = ("x", "y", "z")


def _default_names(dimension):
    if dimension <= len(DEFAULT_VARIABLE_NAMES):
        return DEFAULT_VARIABLE_NAMES[:dimension]
    return tuple(f"x{k + 1}" for k in range(dimension))


@dataclass(frozen=True)
class FunctionLibrary:
    """Ordered monomial basis over ``dimension`` state variables.

    Parameters
    ----------
    exponents : array-like of int, shape (q, D)
        One exponent vector per basis function.
    degree : int
        Maximum total degree the library was built for.
    variable_names : sequence of str, optional
        Names used when rendering terms, defaults to x, y, z (or x1..xD).
    """

    exponents: np.ndarray
    degree: int
    variable_names: tuple = field(default=None)

    def __post_init__(self):
        exps = np.asarray(self.exponents, dtype=np.int64)
        if exps.ndim != 2:
            raise ValueError("exponents must be a 2-D array (q, D)")
        if exps.size and exps.min() < 0:
            raise ValueError("exponents must be non-negative")
        if len({tuple(e) for e in exps}) != len(exps):
            raise ValueError("library contains duplicate exponent vectors")
        if len(exps) and exps.sum(axis=1).max() > self.degree:
            raise ValueError("an exponent vector exceeds the library degree")
        exps.setflags(write=False)
        object.__setattr__(self, "exponents", exps)
        names = self.variable_names
        if names is None:
            names = _default_names(exps.shape[1])
        names = tuple(names)
        if len(names) != exps.shape[1]:
            raise ValueError("need one variable name per state dimension")
        object.__setattr__(self, "variable_names", names)

    @property
    def dimension(self):
        return self.exponents.shape[1]

    @property
    def n_terms(self):
        return self.exponents.shape[0]

    @property
    def term_names(self):
        return [self.term_name(j) for j in range(self.n_terms)]

    def term_name(self, j):
        parts = []
        for name, e in zip(self.variable_names, self.exponents[j]):
            if e == 1:
                parts.append(name)
            elif e > 1:
                parts.append(f"{name}^{e}")
        return " ".join(parts) if parts else "1"

    def index_of(self, name):
        """Position of the term rendered as ``name`` (``"x y"``, ``"xy"`` and ``"x^2"`` forms accepted)."""
        target = _normalise_term(name, self.variable_names)
        for j in range(self.n_terms):
            if tuple(self.exponents[j]) == target:
                return j
        raise KeyError(f"term {name!r} not in library")

    def subset(self, terms):
        """Restricted library keeping ``terms`` (names or indices) in library order."""
        idx = sorted({t if isinstance(t, (int, np.integer)) else self.index_of(t) for t in terms})
        return FunctionLibrary(self.exponents[idx], self.degree, self.variable_names)

    def __eq__(self, other):
        if not isinstance(other, FunctionLibrary):
            return NotImplemented
        return (self.degree == other.degree
                and self.exponents.shape == other.exponents.shape
                and bool(np.array_equal(self.exponents, other.exponents)))

    def __hash__(self):
        return hash((self.degree, self.exponents.tobytes(), self.exponents.shape))

    def to_dict(self):
        return {"dimension": self.dimension, "degree": int(self.degree),
                "basis": self.exponents.tolist()}


def _normalise_term(name, variable_names):
    """Parse a monomial name into an exponent tuple."""
    name = name.strip()
    exps = [0] * len(variable_names)
    if name in ("1", ""):
        return tuple(exps)
    # longest names first so "x1" wins over "x" in greedy scanning
    order = sorted(range(len(variable_names)), key=lambda k: -len(variable_names[k]))
    s = name.replace(" ", "").replace("*", "")
    pos = 0
    while pos < len(s):
        for k in order:
            v = variable_names[k]
            if s.startswith(v, pos):
                pos += len(v)
                power = 1
                if pos < len(s) and s[pos] == "^":
                    pos += 1
                    start = pos
                    while pos < len(s) and s[pos].isdigit():
                        pos += 1
                    power = int(s[start:pos])
                exps[k] += power
                break
        else:
            raise KeyError(f"cannot parse term {name!r}")
    return tuple(exps)


def build_monomial_library(dimension, degree, variable_names=None):
    """All monomials of total degree <= ``degree`` in graded-lex order.

    For three variables and degree two the basis is
    ``1, x, y, z, x^2, xy, xz, y^2, yz, z^2``.
    """
    if dimension < 1:
        raise ValueError("dimension must be >= 1")
    if degree < 0:
        raise ValueError("degree must be >= 0")
    rows = []
    for total in range(degree + 1):
        # combinations_with_replacement yields variable multisets in lex order
        for combo in itertools.combinations_with_replacement(range(dimension), total):
            e = [0] * dimension
            for k in combo:
                e[k] += 1
            rows.append(e)
    exps = np.array(rows, dtype=np.int64).reshape(-1, dimension)
    assert len(exps) == comb(dimension + degree, degree)
    return FunctionLibrary(exps, degree, variable_names)


def evaluate_basis(library, X):
    """Evaluate every basis function at one state or a batch of states.

    Parameters
    ----------
    library : FunctionLibrary
    X : array-like, shape (D,) or (n, D)

    Returns
    -------
    theta : ndarray, shape (q,) or (n, q)
    """
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X2 = np.atleast_2d(X)
    if X2.shape[1] != library.dimension:
        raise ValueError(f"state has {X2.shape[1]} components, library expects {library.dimension}")
    theta = _monomials(X2, library.exponents)
    return theta[0] if single else theta


def _powers(X, max_degree):
    """Table ``P[a] = X**a`` for a = 0..max_degree, shape (max_degree+1, n, D)."""
    P = np.empty((max_degree + 1,) + X.shape)
    P[0] = 1.0
    for a in range(1, max_degree + 1):
        P[a] = P[a - 1] * X
    return P


def _monomials(X, exponents):
    n, D = X.shape
    q = exponents.shape[0]
    if q == 0:
        return np.zeros((n, 0))
    P = _powers(X, int(exponents.max(initial=0)))
    theta = np.ones((n, q))
    for k in range(D):
        theta *= P[exponents[:, k], :, k].T
    return theta


def basis_and_jacobian(exponents, X):
    """Basis values ``(n, q)`` and their state derivatives ``(n, q, D)``."""
    n, D = X.shape
    q = exponents.shape[0]
    if q == 0:
        return np.zeros((n, 0)), np.zeros((n, 0, D))
    P = _powers(X, int(exponents.max(initial=0)))
    factors = np.empty((D, n, q))
    dfactors = np.empty((D, n, q))
    for k in range(D):
        e = exponents[:, k]
        factors[k] = P[e, :, k].T
        em1 = np.maximum(e - 1, 0)
        dfactors[k] = (P[em1, :, k] * e[:, None]).T
    theta = np.prod(factors, axis=0)
    dtheta = np.empty((n, q, D))
    for k in range(D):
        others = np.ones((n, q))
        for m in range(D):
            if m != k:
                others *= factors[m]
        dtheta[:, :, k] = dfactors[k] * others
    return theta, dtheta


def monomial_tables(exponents):
    """Lookup tables for evaluating a monomial basis and its gradient by recurrence.

    Returns ``(parent, var, lib_index, deriv_index, deriv_coef)`` over the
    closure ``E`` of all monomials up to the library's maximum degree:
    ``E[m] = E[parent[m]] * x[var[m]]`` (entry 0 is the constant),
    basis ``j`` is ``E[lib_index[j]]`` and
    ``d theta_j / d x_k = deriv_coef[j, k] * E[deriv_index[j, k]]``.
    """
    exponents = np.asarray(exponents, dtype=np.int64)
    q, D = exponents.shape
    degree = int(exponents.sum(axis=1).max(initial=0))
    closure = build_monomial_library(D, degree).exponents
    lookup = {tuple(e): m for m, e in enumerate(closure)}
    parent = np.zeros(len(closure), dtype=np.int64)
    var = np.zeros(len(closure), dtype=np.int64)
    for m, e in enumerate(closure):
        if m == 0:
            continue
        k = int(np.flatnonzero(e)[-1])
        e2 = e.copy()
        e2[k] -= 1
        parent[m] = lookup[tuple(e2)]
        var[m] = k
    lib_index = np.array([lookup[tuple(e)] for e in exponents], dtype=np.int64)
    deriv_index = np.zeros((q, D), dtype=np.int64)
    deriv_coef = np.zeros((q, D))
    for j, e in enumerate(exponents):
        for k in range(D):
            if e[k] > 0:
                e2 = e.copy()
                e2[k] -= 1
                deriv_index[j, k] = lookup[tuple(e2)]
                deriv_coef[j, k] = e[k]
    return parent, var, lib_index, deriv_index, deriv_coef


class CandidateModel:
    """Sparse linear-in-parameters vector field over a :class:`FunctionLibrary`.

    ``params[k, j]`` multiplies basis function ``j`` in the equation for
    state ``k``. The mask marks active terms; inactive coefficients are
    forced to zero.
    """

    def __init__(self, library, params, mask=None):
        params = np.array(params, dtype=float)
        D, q = library.dimension, library.n_terms
        if params.shape != (D, q):
            raise ValueError(f"params must have shape {(D, q)}, got {params.shape}")
        if mask is None:
            mask = params != 0.0
        mask = np.array(mask, dtype=bool)
        if mask.shape != (D, q):
            raise ValueError(f"mask must have shape {(D, q)}, got {mask.shape}")
        params[~mask] = 0.0
        params.setflags(write=False)
        mask.setflags(write=False)
        self.library = library
        self.params = params
        self.mask = mask

    @classmethod
    def zeros(cls, library):
        shape = (library.dimension, library.n_terms)
        return cls(library, np.zeros(shape), np.zeros(shape, dtype=bool))

    @classmethod
    def from_terms(cls, library, terms):
        """Build a model from ``{equation index: {term name: coefficient}}``."""
        params = np.zeros((library.dimension, library.n_terms))
        mask = np.zeros_like(params, dtype=bool)
        for k, row in terms.items():
            for name, value in row.items():
                j = library.index_of(name)
                params[k, j] = value
                mask[k, j] = True
        return cls(library, params, mask)

    @property
    def n_terms(self):
        return int(self.mask.sum())

    def with_params(self, params):
        return CandidateModel(self.library, params, self.mask)

    def rhs(self, X):
        return evaluate_rhs(self, X)

    def __call__(self, t, X):
        # (t, X) signature for scipy.integrate.solve_ivp
        return evaluate_rhs(self, X)

    def __repr__(self):
        return f"CandidateModel(n_terms={self.n_terms}, D={self.library.dimension}, q={self.library.n_terms})"

    def __str__(self):
        return model_to_text(self)

    def to_dict(self):
        out = self.library.to_dict()
        out["mask"] = self.mask.tolist()
        out["params"] = self.params.tolist()
        return out

    @classmethod
    def from_dict(cls, data, variable_names=None):
        exps = np.array(data["basis"], dtype=np.int64).reshape(-1, int(data["dimension"]))
        lib = FunctionLibrary(exps, int(data["degree"]), variable_names)
        params = np.array(data["params"], dtype=float).reshape(lib.dimension, lib.n_terms)
        mask = np.array(data["mask"], dtype=bool).reshape(lib.dimension, lib.n_terms)
        return cls(lib, params, mask)


def evaluate_rhs(model, X):
    """Velocity ``F_k(X) = sum_j p[k, j] theta_j(X)`` at one state or a batch."""
    theta = evaluate_basis(model.library, X)
    return theta @ model.params.T


def structure_match(a, b):
    """True when two models share a library and have identical masks."""
    if a.library != b.library:
        raise ValueError("models are defined over different libraries")
    return bool(np.array_equal(a.mask, b.mask))


def mask_key(mask):
    """Hashable key for a sparsity mask."""
    mask = np.asarray(mask, dtype=bool)
    return mask.shape, np.packbits(mask.ravel()).tobytes()


def _format_coef(value, digits):
    text = f"{value:.{digits}g}"
    return text


def model_to_text(model, digits=6):
    """Render one ``dx/dt = ...`` line per equation."""
    lib = model.library
    lines = []
    for k, var in enumerate(lib.variable_names):
        pieces = []
        for j in range(lib.n_terms):
            if not model.mask[k, j]:
                continue
            c = model.params[k, j]
            name = lib.term_name(j)
            mag = _format_coef(abs(c), digits)
            body = mag if name == "1" else f"{mag} {name}"
            if not pieces:
                pieces.append(f"-{body}" if c < 0 else body)
            else:
                pieces.append(f"- {body}" if c < 0 else f"+ {body}")
        lines.append(f"d{var}/dt = " + (" ".join(pieces) if pieces else "0"))
    return "\n".join(lines)


def _json_number(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if not np.isfinite(v):
        raise ValueError("non-finite value cannot be written to a model artifact")
    return format(v, ".17g")


def _json_matrix(rows):
    return "[" + ", ".join("[" + ", ".join(_json_number(v) for v in row) + "]" for row in rows) + "]"


def model_to_json(model):
    """Serialise a model as the fixed-field JSON artifact (floats at 17 significant digits)."""
    lib = model.library
    return (
        "{"
        f'"dimension": {lib.dimension}, '
        f'"degree": {int(lib.degree)}, '
        f'"basis": {_json_matrix(lib.exponents.tolist())}, '
        f'"mask": {_json_matrix(model.mask.tolist())}, '
        f'"params": {_json_matrix(model.params.tolist())}'
        "}"
    )


def model_from_json(text, variable_names=None):
    return CandidateModel.from_dict(json.loads(text), variable_names)
