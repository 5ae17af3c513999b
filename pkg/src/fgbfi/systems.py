"""Canonical quadratic ODE systems: dX/dt = A X + Phi(X), Phi_p = <Q_p X, X>.

Everything downstream (series recurrences, step-size bounds, variational
extension) works off this one representation.  A system is immutable after
construction and carries a precomputed sparsity plan so the hot recurrence
loops never rescan matrices.
"""

from __future__ import annotations

import json

import gmpy2
from gmpy2 import mpfr

from .numerics import ConfigurationError, PrecisionConfig

__all__ = [
    "DefinitionError",
    "QuadraticSystem",
    "tumor_system",
    "lorenz_system",
    "evaluate_rhs",
    "one_norm",
    "mu",
    "extend_with_variational",
    "load_system",
    "parse_parameter",
    "MODEL_BUILDERS",
]


class DefinitionError(ValueError):
    """A system definition file is malformed."""


def parse_parameter(value):
    """Parse a scalar model parameter under the active context.

    Accepts decimal strings, simple fractions like ``"8/3"`` (evaluated with
    one rounding), and Python numbers.
    """
    if isinstance(value, str) and "/" in value:
        num, _, den = value.partition("/")
        try:
            return mpfr(num.strip()) / mpfr(den.strip())
        except ValueError as exc:
            raise DefinitionError(f"bad numeric value {value!r}") from exc
    try:
        return mpfr(value)
    except (ValueError, TypeError) as exc:
        raise DefinitionError(f"bad numeric value {value!r}") from exc


class QuadraticSystem:
    """An n-dimensional ODE system with linear part A and quadratic forms Q_p.

    Matrix entries are big floats at ``config.bits`` precision, converted
    once from their decimal representations at construction.
    """

    def __init__(self, name, a_rows, q_matrices, bits: int = 160, labels=None):
        self.name = str(name)
        self.bits = int(bits)
        n = len(a_rows)
        if n == 0:
            raise DefinitionError("dimension must be >= 1")
        with self.context():
            a = tuple(tuple(parse_parameter(v) for v in row) for row in a_rows)
            if any(len(row) != n for row in a):
                raise DefinitionError(f"A must be {n}x{n}")
            if len(q_matrices) != n:
                raise DefinitionError(
                    f"expected {n} quadratic matrices, got {len(q_matrices)}"
                )
            q = []
            for p, mat in enumerate(q_matrices):
                rows = tuple(tuple(parse_parameter(v) for v in row) for row in mat)
                if len(rows) != n or any(len(r) != n for r in rows):
                    raise DefinitionError(f"Q[{p}] must be {n}x{n}")
                q.append(rows)
            self.n = n
            self.a = a
            self.q = tuple(q)
            if labels is None:
                labels = tuple(f"x{i+1}" for i in range(n))
            else:
                labels = tuple(str(s) for s in labels)
                if len(labels) != n:
                    raise DefinitionError(f"expected {n} labels")
            self.labels = labels
            self._build_plan()

    def _build_plan(self):
        """Extract nonzero structure; assumes the construction context."""
        n = self.n
        # linear terms per row: (column, coefficient)
        self.a_terms = tuple(
            tuple((j, self.a[p][j]) for j in range(n) if self.a[p][j] != 0)
            for p in range(n)
        )
        # global ordered list of index pairs needing Cauchy products
        pairs = []
        pair_index = {}
        q_terms = []
        for p in range(n):
            terms = []
            for u in range(n):
                for v in range(n):
                    coeff = self.q[p][u][v]
                    if coeff == 0:
                        continue
                    key = (u, v)
                    if key not in pair_index:
                        pair_index[key] = len(pairs)
                        pairs.append(key)
                    terms.append((pair_index[key], coeff))
            q_terms.append(tuple(terms))
        self.pairs = tuple(pairs)
        self.q_terms = tuple(q_terms)
        self.a_norm = _one_norm_active(self.a)
        self.mu = mpfr(n) * max(
            (_one_norm_active(m) for m in self.q), default=mpfr(0)
        )
        self.trace_a = sum((self.a[p][p] for p in range(n)), mpfr(0))
        # linear functional w with trace J(X) = trace A + <w, X>
        w = [mpfr(0)] * n
        for p in range(n):
            for v in range(n):
                w[v] += self.q[p][p][v] + self.q[p][v][p]
        self.trace_w = tuple(w)

    def context(self):
        return gmpy2.context(precision=self.bits)

    def check_config(self, config: PrecisionConfig):
        if config.bits != self.bits:
            raise ConfigurationError(
                f"system {self.name!r} was built at {self.bits} bits, "
                f"config asks for {config.bits}"
            )

    def rhs_active(self, x):
        """Right-hand side A x + Phi(x); assumes an active context."""
        out = []
        for p in range(self.n):
            acc = mpfr(0)
            for j, coeff in self.a_terms[p]:
                acc += coeff * x[j]
            for k, coeff in self.q_terms[p]:
                u, v = self.pairs[k]
                acc += coeff * (x[u] * x[v])
            out.append(acc)
        return out

    def __repr__(self):
        return f"QuadraticSystem({self.name!r}, n={self.n}, bits={self.bits})"


def _one_norm_active(rows):
    """Maximum column sum of absolute values; assumes an active context."""
    n_rows = len(rows)
    n_cols = len(rows[0]) if n_rows else 0
    best = mpfr(0)
    for j in range(n_cols):
        s = mpfr(0)
        for i in range(n_rows):
            s += abs(mpfr(rows[i][j]))
        if s > best:
            best = s
    return best


def one_norm(matrix):
    """Induced 1-norm (max column sum of absolute entries) of a square matrix."""
    rows = list(matrix)
    n = len(rows)
    if any(len(row) != n for row in rows):
        raise DefinitionError("one_norm expects a square matrix")
    prec = max(
        (v.precision for row in rows for v in row if isinstance(v, mpfr)),
        default=53,
    )
    with gmpy2.context(precision=prec):
        return _one_norm_active(rows)


def mu(system: QuadraticSystem):
    """n times the largest 1-norm among the system's quadratic matrices."""
    with system.context():
        return mpfr(system.mu)


def evaluate_rhs(system: QuadraticSystem, x):
    """Evaluate A X + Phi(X) at a state vector."""
    if len(x) != system.n:
        raise DefinitionError(
            f"state has length {len(x)}, system dimension is {system.n}"
        )
    with system.context():
        return system.rhs_active([mpfr(v) for v in x])


def extend_with_variational(system: QuadraticSystem) -> QuadraticSystem:
    """Append the variational (tangent linear) dynamics as extra coordinates.

    The result is a 2n-dimensional quadratic system: the first n coordinates
    reproduce the original dynamics, the last n obey dz/dt = J(X) z with J
    the Jacobian of A X + Phi(X).  Writing J's quadratic part against the
    pair (x_u, z_v) keeps the right-hand side quadratic:

        <Q_{n+p} X_ext, X_ext> = sum_{u,v} ((Q_p)_{uv} + (Q_p)_{vu}) x_u z_v
    """
    n = system.n
    with system.context():
        zero = mpfr(0)
        a_ext = []
        for p in range(n):
            a_ext.append(tuple(system.a[p]) + (zero,) * n)
        for p in range(n):
            a_ext.append((zero,) * n + tuple(system.a[p]))
        q_ext = []
        for p in range(n):
            padded = []
            for u in range(n):
                padded.append(tuple(system.q[p][u]) + (zero,) * n)
            for _ in range(n):
                padded.append((zero,) * (2 * n))
            q_ext.append(tuple(padded))
        for p in range(n):
            mat = [[zero] * (2 * n) for _ in range(2 * n)]
            for u in range(n):
                for v in range(n):
                    coeff = system.q[p][u][v] + system.q[p][v][u]
                    if coeff != 0:
                        mat[u][n + v] = coeff
            q_ext.append(tuple(tuple(row) for row in mat))
    labels = system.labels + tuple("d" + s for s in system.labels)
    return QuadraticSystem(
        system.name + "+variational", a_ext, q_ext, bits=system.bits,
        labels=labels,
    )


# ---------------------------------------------------------------------------
# model catalog
# ---------------------------------------------------------------------------

def tumor_system(N, H, I, config: PrecisionConfig) -> QuadraticSystem:
    """Three-population tumor growth model in canonical quadratic form.

    Parameters are the normal-cell population N, host-cell population H and
    immune-cell population I.  The norm bounds used for the guaranteed step
    assume I >= 0, H > 1, N > 0, which is enforced here.
    """
    with config.context():
        N = parse_parameter(N)
        H = parse_parameter(H)
        I = parse_parameter(I)
        for name, v in (("N", N), ("H", H), ("I", I)):
            if not gmpy2.is_finite(v):
                raise ConfigurationError(f"tumor parameter {name} must be finite")
        if not I >= 0:
            raise ConfigurationError("tumor parameter I must satisfy I >= 0")
        if not H > 1:
            raise ConfigurationError("tumor parameter H must satisfy H > 1")
        if not N > 0:
            raise ConfigurationError("tumor parameter N must satisfy N > 0")
        two_n = 2 * N
        four_less_i = 4 - I
        neg_i = -I
        half_h = mpfr("0.5") * H
        a = [
            [two_n, 0, 0],
            [0, four_less_i, 0],
            [0, 0, neg_i],
        ]
        q1 = [
            [mpfr(-1), 0, -H],
            [0, 0, 0],
            [0, 0, 0],
        ]
        q2 = [
            [mpfr("0.5"), 0, 0],
            [0, mpfr("-0.14"), -half_h],
            [0, 0, mpfr("0.001")],
        ]
        q3 = [
            [0, 0, 0],
            [0, mpfr("0.07"), half_h],
            [0, 0, mpfr("-0.002")],
        ]
    return QuadraticSystem("tumor", a, [q1, q2, q3], bits=config.bits)


def lorenz_system(sigma="10", r="28", b="8/3",
                  config: PrecisionConfig | None = None) -> QuadraticSystem:
    """The Lorenz system in canonical quadratic form."""
    if config is None:
        config = PrecisionConfig()
    with config.context():
        s = parse_parameter(sigma)
        rr = parse_parameter(r)
        bb = parse_parameter(b)
        for name, v in (("sigma", s), ("r", rr), ("b", bb)):
            if not gmpy2.is_finite(v):
                raise ConfigurationError(f"lorenz parameter {name} must be finite")
        a = [
            [-s, s, 0],
            [rr, mpfr(-1), 0],
            [0, 0, -bb],
        ]
        zero3 = [[0, 0, 0], [0, 0, 0], [0, 0, 0]]
        q2 = [
            [0, 0, mpfr(-1)],
            [0, 0, 0],
            [0, 0, 0],
        ]
        q3 = [
            [0, mpfr(1), 0],
            [0, 0, 0],
            [0, 0, 0],
        ]
    return QuadraticSystem("lorenz", a, [zero3, q2, q3], bits=config.bits)


def _build_tumor(params, config):
    missing = [k for k in ("N", "H", "I") if k not in params]
    if missing:
        raise ConfigurationError(
            "tumor model needs parameters N, H, I; missing: " + ", ".join(missing)
        )
    return tumor_system(params["N"], params["H"], params["I"], config)


def _build_lorenz(params, config):
    return lorenz_system(
        params.get("sigma", "10"), params.get("r", "28"), params.get("b", "8/3"),
        config,
    )


MODEL_BUILDERS = {
    "tumor": _build_tumor,
    "lorenz": _build_lorenz,
}


# ---------------------------------------------------------------------------
# definition files
# ---------------------------------------------------------------------------

def load_system(text: str, config: PrecisionConfig) -> QuadraticSystem:
    """Parse a JSON system definition into a QuadraticSystem.

    Expected fields: ``name`` (string), ``dimension`` (integer), ``A``
    (row-major list of n*n numbers or decimal strings), ``Q`` (list of n
    row-major n*n matrices), optional ``labels``.  Numeric literals are kept
    as decimal strings all the way into the big-float conversion, so there is
    no intermediate float64 rounding.
    """
    try:
        doc = json.loads(text, parse_float=str, parse_int=str)
    except json.JSONDecodeError as exc:
        raise DefinitionError(
            f"invalid definition syntax at line {exc.lineno}, column {exc.colno}: "
            f"{exc.msg}"
        ) from exc
    if not isinstance(doc, dict):
        raise DefinitionError("definition must be a JSON object")
    for key in ("name", "dimension", "A", "Q"):
        if key not in doc:
            raise DefinitionError(f"definition is missing field {key!r}")
    try:
        n = int(doc["dimension"])
    except (TypeError, ValueError) as exc:
        raise DefinitionError("field 'dimension' must be an integer") from exc
    if n < 1:
        raise DefinitionError("field 'dimension' must be >= 1")
    a_flat = doc["A"]
    if not isinstance(a_flat, list) or len(a_flat) != n * n:
        raise DefinitionError(
            f"field 'A' must be a row-major list of {n * n} entries"
        )
    q_list = doc["Q"]
    if not isinstance(q_list, list) or len(q_list) != n:
        raise DefinitionError(f"field 'Q' must be a list of {n} matrices")
    for p, mat in enumerate(q_list):
        if not isinstance(mat, list) or len(mat) != n * n:
            raise DefinitionError(
                f"field 'Q'[{p}] must be a row-major list of {n * n} entries"
            )

    def reshape(flat, what):
        rows = []
        for i in range(n):
            row = []
            for j in range(n):
                v = flat[i * n + j]
                if not isinstance(v, str):
                    raise DefinitionError(
                        f"{what} entry ({i + 1},{j + 1}) is not numeric: {v!r}"
                    )
                row.append(v)
            rows.append(row)
        return rows

    with config.context():
        try:
            a_rows = reshape(a_flat, "A")
            q_mats = [reshape(q_list[p], f"Q[{p + 1}]") for p in range(n)]
            return QuadraticSystem(
                doc["name"], a_rows, q_mats, bits=config.bits,
                labels=doc.get("labels"),
            )
        except DefinitionError:
            raise
        except ValueError as exc:
            raise DefinitionError(str(exc)) from exc
