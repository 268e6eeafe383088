"""Sum-of-poles approximants to z**-s fitted by the orthogonal greedy algorithm.

An approximant is ``r(z) = sum_i c_i / (z + t_i)`` with positive shifts ``t_i``.
The fit works on ``[epsilon, 1]`` with a graded three-segment partition
carrying three weighted points per cell (see :class:`QuadratureGrid` for the
two weightings on offer) and a dictionary of L2-normalized functions
``1/(z + t)`` over the squared arithmetic grid ``t = (j*hd)**2``.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterator, NamedTuple

import numpy as np

from .errors import DimensionError, FittingError, InvalidArgument, ParseError

if "NUMBA_THREADING_LAYER" not in os.environ:
    os.environ["NUMBA_THREADING_LAYER"] = "workqueue"
import numba  # noqa: E402

log = logging.getLogger(__name__)

GAUSS_OFFSETS = np.array([0.5 - math.sqrt(15) / 10, 0.5, 0.5 + math.sqrt(15) / 10])
GAUSS_WEIGHTS = np.array([5 / 18, 4 / 9, 5 / 18])

# (right end, number of uniform steps); the first segment starts at epsilon
SEGMENTS = ((1e-3, 2000), (1e-2, 2000), (1.0, 3000))

FIXTURE_NAME = "oga_s0.5_n20.json"


@dataclass(frozen=True)
class QuadratureGrid:
    """Graded partition of ``[epsilon, 1]`` with a weighted point set.

    ``rule="gauss"`` is the textbook per-cell 3-point Gauss rule: point
    ``3k + a`` sits in cell ``k`` at offset ``a`` and carries weight
    ``w_a * h_k``.

    ``rule="strided"`` reproduces the weighting of the reference OGA listing,
    which stores the points block-wise (all first offsets, then all second,
    then all third) but strides weights as if they were interleaved per cell.
    Point ``3k + a`` of the block layout therefore carries ``w_a * h_k``
    although it does not lie in cell ``k``. This is the rule under which the
    published 20-term table was generated.
    """

    nodes: np.ndarray
    widths: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    rule: str

    @property
    def epsilon(self):
        return float(self.nodes[0])

    @property
    def n_cells(self):
        return self.widths.size


def build_grid(epsilon, rule="strided"):
    if not 0 < epsilon < 1e-3:
        raise InvalidArgument(f"epsilon must lie in (0, 1e-3), got {epsilon}")
    left = epsilon
    pieces = []
    for right, steps in SEGMENTS:
        pieces.append(np.linspace(left, right, steps + 1))
        left = right
    nodes = np.unique(np.concatenate(pieces))
    h = np.diff(nodes)

    if rule == "gauss":
        points = (nodes[:-1, None] + GAUSS_OFFSETS[None, :] * h[:, None]).ravel()
        weights = (h[:, None] * GAUSS_WEIGHTS[None, :]).ravel()
    elif rule == "strided":
        points = (nodes[None, :-1] + GAUSS_OFFSETS[:, None] * h[None, :]).ravel()
        weights = (h[:, None] * GAUSS_WEIGHTS[None, :]).ravel()
    else:
        raise InvalidArgument(f"unknown quadrature rule {rule!r}")
    return QuadratureGrid(nodes, h, points, weights, rule)


def inner_product(f_values, g_values, grid):
    f_values = np.asarray(f_values, dtype=np.float64)
    g_values = np.asarray(g_values, dtype=np.float64)
    if f_values.shape != grid.points.shape or g_values.shape != grid.points.shape:
        raise DimensionError(
            f"values of shape {f_values.shape}/{g_values.shape} do not match "
            f"{grid.points.size} quadrature points")
    return float(np.dot(grid.weights * f_values, g_values))


@dataclass(frozen=True)
class Dictionary:
    """Candidate shifts and the L2[epsilon, 1] norms of ``1/(z + t)``."""

    shifts: np.ndarray
    norms: np.ndarray
    epsilon: float

    def __len__(self):
        return self.shifts.size

    def element(self, j, z):
        """Normalized dictionary element ``j`` sampled at ``z``."""
        return 1.0 / (z + self.shifts[j]) / self.norms[j]


def build_dictionary(epsilon, hd=5e-5, t_cap=5.0):
    if not hd > 0 or not t_cap > 0:
        raise InvalidArgument(f"hd and t_cap must be positive, got {hd}, {t_cap}")
    count = int(math.floor(t_cap / hd * (1 + 1e-12)))
    if count < 1:
        raise InvalidArgument(f"t_cap={t_cap} is below the first grid point {hd}")
    j = np.arange(1, count + 1)
    K = round(1.0 / hd)
    if abs(K * hd - 1.0) <= 1e-12:
        # hd = 1/K: j^2 / K^2 is one correctly rounded division, so grid points are exact decimals
        shifts = (j * j).astype(np.float64) / float(K * K)
    else:
        shifts = (j * hd) ** 2
    norms = np.sqrt(1.0 / (epsilon + shifts) - 1.0 / (1.0 + shifts))
    if not np.all(np.isfinite(norms) & (norms > 0)):
        raise InvalidArgument("dictionary normalization is not positive and finite")
    return Dictionary(shifts, norms, float(epsilon))


@numba.njit(parallel=True, cache=True, fastmath={"reassoc", "contract", "nsz"})
def _score_sweep(points, weighted_residual, shifts, norms, out):
    # each candidate is reduced sequentially, so results do not depend on threads
    for j in numba.prange(shifts.shape[0]):
        t = shifts[j]
        acc = 0.0
        for k in range(points.shape[0]):
            acc += weighted_residual[k] / (points[k] + t)
        out[j] = acc / norms[j]
    return out


def correlation_scores(residual, grid, dictionary):
    """``<g_j, residual>`` for every dictionary element."""
    out = np.empty(len(dictionary))
    return _score_sweep(grid.points, grid.weights * residual, dictionary.shifts,
                        dictionary.norms, out)


class OgaStep(NamedTuple):
    k: int
    index: int
    selected: tuple
    coefficients: np.ndarray
    residual: np.ndarray
    residual_norm: float


def oga_steps(s, n_terms, grid, dictionary) -> Iterator[OgaStep]:
    """Run the orthogonal greedy algorithm, yielding the state after each pick."""
    if not 0 < s < 1:
        raise InvalidArgument(f"s must lie in (0, 1), got {s}")
    if not 1 <= n_terms <= len(dictionary):
        raise InvalidArgument(f"n_terms must be in [1, {len(dictionary)}], got {n_terms}")

    z = grid.points
    target = z ** (-s)
    residual = target.copy()
    gram = np.zeros((n_terms, n_terms))
    rhs = np.zeros(n_terms)
    selected = []
    columns = []
    available = np.ones(len(dictionary), dtype=bool)

    for k in range(n_terms):
        scores = np.abs(correlation_scores(residual, grid, dictionary))
        scores[~available] = -1.0
        j = int(np.argmax(scores))  # first maximum, i.e. smallest shift on ties
        available[j] = False
        selected.append(j)
        g = dictionary.element(j, z)
        columns.append(g)
        for i, col in enumerate(columns):
            gram[i, k] = gram[k, i] = inner_product(col, g, grid)
        rhs[k] = inner_product(g, target, grid)

        try:
            coef, *_ = np.linalg.lstsq(gram[:k + 1, :k + 1], rhs[:k + 1], rcond=1e-13)
        except np.linalg.LinAlgError as exc:
            raise FittingError(f"Gram solve failed: {exc}", k + 1) from exc
        if not np.all(np.isfinite(coef)):
            raise FittingError("non-finite projection coefficients", k + 1)

        residual = target - np.column_stack(columns) @ coef
        rnorm = math.sqrt(max(inner_product(residual, residual, grid), 0.0))
        log.debug("OGA step %d: shift %.6g, residual %.3e", k + 1, dictionary.shifts[j], rnorm)
        yield OgaStep(k + 1, j, tuple(selected), coef, residual, rnorm)


def oga_fit(s, n_terms, grid, dictionary, validate=None):
    """Fit ``z**-s`` on ``[grid.epsilon, 1]`` with ``n_terms`` dictionary elements.

    ``validate`` is a ``(lo, hi, n_points)`` triple for the uniform error
    sweep; the default follows :func:`max_error`.
    """
    for step in oga_steps(s, n_terms, grid, dictionary):
        pass
    idx = np.array(step.selected)
    residues = step.coefficients / dictionary.norms[idx]
    shifts = dictionary.shifts[idx]
    approx = RationalApproximant(s, grid.epsilon, tuple(zip(residues.tolist(), shifts.tolist())))
    lo, hi, n_points = validate or (1e-6, 1.0, 5_000_000)
    err = max_error(approx, s, lo, hi, n_points)
    return approx.with_error(err)


@dataclass(frozen=True)
class RationalApproximant:
    """``r(z) = sum c_i / (z + t_i)``; terms are kept in selection order."""

    s: float
    epsilon: float
    terms: tuple
    achieved_max_error: float | None = None
    _c: np.ndarray = field(init=False, repr=False, compare=False)
    _t: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        terms = tuple((float(c), float(t)) for c, t in self.terms)
        if not terms:
            raise InvalidArgument("an approximant needs at least one term")
        t = np.array([t for _, t in terms])
        if np.any(t <= 0) or not np.all(np.isfinite(t)):
            raise InvalidArgument("all shifts must be positive and finite")
        if np.unique(t).size != t.size:
            raise InvalidArgument("shifts must be pairwise distinct")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "_c", np.array([c for c, _ in terms]))
        object.__setattr__(self, "_t", t)

    @property
    def residues(self):
        return self._c.copy()

    @property
    def shifts(self):
        return self._t.copy()

    def __len__(self):
        return len(self.terms)

    def with_error(self, err):
        return RationalApproximant(self.s, self.epsilon, self.terms, float(err))

    def __call__(self, z):
        return evaluate(self, z)


def evaluate_terms(residues, shifts, z):
    z = np.asarray(z, dtype=np.float64)
    out = np.zeros_like(z)
    for c, t in zip(residues, shifts):
        out += c / (z + t)
    return out


def evaluate(r, z):
    z_arr = np.asarray(z, dtype=np.float64)
    if np.any(z_arr <= 0):
        raise InvalidArgument("approximant is evaluated at z > 0 only")
    out = evaluate_terms(r._c, r._t, z_arr)
    return float(out) if out.ndim == 0 else out


def max_error(r, s, lo=1e-6, hi=1.0, n_points=5_000_000, chunk=1_000_000, target=None):
    """Uniform error ``max |r(z) - z**-s|`` over ``n_points`` equispaced z in ``[lo, hi]``.

    ``target`` replaces ``z**-s`` by another vectorized function of z.
    """
    if not 0 < lo < hi:
        raise InvalidArgument(f"need 0 < lo < hi, got {lo}, {hi}")
    if target is None:
        def target(z):
            return z ** (-s)
    z = np.linspace(lo, hi, n_points)
    worst = 0.0
    for start in range(0, n_points, chunk):
        zc = z[start:start + chunk]
        worst = max(worst, float(np.max(np.abs(evaluate_terms(r._c, r._t, zc) - target(zc)))))
    return worst


# -- documents -------------------------------------------------------------

def serialize(r):
    """JSON text; floats use the shortest repr that round-trips exactly."""
    lines = ["{",
             f'  "s": {r.s!r},',
             f'  "epsilon": {r.epsilon!r},',
             '  "terms": [']
    body = [f'    {{"c": {c!r}, "t": {t!r}}}' for c, t in r.terms]
    lines.append(",\n".join(body))
    lines.append("  ],")
    err = "null" if r.achieved_max_error is None else repr(r.achieved_max_error)
    lines.append(f'  "max_error": {err}')
    lines.append("}")
    return "\n".join(lines) + "\n"


def deserialize(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"line {exc.lineno} column {exc.colno}") from exc
    if not isinstance(doc, dict):
        raise ParseError("document must be a JSON object", "root")
    for key in ("s", "epsilon", "terms"):
        if key not in doc:
            raise ParseError("missing field", key)
    terms = doc["terms"]
    if not isinstance(terms, list) or not terms:
        raise ParseError("must be a non-empty array", "terms")
    parsed = []
    for i, item in enumerate(terms):
        if not isinstance(item, dict) or "c" not in item or "t" not in item:
            raise ParseError("each term needs numeric 'c' and 't'", f"terms[{i}]")
        c, t = item["c"], item["t"]
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in (c, t)):
            raise ParseError("'c' and 't' must be numbers", f"terms[{i}]")
        if not t > 0:
            raise ParseError(f"shift must be positive, got {t}", f"terms[{i}].t")
        parsed.append((float(c), float(t)))
    err = doc.get("max_error")
    try:
        return RationalApproximant(float(doc["s"]), float(doc["epsilon"]), tuple(parsed),
                                   None if err is None else float(err))
    except InvalidArgument as exc:
        raise ParseError(str(exc), "terms") from exc


def save(r, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(r))


def load(path):
    with open(path, encoding="utf-8") as fh:
        return deserialize(fh.read())


def fixture_text():
    return resources.files("fracbasis").joinpath("fixtures").joinpath(FIXTURE_NAME).read_text(encoding="utf-8")


def load_fixture():
    """The published 20-term approximant of z**-1/2 with its measured uniform error."""
    return deserialize(fixture_text())
