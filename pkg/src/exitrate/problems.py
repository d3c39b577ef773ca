"""Problem instances: controlled diffusions on axis-aligned boxes.

A problem is a box domain in dimension 1 or 2, a diagonal diffusion field
sigma(x), a finite action set, and a drift field m(x, u).  Coefficients are
closed-form expression strings (see :mod:`exitrate.expressions`) so problem
files round-trip through JSON without code changes.
"""

from __future__ import annotations

import dataclasses
import functools
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EllipticityViolation, NonFiniteCoefficient, TooLarge
from .expressions import Expression, parse_expression

MAX_ACTIONS = 64


@functools.lru_cache(maxsize=4096)
def _compiled(source: str) -> Expression:
    return parse_expression(source)


@dataclass(frozen=True)
class ProblemSpec:
    """Continuous model: box domain, finite actions, drift and diffusion fields.

    drift_exprs[k][j] is the j-th drift coordinate under action k; sigma_exprs[j]
    is the j-th diagonal entry of sigma.  c0 is the declared ellipticity floor
    for |sigma(x)^T y|^2 >= c0 |y|^2.
    """

    name: str
    dim: int
    bounds: tuple[tuple[float, float], ...]
    actions: tuple[str, ...]
    drift_exprs: tuple[tuple[str, ...], ...]
    sigma_exprs: tuple[str, ...]
    c0: float = 1.0

    def __post_init__(self) -> None:
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if len(self.bounds) != self.dim:
            raise ValueError("bounds must have one (lo, hi) pair per axis")
        for lo, hi in self.bounds:
            if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
                raise ValueError(f"invalid axis bounds ({lo}, {hi})")
        if not 1 <= len(self.actions) <= MAX_ACTIONS:
            raise TooLarge(f"action set size {len(self.actions)} outside 1..{MAX_ACTIONS}")
        if len(self.drift_exprs) != len(self.actions):
            raise ValueError("one drift expression row per action required")
        for row in self.drift_exprs:
            if len(row) != self.dim:
                raise ValueError("each drift row needs one expression per coordinate")
        if len(self.sigma_exprs) != self.dim:
            raise ValueError("one sigma expression per coordinate required")
        if not (np.isfinite(self.c0) and self.c0 > 0):
            raise ValueError(f"c0 must be positive, got {self.c0}")

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def lo(self) -> np.ndarray:
        return np.array([b[0] for b in self.bounds], dtype=float)

    @property
    def hi(self) -> np.ndarray:
        return np.array([b[1] for b in self.bounds], dtype=float)

    def drift(self, points: np.ndarray, action: int) -> np.ndarray:
        """Drift vectors m(x, u_action) at points of shape (n, d)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        cols = [_compiled(e)(pts) for e in self.drift_exprs[action]]
        return np.column_stack(cols)

    def sigma(self, points: np.ndarray) -> np.ndarray:
        """Diagonal entries of sigma(x) at points of shape (n, d)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        cols = [_compiled(e)(pts) for e in self.sigma_exprs]
        return np.column_stack(cols)


@dataclass(frozen=True)
class ValidatedProblem:
    """A ProblemSpec together with its sampled validation annotations."""

    spec: ProblemSpec
    ellipticity_floor_sampled: float
    lipschitz_estimate: float
    lattice_n: int

    # Delegates so a ValidatedProblem can be used wherever a spec is expected.
    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def bounds(self) -> tuple[tuple[float, float], ...]:
        return self.spec.bounds

    @property
    def actions(self) -> tuple[str, ...]:
        return self.spec.actions

    @property
    def n_actions(self) -> int:
        return self.spec.n_actions

    @property
    def lo(self) -> np.ndarray:
        return self.spec.lo

    @property
    def hi(self) -> np.ndarray:
        return self.spec.hi

    def drift(self, points: np.ndarray, action: int) -> np.ndarray:
        return self.spec.drift(points, action)

    def sigma(self, points: np.ndarray) -> np.ndarray:
        return self.spec.sigma(points)


@dataclass(frozen=True)
class PolicySpec:
    """Stationary Markov policy: one action index per interior grid node."""

    assignment: tuple[int, ...]

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.assignment, dtype=int)

    @staticmethod
    def from_array(values: Sequence[int]) -> "PolicySpec":
        return PolicySpec(tuple(int(v) for v in values))


def validate_problem(spec: ProblemSpec | ValidatedProblem, lattice_n: int = 33) -> ValidatedProblem:
    """Check ellipticity and coefficient finiteness on a closed-box lattice.

    Idempotent: validating a ValidatedProblem re-derives the same annotation.
    """
    base = spec.spec if isinstance(spec, ValidatedProblem) else spec
    axes = [np.linspace(lo, hi, lattice_n) for lo, hi in base.bounds]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])

    sig = base.sigma(pts)
    if not np.all(np.isfinite(sig)):
        raise NonFiniteCoefficient(f"{base.name}: sigma is not finite on the validation lattice")
    floor = float(np.min(sig * sig))
    if floor < base.c0 - 1e-12 * max(1.0, base.c0):
        raise EllipticityViolation(
            f"{base.name}: sampled |sigma^T y|^2 floor {floor:.6g} < c0 = {base.c0:.6g}"
        )

    lip = 0.0
    fields = [sig]
    for k in range(base.n_actions):
        m = base.drift(pts, k)
        if not np.all(np.isfinite(m)):
            raise NonFiniteCoefficient(f"{base.name}: drift under action {k} is not finite")
        fields.append(m)
    # Sampled Lipschitz estimate: largest finite-difference quotient along axis 0
    # of the lattice, reported for information only.
    shape = tuple(lattice_n for _ in range(base.dim))
    step = axes[0][1] - axes[0][0]
    for f in fields:
        for j in range(f.shape[1]):
            comp = f[:, j].reshape(shape)
            if comp.shape[0] > 1 and step > 0:
                lip = max(lip, float(np.max(np.abs(np.diff(comp, axis=0)))) / step)

    return ValidatedProblem(
        spec=base,
        ellipticity_floor_sampled=floor,
        lipschitz_estimate=lip,
        lattice_n=lattice_n,
    )


def bm_interval() -> ProblemSpec:
    """Driftless unit diffusion on (0, 1); the basic closed-form benchmark."""
    return ProblemSpec(
        name="bm-interval",
        dim=1,
        bounds=((0.0, 1.0),),
        actions=("0",),
        drift_exprs=(("0",),),
        sigma_exprs=("1",),
    )


def drift_interval(c: float = 1.0) -> ProblemSpec:
    """Constant drift c on (0, 1) with unit diffusion, single action."""
    return ProblemSpec(
        name="drift-interval",
        dim=1,
        bounds=((0.0, 1.0),),
        actions=(f"{c:g}",),
        drift_exprs=((repr(float(c)),),),
        sigma_exprs=("1",),
    )


def bang_bang() -> ProblemSpec:
    """Two-action problem on (-1, 1): the control picks the drift sign."""
    return ProblemSpec(
        name="bang-bang",
        dim=1,
        bounds=((-1.0, 1.0),),
        actions=("-1", "+1"),
        drift_exprs=(("-1",), ("1",)),
        sigma_exprs=("1",),
    )


def rect_2d(b: float = 1.0) -> ProblemSpec:
    """Unit square with drift {-b, 0, +b} on the first coordinate."""
    return ProblemSpec(
        name="rect-2d",
        dim=2,
        bounds=((0.0, 1.0), (0.0, 1.0)),
        actions=(f"{-b:g}", "0", f"{b:g}"),
        drift_exprs=(
            (repr(float(-b)), "0"),
            ("0", "0"),
            (repr(float(b)), "0"),
        ),
        sigma_exprs=("1", "1"),
    )


def builtin_catalog() -> list[ProblemSpec]:
    """The benchmark problems with known answers, at default parameters."""
    return [bm_interval(), drift_interval(1.0), bang_bang(), rect_2d(1.0)]


def problem_by_name(name: str, **params: float) -> ProblemSpec:
    """Look up a catalog problem, optionally overriding its parameters."""
    makers = {
        "bm-interval": bm_interval,
        "drift-interval": drift_interval,
        "bang-bang": bang_bang,
        "rect-2d": rect_2d,
    }
    if name not in makers:
        raise KeyError(f"unknown catalog problem {name!r}; choices: {sorted(makers)}")
    return makers[name](**params)  # type: ignore[arg-type]


def save_problem(spec: ProblemSpec, path: str) -> None:
    doc = {
        "name": spec.name,
        "dim": spec.dim,
        "bounds": [list(b) for b in spec.bounds],
        "actions": list(spec.actions),
        "drift": [list(row) for row in spec.drift_exprs],
        "sigma": list(spec.sigma_exprs),
        "c0": spec.c0,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_problem(path: str) -> ProblemSpec:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        return ProblemSpec(
            name=str(doc["name"]),
            dim=int(doc["dim"]),
            bounds=tuple((float(lo), float(hi)) for lo, hi in doc["bounds"]),
            actions=tuple(str(a) for a in doc["actions"]),
            drift_exprs=tuple(tuple(str(e) for e in row) for row in doc["drift"]),
            sigma_exprs=tuple(str(e) for e in doc["sigma"]),
            c0=float(doc.get("c0", 1.0)),
        )
    except KeyError as exc:
        raise ValueError(f"problem file {path} is missing field {exc}") from exc


def with_bounds(spec: ProblemSpec | ValidatedProblem, bounds: Sequence[Sequence[float]]) -> ProblemSpec:
    """Same problem on a different box (used by enlarged-domain constructions)."""
    base = spec.spec if isinstance(spec, ValidatedProblem) else spec
    return dataclasses.replace(base, bounds=tuple((float(lo), float(hi)) for lo, hi in bounds))
