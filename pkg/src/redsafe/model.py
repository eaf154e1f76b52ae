"""Domain types for systems, sets and safety predicates, plus manifest I/O.

All types are immutable after construction (arrays are frozen) and validate
their invariants eagerly: a bad dimension or an inverted box is rejected with
a specific error, never clamped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence, Union

import numpy as np
import scipy.io

FORMAT_VERSION = 1

POLARITY_SAFE = "safe-region"
POLARITY_UNSAFE = "unsafe-region"
_POLARITIES = (POLARITY_SAFE, POLARITY_UNSAFE)

#: Default relative stability margin: a system counts as Hurwitz only if its
#: spectral abscissa is below -margin, margin = STABILITY_MARGIN_REL * ||A||_2.
#: Numerically marginal systems make the infinite-horizon gramians ill-posed.
STABILITY_MARGIN_REL = 1e-9


class ModelError(ValueError):
    """A domain-type invariant was violated."""


class ManifestError(ModelError):
    """A manifest file is missing, malformed or inconsistent."""


class StabilityError(ModelError):
    """An operation required a Hurwitz matrix and did not get one."""


def _as_matrix(name: str, value) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim != 2:
        raise ModelError(f"{name} must be a 2-d real matrix, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{name} contains non-finite entries")
    return arr


def _as_vector(name: str, value) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim != 1:
        raise ModelError(f"{name} must be a 1-d real vector, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{name} contains non-finite entries")
    return arr


def _freeze(*arrays: np.ndarray) -> None:
    for arr in arrays:
        arr.setflags(write=False)


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """State-space model dx/dt = A x + B u, y = C x."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = _as_matrix("A", self.A)
        B = _as_matrix("B", self.B)
        C = _as_matrix("C", self.C)
        n = A.shape[0]
        if A.shape[1] != n or n < 1:
            raise ModelError(f"A must be square and nonempty, got {A.shape}")
        if B.shape[0] != n:
            raise ModelError(f"B has {B.shape[0]} rows, expected n={n}")
        if C.shape[1] != n:
            raise ModelError(f"C has {C.shape[1]} columns, expected n={n}")
        if B.shape[1] < 1 or C.shape[0] < 1:
            raise ModelError("input and output dimensions must be positive")
        _freeze(A, B, C)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, LtiSystem):
            return NotImplemented
        return (np.array_equal(self.A, other.A)
                and np.array_equal(self.B, other.B)
                and np.array_equal(self.C, other.C))

    def __repr__(self) -> str:
        return f"LtiSystem(n={self.n}, m={self.m}, p={self.p})"


@dataclass(frozen=True, eq=False)
class HyperBox:
    """Axis-aligned box {x : lb <= x <= ub} (componentwise)."""

    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        lb = _as_vector("lb", self.lb)
        ub = _as_vector("ub", self.ub)
        if lb.shape != ub.shape:
            raise ModelError(f"lb and ub have different shapes: {lb.shape} vs {ub.shape}")
        bad = np.nonzero(lb > ub)[0]
        if bad.size:
            raise ModelError(f"lb > ub at coordinate {bad[0]}: {lb[bad[0]]} > {ub[bad[0]]}")
        _freeze(lb, ub)
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @property
    def dim(self) -> int:
        return self.lb.shape[0]

    @property
    def center(self) -> np.ndarray:
        return (self.lb + self.ub) / 2.0

    @property
    def halfwidth(self) -> np.ndarray:
        return (self.ub - self.lb) / 2.0

    @property
    def is_point(self) -> bool:
        return bool(np.all(self.lb == self.ub))

    def free_dims(self) -> np.ndarray:
        """Indices of coordinates with nonzero width."""
        return np.nonzero(self.ub > self.lb)[0]

    def vertex_count(self) -> int:
        """Number of distinct vertices: 2**(free dims)."""
        return 1 << len(self.free_dims())

    def vertices(self, cap: int | None = None) -> np.ndarray:
        """All distinct vertices as columns of a (dim, count) array.

        Degenerate coordinates contribute no branching.  Raises ModelError if
        the count exceeds ``cap``.
        """
        free = self.free_dims()
        count = 1 << len(free)
        if cap is not None and count > cap:
            raise ModelError(
                f"box has 2**{len(free)} = {count} vertices, exceeding cap {cap}")
        out = np.tile(self.center[:, None], (1, count))
        for bit, d in enumerate(free):
            mask = (np.arange(count) >> bit) & 1
            out[d, :] = np.where(mask, self.ub[d], self.lb[d])
        return out

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Uniform samples as columns of a (dim, count) array."""
        return self.lb[:, None] + (self.ub - self.lb)[:, None] * rng.random((self.dim, count))

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lb - tol) and np.all(x <= self.ub + tol))

    def __eq__(self, other) -> bool:
        if not isinstance(other, HyperBox):
            return NotImplemented
        return np.array_equal(self.lb, other.lb) and np.array_equal(self.ub, other.ub)

    def __repr__(self) -> str:
        return f"HyperBox(dim={self.dim})"


@dataclass(frozen=True, eq=False)
class PolytopeSpec:
    """Predicate Gamma @ y + Psi <= 0 over outputs, tagged safe or unsafe.

    A safe-region spec asserts the system is safe while every row holds; an
    unsafe-region spec marks the polytope itself as the forbidden region.
    """

    Gamma: np.ndarray
    Psi: np.ndarray
    polarity: str

    def __post_init__(self):
        Gamma = _as_matrix("Gamma", self.Gamma)
        Psi = _as_vector("Psi", self.Psi)
        if Gamma.shape[0] != Psi.shape[0]:
            raise ModelError(
                f"Gamma has {Gamma.shape[0]} rows but Psi has {Psi.shape[0]} entries")
        if self.polarity not in _POLARITIES:
            raise ModelError(f"polarity must be one of {_POLARITIES}, got {self.polarity!r}")
        _freeze(Gamma, Psi)
        object.__setattr__(self, "Gamma", Gamma)
        object.__setattr__(self, "Psi", Psi)

    @property
    def q(self) -> int:
        return self.Gamma.shape[0]

    @property
    def p(self) -> int:
        return self.Gamma.shape[1]

    def margins(self, y: np.ndarray) -> np.ndarray:
        """Row values Gamma @ y + Psi; membership semantics are the caller's."""
        return self.Gamma @ np.asarray(y, dtype=float) + self.Psi

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolytopeSpec):
            return NotImplemented
        return (np.array_equal(self.Gamma, other.Gamma)
                and np.array_equal(self.Psi, other.Psi)
                and self.polarity == other.polarity)


#: Relative symmetry tolerance for ellipsoid shape matrices.
SYM_TOL_REL = 1e-10


@dataclass(frozen=True, eq=False)
class EllipsoidSpec:
    """Predicate (y - a)^T Q (y - a) <= R^2, tagged safe or unsafe."""

    Q: np.ndarray
    a: np.ndarray
    R: float
    polarity: str

    def __post_init__(self):
        Q = _as_matrix("Q", self.Q)
        a = _as_vector("a", self.a)
        if Q.shape[0] != Q.shape[1]:
            raise ModelError(f"Q must be square, got {Q.shape}")
        if Q.shape[0] != a.shape[0]:
            raise ModelError(f"Q is {Q.shape[0]}x{Q.shape[0]} but center has dim {a.shape[0]}")
        asym = np.max(np.abs(Q - Q.T))
        if asym > SYM_TOL_REL * max(1.0, np.linalg.norm(Q, "fro")):
            raise ModelError(f"Q is not symmetric (max asymmetry {asym:.3e})")
        if np.linalg.eigvalsh((Q + Q.T) / 2).min() <= 0:
            raise ModelError("Q must be positive definite")
        if not (np.isfinite(self.R) and self.R > 0):
            raise ModelError(f"radius R must be a positive real, got {self.R}")
        if self.polarity not in _POLARITIES:
            raise ModelError(f"polarity must be one of {_POLARITIES}, got {self.polarity!r}")
        _freeze(Q, a)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "R", float(self.R))

    @property
    def p(self) -> int:
        return self.Q.shape[0]

    def quad(self, y: np.ndarray) -> float:
        d = np.asarray(y, dtype=float) - self.a
        return float(d @ self.Q @ d)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EllipsoidSpec):
            return NotImplemented
        return (np.array_equal(self.Q, other.Q)
                and np.array_equal(self.a, other.a)
                and self.R == other.R
                and self.polarity == other.polarity)


SafetyPredicate = Union[PolytopeSpec, EllipsoidSpec]


@dataclass(frozen=True, eq=False)
class PssSystem:
    """Periodically switched system: modes visited in order, each for its
    duration, with the state reset into the mode's initial box at each switch.
    """

    modes: tuple[LtiSystem, ...]
    durations: tuple[float, ...]
    mode_initial_sets: tuple[HyperBox, ...]

    def __post_init__(self):
        modes = tuple(self.modes)
        durations = tuple(float(d) for d in self.durations)
        sets = tuple(self.mode_initial_sets)
        if not (len(modes) == len(durations) == len(sets)) or len(modes) < 1:
            raise ModelError(
                f"modes/durations/initial sets must have equal length >= 1, got "
                f"{len(modes)}/{len(durations)}/{len(sets)}")
        n, m, p = modes[0].n, modes[0].m, modes[0].p
        for i, mode in enumerate(modes):
            if (mode.n, mode.m, mode.p) != (n, m, p):
                raise ModelError(f"mode {i} has dimensions {(mode.n, mode.m, mode.p)}, "
                                 f"expected {(n, m, p)}")
        for i, d in enumerate(durations):
            if not (np.isfinite(d) and d > 0):
                raise ModelError(f"duration of mode {i} must be positive, got {d}")
        for i, box in enumerate(sets):
            if box.dim != n:
                raise ModelError(f"initial set of mode {i} has dim {box.dim}, expected {n}")
        for i, mode in enumerate(modes):
            rep = check_stability(mode)
            if not rep.stable:
                raise StabilityError(
                    f"mode {i} is not Hurwitz (spectral abscissa {rep.abscissa:.3e})")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "durations", durations)
        object.__setattr__(self, "mode_initial_sets", sets)

    @property
    def l(self) -> int:
        return len(self.modes)

    @property
    def n(self) -> int:
        return self.modes[0].n

    @property
    def m(self) -> int:
        return self.modes[0].m

    @property
    def p(self) -> int:
        return self.modes[0].p

    def __eq__(self, other) -> bool:
        if not isinstance(other, PssSystem):
            return NotImplemented
        return (self.modes == other.modes
                and self.durations == other.durations
                and self.mode_initial_sets == other.mode_initial_sets)


@dataclass(frozen=True, eq=False)
class VerificationProblem:
    """A system, its initial and input sets, a safety spec and a time horizon.

    ``spec`` is a tuple of predicates sharing one polarity: a safe-region
    family must all hold, an unsafe-region family is a union of forbidden
    regions.
    """

    system: Union[LtiSystem, PssSystem]
    x0: HyperBox | None
    inputs: HyperBox
    spec: tuple[SafetyPredicate, ...]
    t_f: float
    name: str = ""

    def __post_init__(self):
        spec = tuple(self.spec) if isinstance(self.spec, (tuple, list)) else (self.spec,)
        if not spec:
            raise ModelError("problem needs at least one safety predicate")
        polarities = {s.polarity for s in spec}
        if len(polarities) > 1:
            raise ModelError("all safety predicates must share one polarity")
        sys_ = self.system
        if isinstance(sys_, PssSystem):
            if self.x0 is not None:
                raise ModelError("PSS problems carry initial sets per mode; x0 must be None")
        else:
            if self.x0 is None:
                raise ModelError("LTI problems require an initial box x0")
            if self.x0.dim != sys_.n:
                raise ModelError(f"x0 has dim {self.x0.dim}, expected n={sys_.n}")
        if self.inputs.dim != sys_.m:
            raise ModelError(f"input box has dim {self.inputs.dim}, expected m={sys_.m}")
        for s in spec:
            if s.p != sys_.p:
                raise ModelError(f"spec output dim {s.p} does not match p={sys_.p}")
        if not (np.isfinite(self.t_f) and self.t_f > 0):
            raise ModelError(f"t_f must be a finite positive real, got {self.t_f}")
        object.__setattr__(self, "spec", spec)
        object.__setattr__(self, "t_f", float(self.t_f))

    @property
    def polarity(self) -> str:
        return self.spec[0].polarity

    def __eq__(self, other) -> bool:
        if not isinstance(other, VerificationProblem):
            return NotImplemented
        return (self.system == other.system
                and self.x0 == other.x0
                and self.inputs == other.inputs
                and self.spec == other.spec
                and self.t_f == other.t_f
                and self.name == other.name)


class StabilityReport(NamedTuple):
    stable: bool
    abscissa: float
    margin: float


def check_stability(sys: LtiSystem | np.ndarray, margin: float | None = None) -> StabilityReport:
    """Decide whether A is Hurwitz with margin; returns the spectral abscissa.

    ``margin`` defaults to STABILITY_MARGIN_REL * ||A||_2.
    """
    A = sys.A if isinstance(sys, LtiSystem) else np.asarray(sys, dtype=float)
    if margin is not None and margin <= 0:
        raise ModelError(f"stability margin must be positive, got {margin}")
    try:
        eigs = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise StabilityError(f"eigenvalue computation failed: {exc}") from exc
    abscissa = float(np.max(eigs.real)) if A.size else float("-inf")
    if margin is None:
        margin = STABILITY_MARGIN_REL * max(1e-300, np.linalg.norm(A, 2))
    return StabilityReport(abscissa < -margin, abscissa, margin)


def require_hurwitz(sys: LtiSystem | np.ndarray, what: str = "system") -> float:
    """Raise StabilityError unless Hurwitz; returns the abscissa."""
    rep = check_stability(sys)
    if not rep.stable:
        raise StabilityError(
            f"{what} is not asymptotically stable "
            f"(spectral abscissa {rep.abscissa:.6e}, margin {rep.margin:.1e})")
    return rep.abscissa


# --------------------------------------------------------------------------
# Manifest I/O.
#
# Manifest: JSON with {format_version, name, type: "lti"|"pss",
#   matrices: {A,B,C: relative paths}, x0: {lb,ub}, input: {lb,ub},
#   spec: one predicate object or a list, t_f}.
# PSS manifests replace matrices/x0 with a "modes" list of
#   {matrices, duration, x0}.  Matrices are MatrixMarket files (coordinate or
# array format), so SLICOT benchmark files load unchanged.
# --------------------------------------------------------------------------

def load_matrix(path: Path) -> np.ndarray:
    """Read a dense 2-d array from a MatrixMarket file."""
    if not Path(path).is_file():
        raise ManifestError(f"matrix file not found: {path}")
    try:
        mat = scipy.io.mmread(str(path))
    except Exception as exc:
        raise ManifestError(f"cannot read MatrixMarket file {path}: {exc}") from exc
    if hasattr(mat, "toarray"):
        mat = mat.toarray()
    return np.asarray(mat, dtype=float)


def save_matrix(path: Path, mat: np.ndarray) -> None:
    scipy.io.mmwrite(str(path), np.atleast_2d(np.asarray(mat, dtype=float)), precision=17)


def _parse_box(obj, what: str) -> HyperBox:
    try:
        return HyperBox(np.asarray(obj["lb"], dtype=float), np.asarray(obj["ub"], dtype=float))
    except KeyError as exc:
        raise ManifestError(f"{what} must have 'lb' and 'ub' fields") from exc


def _parse_predicate(obj) -> SafetyPredicate:
    kind = obj.get("kind")
    polarity = obj.get("polarity")
    if kind == "polytope":
        return PolytopeSpec(np.asarray(obj["Gamma"], dtype=float),
                            np.asarray(obj["Psi"], dtype=float), polarity)
    if kind == "ellipsoid":
        return EllipsoidSpec(np.asarray(obj["Q"], dtype=float),
                             np.asarray(obj["a"], dtype=float), float(obj["R"]), polarity)
    raise ManifestError(f"spec kind must be 'polytope' or 'ellipsoid', got {kind!r}")


def parse_spec_json(obj) -> tuple[SafetyPredicate, ...]:
    items = obj if isinstance(obj, list) else [obj]
    return tuple(_parse_predicate(it) for it in items)


def _load_lti(matrices, base: Path) -> LtiSystem:
    loaded = {}
    for key in ("A", "B", "C"):
        if key not in matrices:
            raise ManifestError(f"manifest is missing matrix path for {key!r}")
        loaded[key] = load_matrix(base / matrices[key])
    A, B, C = loaded["A"], loaded["B"], loaded["C"]
    n = A.shape[0]
    if A.shape[1] != n:
        raise ManifestError(f"matrix A must be square, got {A.shape}")
    if B.shape[0] != n:
        raise ManifestError(f"matrix B has {B.shape[0]} rows, expected n={n}")
    if C.shape[1] != n:
        raise ManifestError(f"matrix C has {C.shape[1]} columns, expected n={n}")
    return LtiSystem(A, B, C)


def parse_problem(manifest_path: str | Path) -> VerificationProblem:
    """Load and fully validate a verification problem from a JSON manifest."""
    path = Path(manifest_path)
    if not path.is_file():
        raise ManifestError(f"manifest file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    version = doc.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ManifestError(f"unsupported format_version {version}")
    base = path.parent
    kind = doc.get("type")
    try:
        spec = parse_spec_json(doc["spec"])
        inputs = _parse_box(doc["input"], "input")
        t_f = float(doc["t_f"])
    except KeyError as exc:
        raise ManifestError(f"manifest is missing required field {exc}") from exc

    if kind == "lti":
        system = _load_lti(doc.get("matrices", {}), base)
        x0 = _parse_box(doc.get("x0", {}), "x0")
        if x0.dim != system.n:
            raise ManifestError(f"x0 has dim {x0.dim}, expected n={system.n}")
        return VerificationProblem(system=system, x0=x0, inputs=inputs, spec=spec,
                                   t_f=t_f, name=doc.get("name", path.stem))
    if kind == "pss":
        modes, durations, sets = [], [], []
        for i, mode_doc in enumerate(doc.get("modes", [])):
            modes.append(_load_lti(mode_doc.get("matrices", {}), base))
            durations.append(float(mode_doc["duration"]))
            sets.append(_parse_box(mode_doc.get("x0", {}), f"mode {i} x0"))
        system = PssSystem(tuple(modes), tuple(durations), tuple(sets))
        return VerificationProblem(system=system, x0=None, inputs=inputs, spec=spec,
                                   t_f=t_f, name=doc.get("name", path.stem))
    raise ManifestError(f"manifest type must be 'lti' or 'pss', got {kind!r}")


def _spec_to_json(pred: SafetyPredicate) -> dict:
    if isinstance(pred, PolytopeSpec):
        return {"kind": "polytope", "polarity": pred.polarity,
                "Gamma": pred.Gamma.tolist(), "Psi": pred.Psi.tolist()}
    return {"kind": "ellipsoid", "polarity": pred.polarity,
            "Q": pred.Q.tolist(), "a": pred.a.tolist(), "R": pred.R}


def spec_to_json(spec: Sequence[SafetyPredicate]) -> list | dict:
    docs = [_spec_to_json(s) for s in spec]
    return docs[0] if len(docs) == 1 else docs


def serialize_problem(problem: VerificationProblem, manifest_path: str | Path) -> Path:
    """Write a problem back to disk (manifest JSON plus MatrixMarket files).

    Matrix entries survive a parse/serialize round trip bit exactly.
    """
    path = Path(manifest_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stem = path.stem
    doc: dict = {"format_version": FORMAT_VERSION, "name": problem.name,
                 "input": {"lb": problem.inputs.lb.tolist(), "ub": problem.inputs.ub.tolist()},
                 "spec": spec_to_json(problem.spec), "t_f": problem.t_f}
    if isinstance(problem.system, PssSystem):
        doc["type"] = "pss"
        doc["modes"] = []
        for i, (mode, dur, box) in enumerate(zip(problem.system.modes,
                                                 problem.system.durations,
                                                 problem.system.mode_initial_sets)):
            names = {}
            for key, mat in (("A", mode.A), ("B", mode.B), ("C", mode.C)):
                fname = f"{stem}_mode{i}_{key}.mtx"
                save_matrix(path.parent / fname, mat)
                names[key] = fname
            doc["modes"].append({"matrices": names, "duration": dur,
                                 "x0": {"lb": box.lb.tolist(), "ub": box.ub.tolist()}})
    else:
        doc["type"] = "lti"
        names = {}
        for key, mat in (("A", problem.system.A), ("B", problem.system.B),
                         ("C", problem.system.C)):
            fname = f"{stem}_{key}.mtx"
            save_matrix(path.parent / fname, mat)
            names[key] = fname
        doc["matrices"] = names
        doc["x0"] = {"lb": problem.x0.lb.tolist(), "ub": problem.x0.ub.tolist()}
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path
