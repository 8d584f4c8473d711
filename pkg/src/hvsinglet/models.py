"""Hidden-variable models for the spin-singlet pair.

A model assigns to each hidden variable lambda and each pair of unit
measurement axes (a, b) a 2x2 probability table over the joint outcomes
(sigma, tau) in {+1, -1}^2, with index 0 <-> +1 and index 1 <-> -1.
Averaging the table over the lambda measure must return the singlet
statistics P(sigma, tau | a, b) = (1 - sigma*tau*a.b)/4.

Two rule styles are supported:

* canonical: P_lambda = (1 - sigma*tau*(a.b - C(lambda, a, b)))/4 for some
  correction function C with zero lambda-average. The lambda-level marginals
  are 1/2 identically, so all the lambda dependence sits in the correlation.
* direct: an arbitrary per-lambda table rule (used for the sign-based model,
  whose entries are 0 or 1/2), together with a validity mask for the
  measure-zero set where the rule is undefined.

The measure over lambda never depends on the settings, and per-lambda
marginals for canonical models never depend on the remote axis; the
violation of outcome independence is the only nonlocal ingredient.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .geometry import (
    GeometryError,
    RandomStream,
    SphereGrid,
    as_generator,
    dot,
    require_unit,
    sample_uniform_sphere,
    sphere_quadrature,
)

__all__ = [
    "OUTCOMES",
    "ModelSpecError",
    "MeasureZeroError",
    "NegativeProbabilityError",
    "LambdaShape",
    "LambdaPoint",
    "LambdaBatch",
    "LambdaSpace",
    "CFunction",
    "HiddenVariableModel",
    "qm_singlet_prob",
    "qm_table",
    "setting_dot",
    "canonical_prob",
    "canonical_table",
    "hv_correlator",
    "family1_c",
    "family2_c",
    "wrongtrial_c",
    "cerf_prob",
    "family1_model",
    "family2_model",
    "wrongtrial_model",
    "cerf_model",
    "frobenius_bound",
    "RECIPE_REGISTRY",
    "RecipeFunction",
    "build_recipe_model",
    "model_from_spec",
    "load_model",
    "builtin_model",
    "sample_valid_tables",
]

OUTCOMES = (1, -1)

# sigma*tau for table index (i, j); used to turn tables into correlators.
_SIGMA_TAU = np.array([[1.0, -1.0], [-1.0, 1.0]])

# Tolerance below which a sign argument in the direct rule counts as zero.
SIGN_EPS = 1e-12

_FAMILIES = ("family1", "family2", "wrongtrial", "cerf", "recipe")
_MEASURES = ("two_point", "uniform")


class ModelSpecError(ValueError):
    """Malformed or inconsistent model specification."""


class MeasureZeroError(ValueError):
    """The direct rule was evaluated on its measure-zero undefined set."""


class NegativeProbabilityError(ValueError):
    """A table entry fell below -1e-12; carries the offending witness."""

    def __init__(self, message: str, witness: dict | None = None):
        super().__init__(message)
        self.witness = witness or {}


# ---------------------------------------------------------------------------
# Hidden-variable space


@dataclass(frozen=True)
class LambdaShape:
    scalars: int
    vectors: int


@dataclass(frozen=True)
class LambdaPoint:
    """A single hidden-variable value: scalar components plus unit vectors."""

    scalars: tuple[float, ...] = ()
    vectors: tuple[np.ndarray, ...] = ()

    def batch(self) -> "LambdaBatch":
        sc = np.asarray(self.scalars, dtype=float).reshape(1, -1)
        if self.vectors:
            vc = np.stack([np.asarray(v, dtype=float) for v in self.vectors])[None]
        else:
            vc = np.zeros((1, 0, 3))
        return LambdaBatch(sc, vc)

    def to_jsonable(self) -> dict:
        return {
            "scalars": [float(s) for s in self.scalars],
            "vectors": [[float(x) for x in v] for v in self.vectors],
        }


@dataclass
class LambdaBatch:
    """Vectorized hidden variables: scalars (n, ns) and vectors (n, nv, 3)."""

    scalars: np.ndarray
    vectors: np.ndarray

    def __post_init__(self) -> None:
        self.scalars = np.atleast_2d(np.asarray(self.scalars, dtype=float))
        self.vectors = np.asarray(self.vectors, dtype=float)
        if self.vectors.ndim != 3 or self.vectors.shape[-1] != 3:
            raise ValueError(f"vectors must have shape (n, nv, 3), got {self.vectors.shape}")
        if self.scalars.shape[0] != self.vectors.shape[0]:
            raise ValueError("scalar and vector blocks disagree on batch length")

    def __len__(self) -> int:
        return self.scalars.shape[0]

    @property
    def shape(self) -> LambdaShape:
        return LambdaShape(self.scalars.shape[1], self.vectors.shape[1])

    def point(self, i: int) -> LambdaPoint:
        return LambdaPoint(
            tuple(float(s) for s in self.scalars[i]),
            tuple(self.vectors[i, k].copy() for k in range(self.vectors.shape[1])),
        )

    def take(self, idx) -> "LambdaBatch":
        return LambdaBatch(self.scalars[idx], self.vectors[idx])

    @staticmethod
    def concat(parts: list["LambdaBatch"]) -> "LambdaBatch":
        return LambdaBatch(
            np.concatenate([p.scalars for p in parts], axis=0),
            np.concatenate([p.vectors for p in parts], axis=0),
        )


@dataclass(frozen=True)
class LambdaSpace:
    """Sampler plus optional quadrature for one hidden-variable measure.

    The sampler signature is (generator, n) -> LambdaBatch and deliberately
    has no access to measurement settings (uncorrelated choice is enforced
    structurally). ``quadrature`` is (nodes_batch, weights) with weights
    summing to 1; None for measures without a practical product rule.
    """

    shape: LambdaShape
    sampler: Callable[[np.random.Generator, int], LambdaBatch]
    quadrature: tuple[LambdaBatch, np.ndarray] | None = None
    meta: dict = field(default_factory=dict)

    def sample(self, source, n: int) -> LambdaBatch:
        gen = as_generator(source)
        batch = self.sampler(gen, int(n))
        if len(batch) != int(n):
            raise RuntimeError("sampler returned wrong batch length")
        return batch


# ---------------------------------------------------------------------------
# Probability rules


def qm_singlet_prob(sigma: int, tau: int, a, b) -> float:
    """Singlet joint probability (1 - sigma*tau*a.b)/4."""
    if sigma not in OUTCOMES or tau not in OUTCOMES:
        raise ValueError(f"outcomes must be +-1, got sigma={sigma}, tau={tau}")
    return (1.0 - sigma * tau * dot(a, b)) / 4.0


def qm_table(a, b) -> np.ndarray:
    """Full 2x2 singlet table at axes (a, b)."""
    x = dot(a, b)
    return (1.0 - _SIGMA_TAU * x) / 4.0


def setting_dot(a, b) -> float:
    """Clamped a.b with an exact snap to +-1 for float-level jitter.

    Self-dots of renormalized unit vectors land within a few ulp of 1;
    envelopes with singular derivatives at the endpoints (the sqrt
    counterexample) would amplify that jitter to ~1e-8, so values within
    1e-14 of an endpoint are treated as the endpoint itself. Every probe
    offset used by the checks is 1e-9 or larger, far outside the snap.
    """
    x = float(np.clip(np.dot(a, b), -1.0, 1.0))
    if abs(x) > 1.0 - 1e-14:
        return 1.0 if x > 0 else -1.0
    return x


def canonical_prob(sigma: int, tau: int, x: float, c: float) -> float:
    """Lambda-conditioned entry (1 - sigma*tau*(x - c))/4 at a.b = x."""
    if sigma not in OUTCOMES or tau not in OUTCOMES:
        raise ValueError(f"outcomes must be +-1, got sigma={sigma}, tau={tau}")
    return (1.0 - sigma * tau * (x - c)) / 4.0


def _tables_from_kernel(k: np.ndarray) -> np.ndarray:
    """Tables (1 - sigma*tau*k)/4 for a batch of kernels k (n,)."""
    k = np.asarray(k, dtype=float)
    out = np.empty(k.shape + (2, 2))
    diag = (1.0 - k) / 4.0
    off = (1.0 + k) / 4.0
    out[..., 0, 0] = diag
    out[..., 1, 1] = diag
    out[..., 0, 1] = off
    out[..., 1, 0] = off
    return out


def canonical_table(x: float, c) -> np.ndarray:
    """Canonical table(s) at a.b = x for correction value(s) c."""
    return _tables_from_kernel(np.asarray(x, dtype=float) - np.asarray(c, dtype=float))


@dataclass(frozen=True)
class CFunction:
    """Correction function C(lambda, a, b) with declared endpoint exponents.

    ``fn`` maps (LambdaBatch, a, b) to an array of per-lambda values.
    ``s_plus``/``s_minus`` are the declared orders of the zeros at
    a.b = -1 and a.b = +1 (None when not known in closed form).
    """

    fn: Callable[[LambdaBatch, np.ndarray, np.ndarray], np.ndarray]
    s_plus: float | None = None
    s_minus: float | None = None

    def __call__(self, lam, a, b) -> np.ndarray:
        batch = lam.batch() if isinstance(lam, LambdaPoint) else lam
        vals = np.asarray(self.fn(batch, np.asarray(a, float), np.asarray(b, float)), dtype=float)
        return vals


@dataclass
class HiddenVariableModel:
    """A named hidden-variable model: lambda measure plus conditional rule.

    Exactly one of ``c_function`` (canonical form) or ``table_rule``
    (direct form) is set. ``table_rule`` maps (batch, a, b) to
    (tables (n,2,2), ok (n,) bool); rows with ok False hit the rule's
    measure-zero undefined set.
    """

    name: str
    lambda_space: LambdaSpace
    c_function: CFunction | None = None
    table_rule: Callable[..., tuple[np.ndarray, np.ndarray]] | None = None
    spec: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if (self.c_function is None) == (self.table_rule is None):
            raise ValueError("exactly one of c_function or table_rule is required")

    @property
    def is_canonical(self) -> bool:
        return self.c_function is not None

    @property
    def declared_exponents(self) -> tuple[float | None, float | None]:
        if self.c_function is None:
            return (None, None)
        return (self.c_function.s_plus, self.c_function.s_minus)

    def _as_batch(self, lam) -> tuple[LambdaBatch, bool]:
        if isinstance(lam, LambdaPoint):
            return lam.batch(), True
        return lam, False

    def c_values(self, lam, a, b) -> np.ndarray | float:
        """Per-lambda correction C(lambda, a, b); canonical models only."""
        if self.c_function is None:
            raise ValueError(f"model '{self.name}' has no canonical C function")
        batch, single = self._as_batch(lam)
        vals = self.c_function(batch, a, b)
        return float(vals[0]) if single else vals

    def tables_masked(self, lam, a, b) -> tuple[np.ndarray, np.ndarray]:
        """Per-lambda tables plus validity mask (no admissibility checks)."""
        batch, _ = self._as_batch(lam)
        a = require_unit(a, name="a")
        b = require_unit(b, name="b")
        if self.c_function is not None:
            x = setting_dot(a, b)
            c = self.c_function(batch, a, b)
            return _tables_from_kernel(x - c), np.ones(len(batch), dtype=bool)
        tables, ok = self.table_rule(batch, a, b)
        return tables, ok

    def tables(self, lam, a, b, *, check: bool = False) -> np.ndarray:
        """Per-lambda tables; raises on undefined rows.

        With ``check=True`` also raises NegativeProbabilityError when an
        entry is below -1e-12, carrying the offending (lambda, a, b,
        sigma, tau) witness. This is the detection path for inadmissible
        constructions such as the sqrt-envelope counterexample.
        """
        batch, single = self._as_batch(lam)
        tables, ok = self.tables_masked(batch, a, b)
        if not np.all(ok):
            bad = int(np.count_nonzero(~ok))
            raise MeasureZeroError(
                f"model '{self.name}': rule undefined on {bad} of {len(batch)} lambda rows"
            )
        if check:
            flat = tables.reshape(len(batch), 4)
            worst = int(np.argmin(flat))
            if flat.flat[worst] < -1e-12:
                i, entry = divmod(worst, 4)
                witness = {
                    "lambda": batch.point(i).to_jsonable(),
                    "a": [float(v) for v in a],
                    "b": [float(v) for v in b],
                    "sigma": OUTCOMES[entry // 2],
                    "tau": OUTCOMES[entry % 2],
                    "value": float(flat.flat[worst]),
                }
                raise NegativeProbabilityError(
                    f"model '{self.name}': table entry {flat.flat[worst]:.3e} < -1e-12 "
                    f"at sigma={witness['sigma']}, tau={witness['tau']}",
                    witness,
                )
        return tables[0] if single else tables

    def correlations_masked(self, lam, a, b) -> tuple[np.ndarray, np.ndarray]:
        """Per-lambda correlator sum_{sigma,tau} sigma*tau*P, with mask."""
        batch, _ = self._as_batch(lam)
        tables, ok = self.tables_masked(batch, a, b)
        return np.einsum("nij,ij->n", tables, _SIGMA_TAU), ok

    def correlations(self, lam, a, b) -> np.ndarray | float:
        batch, single = self._as_batch(lam)
        vals, ok = self.correlations_masked(batch, a, b)
        if not np.all(ok):
            bad = int(np.count_nonzero(~ok))
            raise MeasureZeroError(
                f"model '{self.name}': rule undefined on {bad} of {len(batch)} lambda rows"
            )
        return float(vals[0]) if single else vals

    def implied_c(self, lam, a, b) -> tuple[np.ndarray, np.ndarray]:
        """C inferred from the correlator, a.b + sum sigma*tau*P, with mask.

        For canonical models this equals C(lambda, a, b) identically; for
        direct rules with trivial per-lambda marginals it is the correction
        appearing in the table decomposition.
        """
        batch, _ = self._as_batch(lam)
        vals, ok = self.correlations_masked(batch, a, b)
        return vals + dot(a, b), ok


def hv_correlator(model: HiddenVariableModel, lam, a, b):
    """Lambda-conditioned correlator E(lambda, a, b) = sum sigma*tau*P."""
    return model.correlations(lam, a, b)


# ---------------------------------------------------------------------------
# Model families


def family1_c(g, x):
    """C = (1 - (a.b)^2) * g(lambda); exponents s+ = s- = 1, G = g."""
    g = np.asarray(g, dtype=float)
    return (1.0 - x * x) * g


def family2_c(g, u, a, b):
    """C = -(a.b) * ((a.u)^2 - (b.u)^2)^2 * g(lambda) with unit vector u.

    The squared bracket vanishes linearly in (1 -+ a.b) as b approaches
    +-a, so s+ = s- = 1 here as well; |G| <= |a.b|/2 <= 1/2 when
    |g| <= 1/2 since max_u ((a.u)^2 - (b.u)^2)^2 = 1 - (a.b)^2.
    """
    g = np.asarray(g, dtype=float)
    u = np.asarray(u, dtype=float)
    x = setting_dot(a, b)
    au = u @ a
    bu = u @ b
    q = au * au - bu * bu
    return -x * q * q * g


def wrongtrial_c(g, x):
    """Counterexample envelope C = sqrt(1 - (a.b)^2) * g(lambda).

    The square-root zero (order 1/2 at both endpoints) is too weak: near
    |a.b| = 1 the correction overwhelms 1 - |a.b| and drives table entries
    negative, which is exactly what the positivity scan must detect.
    """
    g = np.asarray(g, dtype=float)
    return np.sqrt(np.maximum(0.0, 1.0 - x * x)) * g


def _cerf_kernel(U: np.ndarray, V: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Sign-model correlator kernel K(u, v, a, b) in {-1, +1}, with mask."""
    su_arg = U @ a
    sv_arg = V @ a
    nplus = U + V
    nminus = U - V
    nplus_norm = np.linalg.norm(nplus, axis=-1)
    nminus_norm = np.linalg.norm(nminus, axis=-1)
    ok = (nplus_norm > SIGN_EPS) & (nminus_norm > SIGN_EPS)
    # normalize defensively; rows failing ok are overwritten below anyway
    np_b = np.where(ok, (nplus @ b) / np.where(ok, nplus_norm, 1.0), 0.0)
    nm_b = np.where(ok, (nminus @ b) / np.where(ok, nminus_norm, 1.0), 0.0)
    ok &= (np.abs(su_arg) > SIGN_EPS) & (np.abs(sv_arg) > SIGN_EPS)
    ok &= (np.abs(np_b) > SIGN_EPS) & (np.abs(nm_b) > SIGN_EPS)
    su = np.sign(su_arg)
    sp = np.sign(np_b)
    x = su * np.sign(sv_arg)
    y = sp * np.sign(nm_b)
    # (1 + x + y - x*y)/2 is -1 when x = y = -1 and +1 otherwise
    h = (1.0 + x + y - x * y) / 2.0
    k = su * sp * h
    return k, ok


def _cerf_table_rule(batch: LambdaBatch, a: np.ndarray, b: np.ndarray):
    U = batch.vectors[:, 0, :]
    V = batch.vectors[:, 1, :]
    k, ok = _cerf_kernel(U, V, a, b)
    return _tables_from_kernel(k), ok


def cerf_prob(u, v, a, b) -> np.ndarray:
    """Single-lambda table for the sign model; entries are 0 or 1/2.

    Raises MeasureZeroError when any sign argument vanishes (u.a, v.a,
    or (u +- v).b within 1e-12 of zero), the rule's undefined set.
    """
    U = require_unit(u, name="u")[None]
    V = require_unit(v, name="v")[None]
    a = require_unit(a, name="a")
    b = require_unit(b, name="b")
    k, ok = _cerf_kernel(U, V, a, b)
    if not ok[0]:
        raise MeasureZeroError("sign rule undefined: a sign argument is zero")
    return _tables_from_kernel(k)[0]


# ---------------------------------------------------------------------------
# Lambda measures


def _scalar_two_point_space(gamma: float, weights=(0.5, 0.5)) -> LambdaSpace:
    w = np.asarray(weights, dtype=float)
    if w.shape != (2,) or np.any(w <= 0.0) or abs(float(w.sum()) - 1.0) > 1e-9:
        raise ModelSpecError("two_point weights must be two positive numbers summing to 1")
    gamma = float(gamma)

    def sampler(gen: np.random.Generator, n: int) -> LambdaBatch:
        pick = gen.random(n) < w[0]
        return LambdaBatch(np.where(pick, gamma, -gamma)[:, None], np.zeros((n, 0, 3)))

    nodes = LambdaBatch(np.array([[gamma], [-gamma]]), np.zeros((2, 0, 3)))
    return LambdaSpace(
        LambdaShape(1, 0),
        sampler,
        (nodes, w.copy()),
        meta={"measure": "two_point", "gamma": gamma, "weights": (float(w[0]), float(w[1]))},
    )


def _scalar_uniform_space(gamma: float, n_nodes: int = 16) -> LambdaSpace:
    gamma = float(gamma)
    if n_nodes < 2:
        raise ModelSpecError("uniform measure needs at least 2 quadrature nodes")

    def sampler(gen: np.random.Generator, n: int) -> LambdaBatch:
        return LambdaBatch(gen.uniform(-gamma, gamma, size=n)[:, None], np.zeros((n, 0, 3)))

    x, w = np.polynomial.legendre.leggauss(int(n_nodes))
    nodes = LambdaBatch((gamma * x)[:, None], np.zeros((len(x), 0, 3)))
    return LambdaSpace(
        LambdaShape(1, 0),
        sampler,
        (nodes, w / 2.0),
        meta={"measure": "uniform", "gamma": gamma, "n_nodes": int(n_nodes)},
    )


def _scalar_space(measure: str, gamma: float, *, weights=None, n_nodes: int = 16) -> LambdaSpace:
    if measure == "two_point":
        return _scalar_two_point_space(gamma, weights if weights is not None else (0.5, 0.5))
    if measure == "uniform":
        return _scalar_uniform_space(gamma, n_nodes)
    raise ModelSpecError(f"unknown scalar_measure '{measure}' (known: {', '.join(_MEASURES)})")


def _with_unit_vector(base: LambdaSpace, grid: SphereGrid) -> LambdaSpace:
    """Product measure: base scalars times one uniform unit vector."""

    def sampler(gen: np.random.Generator, n: int) -> LambdaBatch:
        b = base.sampler(gen, n)
        u = sample_uniform_sphere(gen, n)
        return LambdaBatch(b.scalars, np.concatenate([b.vectors, u[:, None, :]], axis=1))

    quad = None
    if base.quadrature is not None:
        bnodes, bw = base.quadrature
        nb, ng = len(bnodes), len(grid)
        scalars = np.repeat(bnodes.scalars, ng, axis=0)
        vectors = np.concatenate(
            [
                np.repeat(bnodes.vectors, ng, axis=0),
                np.tile(grid.nodes, (nb, 1))[:, None, :],
            ],
            axis=1,
        )
        weights = np.outer(bw, grid.weights).ravel()
        quad = (LambdaBatch(scalars, vectors), weights)

    meta = dict(base.meta)
    meta.update({"n_polar": grid.n_polar, "n_azimuth": grid.n_azimuth})
    return LambdaSpace(LambdaShape(base.shape.scalars, base.shape.vectors + 1), sampler, quad, meta)


def _cerf_space() -> LambdaSpace:
    def sampler(gen: np.random.Generator, n: int) -> LambdaBatch:
        u = sample_uniform_sphere(gen, n)
        v = sample_uniform_sphere(gen, n)
        return LambdaBatch(np.zeros((n, 0)), np.stack([u, v], axis=1))

    return LambdaSpace(LambdaShape(0, 2), sampler, None, meta={"measure": "two_sphere"})


# ---------------------------------------------------------------------------
# Builders


def family1_model(gamma: float = 0.4, measure: str = "two_point", *, weights=None,
                  n_nodes: int = 16, seed: int = 0) -> HiddenVariableModel:
    """Polynomial-envelope model, C = (1 - (a.b)^2) * lambda, lambda in [-gamma, gamma]."""
    gamma = float(gamma)
    if not 0.0 < gamma <= 0.5:
        raise ModelSpecError(f"family1 needs 0 < gamma <= 0.5 for positivity, got {gamma}")
    space = _scalar_space(measure, gamma, weights=weights, n_nodes=n_nodes)

    def fn(batch: LambdaBatch, a, b):
        return family1_c(batch.scalars[:, 0], setting_dot(a, b))

    spec = _normalize_spec("family1", space, seed)
    return HiddenVariableModel("family1", space, c_function=CFunction(fn, 1.0, 1.0), spec=spec)


def family2_model(gamma: float = 0.5, measure: str = "two_point", *, weights=None,
                  n_nodes: int = 8, n_polar: int = 64, n_azimuth: int = 128,
                  seed: int = 0) -> HiddenVariableModel:
    """Quartic-bracket model with a unit-vector hidden variable, |g| <= 1/2."""
    gamma = float(gamma)
    if not 0.0 < gamma <= 0.5:
        raise ModelSpecError(f"family2 needs 0 < gamma <= 0.5 for positivity, got {gamma}")
    base = _scalar_space(measure, gamma, weights=weights, n_nodes=n_nodes)
    space = _with_unit_vector(base, sphere_quadrature(n_polar, n_azimuth))

    def fn(batch: LambdaBatch, a, b):
        return family2_c(batch.scalars[:, 0], batch.vectors[:, 0, :], a, b)

    spec = _normalize_spec("family2", space, seed)
    return HiddenVariableModel("family2", space, c_function=CFunction(fn, 1.0, 1.0), spec=spec)


def wrongtrial_model(gamma: float = 0.4, measure: str = "two_point", *, weights=None,
                     n_nodes: int = 16, seed: int = 0) -> HiddenVariableModel:
    """Inadmissible sqrt-envelope construction, kept as a detection target."""
    gamma = float(gamma)
    if not 0.0 < gamma <= 1.0:
        raise ModelSpecError(f"wrongtrial needs 0 < gamma <= 1, got {gamma}")
    space = _scalar_space(measure, gamma, weights=weights, n_nodes=n_nodes)

    def fn(batch: LambdaBatch, a, b):
        return wrongtrial_c(batch.scalars[:, 0], setting_dot(a, b))

    spec = _normalize_spec("wrongtrial", space, seed)
    return HiddenVariableModel("wrongtrial", space, c_function=CFunction(fn, 0.5, 0.5), spec=spec)


def cerf_model(seed: int = 0) -> HiddenVariableModel:
    """Direct sign model on two independent uniform unit vectors (u, v)."""
    space = _cerf_space()
    spec = {"family": "cerf", "seed": int(seed), "parameters": {}}
    return HiddenVariableModel("cerf", space, table_rule=_cerf_table_rule, spec=spec)


def _normalize_spec(family: str, space: LambdaSpace, seed: int, extra: dict | None = None) -> dict:
    meta = space.meta
    params: dict[str, Any] = {}
    for key in ("weights", "n_nodes", "n_polar", "n_azimuth"):
        if key in meta:
            params[key] = list(meta[key]) if key == "weights" else meta[key]
    if extra:
        params.update(extra)
    spec: dict[str, Any] = {
        "family": family,
        "scalar_measure": meta.get("measure"),
        "gamma": meta.get("gamma"),
        "seed": int(seed),
        "parameters": params,
    }
    return spec


# ---------------------------------------------------------------------------
# Constructive recipe


def frobenius_bound(s: float) -> float:
    """Positivity budget for C = (1 - (a.b)^2)^s * g: sup admissible |g|.

    Minimizes (1 - t)^(1-s) (1 + t)^(-s) over t = |a.b|; the minimizer is
    t* = 1/(2s - 1). At s = 1 the infimum 1/2 sits at t -> 1; for s = 2
    the value is 27/32.
    """
    s = float(s)
    if s < 1.0:
        raise ValueError(f"envelope exponent must be >= 1, got {s}")
    if s == 1.0:
        return 0.5
    t = 1.0 / (2.0 * s - 1.0)
    return (1.0 - t) ** (1.0 - s) * (1.0 + t) ** (-s)


@dataclass(frozen=True)
class RecipeFunction:
    """A bounded base function f(lambda, a, b) for the constructive recipe."""

    name: str
    fn: Callable[[LambdaBatch, np.ndarray, np.ndarray], np.ndarray]
    needs_vector: bool = False
    setting_dependent: bool = False


RECIPE_REGISTRY: dict[str, RecipeFunction] = {
    "poly1": RecipeFunction("poly1", lambda lam, a, b: lam.scalars[:, 0].copy()),
    "poly3": RecipeFunction("poly3", lambda lam, a, b: lam.scalars[:, 0] ** 3),
    "square": RecipeFunction("square", lambda lam, a, b: lam.scalars[:, 0] ** 2),
    "cross_uab": RecipeFunction(
        "cross_uab",
        lambda lam, a, b: lam.scalars[:, 0] * (lam.vectors[:, 0, :] @ a) * (lam.vectors[:, 0, :] @ b),
        needs_vector=True,
        setting_dependent=True,
    ),
}


def _recipe_c_function(space: LambdaSpace, f: RecipeFunction, s: float, scale: float) -> CFunction:
    if space.quadrature is None:
        raise ModelSpecError("recipe models need a quadrature-backed lambda measure")
    qnodes, qweights = space.quadrature
    cache: dict[bytes, float] = {}

    def mean_f(a: np.ndarray, b: np.ndarray) -> float:
        key = a.tobytes() + b.tobytes() if f.setting_dependent else b""
        if key not in cache:
            if len(cache) > 64:
                cache.clear()
            cache[key] = float(np.sum(qweights * f.fn(qnodes, a, b)))
        return cache[key]

    def fn(batch: LambdaBatch, a, b):
        x = setting_dot(a, b)
        g = scale * (f.fn(batch, a, b) - mean_f(a, b))
        return (1.0 - x * x) ** s * g

    return CFunction(fn, s_plus=s, s_minus=s)


def build_recipe_model(f_name: str, s: float, *, gamma: float = 1.0,
                       measure: str = "uniform", weights=None, n_nodes: int = 16,
                       n_polar: int = 32, n_azimuth: int = 64, seed: int = 0,
                       n_probe_settings: int = 64, n_probe_lambda: int = 4096,
                       safety: float = 0.99) -> HiddenVariableModel:
    """Turn a bounded base function into an admissible canonical model.

    Recipe: center f per setting, g = f - mean_lambda f, then attach the
    envelope (1 - (a.b)^2)^s. If sup|g| exceeds the positivity budget
    frobenius_bound(s), rescale g by safety * bound / sup. The final
    multiplier is recorded in the model spec so reloading is deterministic.
    """
    if f_name not in RECIPE_REGISTRY:
        known = ", ".join(sorted(RECIPE_REGISTRY))
        raise ModelSpecError(f"unknown recipe function '{f_name}' (known: {known})")
    s = float(s)
    if s < 1.0:
        raise ModelSpecError(f"recipe exponent s must be >= 1 (endpoint zeros), got {s}")
    if not 0.0 < float(gamma) <= 1.0:
        raise ModelSpecError(f"recipe needs 0 < gamma <= 1 so |f| <= 1, got {gamma}")
    f = RECIPE_REGISTRY[f_name]
    space = _scalar_space(measure, gamma, weights=weights, n_nodes=n_nodes)
    if f.needs_vector:
        space = _with_unit_vector(space, sphere_quadrature(n_polar, n_azimuth))

    # sup|g| probe: quadrature nodes, fresh samples, and corner rows where
    # the scalar sits at an endpoint while the hidden vector (if any) is
    # aligned with a probed setting axis. Quadrature nodes alone miss both
    # extremes: Gauss-Legendre nodes stop short of +-gamma and no node need
    # line up with a setting, which underestimates sup for products like
    # (u.a)(u.b) and would let the rescaled g leak past the bound.
    stream = RandomStream(seed).split(17)
    gen = stream.generator()
    qnodes, qweights = space.quadrature
    corner_dirs = sample_uniform_sphere(gen, 8)
    probe_parts = [qnodes, space.sample(gen, n_probe_lambda)]
    corner_scalars = np.array([float(gamma), -float(gamma), 0.0])
    if f.needs_vector:
        corner_vecs = np.concatenate([sample_uniform_sphere(gen, 3), corner_dirs])
        scal, vec = [np.repeat(corner_scalars, len(corner_vecs)),
                     np.tile(corner_vecs, (3, 1))]
        probe_parts.append(LambdaBatch(scal[:, None], vec[:, None, :]))
    else:
        probe_parts.append(LambdaBatch(corner_scalars[:, None], np.zeros((3, 0, 3))))
    probe = LambdaBatch.concat(probe_parts)

    if f.setting_dependent:
        axes = sample_uniform_sphere(gen, n_probe_settings)
        axes_b = sample_uniform_sphere(gen, n_probe_settings)
        setting_pairs = list(zip(axes, axes_b))
        for d in corner_dirs:
            setting_pairs.append((d, d))
            setting_pairs.append((d, -d))
    else:
        setting_pairs = [(np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))]

    sup = 0.0
    for a, b in setting_pairs:
        fvals = f.fn(probe, a, b)
        fmean = float(np.sum(qweights * f.fn(qnodes, a, b)))
        g = fvals - fmean
        sup = max(sup, float(np.max(np.abs(g))))

    bound = frobenius_bound(s)
    scale = 1.0 if sup <= bound else safety * bound / sup
    cfun = _recipe_c_function(space, f, s, scale)
    spec = _normalize_spec("recipe", space, seed, extra={"f": f_name, "scale": scale})
    spec["s"] = s
    return HiddenVariableModel("recipe", space, c_function=cfun, spec=spec)


def _recipe_model_from_spec(spec: dict, space: LambdaSpace) -> HiddenVariableModel:
    f_name = spec["parameters"].get("f")
    if f_name not in RECIPE_REGISTRY:
        known = ", ".join(sorted(RECIPE_REGISTRY))
        raise ModelSpecError(f"unknown recipe function '{f_name}' (known: {known})")
    f = RECIPE_REGISTRY[f_name]
    s = float(spec.get("s", 1.0))
    if s < 1.0:
        raise ModelSpecError(f"recipe exponent s must be >= 1, got {s}")
    scale = float(spec["parameters"].get("scale", 1.0))
    if scale <= 0.0:
        raise ModelSpecError(f"recipe scale must be positive, got {scale}")
    cfun = _recipe_c_function(space, f, s, scale)
    return HiddenVariableModel("recipe", space, c_function=cfun, spec=spec)


# ---------------------------------------------------------------------------
# Spec I/O


_TOP_KEYS = {"family", "parameters", "scalar_measure", "gamma", "s", "seed"}
_PARAM_KEYS = {"weights", "n_nodes", "n_polar", "n_azimuth", "f", "scale"}


def model_from_spec(spec: dict, *, grid_n: int | None = None) -> HiddenVariableModel:
    """Build a model from a JSON-style spec dict; raises ModelSpecError.

    Keys: family (required), scalar_measure, gamma, s (recipe only), seed,
    parameters {weights, n_nodes, n_polar, n_azimuth, f, scale}. ``grid_n``
    overrides the sphere quadrature as (n_polar, n_azimuth) = (N, 2N).
    """
    if not isinstance(spec, dict):
        raise ModelSpecError(f"model spec must be an object, got {type(spec).__name__}")
    unknown = set(spec) - _TOP_KEYS
    if unknown:
        raise ModelSpecError(f"unknown model spec keys: {sorted(unknown)}")
    family = spec.get("family")
    if family not in _FAMILIES:
        raise ModelSpecError(f"unknown family {family!r} (known: {', '.join(_FAMILIES)})")
    params = spec.get("parameters", {})
    if not isinstance(params, dict):
        raise ModelSpecError("parameters must be an object")
    unknown = set(params) - _PARAM_KEYS
    if unknown:
        raise ModelSpecError(f"unknown parameter keys: {sorted(unknown)}")
    seed = spec.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ModelSpecError(f"seed must be an integer, got {seed!r}")

    if family == "cerf":
        return cerf_model(seed=seed)

    measure = spec.get("scalar_measure", "two_point")
    if measure not in _MEASURES:
        raise ModelSpecError(f"unknown scalar_measure {measure!r} (known: {', '.join(_MEASURES)})")
    gamma = spec.get("gamma", {"family1": 0.4, "family2": 0.5, "wrongtrial": 0.4, "recipe": 1.0}[family])
    try:
        gamma = float(gamma)
    except (TypeError, ValueError):
        raise ModelSpecError(f"gamma must be a number, got {gamma!r}") from None
    weights = params.get("weights")
    n_nodes = int(params.get("n_nodes", 16))
    n_polar = int(params.get("n_polar", 64 if family == "family2" else 32))
    n_azimuth = int(params.get("n_azimuth", 2 * n_polar))
    if grid_n is not None:
        n_polar, n_azimuth = int(grid_n), 2 * int(grid_n)

    if family == "family1":
        return family1_model(gamma, measure, weights=weights, n_nodes=n_nodes, seed=seed)
    if family == "wrongtrial":
        return wrongtrial_model(gamma, measure, weights=weights, n_nodes=n_nodes, seed=seed)
    if family == "family2":
        return family2_model(gamma, measure, weights=weights, n_nodes=n_nodes,
                             n_polar=n_polar, n_azimuth=n_azimuth, seed=seed)

    # recipe: rebuild the lambda space, then reuse the stored scale
    base = _scalar_space(measure, gamma, weights=weights, n_nodes=n_nodes)
    f_name = params.get("f")
    if f_name in RECIPE_REGISTRY and RECIPE_REGISTRY[f_name].needs_vector:
        base = _with_unit_vector(base, sphere_quadrature(n_polar, n_azimuth))
    full = dict(spec)
    full.setdefault("parameters", {})
    return _recipe_model_from_spec({**full, "gamma": gamma, "scalar_measure": measure}, base)


def load_model(path, *, grid_n: int | None = None) -> HiddenVariableModel:
    """Read a JSON model spec from disk and build the model."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            spec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelSpecError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_spec(spec, grid_n=grid_n)


def builtin_model(name: str, *, seed: int = 0) -> HiddenVariableModel:
    """Default-parameter instance of a named family."""
    return model_from_spec({"family": name, "seed": seed})


# ---------------------------------------------------------------------------
# Sampling support


def sample_valid_tables(model: HiddenVariableModel, source, n: int, a, b,
                        max_rounds: int = 100) -> tuple[LambdaBatch, np.ndarray]:
    """Draw n lambda values with defined tables at (a, b), redrawing bad rows.

    Returns (batch, tables). For continuous measures the undefined set has
    measure zero, so the redraw loop is a no-op almost surely; it exists so
    hand-built degenerate settings (exactly orthogonal sign arguments)
    cannot poison an estimate.
    """
    gen = as_generator(source)
    batches: list[LambdaBatch] = []
    tables: list[np.ndarray] = []
    need = int(n)
    for _ in range(max_rounds):
        if need <= 0:
            break
        cand = model.lambda_space.sample(gen, need)
        t, ok = model.tables_masked(cand, a, b)
        if np.all(ok):
            batches.append(cand)
            tables.append(t)
            need = 0
            break
        batches.append(cand.take(ok))
        tables.append(t[ok])
        need -= int(np.count_nonzero(ok))
    if need > 0:
        raise MeasureZeroError(
            f"model '{model.name}': sampling stalled, rule undefined on almost all draws"
        )
    if len(batches) == 1:
        return batches[0], tables[0]
    return LambdaBatch.concat(batches), np.concatenate(tables, axis=0)
