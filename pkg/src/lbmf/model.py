"""Domain types and configuration handling for load-balanced server clusters.

A cluster is a large pool of servers with finite queues. Each server belongs
to a type, defined by its share of the fleet, a queue-length dependent
service rate curve, and an optional multiprogramming level (doubling as the
JBT availability threshold). Jobs arrive at rate ``lam`` per server and are
routed by a load-balancing policy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

GAMMA_SUM_TOL = 1e-12
GAMMA_RENORM_LIMIT = 1e-9

POLICY_KINDS = ("random", "jiq", "jsq", "jsqd", "jbt")


class ConfigError(ValueError):
    """Malformed or out-of-schema configuration document."""


class ValidationError(ValueError):
    """Model invariants violated; carries the list of violations."""

    def __init__(self, violations):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


class ConvergenceError(RuntimeError):
    """A numerical solve failed to reach its tolerance."""

    def __init__(self, message, residual=None, state=None):
        super().__init__(message)
        self.residual = residual
        self.state = state


@dataclass(frozen=True)
class ServiceRateCurve:
    """Total service rate by queue length, ``rates[0] == 0`` through ``rates[B]``."""

    rates: tuple

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))

    @classmethod
    def from_mu(cls, mu) -> "ServiceRateCurve":
        """Build from the rates at lengths 1..B; the zero rate at length 0 is implicit."""
        return cls((0.0, *mu))

    @property
    def buffer(self) -> int:
        return len(self.rates) - 1

    def mu(self, i: int) -> float:
        return self.rates[i]


@dataclass(frozen=True)
class ServerType:
    gamma: float
    curve: ServiceRateCurve
    mpl: int | None = None

    @property
    def buffer(self) -> int:
        return self.curve.buffer


@dataclass(frozen=True)
class ClusterSpec:
    """Arrival rate per server and the server type mix."""

    lam: float
    types: tuple

    def __post_init__(self):
        object.__setattr__(self, "types", tuple(self.types))

    @property
    def k(self) -> int:
        return len(self.types)

    @property
    def buffers(self) -> tuple:
        return tuple(t.buffer for t in self.types)

    def mu(self, k: int, i: int) -> float:
        return self.types[k].curve.rates[i]

    def gammas(self) -> np.ndarray:
        return np.array([t.gamma for t in self.types])


@dataclass(frozen=True)
class Policy:
    """Load-balancing rule; ``control`` < 1 routes the complement randomly."""

    kind: str
    d: int | None = None
    control: float = 1.0

    def label(self) -> str:
        base = f"jsqd({self.d})" if self.kind == "jsqd" else self.kind
        if self.control < 1.0:
            return f"{base}@p={self.control:g}"
        return base


@dataclass(frozen=True)
class RunParams:
    horizon: float
    dt: float
    sample_interval: float
    n_servers: int | None = None
    seed: int | None = None


class Occupancy:
    """Normalized queue-length distribution, one vector per server type.

    ``parts[k][i]`` is the fraction of all servers that are of type k and
    hold i jobs; each type's vector sums to that type's fleet share.
    """

    __slots__ = ("parts",)

    def __init__(self, parts):
        self.parts = tuple(np.asarray(p, dtype=float) for p in parts)

    @classmethod
    def empty(cls, spec: ClusterSpec) -> "Occupancy":
        parts = []
        for t in spec.types:
            v = np.zeros(t.buffer + 1)
            v[0] = t.gamma
            parts.append(v)
        return cls(parts)

    def copy(self) -> "Occupancy":
        return Occupancy([p.copy() for p in self.parts])

    def flat(self) -> np.ndarray:
        return np.concatenate(self.parts)

    @classmethod
    def from_flat(cls, spec: ClusterSpec, vec) -> "Occupancy":
        parts, j = [], 0
        for t in spec.types:
            w = t.buffer + 1
            parts.append(np.asarray(vec[j:j + w], dtype=float))
            j += w
        return cls(parts)

    def type_masses(self) -> np.ndarray:
        return np.array([p.sum() for p in self.parts])

    def check(self, spec: ClusterSpec, tol: float = 1e-9) -> list:
        """Return invariant violations (empty list when valid)."""
        out = []
        for k, (t, p) in enumerate(zip(spec.types, self.parts)):
            if len(p) != t.buffer + 1:
                out.append(f"type {k}: occupancy length {len(p)} != buffer+1 {t.buffer + 1}")
                continue
            if abs(p.sum() - t.gamma) > tol:
                out.append(f"type {k}: mass {p.sum()!r} != gamma {t.gamma!r}")
            if (p < -tol).any() or (p > 1 + tol).any():
                out.append(f"type {k}: entries outside [0, 1]")
        return out


@dataclass(frozen=True)
class Trajectory:
    """Occupancy snapshots on a uniform time grid (shared by simulator and ODE)."""

    times: np.ndarray
    parts: tuple  # per type: array of shape (len(times), B_k + 1)

    def occupancy_at(self, idx: int) -> Occupancy:
        return Occupancy([p[idx] for p in self.parts])

    def sup_distance(self, other: "Trajectory") -> float:
        """Largest entrywise gap between two trajectories on the same grid."""
        if len(self.times) != len(other.times):
            raise ValueError("trajectories sampled on different grids")
        return max(
            float(np.max(np.abs(a - b))) for a, b in zip(self.parts, other.parts)
        )


def validate(spec: ClusterSpec, policy: Policy) -> list:
    """Check every model invariant; return human-readable violations."""
    out = []
    if not spec.types:
        out.append("types: empty")
        return out
    if not (spec.lam > 0):
        out.append(f"lambda must be > 0, got {spec.lam}")
    gsum = 0.0
    for k, t in enumerate(spec.types):
        rates = t.curve.rates
        b = t.buffer
        if b < 1:
            out.append(f"type {k}: buffer must be >= 1")
            continue
        if rates[0] != 0.0:
            out.append(f"type {k}: rates[0] must be 0, got {rates[0]}")
        for i in range(b):
            if rates[i] > rates[i + 1]:
                out.append(f"type {k}: total rate decreases at i={i}")
        for i in range(1, b):
            if rates[i] / i < rates[i + 1] / (i + 1) - 1e-15:
                out.append(f"type {k}: per-job rate increases at i={i}")
        if (rates[1:] and min(rates[1:]) < 0) or rates[0] < 0:
            out.append(f"type {k}: negative service rate")
        if not (0 < t.gamma <= 1):
            out.append(f"type {k}: gamma must be in (0, 1], got {t.gamma}")
        if t.mpl is not None and not (1 <= t.mpl <= b):
            out.append(f"type {k}: mpl must be in [1, {b}], got {t.mpl}")
        gsum += t.gamma
    if abs(gsum - 1.0) > GAMMA_SUM_TOL:
        out.append(f"type fractions sum to {gsum!r}, expected 1")
    cap = sum(t.gamma * t.curve.rates[t.buffer] for t in spec.types)
    if not (spec.lam < cap):
        out.append(f"stability: lambda {spec.lam} not strictly below capacity {cap}")
    if policy.kind not in POLICY_KINDS:
        out.append(f"unknown policy kind {policy.kind!r}")
    if policy.kind == "jsqd":
        if policy.d is None or policy.d < 1:
            out.append(f"jsqd requires d >= 1, got {policy.d}")
    elif policy.d is not None:
        out.append(f"policy {policy.kind} takes no d")
    if policy.kind == "jbt":
        for k, t in enumerate(spec.types):
            if t.mpl is None:
                out.append(f"jbt requires mpl on every type; type {k} has none")
    if not (0 < policy.control <= 1):
        out.append(f"control must be in (0, 1], got {policy.control}")
    return out


def _require_keys(obj, allowed, required, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{where}: unknown key {key!r}")
    for key in required:
        if key not in obj:
            raise ConfigError(f"{where}: missing key {key!r}")


def parse_config(text):
    """Parse a JSON config into validated ``(ClusterSpec, Policy, RunParams)``.

    Service rates are listed from queue length 1 upward; the zero rate of an
    empty queue is implicit and must not appear in the file. Type fractions
    off by less than 1e-9 are renormalized, anything worse is rejected.
    """
    if isinstance(text, (str, bytes)):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON: {e}") from e
    else:
        doc = text
    _require_keys(doc, {"lambda", "types", "policy", "run"},
                  {"lambda", "types", "policy", "run"}, "config")
    lam = doc["lambda"]
    if not isinstance(lam, (int, float)) or isinstance(lam, bool):
        raise ConfigError("lambda: expected a number")
    if not isinstance(doc["types"], list) or not doc["types"]:
        raise ConfigError("types: expected a nonempty array")

    types = []
    for k, td in enumerate(doc["types"]):
        _require_keys(td, {"gamma", "mu", "mpl"}, {"gamma", "mu"}, f"types[{k}]")
        mu = td["mu"]
        if not isinstance(mu, list) or not mu:
            raise ConfigError(f"types[{k}].mu: expected a nonempty array")
        if mu and mu[0] == 0 and len(mu) > 1:
            # Catch the common mistake of writing the implicit zero rate.
            raise ConfigError(f"types[{k}].mu: starts at queue length 1; drop the leading 0")
        types.append(ServerType(gamma=float(td["gamma"]),
                                curve=ServiceRateCurve.from_mu(mu),
                                mpl=td.get("mpl")))

    gsum = sum(t.gamma for t in types)
    if abs(gsum - 1.0) > GAMMA_RENORM_LIMIT:
        raise ConfigError(f"type fractions sum to {gsum!r}; rejecting (off by more than 1e-9)")
    if abs(gsum - 1.0) > GAMMA_SUM_TOL:
        types = [ServerType(t.gamma / gsum, t.curve, t.mpl) for t in types]

    pd = doc["policy"]
    _require_keys(pd, {"kind", "d", "p"}, {"kind"}, "policy")
    policy = Policy(kind=pd["kind"], d=pd.get("d"), control=float(pd.get("p", 1.0)))

    rd = doc["run"]
    _require_keys(rd, {"n_servers", "horizon", "dt", "seed", "sample_interval"},
                  {"horizon", "dt", "sample_interval"}, "run")
    run = RunParams(horizon=float(rd["horizon"]), dt=float(rd["dt"]),
                    sample_interval=float(rd["sample_interval"]),
                    n_servers=rd.get("n_servers"), seed=rd.get("seed"))
    if run.horizon <= 0 or run.dt <= 0 or run.sample_interval <= 0:
        raise ConfigError("run: horizon, dt and sample_interval must be positive")

    spec = ClusterSpec(lam=float(lam), types=tuple(types))
    violations = validate(spec, policy)
    if violations:
        raise ValidationError(violations)
    return spec, policy, run


def serialize_config(spec: ClusterSpec, policy: Policy, run: RunParams) -> str:
    """Inverse of parse_config; round-trips valid configurations."""
    doc = {
        "lambda": spec.lam,
        "types": [],
        "policy": {"kind": policy.kind},
        "run": {"horizon": run.horizon, "dt": run.dt,
                "sample_interval": run.sample_interval},
    }
    for t in spec.types:
        td = {"gamma": t.gamma, "mu": list(t.curve.rates[1:])}
        if t.mpl is not None:
            td["mpl"] = t.mpl
        doc["types"].append(td)
    if policy.d is not None:
        doc["policy"]["d"] = policy.d
    if policy.control != 1.0:
        doc["policy"]["p"] = policy.control
    if run.n_servers is not None:
        doc["run"]["n_servers"] = run.n_servers
    if run.seed is not None:
        doc["run"]["seed"] = run.seed
    return json.dumps(doc, indent=2)
