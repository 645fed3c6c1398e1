"""
Scenario configs and the built-in corpus.

A scenario is an atom, a frame, grid parameters, tolerances and a list of
requested analyses.  On disk it is plain JSON with complex numbers written
as ``[re, im]`` pairs::

    {"name": "bounded_perturbation",
     "atom": {"family": "power", "alpha": 2.0},
     "frame": {"n": 2, "m": 1, "degree": 1,
               "coefficients": [[[1, 0], [0, 0]], [[0, 0], [0.5, 0]]]},
     "grid": {"J": 8, "r_max": 0.995},
     "tolerances": {"h": 0.001, ...},
     "analyses": ["identities", "diagnostics", "modulemap"]}

An optional ``transfer_atoms`` list reruns every analysis under further
atoms with the same frame.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .atoms import AtomSpec
from .bundles import FrameMap, QuotientModuleModel

__all__ = [
    "ANALYSES",
    "ConfigError",
    "DEFAULT_TOLERANCES",
    "Scenario",
    "format_config",
    "load_config",
    "scenario_corpus",
    "sweep_points",
]

ANALYSES = ("atom", "curvature", "identities", "diagnostics", "modulemap")

DEFAULT_TOLERANCES = {
    "h": 1e-3,
    "eps_tail": 1e-10,
    "identity_tolerance": 1e-6,
    "green_tolerance": 1e-3,
    "slope_threshold": 0.05,
}


class ConfigError(ValueError):
    """Malformed scenario configuration."""


def sweep_points(count: int = 30, r_max: float = 0.9) -> np.ndarray:
    """Deterministic spiral of ``count`` points filling ``|w| <= r_max``.

    Radii ``r_max sqrt(k / (count - 1))`` and golden-angle arguments, so the
    origin and the radius ``r_max`` are both included.
    """
    k = np.arange(count)
    r = r_max * np.sqrt(k / max(count - 1, 1))
    theta = k * np.pi * (3 - np.sqrt(5))
    return r * np.exp(1j * theta)


@dataclass(eq=False)
class Scenario:
    name: str
    atom: AtomSpec
    frame: FrameMap
    expected: str | None = None
    description: str = ""
    grid: dict = field(default_factory=lambda: {"J": 8, "r_max": 0.995})
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    analyses: tuple = ("identities", "diagnostics", "modulemap")
    transfer_atoms: tuple = ()
    output_dir: str | None = None

    def model(self, atom: AtomSpec | None = None) -> QuotientModuleModel:
        return QuotientModuleModel(atom or self.atom, self.frame)

    @property
    def atoms(self) -> tuple:
        return (self.atom,) + tuple(self.transfer_atoms)

    def to_config(self) -> dict:
        out = {
            "name": self.name,
            "atom": self.atom.to_dict(),
            "frame": self.frame.to_dict(),
            "grid": dict(self.grid),
            "tolerances": dict(self.tolerances),
            "analyses": list(self.analyses),
        }
        if self.expected:
            out["expected_verdict"] = self.expected
        if self.description:
            out["description"] = self.description
        if self.transfer_atoms:
            out["transfer_atoms"] = [a.to_dict() for a in self.transfer_atoms]
        if self.output_dir:
            out["output_dir"] = self.output_dir
        return out

    @classmethod
    def from_config(cls, data: dict) -> "Scenario":
        """Validate and build; raises :class:`ConfigError` on any defect."""
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - {"name", "atom", "frame", "grid", "tolerances", "analyses",
                               "transfer_atoms", "output_dir", "expected_verdict",
                               "description"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            name = str(data.get("name", "scenario"))
            atom = AtomSpec.from_dict(data["atom"])
            frame = FrameMap.from_dict({"name": name, **data["frame"]})
            grid = {"J": 8, "r_max": 0.995, **data.get("grid", {})}
            grid = {"J": int(grid["J"]), "r_max": float(grid["r_max"])}
            tol = {**DEFAULT_TOLERANCES, **data.get("tolerances", {})}
            tol = {k: float(v) for k, v in tol.items()}
            analyses = tuple(data.get("analyses", ("identities", "diagnostics", "modulemap")))
            transfer = tuple(AtomSpec.from_dict(a) for a in data.get("transfer_atoms", ()))
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed config: {exc!r}") from exc
        if not 0 < grid["r_max"] < 1:
            raise ConfigError("grid.r_max must lie in (0, 1)")
        if grid["J"] < 0:
            raise ConfigError("grid.J must be nonnegative")
        bad = [k for k, v in tol.items() if not (np.isfinite(v) and v > 0)]
        if bad:
            raise ConfigError(f"tolerances must be positive: {bad}")
        if set(tol) - set(DEFAULT_TOLERANCES):
            raise ConfigError(f"unknown tolerances: {sorted(set(tol) - set(DEFAULT_TOLERANCES))}")
        unknown = [a for a in analyses if a not in ANALYSES]
        if unknown:
            raise ConfigError(f"unknown analyses {unknown}; choose from {list(ANALYSES)}")
        return cls(name, atom, frame, data.get("expected_verdict"),
                   str(data.get("description", "")), grid, tol, analyses, transfer,
                   data.get("output_dir"))


def format_config(cfg: dict) -> str:
    """JSON text with one top-level key per line and compact values."""
    items = [f"  {json.dumps(k)}: {json.dumps(cfg[k], sort_keys=True)}" for k in sorted(cfg)]
    return "{\n" + ",\n".join(items) + "\n}\n"


def load_config(path) -> Scenario:
    """Read a scenario file; unreadable or invalid files raise :class:`ConfigError`."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return Scenario.from_config(data)


def scenario_corpus() -> list[Scenario]:
    """Built-in scenarios with their expected verdicts."""
    bergman = AtomSpec.power(2.0)
    hardy = AtomSpec.power(1.0)
    corpus = [
        Scenario("constant_frame", bergman, FrameMap.constant(2), "Similar",
                 "orthonormal constant frame in C^2; the module map is the identity"),
        Scenario("bounded_perturbation", bergman, FrameMap.bounded_perturbation(), "Similar",
                 "v_w = (1, conj(w)/2), two-sided frame bounds 1 <= |v_w| <= sqrt(1.25)"),
        Scenario("h2_in_bergman", bergman, FrameMap.hardy_truncated(400), "NotSimilar",
                 "v_w = (conj(w)^l), l < 400: the Hardy kernel as a frame over the "
                 "Bergman atom; |v_w| grows like (1 - |w|^2)^(-1/2)"),
        Scenario("zero_at_point", bergman, FrameMap.zero_at_point(0.5), "NotSimilar",
                 "v_w = conj(w) - 0.5 vanishes at w = 0.5"),
        Scenario("cross_atom_pair", hardy, FrameMap.bounded_perturbation(), "Similar",
                 "bounded_perturbation frame under alpha = 1 and alpha = 2",
                 transfer_atoms=(bergman,)),
    ]
    for sc in corpus:
        sc.frame.name = sc.name
    return corpus


def bergman2_config() -> dict:
    """Line bundle of the Bergman atom alone (used for curvature lookups)."""
    sc = Scenario("bergman2", AtomSpec.power(2.0), FrameMap.constant(1), None,
                  "Bergman atom, alpha = 2, with the trivial rank-one frame",
                  analyses=("atom", "curvature"))
    return sc.to_config()


def corpus_configs() -> dict[str, dict]:
    """Config dicts of the corpus plus ``bergman2``, keyed by file stem."""
    out = {sc.name: sc.to_config() for sc in scenario_corpus()}
    out["bergman2"] = bergman2_config()
    return copy.deepcopy(out)
