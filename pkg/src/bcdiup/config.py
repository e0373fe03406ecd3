"""Experiment configuration: one TOML document drives the whole pipeline.

The schema is strict: unknown keys anywhere in the document are rejected so
that a typo cannot silently change an experiment.  All randomness descends
from the single top-level seed; the crystal uses it directly and every other
consumer draws an independent stream derived from it.
"""

import hashlib
import json
import sys
from dataclasses import dataclass

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

from .crystal import CrystalSpec, PhaseModel
from .detector import DetectorGeometry, diagonal_geometry
from .errors import ConfigError
from .phasing import Recipe, Stage
from .recovery import RecoveryConfig

_STREAMS = {"phasing": 1, "sweep": 2}


def derive_seed(master, stream):
    """Deterministic child seed for a named consumer of the master seed."""
    ss = np.random.SeedSequence([int(master), _STREAMS[stream]])
    return int(ss.generate_state(1)[0])


@dataclass
class ExperimentConfig:
    crystal: CrystalSpec
    geometry: DetectorGeometry
    recovery: RecoveryConfig
    recipe: Recipe
    output_dir: str = "runs/out"
    seed: int = 13
    solver: str = "admm"              # engine used by the recovery pipeline
    floor: float = 1e-6               # SRTF masking floor
    k_significant: int = 1499         # sparsity budget for feasibility checks
    positions: int = None             # requested detector position count

    def phasing_seed(self):
        return derive_seed(self.seed, "phasing")


def _check_keys(section, allowed, where):
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in [{where}]")


def _parse_phase(section):
    _check_keys(section, {"model", "amplitude", "length_scale"}, "crystal.phase")
    try:
        return PhaseModel(
            kind=section.get("model", "gaussian-bump"),
            amplitude=float(section.get("amplitude", 2.0)),
            length_scale=float(section.get("length_scale", 10.0)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_crystal(section, master_seed):
    _check_keys(
        section,
        {"array_dims", "box_dims", "seed", "facet_cuts", "phase"},
        "crystal",
    )
    cuts = []
    for cut in section.get("facet_cuts", []):
        _check_keys(cut, {"normal", "offset"}, "crystal.facet_cuts")
        cuts.append((tuple(float(v) for v in cut["normal"]), float(cut["offset"])))
    try:
        return CrystalSpec(
            array_dims=tuple(section.get("array_dims", (128, 128, 70))),
            box_dims=tuple(section.get("box_dims", (22, 24, 22))),
            facet_cuts=cuts,
            phase=_parse_phase(section.get("phase", {})),
            seed=int(section.get("seed", master_seed)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_geometry(section):
    _check_keys(section, {"roi_fine", "pbf", "scheme", "positions", "offsets"}, "geometry")
    roi = int(section.get("roi_fine", 120))
    pbf = int(section.get("pbf", 6))
    scheme = section.get("scheme", "diagonal")
    positions = section.get("positions")
    try:
        if scheme == "custom":
            offsets = [tuple(int(v) for v in off) for off in section["offsets"]]
            geom = DetectorGeometry(roi_fine=roi, pbf=pbf, offsets=offsets, scheme="custom")
        else:
            geom = diagonal_geometry(roi, pbf, positions)
    except KeyError as exc:
        raise ConfigError(f"custom geometry requires 'offsets': {exc}") from exc
    except Exception as exc:
        raise ConfigError(str(exc)) from exc
    return geom, positions


def _parse_recovery(section):
    _check_keys(
        section,
        {"alpha", "max_iterations", "convergence_tol", "normalize_slice",
         "negative_handling", "solver"},
        "recovery",
    )
    try:
        cfg = RecoveryConfig(
            alpha=float(section.get("alpha", 2e-4)),
            max_iterations=int(section.get("max_iterations", 5000)),
            convergence_tol=float(section.get("convergence_tol", 1e-8)),
            normalize_slice=bool(section.get("normalize_slice", True)),
            negative_handling=section.get("negative_handling", "threshold-to-zero"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    solver = section.get("solver", "admm")
    if solver not in ("admm", "fista"):
        raise ConfigError(f"unknown solver {solver!r}")
    return cfg, solver


def _parse_recipe(section):
    _check_keys(
        section,
        {"stages", "shrinkwrap_period", "shrinkwrap_sigma", "shrinkwrap_threshold"},
        "recipe",
    )
    stages = None
    if "stages" in section:
        stages = []
        for st in section["stages"]:
            _check_keys(st, {"algorithm", "iterations", "beta"}, "recipe.stages")
            try:
                stages.append(Stage(
                    algorithm=st["algorithm"],
                    iterations=int(st["iterations"]),
                    beta=float(st.get("beta", 0.8)),
                ))
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"bad recipe stage {st}: {exc}") from exc
    try:
        kwargs = dict(
            shrinkwrap_period=int(section.get("shrinkwrap_period", 25)),
            shrinkwrap_sigma=float(section.get("shrinkwrap_sigma", 1.0)),
            shrinkwrap_threshold=float(section.get("shrinkwrap_threshold", 0.2)),
        )
        if stages is not None:
            return Recipe(stages=stages, **kwargs)
        return Recipe(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(doc):
    """Build an ExperimentConfig from a parsed TOML document (a dict)."""
    _check_keys(
        doc,
        {"seed", "output_dir", "crystal", "geometry", "recovery", "recipe", "metrics"},
        "top level",
    )
    seed = int(doc.get("seed", 13))
    metrics = doc.get("metrics", {})
    _check_keys(metrics, {"floor", "k_significant"}, "metrics")
    geometry, positions = _parse_geometry(doc.get("geometry", {}))
    recovery, solver = _parse_recovery(doc.get("recovery", {}))
    return ExperimentConfig(
        crystal=_parse_crystal(doc.get("crystal", {}), seed),
        geometry=geometry,
        recovery=recovery,
        recipe=_parse_recipe(doc.get("recipe", {})),
        output_dir=doc.get("output_dir", "runs/out"),
        seed=seed,
        solver=solver,
        floor=float(metrics.get("floor", 1e-6)),
        k_significant=int(metrics.get("k_significant", 1499)),
        positions=positions,
    )


def load_config(path):
    try:
        with open(path, "rb") as fh:
            doc = _toml.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(doc)


def default_config():
    """The pinned reference experiment (default crystal, PBF 6, 13 positions)."""
    return parse_config({"geometry": {"positions": 13}})


def config_fingerprint(config):
    """Stable hash of everything that determines pipeline output."""
    def enc(obj):
        if isinstance(obj, (list, tuple)):
            return [enc(v) for v in obj]
        if hasattr(obj, "__dict__"):
            return {k: enc(v) for k, v in sorted(vars(obj).items())}
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        return obj

    blob = json.dumps(enc(config), sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()
