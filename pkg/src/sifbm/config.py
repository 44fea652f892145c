"""Experiment configuration: one JSON file drives every command.

Validation happens entirely at parse time through the owning constructors
(HurstParam, GridSpec, flow builders), and error messages name the offending
field.  The manifest hash is a sha256 over the canonical (sorted-key,
compact) JSON of the resolved configuration, so it changes exactly when some
field changes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .flows import ElementaryFlow, SimpleFlow, make_elementary_flow, required_flow_indices
from .gaussian import HurstParam
from .intrep import GridSpec
from .recovery import CoverFamily, Thresholds, tiling_cover
from .rects import LeftNeighborhood, Rect, rect_intersection


class ConfigError(ValueError):
    """Configuration is structurally or semantically invalid."""


def _get(d: dict, key: str, kind, where: str, default=None, required=False):
    if key not in d:
        if required:
            raise ConfigError(f"missing required field '{where}{key}'")
        return default
    val = d[key]
    if kind is float and isinstance(val, int):
        val = float(val)
    if not isinstance(val, kind):
        raise ConfigError(
            f"field '{where}{key}' must be {getattr(kind, '__name__', kind)}, "
            f"got {type(val).__name__}"
        )
    return val


def _corner(obj, n, where) -> tuple[float, ...]:
    if not isinstance(obj, list) or len(obj) != n:
        raise ConfigError(f"field '{where}' must be a list of {n} coordinates")
    return tuple(float(x) for x in obj)


def _build_flow(spec: dict, dim: int, where: str):
    kind = _get(spec, "kind", str, where, required=True)
    if kind == "simple":
        segs = _get(spec, "segments", list, where, required=True)
        if not segs:
            raise ConfigError(f"field '{where}segments' must be non-empty")
        built = tuple(
            _segment_flow(s, dim, f"{where}segments[{i}].") for i, s in enumerate(segs)
        )
        try:
            return SimpleFlow(built)
        except ValueError as exc:
            raise ConfigError(f"field '{where}segments': {exc}") from exc
    return _segment_flow({**spec, "span": spec.get("span", [0.0, 1.0])}, dim, where)


def _segment_flow(spec: dict, dim: int, where: str) -> ElementaryFlow:
    kind = _get(spec, "kind", str, where, required=True)
    span = spec.get("span", [0.0, 1.0])
    if not isinstance(span, list) or len(span) != 2 or not span[0] < span[1]:
        raise ConfigError(f"field '{where}span' must be [a, b] with a < b")
    points = _get(spec, "points", int, where, default=64)
    if points < 2:
        raise ConfigError(f"field '{where}points' must be >= 2")
    to = _corner(_get(spec, "to", list, where, required=True), dim, f"{where}to")
    a, b = float(span[0]), float(span[1])
    grid = np.linspace(a, b, points)
    frac = (grid - a) / (b - a)
    frac[-1] = 1.0
    if kind == "linear":
        corners = [tuple(f * c for c in to) for f in frac]
    elif kind == "power":
        exps = _get(spec, "exponents", list, where, required=True)
        if len(exps) != dim or any(e <= 0 for e in exps):
            raise ConfigError(
                f"field '{where}exponents' must be {dim} positive exponents"
            )
        corners = [tuple(f ** e * c for e, c in zip(exps, to)) for f in frac]
    else:
        raise ConfigError(f"field '{where}kind' unknown flow kind {kind!r}")
    try:
        return make_elementary_flow(grid, corners)
    except ValueError as exc:
        raise ConfigError(f"field '{where}': {exc}") from exc


def cover_closure_rects(covers: CoverFamily) -> set[Rect]:
    """Every box the inclusion-exclusion extension of the cover pieces can
    look up: intersections of each base with subsets of its subtracted boxes."""
    import itertools

    out: set[Rect] = set()
    for el in covers.elements:
        boxes = [el.base, *el.subtracted]
        for k in range(1, len(boxes) + 1):
            for combo in itertools.combinations(boxes, k):
                if el.base not in combo:
                    combo = (el.base, *combo)
                inter = combo[0]
                for r in combo[1:]:
                    inter = rect_intersection(inter, r)
                if not inter.is_empty:
                    out.add(inter)
    return out


@dataclass(frozen=True)
class IntRepConfig:
    masses: tuple[float, ...]               # one flow's time-change values
    variance_masses: tuple[float, ...]      # single-mass variance checks
    hursts: tuple[float, ...]
    n_samples: int
    grid: GridSpec
    variance_rel_tol: float = 0.03
    covariance_se_mult: float = 3.0


@dataclass(frozen=True)
class ExperimentConfig:
    dimension: int
    hurst: HurstParam
    seed: int
    n_samples: int
    output_dir: str
    lattice_indices: tuple[Rect, ...]
    flows: tuple
    flow_names: tuple[str, ...]
    covers: CoverFamily
    intrep: IntRepConfig
    thresholds: Thresholds
    jobs: int = 1
    raw: dict = field(default_factory=dict, compare=False)

    @property
    def table_indices(self) -> list[Rect]:
        """Indices the recovered-measure table is built over: the lattice
        plus whatever the cover pieces need."""
        out = set(self.lattice_indices) | cover_closure_rects(self.covers)
        return sorted(out, key=lambda r: r.corner)

    def ensemble_indices(self) -> list[Rect]:
        """Deterministic index list for simulation: table indices plus every
        column any configured flow projection will read."""
        out = set(self.table_indices)
        for f in self.flows:
            out |= required_flow_indices(f)
        return sorted(out, key=lambda r: r.corner)

    def config_hash(self) -> str:
        return canonical_hash(self.raw)


def canonical_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def parse_config(raw: dict, seed_override: int | None = None, jobs: int = 1) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration root must be a JSON object")
    resolved = dict(raw)
    if seed_override is not None:
        resolved["seed"] = int(seed_override)
    dim = _get(resolved, "dimension", int, "", required=True)
    if dim < 1:
        raise ConfigError("field 'dimension' must be >= 1")
    try:
        hurst = HurstParam(_get(resolved, "hurst", float, "", required=True))
    except ValueError as exc:
        raise ConfigError(f"field 'hurst': {exc}") from exc
    seed = _get(resolved, "seed", int, "", required=True)
    n_samples = _get(resolved, "n_samples", int, "", required=True)
    if n_samples < 1:
        raise ConfigError("field 'n_samples' must be >= 1")
    output_dir = _get(resolved, "output_dir", str, "", default="out")

    idx_spec = _get(resolved, "indices", dict, "", required=True)
    lattice: list[Rect] = []
    if "lattice" in idx_spec:
        lat = idx_spec["lattice"]
        shape = _get(lat, "shape", list, "indices.lattice.", required=True)
        spacing = _get(lat, "spacing", list, "indices.lattice.", default=[1.0] * dim)
        if len(shape) != dim or len(spacing) != dim:
            raise ConfigError("field 'indices.lattice': shape/spacing must match dimension")
        import itertools as it

        for combo in it.product(*(range(1, int(s) + 1) for s in shape)):
            lattice.append(Rect(tuple(c * float(sp) for c, sp in zip(combo, spacing))))
    elif "corners" in idx_spec:
        for i, c in enumerate(idx_spec["corners"]):
            lattice.append(Rect(_corner(c, dim, f"indices.corners[{i}]")))
    else:
        raise ConfigError("field 'indices' needs either 'lattice' or 'corners'")

    flow_specs = _get(resolved, "flows", list, "", default=[])
    flows, names = [], []
    for i, fs in enumerate(flow_specs):
        flows.append(_build_flow(fs, dim, f"flows[{i}]."))
        names.append(_get(fs, "name", str, f"flows[{i}].", default=f"flow{i}"))
    if len(set(names)) != len(names):
        raise ConfigError("field 'flows': names must be unique")

    cov_spec = _get(resolved, "covers", dict, "", default=None)
    if cov_spec is None:
        corner = tuple(float(x) for x in lattice[-1].corner) if lattice else (1.0,) * dim
        covers = tiling_cover(corner, (2,) * dim)
    elif "tiling" in cov_spec:
        t = cov_spec["tiling"]
        corner = _corner(_get(t, "corner", list, "covers.tiling.", required=True), dim, "covers.tiling.corner")
        divisions = _get(t, "divisions", list, "covers.tiling.", required=True)
        if len(divisions) != dim:
            raise ConfigError("field 'covers.tiling.divisions' must match dimension")
        try:
            covers = tiling_cover(corner, divisions)
        except ValueError as exc:
            raise ConfigError(f"field 'covers.tiling': {exc}") from exc
    elif "elements" in cov_spec:
        els = []
        for i, el in enumerate(cov_spec["elements"]):
            base = Rect(_corner(el["base"], dim, f"covers.elements[{i}].base"))
            subs = tuple(
                Rect(_corner(s, dim, f"covers.elements[{i}].subtract"))
                for s in el.get("subtract", [])
            )
            els.append(LeftNeighborhood(base, subs))
        try:
            covers = CoverFamily(tuple(els))
        except ValueError as exc:
            raise ConfigError(f"field 'covers.elements': {exc}") from exc
    else:
        raise ConfigError("field 'covers' needs 'tiling' or 'elements'")

    ir = _get(resolved, "integral_rep", dict, "", default={})
    grid_spec = _parse_grid(ir.get("grid", {}))
    intrep = IntRepConfig(
        masses=tuple(float(m) for m in ir.get("masses", [0.8, 0.9, 1.0])),
        variance_masses=tuple(float(m) for m in ir.get("variance_masses", [0.25, 1.0, 4.0])),
        hursts=tuple(float(h) for h in ir.get("hursts", [0.2, 0.35])),
        n_samples=int(ir.get("n_samples", n_samples)),
        grid=grid_spec,
        variance_rel_tol=float(ir.get("variance_rel_tol", 0.03)),
        covariance_se_mult=float(ir.get("covariance_se_mult", 3.0)),
    )
    for hv in intrep.hursts:
        try:
            HurstParam(hv)
        except ValueError as exc:
            raise ConfigError(f"field 'integral_rep.hursts': {exc}") from exc

    thr_spec = _get(resolved, "thresholds", dict, "", default={})
    try:
        thresholds = Thresholds.from_dict(thr_spec)
    except TypeError as exc:
        raise ConfigError(f"field 'thresholds': unknown key ({exc})") from exc

    return ExperimentConfig(
        dimension=dim,
        hurst=hurst,
        seed=seed,
        n_samples=n_samples,
        output_dir=output_dir,
        lattice_indices=tuple(lattice),
        flows=tuple(flows),
        flow_names=tuple(names),
        covers=covers,
        intrep=intrep,
        thresholds=thresholds,
        jobs=jobs,
        raw=resolved,
    )


def _parse_grid(spec: dict) -> GridSpec:
    try:
        return GridSpec(
            truncation_factor=float(spec.get("truncation_factor", 50.0)),
            margin=float(spec.get("margin", 1.0)),
            cells_per_mass=int(spec.get("cells_per_mass", 4096)),
            refine_factor=int(spec.get("refine_factor", 8)),
            refine_radius_frac=float(spec.get("refine_radius_frac", 0.01)),
        )
    except ValueError as exc:
        raise ConfigError(f"field 'integral_rep.grid': {exc}") from exc


def load_config(path, seed_override: int | None = None, jobs: int = 1) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(raw, seed_override=seed_override, jobs=jobs)
