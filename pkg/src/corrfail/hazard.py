"""Moment constraints for spatially distributed components under an
earthquake scenario.

Component failure probabilities follow a lognormal fragility curve driven
by an empirical peak-ground-acceleration attenuation relation, and the
pairwise failure correlations combine three layers: the inter-event
variance floor, an intra-event spatial correlation decaying with
inter-site distance, and the capacity variance that only acts on the
diagonal.  All formulas are deterministic, so building constraints twice
from the same inputs gives bit-identical output.
"""

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .core import MomentConstraints
from .errors import DimensionError, InputFormatError

EARTH_RADIUS_KM = 6371.0

# Magnitude beyond which the attenuation relation is extrapolating far
# outside its calibration range.
CALIBRATION_MAGNITUDE_LIMIT = 8.5

SITE_MODES = ("planar", "geographic")


@dataclass(frozen=True)
class Site:
    """A located component or reference point.

    In planar mode ``x``/``y`` are kilometers; in geographic mode ``x`` is
    latitude and ``y`` longitude, both in degrees (matching the column
    order of the sites file, which carries the mode in its header).
    """

    id: str
    x: float
    y: float
    mode: str = "planar"

    def __post_init__(self):
        if self.mode not in SITE_MODES:
            raise ValueError(f"mode must be one of {SITE_MODES}")
        if self.mode == "geographic":
            if not -90.0 <= self.x <= 90.0:
                raise ValueError(f"latitude {self.x} outside [-90, 90]")
            if not -180.0 <= self.y <= 180.0:
                raise ValueError(f"longitude {self.y} outside [-180, 180]")


@dataclass(frozen=True)
class HazardScenario:
    """Earthquake magnitude, epicenter and the fragility/correlation
    parameters.

    The demand variance must equal the sum of the inter- and intra-event
    variances; by default it is derived from them so the identity holds
    exactly in floating point.
    """

    magnitude: float
    epicenter: Site
    sigma_c_sq: float = 0.48
    mean_capacity: float = math.log(0.85)
    sigma_eta_sq: float = 0.07
    sigma_eps_sq: float = 0.25
    sigma_d_sq: float | None = None

    def __post_init__(self):
        if self.sigma_d_sq is None:
            object.__setattr__(
                self, "sigma_d_sq", self.sigma_eta_sq + self.sigma_eps_sq
            )
        for name in ("sigma_c_sq", "sigma_eta_sq", "sigma_eps_sq", "sigma_d_sq"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if abs(self.sigma_eta_sq + self.sigma_eps_sq - self.sigma_d_sq) > 1e-12:
            raise ValueError(
                "demand variance must decompose exactly into inter-event "
                "plus intra-event variance"
            )
        if self.magnitude > CALIBRATION_MAGNITUDE_LIMIT:
            warnings.warn(
                f"magnitude {self.magnitude} is beyond the attenuation "
                f"relation's calibration range (> {CALIBRATION_MAGNITUDE_LIMIT})",
                stacklevel=2,
            )


def attenuation(magnitude, distance_km):
    """Mean log peak ground acceleration at an epicentral distance.

    Empirical relation with a 1.35 km near-field saturation term:

        Dbar = -0.5265 + (-0.3303 + 0.0599 (Mw - 4.5)) ln(r^2 + 1.35^2)
               - 0.0115 sqrt(r^2 + 1.35^2)
    """
    r = np.asarray(distance_km, dtype=np.float64)
    if np.any(r < 0.0):
        raise ValueError("distance must be nonnegative")
    rsq = r * r + 1.35 * 1.35
    d = -0.5265 + (-0.3303 + 0.0599 * (magnitude - 4.5)) * np.log(rsq) \
        - 0.0115 * np.sqrt(rsq)
    return d if d.ndim else float(d)


def failure_probability(mean_log_demand, scenario):
    """Lognormal fragility: Phi((Dbar - Cbar) / sqrt(sigma_D^2 + sigma_C^2))."""
    z = (np.asarray(mean_log_demand, dtype=np.float64) - scenario.mean_capacity) \
        / math.sqrt(scenario.sigma_d_sq + scenario.sigma_c_sq)
    p = ndtr(z)
    return p if p.ndim else float(p)


def intra_event_corr(delta_km):
    """Spatial correlation of intra-event residuals: exp(-0.27 delta^0.4)."""
    delta = np.asarray(delta_km, dtype=np.float64)
    if np.any(delta < 0.0):
        raise ValueError("distance must be nonnegative")
    rho = np.exp(-0.27 * delta**0.40)
    return rho if rho.ndim else float(rho)


def pga_corr(delta_km, scenario):
    """Correlation between the log demands at two sites.

    Convex combination of the inter-event floor and the distance-decaying
    intra-event term: sigma_eta^2/sigma_D^2 + rho_eps(delta) sigma_eps^2/sigma_D^2.
    """
    rho_eps = np.asarray(intra_event_corr(delta_km))
    rho = (scenario.sigma_eta_sq + rho_eps * scenario.sigma_eps_sq) \
        / scenario.sigma_d_sq
    return rho if rho.ndim else float(rho)


def component_corr(i, j, delta_km, scenario):
    """Pearson correlation between the failure indicators of two components.

    (sigma_D^2 rho_D + sigma_C^2 [i == j]) / (sigma_D^2 + sigma_C^2); equals
    1 exactly on the diagonal.
    """
    if i == j:
        return 1.0
    num = scenario.sigma_d_sq * np.asarray(pga_corr(delta_km, scenario))
    rho = num / (scenario.sigma_d_sq + scenario.sigma_c_sq)
    return rho if rho.ndim else float(rho)


def site_distance(a, b):
    """Distance in km: Euclidean in planar mode, haversine great-circle in
    geographic mode (Earth radius 6371 km)."""
    if a.mode != b.mode:
        raise DimensionError(
            f"cannot mix coordinate modes ({a.mode} vs {b.mode})"
        )
    if a.mode == "planar":
        return math.hypot(a.x - b.x, a.y - b.y)
    return _haversine(a.x, a.y, b.x, b.y)


def _haversine(lat1, lon1, lat2, lon2):
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dphi = p2 - p1
    dlam = math.radians(lon2 - lon1)
    s = math.sin(0.5 * dphi) ** 2 + math.cos(p1) * math.cos(p2) \
        * math.sin(0.5 * dlam) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(s)))


def _coord_arrays(sites):
    mode = sites[0].mode
    for s in sites:
        if s.mode != mode:
            raise DimensionError("all sites must share one coordinate mode")
    xs = np.array([s.x for s in sites])
    ys = np.array([s.y for s in sites])
    return xs, ys, mode


def distance_matrix(sites):
    """Pairwise inter-site distances in km."""
    xs, ys, mode = _coord_arrays(sites)
    if mode == "planar":
        dx = xs[:, None] - xs[None, :]
        dy = ys[:, None] - ys[None, :]
        return np.hypot(dx, dy)
    lat = np.radians(xs)
    lon = np.radians(ys)
    s = np.sin(0.5 * (lat[:, None] - lat[None, :])) ** 2 \
        + np.cos(lat)[:, None] * np.cos(lat)[None, :] \
        * np.sin(0.5 * (lon[:, None] - lon[None, :])) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(s)))


def epicentral_distances(sites, scenario):
    """Distance of every site to the scenario epicenter, in km."""
    return np.array([site_distance(s, scenario.epicenter) for s in sites])


def build_constraints(sites, scenario):
    """Means and pairwise correlations for a list of component sites.

    Means chain the attenuation relation into the fragility curve per
    site; correlations evaluate the three-layer model per pair.  The
    result must pass the Frechet-Hoeffding feasibility check (extreme
    mean spreads with the fixed correlation scale can fail it; the error
    reports the offending pairs instead of clipping silently).  The
    output correlation matrix is not guaranteed positive semidefinite;
    repair belongs to the latent-Gaussian fit, keeping the constraint
    file faithful to the correlation model.
    """
    if len(sites) < 1:
        raise DimensionError("need at least one site")
    r = epicentral_distances(sites, scenario)
    means = failure_probability(attenuation(scenario.magnitude, r), scenario)
    means = np.atleast_1d(means)
    deltas = distance_matrix(sites)
    off = scenario.sigma_d_sq * pga_corr(deltas, scenario) \
        / (scenario.sigma_d_sq + scenario.sigma_c_sq)
    corr = np.asarray(off, dtype=np.float64).copy()
    np.fill_diagonal(corr, 1.0)
    return MomentConstraints(means, corr)


def midpoint_sites(network_nodes, edges, policy="midpoint"):
    """One hazard component site per edge.

    ``policy`` "midpoint" places the component at the segment midpoint
    (great-circle midpoint in geographic mode); "endpoint-average" averages
    the raw coordinates, which differs only in geographic mode.
    """
    if policy not in ("midpoint", "endpoint-average"):
        raise ValueError("policy must be midpoint or endpoint-average")
    by_id = {s.id: s for s in network_nodes}
    sites = []
    for idx, (u, v) in enumerate(edges):
        a, b = by_id[u], by_id[v]
        if a.mode != b.mode:
            raise DimensionError("edge endpoints use different coordinate modes")
        if a.mode == "planar" or policy == "endpoint-average":
            x, y = 0.5 * (a.x + b.x), 0.5 * (a.y + b.y)
        else:
            x, y = _gc_midpoint(a.x, a.y, b.x, b.y)
        sites.append(Site(f"edge-{idx}", x, y, a.mode))
    return sites


def _gc_midpoint(lat1, lon1, lat2, lon2):
    p1, l1, p2, l2 = map(math.radians, (lat1, lon1, lat2, lon2))
    v1 = np.array([math.cos(p1) * math.cos(l1), math.cos(p1) * math.sin(l1),
                   math.sin(p1)])
    v2 = np.array([math.cos(p2) * math.cos(l2), math.cos(p2) * math.sin(l2),
                   math.sin(p2)])
    m = v1 + v2
    norm = np.linalg.norm(m)
    if norm == 0.0:  # antipodal points: midpoint undefined, fall back
        return 0.5 * (lat1 + lat2), 0.5 * (lon1 + lon2)
    m /= norm
    return math.degrees(math.asin(m[2])), math.degrees(math.atan2(m[1], m[0]))


GEO_HEADER = "id,lat,lon"
PLANAR_HEADER = "id,x_km,y_km"


def save_sites(sites, path):
    """Sites CSV; the header row names the coordinate mode."""
    _, _, mode = _coord_arrays(sites)
    header = GEO_HEADER if mode == "geographic" else PLANAR_HEADER
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for s in sites:
            fh.write(f"{s.id},{s.x:.17g},{s.y:.17g}\n")


def load_sites(path):
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
        if header == GEO_HEADER:
            mode = "geographic"
        elif header == PLANAR_HEADER:
            mode = "planar"
        else:
            raise InputFormatError(
                f"{path}:1: header must be '{GEO_HEADER}' or '{PLANAR_HEADER}', "
                f"got {header!r}"
            )
        sites = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise InputFormatError(
                    f"{path}:{lineno}: expected 3 fields, got {len(parts)}"
                )
            try:
                sites.append(Site(parts[0], float(parts[1]), float(parts[2]),
                                  mode))
            except ValueError as exc:
                raise InputFormatError(f"{path}:{lineno}: {exc}") from exc
    if not sites:
        raise InputFormatError(f"{path}: no sites")
    return sites


def scenario_to_dict(scenario):
    return {
        "magnitude": scenario.magnitude,
        "epicenter": {
            "id": scenario.epicenter.id,
            "x": scenario.epicenter.x,
            "y": scenario.epicenter.y,
            "mode": scenario.epicenter.mode,
        },
        "sigma_c_sq": scenario.sigma_c_sq,
        "mean_capacity": scenario.mean_capacity,
        "sigma_eta_sq": scenario.sigma_eta_sq,
        "sigma_eps_sq": scenario.sigma_eps_sq,
        "sigma_d_sq": scenario.sigma_d_sq,
    }


def scenario_from_dict(data):
    try:
        epi = data["epicenter"]
        epicenter = Site(
            str(epi.get("id", "epicenter")), float(epi["x"]), float(epi["y"]),
            epi.get("mode", "planar"),
        )
        return HazardScenario(
            magnitude=float(data["magnitude"]),
            epicenter=epicenter,
            sigma_c_sq=float(data.get("sigma_c_sq", 0.48)),
            mean_capacity=float(data.get("mean_capacity", math.log(0.85))),
            sigma_eta_sq=float(data.get("sigma_eta_sq", 0.07)),
            sigma_eps_sq=float(data.get("sigma_eps_sq", 0.25)),
            sigma_d_sq=(float(data["sigma_d_sq"])
                        if "sigma_d_sq" in data else None),
        )
    except KeyError as exc:
        raise InputFormatError(f"scenario is missing field {exc}") from exc


def load_scenario(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    return scenario_from_dict(data)
