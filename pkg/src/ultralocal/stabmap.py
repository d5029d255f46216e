"""Stability maps of the filtered intelligent-proportional loop.

Sweeps a (kp, alpha) grid, classifying each cell through the Routh table
of the loop's quartic characteristic polynomial, either at one filter
time constant or aggregated over a whole axis of them. A cross-validation
routine replays sampled cells as actual time-domain simulations so the
algebraic verdicts and the loop behavior can be compared on equal terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .control import ControllerSpec, EstimatorConfig, ANALYSIS_FORM
from .poly import (
    IpLoopParams,
    StabilityKind,
    ip_charpoly,
    max_real_part_of_roots,
    routh_hurwitz,
)
from .sim import NoiseModel, ReferenceTrajectory, example_plant, run_closed_loop

# |alpha| below this is excluded from sweeps: the control law divides by alpha.
ALPHA_EXCLUSION = 1e-9

VERDICT_STABLE = "stable"
VERDICT_UNSTABLE = "unstable"
VERDICT_MARGINAL = "marginal"
VERDICT_EXCLUDED = "excluded"

FIXED_T = "fixed-t"
FOR_ALL_T = "for-all-t"


class InvalidGrid(ValueError):
    """Grid axes or aggregation parameters are unusable."""


class IoFailure(OSError):
    """Grid export could not be written."""


@dataclass(frozen=True)
class GridSpec:
    """Axes and aggregation mode of a stability sweep.

    kp_axis and alpha_axis are (min, max, count) inclusive linear axes.
    t_axis lists the filter time constants considered. With FIXED_T the
    verdict uses t_axis[t_index] alone; with FOR_ALL_T a cell is stable
    only if it is Hurwitz at every t in the axis, unstable if any t makes
    it unstable, marginal otherwise.
    """

    kp_axis: tuple
    alpha_axis: tuple
    t_axis: tuple
    aggregation: str = FIXED_T
    t_index: int = 0

    def __post_init__(self):
        for name in ("kp_axis", "alpha_axis"):
            axis = getattr(self, name)
            if len(axis) != 3 or not axis[0] < axis[1] or int(axis[2]) < 2:
                raise InvalidGrid("%s must be (min, max, count>=2) with min < max" % name)
        if len(self.t_axis) == 0 or any(not t > 0.0 for t in self.t_axis):
            raise InvalidGrid("t_axis must be non-empty with positive entries")
        if self.aggregation not in (FIXED_T, FOR_ALL_T):
            raise InvalidGrid("unknown aggregation %r" % (self.aggregation,))
        if not 0 <= self.t_index < len(self.t_axis):
            raise InvalidGrid("t_index out of range")

    def kp_values(self) -> np.ndarray:
        lo, hi, n = self.kp_axis
        return np.linspace(lo, hi, int(n))

    def alpha_values(self) -> np.ndarray:
        lo, hi, n = self.alpha_axis
        return np.linspace(lo, hi, int(n))


def default_t_axis() -> tuple:
    """25 filter constants spanning [1e-3, 1.9] (log spacing plus 0.1).

    0.1 is inserted explicitly so the all-t verdicts are directly
    comparable with the default fixed-t slice.
    """
    pts = set(float(x) for x in np.logspace(math.log10(1e-3), math.log10(1.9), 24))
    pts.add(0.1)
    return tuple(sorted(pts))


def default_grid_spec(t_filter: float = 0.1) -> GridSpec:
    """The default 201x201 map over kp, alpha in [-5, 5] at one filter constant."""
    return GridSpec((-5.0, 5.0, 201), (-5.0, 5.0, 201), (float(t_filter),),
                    FIXED_T, 0)


def default_all_t_grid_spec() -> GridSpec:
    return GridSpec((-5.0, 5.0, 201), (-5.0, 5.0, 201), default_t_axis(),
                    FOR_ALL_T, 0)


@dataclass
class StabilityGrid:
    """Sweep result: verdicts[i][j] classifies (kp_values[i], alpha_values[j])."""

    spec: GridSpec
    verdicts: list
    stable_fraction: float


_KIND_TO_VERDICT = {
    StabilityKind.HURWITZ: VERDICT_STABLE,
    StabilityKind.UNSTABLE: VERDICT_UNSTABLE,
    StabilityKind.MARGINAL: VERDICT_MARGINAL,
}


def _verdict_at(kp: float, alpha: float, t: float) -> str:
    v = routh_hurwitz(ip_charpoly(IpLoopParams(alpha=alpha, kp=kp, t_filter=t)))
    return _KIND_TO_VERDICT[v.kind]


def cell_verdict(kp: float, alpha: float, spec: GridSpec) -> str:
    """Classify one cell under the grid's aggregation rule."""
    if abs(alpha) < ALPHA_EXCLUSION:
        return VERDICT_EXCLUDED
    if spec.aggregation == FIXED_T:
        return _verdict_at(kp, alpha, spec.t_axis[spec.t_index])
    saw_marginal = False
    for t in spec.t_axis:
        v = _verdict_at(kp, alpha, t)
        if v == VERDICT_UNSTABLE:
            return VERDICT_UNSTABLE
        if v == VERDICT_MARGINAL:
            saw_marginal = True
    return VERDICT_MARGINAL if saw_marginal else VERDICT_STABLE


def sweep(spec: GridSpec) -> StabilityGrid:
    """Classify every grid cell; stable_fraction counts stable over all cells."""
    kps = spec.kp_values().tolist()
    alphas = spec.alpha_values().tolist()
    verdicts = []
    stable = 0
    for kp in kps:
        row = []
        for alpha in alphas:
            v = cell_verdict(kp, alpha, spec)
            if v == VERDICT_STABLE:
                stable += 1
            row.append(v)
        verdicts.append(row)
    total = len(kps) * len(alphas)
    return StabilityGrid(spec, verdicts, stable / total)


def export_grid(grid: StabilityGrid, path) -> None:
    """Write the grid as CSV plus a trailing stable-fraction summary comment.

    Fixed-t grids use header kp,alpha,verdict; all-t grids add the
    aggregation tag in a t column. Rows iterate kp-major. The last line is
    '# stable_fraction = <value>'.
    """
    spec = grid.spec
    kps = spec.kp_values().tolist()
    alphas = spec.alpha_values().tolist()
    fixed = spec.aggregation == FIXED_T
    try:
        with open(path, "w", newline="\n") as fh:
            if fixed:
                fh.write("kp,alpha,verdict\n")
                for i, kp in enumerate(kps):
                    row = grid.verdicts[i]
                    for j, alpha in enumerate(alphas):
                        fh.write("%s,%s,%s\n" % (repr(kp), repr(alpha), row[j]))
            else:
                fh.write("kp,alpha,t,verdict\n")
                for i, kp in enumerate(kps):
                    row = grid.verdicts[i]
                    for j, alpha in enumerate(alphas):
                        fh.write("%s,%s,all,%s\n" % (repr(kp), repr(alpha), row[j]))
            fh.write("# stable_fraction = %s\n" % repr(grid.stable_fraction))
    except OSError as exc:
        raise IoFailure("cannot write grid to %r: %s" % (path, exc)) from exc


def ip_spec_for_cell(kp: float, alpha: float) -> ControllerSpec:
    """Intelligent-proportional controller realizing a tabulated map cell.

    The map's quartic is tabulated with the proportional correction acting
    on the measured output directly; the control law here uses the error
    convention e = y_ref - y, so the loop whose characteristic polynomial
    matches cell (kp, alpha) carries proportional gain -kp. Verified by
    the grid-vs-simulation cross-validation suite.
    """
    return ControllerSpec.ip(kp=-kp, alpha=alpha)


def quartic_max_real_root(kp: float, alpha: float, t: float) -> float:
    """Largest real part among the tabulated quartic's roots (root oracle)."""
    return max_real_part_of_roots(ip_charpoly(IpLoopParams(alpha=alpha, kp=kp, t_filter=t)))


@dataclass(frozen=True)
class SampleCheck:
    """One cross-validation draw: algebraic verdict vs simulated behavior."""

    kp: float
    alpha: float
    t_filter: float
    verdict: str
    max_root_real_part: float
    diverged: bool
    agrees: bool


@dataclass
class AgreementReport:
    checks: list
    agreement_rate: float
    boundary_band: float

    def summary(self) -> str:
        lines = ["cross-validation: %d samples, agreement %.1f%% (|Re root| > %g band)"
                 % (len(self.checks), 100.0 * self.agreement_rate, self.boundary_band)]
        for c in self.checks:
            lines.append("  kp=%+.3f alpha=%+.3f t=%g verdict=%s maxRe=%+.4f "
                         "diverged=%s agrees=%s"
                         % (c.kp, c.alpha, c.t_filter, c.verdict,
                            c.max_root_real_part, c.diverged, c.agrees))
        return "\n".join(lines)


def cross_validate(grid: StabilityGrid, samples: int = 50, seed: int = 0,
                   boundary_band: float = 0.05) -> AgreementReport:
    """Compare grid verdicts against noise-free time-domain simulations.

    Draws a stratified sample of stable/unstable cells (round-robin across
    verdict classes, order shuffled by the seed), skipping cells whose
    quartic has a root within boundary_band of the imaginary axis, where
    a 20 s run cannot separate slow growth from slow decay. Each sampled
    cell is simulated as the matching intelligent-proportional loop
    (gain bridge of ip_spec_for_cell, regulation to zero from y0 = -0.05,
    no noise); a stable verdict should mean a bounded run and an unstable
    verdict a diverged one.
    """
    spec = grid.spec
    if spec.aggregation != FIXED_T:
        raise InvalidGrid("cross_validate needs a fixed-t grid")
    if samples < 1:
        raise InvalidGrid("samples must be >= 1")
    t = spec.t_axis[spec.t_index]
    kps = spec.kp_values().tolist()
    alphas = spec.alpha_values().tolist()

    by_class = {VERDICT_STABLE: [], VERDICT_UNSTABLE: []}
    for i, kp in enumerate(kps):
        row = grid.verdicts[i]
        for j in range(len(alphas)):
            if row[j] in by_class:
                by_class[row[j]].append((i, j))

    rng = np.random.default_rng(seed)
    pools = []
    for verdict in (VERDICT_STABLE, VERDICT_UNSTABLE):
        cells = by_class[verdict]
        order = rng.permutation(len(cells))
        pools.append([cells[int(ix)] for ix in order])

    picked = []
    cursor = [0, 0]
    while len(picked) < samples and (cursor[0] < len(pools[0]) or cursor[1] < len(pools[1])):
        for which in (0, 1):
            while cursor[which] < len(pools[which]):
                i, j = pools[which][cursor[which]]
                cursor[which] += 1
                kp = kps[i]
                alpha = alphas[j]
                max_re = quartic_max_real_root(kp, alpha, t)
                if abs(max_re) > boundary_band:
                    picked.append((kp, alpha, grid.verdicts[i][j], max_re))
                    break
            if len(picked) >= samples:
                break

    checks = []
    agree_count = 0
    plant = example_plant(delta=1.0)
    ref = ReferenceTrajectory.constant(0.0)
    quiet = NoiseModel(0.0, 0)
    for kp, alpha, verdict, max_re in picked:
        controller = ip_spec_for_cell(kp, alpha)
        est = EstimatorConfig(nu=1, alpha=alpha, t_filter=t, variant=ANALYSIS_FORM,
                              plant_coeffs=(plant.a1, plant.a0, plant.b))
        trace = run_closed_loop(plant, controller, est, ref, quiet,
                                h=1e-3, duration=20.0, y0=-0.05)
        agrees = trace.diverged == (verdict == VERDICT_UNSTABLE)
        agree_count += agrees
        checks.append(SampleCheck(kp, alpha, t, verdict, max_re,
                                  trace.diverged, agrees))

    rate = agree_count / len(checks) if checks else 0.0
    return AgreementReport(checks, rate, boundary_band)
