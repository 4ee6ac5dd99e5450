"""Beta-parameter regression over speed, hold-out prediction and LOO cross-validation.

Each of the five beta components is fitted with an independent polynomial
(degree 4 by default, automatically reduced when data are scarce) over
optionally normalized speed; the polynomials are evaluated at the target
speed and the result is repaired to satisfy the physical constraints.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CpmFitError, FitFailureError, InvalidPredictionError, MetricError
from .metrics import ErrorSummary, EvalMode, MetricKind, evaluate_prediction
from .model import BetaVector, CompressorMap, Speedline
from .optimize import FitConfig, FitResult, fit_speedline

BETA_FIELDS = ("m_zs", "pi_zs", "m_ch", "pi_ch", "cur")


class PredictionKind(enum.Enum):
    INTERPOLATION = "interpolation"
    EXTRAPOLATION = "extrapolation"


@dataclass(frozen=True)
class BetaTable:
    """Fitted beta vectors keyed by strictly increasing speed."""

    entries: tuple[tuple[float, BetaVector, FitResult | None], ...]

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        speeds = [e[0] for e in entries]
        for a, b in zip(speeds, speeds[1:]):
            if not a < b:
                raise ValueError("BetaTable speeds must be strictly increasing")

    def speeds(self) -> np.ndarray:
        return np.array([e[0] for e in self.entries])

    def betas(self) -> np.ndarray:
        return np.array([e[1].as_array() for e in self.entries])

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class PredictionConfig:
    degree: int = 4
    normalize_speed: bool = True
    enforce_cur_min: float = 2.0
    enforce_nonneg: bool = True
    eval_mode: EvalMode = EvalMode.PRESSURE

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("degree must be >= 1")


@dataclass(frozen=True)
class PolyModel:
    """Per-component polynomial coefficients plus the speed scaling used to fit them."""

    coeffs: tuple[tuple[float, ...], ...]  # 5 x (degree+1), ascending powers
    speed_min: float
    speed_max: float
    normalized: bool
    degree: int
    degree_reduced: bool

    def _scale(self, speed) -> np.ndarray:
        s = np.asarray(speed, dtype=float)
        if not self.normalized:
            return s
        return (s - self.speed_min) / (self.speed_max - self.speed_min)

    def evaluate_raw(self, speed) -> np.ndarray:
        """Raw polynomial values for the 5 components, no constraint repair."""
        s = self._scale(speed)
        return np.array([np.polynomial.polynomial.polyval(s, c) for c in self.coeffs])


@dataclass(frozen=True)
class RepairFlags:
    cur_clamped: bool = False
    nonneg_clamped: bool = False
    degree_reduced: bool = False


@dataclass(frozen=True)
class PredictionReport:
    """Outcome of one hold-out prediction, successful or failed."""

    target_speed: float
    kind: PredictionKind
    status: str  # "ok" | "failed"
    predicted_beta: BetaVector | None
    metrics: dict  # EvalMode -> {MetricKind: ErrorSummary}
    repair: RepairFlags
    out_of_domain: int
    underdetermined_fits: int
    failure_reason: str | None = None
    raw_values: tuple[float, ...] | None = None


def fit_beta_polynomials(table: BetaTable, cfg: PredictionConfig) -> PolyModel:
    """Independent least-squares polynomial per beta component over speed.

    The effective degree is min(cfg.degree, entries - 1): with exactly
    degree + 1 entries the polynomials interpolate the table exactly.
    """
    n = len(table)
    if n < 2:
        raise MetricError(f"beta regression needs >= 2 entries, got {n}")
    degree = min(cfg.degree, n - 1)
    speeds = table.speeds()
    s = speeds.copy()
    if cfg.normalize_speed:
        s = (s - speeds.min()) / (speeds.max() - speeds.min())
    betas = table.betas()
    coeffs = tuple(
        tuple(float(c) for c in np.polynomial.polynomial.polyfit(s, betas[:, j], degree))
        for j in range(5)
    )
    return PolyModel(
        coeffs=coeffs,
        speed_min=float(speeds.min()),
        speed_max=float(speeds.max()),
        normalized=cfg.normalize_speed,
        degree=degree,
        degree_reduced=degree < cfg.degree,
    )


def predict_beta(model: PolyModel, speed: float, cfg: PredictionConfig) -> tuple[BetaVector, RepairFlags]:
    """Evaluate the polynomials at the target speed and repair constraints.

    Curvature is raised to cfg.enforce_cur_min and (optionally) the four
    point coordinates are clamped to be non-negative; each clamp sets a
    flag.  If the repaired vector still violates the ordering invariants
    an InvalidPredictionError carrying the raw values is raised.
    """
    raw = model.evaluate_raw(speed).ravel()
    vals = raw.copy()
    cur_clamped = False
    nonneg_clamped = False
    if vals[4] < cfg.enforce_cur_min:
        vals[4] = cfg.enforce_cur_min
        cur_clamped = True
    if cfg.enforce_nonneg:
        for j in range(4):
            if vals[j] < 0.0:
                vals[j] = 0.0
                nonneg_clamped = True
    if not np.all(np.isfinite(vals)) or vals[2] <= vals[0] or vals[1] <= vals[3]:
        raise InvalidPredictionError(
            f"predicted beta at speed {speed} violates ordering invariants",
            raw_values=tuple(float(v) for v in raw))
    beta = BetaVector.from_array(vals)
    return beta, RepairFlags(cur_clamped, nonneg_clamped, model.degree_reduced)


def classify(target_speed: float, remaining_speeds) -> PredictionKind:
    """Interpolation iff the target lies within (inclusive) the remaining span."""
    speeds = np.asarray(list(remaining_speeds), dtype=float)
    if speeds.size == 0:
        raise ValueError("remaining_speeds must be nonempty")
    if speeds.min() <= target_speed <= speeds.max():
        return PredictionKind.INTERPOLATION
    return PredictionKind.EXTRAPOLATION


def _line_seed(base_seed: int, speed: float) -> int:
    # Stable per-line seed, independent of which line was held out.
    h = hash((base_seed, round(float(speed), 9)))
    return h & 0x7FFFFFFF


def fit_map(cpm: CompressorMap, fit_cfg: FitConfig) -> BetaTable:
    """Fit every speedline of the map into a BetaTable (per-line derived seeds)."""
    entries = []
    for line in cpm.speedlines:
        cfg = replace(fit_cfg, seed=_line_seed(fit_cfg.seed, line.speed))
        result = fit_speedline(line, cfg)
        entries.append((line.speed, result.beta, result))
    return BetaTable(tuple(entries))


def holdout_predict(cpm: CompressorMap, target_speed: float,
                    fit_cfg: FitConfig | None = None,
                    pred_cfg: PredictionConfig | None = None) -> PredictionReport:
    """Remove the target line, fit the rest, regress beta and evaluate the prediction.

    Fit failures and invalid predictions are captured in the report as
    failed status; the cross-validation harness keeps going.
    """
    fit_cfg = fit_cfg or FitConfig()
    pred_cfg = pred_cfg or PredictionConfig()
    target = next((sl for sl in cpm.speedlines if sl.speed == target_speed), None)
    if target is None:
        raise ValueError(f"map has no speedline at speed {target_speed}")
    remaining = [sl for sl in cpm.speedlines if sl.speed != target_speed]
    if len(remaining) < 2:
        raise ValueError("hold-out prediction needs >= 2 remaining speedlines")
    kind = classify(target_speed, [sl.speed for sl in remaining])

    underdetermined = 0
    try:
        entries = []
        for line in remaining:
            cfg = replace(fit_cfg, seed=_line_seed(fit_cfg.seed, line.speed))
            result = fit_speedline(line, cfg)
            underdetermined += int(result.underdetermined)
            entries.append((line.speed, result.beta, result))
        table = BetaTable(tuple(entries))
        model = fit_beta_polynomials(table, pred_cfg)
        beta, repair = predict_beta(model, target_speed, pred_cfg)
    except (FitFailureError, InvalidPredictionError, MetricError) as exc:
        return PredictionReport(
            target_speed=target_speed, kind=kind, status="failed",
            predicted_beta=None, metrics={}, repair=RepairFlags(),
            out_of_domain=0, underdetermined_fits=underdetermined,
            failure_reason=str(exc),
            raw_values=getattr(exc, "raw_values", None))

    metrics = {}
    out_of_domain = 0
    for mode in (EvalMode.PRESSURE, EvalMode.MASSFLOW):
        pm = evaluate_prediction(beta, target.points, mode)
        metrics[mode] = pm.summaries
        if mode is pred_cfg.eval_mode:
            out_of_domain = pm.out_of_domain
    return PredictionReport(
        target_speed=target_speed, kind=kind, status="ok",
        predicted_beta=beta, metrics=metrics, repair=repair,
        out_of_domain=out_of_domain, underdetermined_fits=underdetermined)


@dataclass(frozen=True)
class AggregateSummary:
    """Per-kind aggregate of successful reports: mean, SD and median per metric."""

    kind: PredictionKind
    n_total: int
    n_failed: int
    stats: dict  # MetricKind -> {"mean": float, "sd": float, "median": float}


def aggregate_reports(reports, mode: EvalMode = EvalMode.PRESSURE) -> list[AggregateSummary]:
    """Summaries per prediction kind; failed reports are counted, not averaged in."""
    out = []
    for kind in PredictionKind:
        of_kind = [r for r in reports if r.kind is kind]
        if not of_kind:
            continue
        ok = [r for r in of_kind if r.status == "ok"]
        stats = {}
        for metric in MetricKind:
            vals = np.array([r.metrics[mode][metric].mean for r in ok])
            vals = vals[np.isfinite(vals)]
            if vals.size:
                stats[metric] = {
                    "mean": float(np.mean(vals)),
                    "sd": float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0,
                    "median": float(np.median(vals)),
                }
            else:
                stats[metric] = {"mean": math.nan, "sd": math.nan, "median": math.nan}
        out.append(AggregateSummary(kind=kind, n_total=len(of_kind),
                                    n_failed=len(of_kind) - len(ok), stats=stats))
    return out


def loo_crossval(cpm: CompressorMap, fit_cfg: FitConfig | None = None,
                 pred_cfg: PredictionConfig | None = None
                 ) -> tuple[list[PredictionReport], list[AggregateSummary]]:
    """One hold-out prediction per speedline plus per-kind aggregate summaries."""
    if len(cpm.speedlines) < 3:
        raise ValueError("leave-one-out needs >= 3 speedlines")
    fit_cfg = fit_cfg or FitConfig()
    pred_cfg = pred_cfg or PredictionConfig()
    reports = [holdout_predict(cpm, sl.speed, fit_cfg, pred_cfg)
               for sl in cpm.speedlines]
    return reports, aggregate_reports(reports, pred_cfg.eval_mode)
