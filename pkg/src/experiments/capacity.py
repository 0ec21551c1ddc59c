"""Memory capacity probes.

A probe draws m (key, value) pairs, lifts the keys, fits a memory to all
pairs, and reports whether the worst per-pair residual ||M(phi(k_i)) - v_i||
stays within ``tol_fit``. Matrix fits use the pseudoinverse (or plain GD);
deep memories are fitted by full-batch GD with an adaptive step.
"""

from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from ..core.errors import CapacityError
from ..core.logging import get_logger
from ..memory.arch import Arch, MemoryState, grad_l2_batch, init_memory
from ..memory.feature_maps import FeatureMapSpec, apply_batch, lifted_dim, monomial_dim
from ..memory.linalg import Mat, matrix_rank, pinv, svd_oracle
from ..utils.performance_decorators import monitor_performance
from ..workers.pool import parallel_map

logger = get_logger(__name__)

FitMethod = Literal["pseudoinverse", "gd"]


class CapacityProbe(BaseModel):
    """Parameters of one capacity probe."""

    d_k: int = Field(..., ge=1, description="Key dimension")
    d_v: int = Field(..., ge=1, description="Value dimension")
    m: int = Field(..., ge=1, description="Number of pairs")
    feature_map: FeatureMapSpec = Field(default_factory=FeatureMapSpec.identity)
    arch: Arch = Field(default="matrix")
    fit: FitMethod = Field(default="pseudoinverse")
    tol_fit: float = Field(default=1e-6, gt=0.0)
    gd_iters: int = Field(default=200_000, ge=1, description="GD iteration budget")
    gd_step: Optional[float] = Field(default=None, gt=0.0, description="Initial GD step")
    expansion: int = Field(default=4, ge=1, description="Hidden width factor for deep memories")
    unit_keys: bool = Field(default=True, description="Project keys to unit norm")
    max_retries: int = Field(default=20, ge=0)
    seed: int = 0


class CapacityReport(BaseModel):
    """Outcome of one probe."""

    d_k: int
    d_v: int
    m: int
    map: str
    degree: int
    arch: str
    fit: str
    seed: int
    lifted_dim: int
    monomial_dim: int
    rank: int
    fit_residual: float
    fits: bool
    iters: int
    retries: int
    bound: Optional[str] = None


REPORT_COLUMNS: Tuple[str, ...] = tuple(CapacityReport.model_fields)


def _unit_columns(x: Mat) -> Mat:
    norms = np.linalg.norm(x, axis=0)
    norms[norms == 0.0] = 1.0
    return x / norms


def sample_pairs(probe: CapacityProbe) -> Tuple[Mat, Mat, int]:
    """Draw keys (d_k x m) and unit values (d_v x m).

    When m <= d_k the keys are redrawn until linearly independent.
    """
    rng = np.random.default_rng(probe.seed)
    retries = 0
    while True:
        keys = rng.standard_normal((probe.d_k, probe.m))
        if probe.unit_keys:
            keys = _unit_columns(keys)
        if probe.m > probe.d_k or matrix_rank(keys) == probe.m:
            break
        retries += 1
        if retries > probe.max_retries:
            raise CapacityError(f"no independent key draw after {retries} attempts")
    values = _unit_columns(rng.standard_normal((probe.d_v, probe.m)))
    return keys, values, retries


def fit_pseudoinverse(phis: Mat, values: Mat) -> Tuple[Mat, float]:
    """Least-squares matrix M = V Phi^+ and its worst per-pair residual."""
    memory = values @ pinv(phis)
    return memory, float(np.max(np.linalg.norm(memory @ phis - values, axis=0)))


def fit_gd(
    phis: Mat,
    values: Mat,
    iters: int,
    tol: float,
    step: Optional[float] = None,
) -> Tuple[Mat, float, int]:
    """Full-batch GD on 1/2 ||M Phi - V||^2 from M = 0.

    The default step 1/sigma_max(Phi)^2 is the largest stable one. Stops when
    the gradient vanishes (to ``tol * 1e-6``) or the budget runs out.
    """
    _, sigma, _ = svd_oracle(phis)
    if sigma.size == 0 or sigma[0] == 0.0:
        memory = np.zeros((values.shape[0], phis.shape[0]))
        return memory, float(np.max(np.linalg.norm(values, axis=0))), 0
    lr = step if step is not None else 1.0 / sigma[0] ** 2
    memory = np.zeros((values.shape[0], phis.shape[0]))
    it = 0
    for it in range(1, iters + 1):
        grad = (memory @ phis - values) @ phis.T
        memory = memory - lr * grad
        if np.linalg.norm(grad) <= tol * 1e-6:
            break
    return memory, float(np.max(np.linalg.norm(memory @ phis - values, axis=0))), it


def _matrix_report(probe: CapacityProbe, keys: Mat, values: Mat, retries: int,
                   stacked: bool) -> CapacityReport:
    phis = apply_batch(probe.feature_map, keys)
    rank = matrix_rank(phis)
    if probe.fit == "pseudoinverse":
        _, residual = fit_pseudoinverse(phis, values)
        iters = 0
    else:
        _, residual, iters = fit_gd(phis, values, probe.gd_iters, probe.tol_fit, probe.gd_step)
    degree = probe.feature_map.degree
    return CapacityReport(
        d_k=probe.d_k,
        d_v=probe.d_v,
        m=probe.m,
        map=probe.feature_map.kind,
        degree=degree,
        arch=probe.arch,
        fit=probe.fit,
        seed=probe.seed,
        lifted_dim=lifted_dim(probe.feature_map, probe.d_k),
        monomial_dim=monomial_dim(probe.d_k, degree, stacked=stacked),
        rank=rank,
        fit_residual=residual,
        fits=residual <= probe.tol_fit,
        iters=iters,
        retries=retries,
    )


@monitor_performance("capacity.linear", slow_threshold_seconds=5.0)
def probe_linear_capacity(probe: CapacityProbe) -> CapacityReport:
    """Matrix memory on raw keys: fits whenever keys are independent (m <= d_k)."""
    if probe.arch != "matrix" or probe.feature_map.kind != "identity":
        raise ValueError("linear probe needs matrix memory and the identity map")
    keys, values, retries = sample_pairs(probe)
    report = _matrix_report(probe, keys, values, retries, stacked=False)
    logger.debug("Linear probe", m=probe.m, d_k=probe.d_k, fits=report.fits,
                 residual=report.fit_residual)
    return report


@monitor_performance("capacity.poly", slow_threshold_seconds=5.0)
def probe_poly_capacity(probe: CapacityProbe) -> CapacityReport:
    """Matrix memory on polynomially lifted keys."""
    if probe.arch != "matrix" or probe.feature_map.kind not in ("polynomial", "block"):
        raise ValueError("poly probe needs matrix memory and a polynomial or block map")
    keys, values, retries = sample_pairs(probe)
    report = _matrix_report(
        probe, keys, values, retries, stacked=probe.feature_map.kind == "polynomial"
    )
    logger.debug("Poly probe", m=probe.m, d_k=probe.d_k, degree=probe.feature_map.degree,
                 rank=report.rank, fits=report.fits)
    return report


def deep_bound(d_k: int, d_v: int, widths: Sequence[int]) -> str:
    """Order-of-magnitude capacity bounds for a deep memory with layer widths."""
    layers = [d_k, *widths, d_v]
    upper = sum(
        min(layers[j] * layers[j + 1] for j in range(i, len(layers) - 1))
        for i in range(len(layers) - 1)
    )
    return f"lower~{d_k * d_v}; upper~{d_k * d_v * upper}"


def hidden_widths(memory: MemoryState) -> List[int]:
    """Layer widths strictly between input and output, W0 projection included."""
    widths = [memory.out_dim] if memory.projection else []
    for block in memory.blocks():
        widths.extend([block[0].shape[1], memory.out_dim])
    return widths[:-1]


@monitor_performance("capacity.deep", slow_threshold_seconds=30.0)
def probe_deep_capacity(probe: CapacityProbe) -> CapacityReport:
    """Deep memory fitted by full-batch GD with a bold-driver step.

    The step grows by 10% after an accepted (loss-decreasing) move and halves
    after a rejected one.
    """
    if probe.arch == "matrix":
        raise ValueError("deep probe needs a deep architecture")
    keys, values, retries = sample_pairs(probe)
    phis = apply_batch(probe.feature_map, keys)
    d_in = phis.shape[0]
    memory = init_memory(probe.arch, d_in, probe.d_v, seed=probe.seed, expansion=probe.expansion)

    step = probe.gd_step if probe.gd_step is not None else 0.05
    loss, grads, residuals = grad_l2_batch(memory, phis, values)
    it = 0
    for it in range(1, probe.gd_iters + 1):
        if float(np.max(residuals)) <= probe.tol_fit:
            break
        candidate = memory.scaled_add(1.0, -step, grads)
        cand_loss, cand_grads, cand_res = grad_l2_batch(candidate, phis, values)
        if cand_loss < loss:
            memory, loss, grads, residuals = candidate, cand_loss, cand_grads, cand_res
            step *= 1.1
        else:
            step *= 0.5
            if step < 1e-300:
                break

    residual = float(np.max(residuals))
    report = CapacityReport(
        d_k=probe.d_k,
        d_v=probe.d_v,
        m=probe.m,
        map=probe.feature_map.kind,
        degree=probe.feature_map.degree,
        arch=probe.arch,
        fit="gd",
        seed=probe.seed,
        lifted_dim=d_in,
        monomial_dim=monomial_dim(probe.d_k, probe.feature_map.degree),
        rank=matrix_rank(phis),
        fit_residual=residual,
        fits=residual <= probe.tol_fit,
        iters=it,
        retries=retries,
        bound=deep_bound(d_in, probe.d_v, hidden_widths(memory)),
    )
    logger.debug("Deep probe", m=probe.m, arch=probe.arch, fits=report.fits,
                 residual=residual, iters=it)
    return report


def run_probe(probe: CapacityProbe) -> CapacityReport:
    """Route a probe to the linear, polynomial or deep variant."""
    if probe.arch != "matrix":
        return probe_deep_capacity(probe)
    if probe.feature_map.kind == "identity":
        return probe_linear_capacity(probe)
    return probe_poly_capacity(probe)


def sweep_capacity(
    probe: CapacityProbe,
    ms: Sequence[int],
    max_workers: Optional[int] = None,
) -> List[CapacityReport]:
    """Run ``probe`` for each pair count in ``ms`` (same seed), in order."""
    probes = [probe.model_copy(update={"m": m}) for m in ms]
    return parallel_map(run_probe, probes, max_workers=max_workers)


def fit_boundary(reports: Sequence[CapacityReport]) -> int:
    """Largest m such that every probed m' <= m fits (0 if the smallest fails)."""
    boundary = 0
    for report in sorted(reports, key=lambda r: r.m):
        if not report.fits:
            break
        boundary = report.m
    return boundary
