"""FastAPI service wrapping the lab: walks, analytics, solvers, estimators.

The CLI talks to these endpoints (in-process by default, over the network
with --url); anything the CLI can do, any HTTP client can do directly.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse, Response

from .. import __version__, constants
from ..errors import ResourceLimitError, VacantLabError
from ..estimators import (
    EstimateReport,
    estimate_event,
    merge_reports,
    second_moment_report,
    survival_curve,
)
from ..greenfn import SandwichBounds, expected_exit_time, green_killed, sandwich
from ..lattice import SiteSet, TorusGeometry, linf_ball
from ..vacancy import (
    VacancyView,
    component_size_histogram,
    components,
    segment_components,
)
from ..walk import VisitRecord, WalkConfig, simulate
from . import models

app = FastAPI(title="vacantlab", version=__version__)


@app.exception_handler(VacantLabError)
async def _domain_error(request: Request, exc: VacantLabError) -> JSONResponse:
    status = 413 if isinstance(exc, ResourceLimitError) else 422
    return JSONResponse(status_code=status,
                        content={"error": type(exc).__name__, "detail": str(exc)})


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


def _run_walk(req: models.WalkRequest) -> VisitRecord:
    g = TorusGeometry(req.dim, req.side)
    cfg = WalkConfig(seed=req.seed, horizon=req.horizon, start=req.start)
    return simulate(g, cfg)


@app.post("/simulate")
def simulate_endpoint(req: models.WalkRequest,
                      summary: bool = Query(default=False)):
    """Run one seeded walk; respond with the binary record dump, or a JSON
    summary when ?summary=true."""
    record = _run_walk(req)
    if summary:
        from ..walk import NEVER
        visited = int((record.first_visit != NEVER).sum())
        return models.WalkSummary(
            dim=req.dim, side=req.side, seed=req.seed,
            final_time=record.final_time, start_site=record.start_site,
            end_site=record.end_site, visited_sites=visited,
            vacant_sites=record.geometry.volume - visited,
        )
    return Response(content=record.to_bytes(), media_type="application/octet-stream")


@app.post("/components", response_model=models.ComponentsResponse)
def components_endpoint(req: models.ComponentsRequest) -> models.ComponentsResponse:
    record = _run_walk(req)
    t = record.final_time if req.t is None else req.t
    view = VacancyView(record, t)
    labeling = components(view)
    hist = component_size_histogram(labeling)
    g = record.geometry
    segments = []
    if req.seg_len is not None:
        for rec in segment_components(view, req.seg_len):
            segments.append(models.SegmentRecordModel(
                anchor_index=rec.anchor,
                anchor_coords=[int(c) for c in g.decode(np.int64(rec.anchor))],
                direction=rec.axis,
                length=rec.length,
            ))
    return models.ComponentsResponse(
        t=t,
        vacant_sites=view.vacant_count(),
        component_count=labeling.count,
        largest=hist.largest,
        second_largest=hist.second_largest,
        histogram=hist.counts,
        segment_records=segments,
    )


@app.get("/constants/q/{dim}", response_model=models.ConstantsResponse)
def constants_q(dim: int) -> models.ConstantsResponse:
    pred = constants.dim_threshold_predicate(dim) if dim >= 5 else None
    return models.ConstantsResponse(dim=dim, q=constants.return_prob_q(dim),
                                    d0_predicate=pred)


@app.get("/constants/threshold")
def constants_threshold(search_limit: int = Query(default=400),
                        band: int = Query(default=50)) -> dict:
    value, trace = constants.compute_dim_threshold(search_limit, band)
    return {"threshold": value,
            "trace": {str(d): trace[d] for d in sorted(trace)}}


@app.post("/constants/scales")
def constants_scales(req: models.ScalesRequest) -> dict:
    scales = constants.derive_scales(req.side, req.dim, req.steps_per_site,
                                     req.count_exp, req.budget_coeff)
    return dataclasses.asdict(scales)


@app.post("/greenfn", response_model=models.GreenResponse)
def greenfn_endpoint(req: models.GreenRequest) -> models.GreenResponse:
    g = TorusGeometry(req.dim, req.side)
    if (req.domain_ball is None) == (req.domain_sites is None):
        raise VacantLabError("give exactly one of domain_ball or domain_sites")
    if req.domain_ball is not None:
        domain = linf_ball(g, req.domain_ball.center, req.domain_ball.radius)
    else:
        domain = SiteSet.from_indices(g, req.domain_sites)

    bounds: SandwichBounds | None = None
    if req.target_sites:
        if req.start is None:
            raise VacantLabError("sandwich bounds need a start site")
        target = SiteSet.from_indices(g, req.target_sites)
        bounds = sandwich(g, target, domain, req.start, req.tol)

    kg = green_killed(g, domain, req.tol)
    entries = [models.GreenEntry(x_index=int(x), y_index=int(y),
                                 g_value=float(kg.values[i, j]))
               for i, x in enumerate(kg.domain)
               for j, y in enumerate(kg.domain)]
    exit_time = None
    if req.start is not None and req.start in domain:
        exit_time = expected_exit_time(kg, req.start)
    return models.GreenResponse(
        domain_size=int(kg.domain.size),
        entries=entries,
        bounds=None if bounds is None else models.BoundsModel(
            lower=bounds.lower, exact=bounds.exact, upper=bounds.upper,
            gap=bounds.gap),
        expected_exit_time=exit_time,
    )


@app.post("/estimate")
def estimate_endpoint(req: models.EstimateRequest) -> dict:
    report = estimate_event(req.spec.to_core(), req.event.to_core(),
                            workers=req.workers,
                            replica_offset=req.replica_offset,
                            replica_count=req.replica_count)
    out = report.canonical_dict()
    out["wall_seconds"] = report.wall_seconds
    return out


@app.post("/estimate/merge")
def merge_endpoint(req: models.MergeRequest) -> dict:
    reports = [EstimateReport.from_dict(d) for d in req.reports]
    merged = merge_reports(reports)
    out = merged.canonical_dict()
    out["wall_seconds"] = merged.wall_seconds
    return out


@app.post("/survival")
def survival_endpoint(req: models.SurvivalRequest) -> dict:
    curve = survival_curve(req.spec.to_core(), req.anchor, req.seg_len,
                           req.inner_radius, req.outer_radius, req.budgets,
                           compute_exact=req.compute_exact)
    out = {}
    for budget, rep in curve.items():
        entry = rep.report.canonical_dict()
        entry["wall_seconds"] = rep.report.wall_seconds
        entry["exact"] = rep.exact
        out[str(budget)] = entry
    return out


@app.post("/second_moment")
def second_moment_endpoint(req: models.SecondMomentRequest) -> dict:
    rep = second_moment_report(req.spec.to_core(), req.anchors, req.seg_len,
                               req.inner_radius, req.outer_radius)
    return {
        "anchors": list(rep.anchors),
        "budget": rep.budget,
        "mean": rep.mean,
        "variance": rep.variance,
        "per_anchor_estimates": list(rep.per_anchor_estimates),
        "variance_shape": rep.variance_shape,
        "fitted_constant": rep.fitted_constant,
    }
