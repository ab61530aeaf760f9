"""Pydantic request/response models for the lab service."""

from __future__ import annotations

from pydantic import BaseModel, Field

from ..estimators import EventSpec, ExperimentSpec


class SpecModel(BaseModel):
    dim: int
    side: int
    steps_per_site: float
    seg_len: int
    giant_len: int
    reach_exp: float
    count_exp: float = 0.5
    budget_coeff: float = 1.0
    replications: int = 100
    master_seed: int = 0
    start: int | None = None

    def to_core(self) -> ExperimentSpec:
        return ExperimentSpec(**self.model_dump())


class EventModel(BaseModel):
    kind: str
    k: int | None = None
    t: int | None = None
    gap: int | None = None
    seg_len: int | None = None
    reach_exp: float | None = None
    window_len: int | None = None
    horizon: int | None = None
    anchors: list[int] | None = None

    def to_core(self) -> EventSpec:
        d = self.model_dump()
        if d["anchors"] is not None:
            d["anchors"] = tuple(d["anchors"])
        return EventSpec(**d)


class WalkRequest(BaseModel):
    dim: int
    side: int
    seed: int = 0
    horizon: int = 0
    start: int | None = None


class WalkSummary(BaseModel):
    dim: int
    side: int
    seed: int
    final_time: int
    start_site: int
    end_site: int
    visited_sites: int
    vacant_sites: int


class ComponentsRequest(WalkRequest):
    t: int | None = None          # query time; defaults to the horizon
    seg_len: int | None = None    # also report isolated segments of this length


class SegmentRecordModel(BaseModel):
    anchor_index: int
    anchor_coords: list[int]
    direction: int
    length: int


class ComponentsResponse(BaseModel):
    t: int
    vacant_sites: int
    component_count: int
    largest: int
    second_largest: int
    histogram: dict[int, int]
    segment_records: list[SegmentRecordModel] = Field(default_factory=list)


class ScalesRequest(BaseModel):
    side: int
    dim: int
    steps_per_site: float
    count_exp: float
    budget_coeff: float = 1.0


class ConstantsResponse(BaseModel):
    dim: int
    q: float
    d0_predicate: float | None    # defined for dim >= 5 only


class EstimateRequest(BaseModel):
    spec: SpecModel
    event: EventModel
    workers: int = 1
    replica_offset: int = 0
    replica_count: int | None = None


class MergeRequest(BaseModel):
    reports: list[dict]


class BallDomain(BaseModel):
    center: int
    radius: int


class GreenRequest(BaseModel):
    dim: int
    side: int
    domain_ball: BallDomain | None = None
    domain_sites: list[int] | None = None
    target_sites: list[int] | None = None   # with start -> sandwich bounds
    start: int | None = None
    tol: float = 1e-10


class GreenEntry(BaseModel):
    x_index: int
    y_index: int
    g_value: float


class BoundsModel(BaseModel):
    lower: float
    exact: float
    upper: float
    gap: float


class GreenResponse(BaseModel):
    domain_size: int
    entries: list[GreenEntry] = Field(default_factory=list)
    bounds: BoundsModel | None = None
    expected_exit_time: float | None = None


class SurvivalRequest(BaseModel):
    spec: SpecModel
    anchor: int
    seg_len: int
    inner_radius: int
    outer_radius: int
    budgets: list[int]
    compute_exact: bool = True


class SecondMomentRequest(BaseModel):
    spec: SpecModel
    anchors: list[int]
    seg_len: int
    inner_radius: int
    outer_radius: int
