from typing import List, Optional, Union

from pydantic import BaseModel, Field


class SegmentQueryRequest(BaseModel):
    image_id: str
    query: str


class WireMask(BaseModel):
    rle: str
    width: int = Field(ge=0)
    height: int = Field(ge=0)


class SegmentQueryResponse(BaseModel):
    text: str
    masks: List[WireMask]


class ParseRequest(BaseModel):
    query: str
    response: str


class ParsedItemModel(BaseModel):
    raw_name: str
    resolved_id: Optional[int]
    tag: str
    seg_index: Optional[int]


class ParseReportModel(BaseModel):
    items: List[ParsedItemModel]
    missing: List[int]
    extra: List[str]
    duplicates: List[str]
    order_matches_query: bool
    trailing_garbage: Optional[str]


class PlanRequest(BaseModel):
    ids: List[int] = Field(min_length=1)
    chunk: Union[int, str] = "N"


class PlanResponse(BaseModel):
    chunks: List[List[int]]
    chunk_size_spec: str
