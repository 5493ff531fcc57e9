"""Event families over a prediction grid."""

from .family import (
    BestResponse,
    Bucket,
    BucketScheme,
    Event,
    EventFamily,
    Interval,
    Polygon,
    best_response_events,
    intervals_1d,
    logistic_bucket_events,
    make_family,
)
from .io import read_membership, write_membership
from .polygons import (
    convex_polygon_events_2d,
    count_convex_closed_sets,
    is_convex_closed,
    oracle_convex_closed_sets,
    polygon_subset_oracle,
    stream_convex_closed_masks,
)

__all__ = [
    "BestResponse",
    "Bucket",
    "BucketScheme",
    "Event",
    "EventFamily",
    "Interval",
    "Polygon",
    "best_response_events",
    "convex_polygon_events_2d",
    "count_convex_closed_sets",
    "intervals_1d",
    "is_convex_closed",
    "logistic_bucket_events",
    "make_family",
    "oracle_convex_closed_sets",
    "polygon_subset_oracle",
    "read_membership",
    "stream_convex_closed_masks",
    "write_membership",
]
