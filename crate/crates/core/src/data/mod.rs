//! Raw point events, their rasterization onto the study grid, calendar
//! features, the processed dataset format, and chronological splits.

pub mod calendar;
pub mod config;
pub mod dataset;
pub mod events;
pub mod split;

pub use calendar::{calendar_features, us_federal_holidays, HolidayCalendar};
pub use config::{ColumnMap, DataConfig};
pub use dataset::Dataset;
pub use events::{
    aggregate_training_grid, build_labels, parse_events, rasterize, BoundingBox, EventGrid,
    EventRecord, GridSpec, RejectCounts,
};
pub use split::{split_chronological, SplitRanges};
