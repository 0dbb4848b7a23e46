//! File formats: panel and adjacency CSV, run configuration, atomic artifact
//! writes, the trend chart and GeoJSON merging.

mod config;
mod geojson;
mod panel;
mod svg;
mod write;

pub use config::{
    check_output_dir, DataPaths, EngineConfig, EngineKind, ExportConfig, RunConfig, SimulateConfig, SCHEMA_VERSION,
};
pub use geojson::{merge_regions, MergedRegions};
pub use panel::{adjacency_to_csv, panel_to_csv, parse_panel, read_adjacency};
pub use svg::trend_svg;
pub use write::{to_csv, write_atomic, write_json};
