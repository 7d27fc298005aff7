//! Raster, sample and label data model.

mod collocate;
mod labels;
mod raster;
mod samples;

pub use collocate::collocate_grid;
pub use labels::{rasterize_polygons, LabelClass, LabelPolygon, LabelPolygonSet, LabelRaster};
pub use raster::{load_raster, save_raster, GeoTransform, GridGeometry, RasterScene, DEFAULT_NODATA};
pub use samples::{compute_band_stats, compute_pooled_band_stats, extract_samples, BandStats, SampleSet, STD_EPSILON};
