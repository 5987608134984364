//! File formats: numeric CSV, binary PNM images, result documents and
//! distance histograms.

pub mod csv;
pub mod histogram;
pub mod image;
pub mod result;
