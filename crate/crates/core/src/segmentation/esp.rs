use rayon::prelude::*;

use super::{segment, SegParams, Segmentation};
use crate::error::{Error, Result};
use crate::raster::MultibandRaster;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EspRow {
    pub scale: f64,
    pub segments: usize,
    /// Mean over segments of the band-weight-averaged standard deviation.
    pub local_variance: f64,
    /// Percent change of `local_variance` against the previous scale; 0 for the first.
    pub rate_of_change: f64,
}

pub(crate) fn local_variance(seg: &Segmentation, weights: &[f64]) -> f64 {
    let total_w: f64 = weights.iter().sum();
    let per_segment: f64 = seg
        .stats
        .iter()
        .map(|s| weights.iter().enumerate().map(|(b, w)| w * s.std(b)).sum::<f64>() / total_w)
        .sum();
    per_segment / seg.stats.len() as f64
}

/// Segments at each scale and tracks how local variance responds.
/// `template.scale` is ignored.
pub fn esp_scan(raster: &MultibandRaster, scales: &[f64], template: &SegParams) -> Result<Vec<EspRow>> {
    if scales.len() < 2 {
        return Err(Error::invalid("scale scan needs at least two scales"));
    }
    if scales.windows(2).any(|p| p[1] < p[0]) {
        return Err(Error::invalid("scales must be ascending"));
    }
    let results: Vec<(f64, usize, f64)> = scales
        .par_iter()
        .map(|&scale| {
            let params = template.with_scale(scale);
            let seg = segment(raster, &params)?;
            Ok((scale, seg.segment_count(), local_variance(&seg, &params.band_weights)))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(results.len());
    let mut previous: Option<f64> = None;
    for (scale, segments, lv) in results {
        let rate_of_change = match previous {
            Some(prev) if prev != 0.0 => 100.0 * (lv - prev) / prev,
            _ => 0.0,
        };
        rows.push(EspRow {
            scale,
            segments,
            local_variance: lv,
            rate_of_change,
        });
        previous = Some(lv);
    }
    Ok(rows)
}
