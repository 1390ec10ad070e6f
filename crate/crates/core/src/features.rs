//! Per-object spectral and geometric features.
//!
//! Geometry treats each pixel as a unit square, so second moments of a
//! segment are the discrete coordinate covariance plus 1/12 on each axis.
//! A one-pixel-wide strip therefore has a minor-axis variance of exactly
//! 1/12 and an `n`-pixel strip has length/width `n`.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::MultibandRaster;
use crate::scene::IdealShape;
use crate::segmentation::{BBox, Segmentation};

/// (NIR - Red) / (NIR + Red); 0 when both are 0.
pub fn ndvi(mean_nir: f64, mean_red: f64) -> f64 {
    normalized_difference(mean_nir, mean_red)
}

/// (Green - NIR) / (Green + NIR); 0 when both are 0.
pub fn ndwi(mean_green: f64, mean_nir: f64) -> f64 {
    normalized_difference(mean_green, mean_nir)
}

fn normalized_difference(a: f64, b: f64) -> f64 {
    let s = a + b;
    if s == 0.0 {
        0.0
    } else {
        ((a - b) / s).clamp(-1.0, 1.0)
    }
}

/// Variance of a unit-length pixel about its centre.
pub const PIXEL_VARIANCE: f64 = 1.0 / 12.0;

/// Scalar features a rule or a tree can test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    Area,
    Perimeter,
    MeanBlue,
    MeanGreen,
    MeanRed,
    MeanNir,
    StdBlue,
    StdGreen,
    StdRed,
    StdNir,
    Brightness,
    Ndvi,
    Ndwi,
    LengthWidth,
    ShapeIndex,
    Asymmetry,
}

impl Feature {
    pub const ALL: [Feature; 16] = [
        Feature::Area,
        Feature::Perimeter,
        Feature::MeanBlue,
        Feature::MeanGreen,
        Feature::MeanRed,
        Feature::MeanNir,
        Feature::StdBlue,
        Feature::StdGreen,
        Feature::StdRed,
        Feature::StdNir,
        Feature::Brightness,
        Feature::Ndvi,
        Feature::Ndwi,
        Feature::LengthWidth,
        Feature::ShapeIndex,
        Feature::Asymmetry,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Area => "area",
            Feature::Perimeter => "perimeter",
            Feature::MeanBlue => "mean_blue",
            Feature::MeanGreen => "mean_green",
            Feature::MeanRed => "mean_red",
            Feature::MeanNir => "mean_nir",
            Feature::StdBlue => "std_blue",
            Feature::StdGreen => "std_green",
            Feature::StdRed => "std_red",
            Feature::StdNir => "std_nir",
            Feature::Brightness => "brightness",
            Feature::Ndvi => "ndvi",
            Feature::Ndwi => "ndwi",
            Feature::LengthWidth => "length_width",
            Feature::ShapeIndex => "shape_index",
            Feature::Asymmetry => "asymmetry",
        }
    }

    pub fn names() -> Vec<String> {
        Feature::ALL.iter().map(|f| f.name().to_string()).collect()
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown feature `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRecord {
    pub segment_id: u32,
    pub area_px: u64,
    pub perimeter_px: u64,
    /// Blue, Green, Red, NIR.
    pub mean: [f64; 4],
    pub std: [f64; 4],
    pub brightness: f64,
    pub ndvi: f64,
    pub ndwi: f64,
    pub length_width: f64,
    pub shape_index: f64,
    pub asymmetry: f64,
    pub bbox: BBox,
}

impl ObjectRecord {
    pub fn get(&self, feature: Feature) -> f64 {
        match feature {
            Feature::Area => self.area_px as f64,
            Feature::Perimeter => self.perimeter_px as f64,
            Feature::MeanBlue => self.mean[0],
            Feature::MeanGreen => self.mean[1],
            Feature::MeanRed => self.mean[2],
            Feature::MeanNir => self.mean[3],
            Feature::StdBlue => self.std[0],
            Feature::StdGreen => self.std[1],
            Feature::StdRed => self.std[2],
            Feature::StdNir => self.std[3],
            Feature::Brightness => self.brightness,
            Feature::Ndvi => self.ndvi,
            Feature::Ndwi => self.ndwi,
            Feature::LengthWidth => self.length_width,
            Feature::ShapeIndex => self.shape_index,
            Feature::Asymmetry => self.asymmetry,
        }
    }

    /// All features in `Feature::ALL` order.
    pub fn feature_vector(&self) -> Vec<f64> {
        Feature::ALL.iter().map(|f| self.get(*f)).collect()
    }

    /// A uniform object with a textbook shape, used to probe rule sets.
    pub fn ideal(segment_id: u32, mean: [f64; 4], shape: IdealShape) -> Self {
        let (rows, cols) = match shape {
            IdealShape::Square => (20usize, 20usize),
            IdealShape::Strip => (8, 200),
        };
        let area = (rows * cols) as u64;
        let perimeter = 2 * (rows + cols) as u64;
        let (major, minor) = (cols.max(rows) as f64, cols.min(rows) as f64);
        let geometry = Geometry::from_moments(area, perimeter, major * major / 12.0, minor * minor / 12.0, 0.0);
        ObjectRecord {
            segment_id,
            area_px: area,
            perimeter_px: perimeter,
            mean,
            std: [0.0; 4],
            brightness: mean.iter().sum::<f64>() / 4.0,
            ndvi: ndvi(mean[3], mean[2]),
            ndwi: ndwi(mean[1], mean[3]),
            length_width: geometry.length_width,
            shape_index: geometry.shape_index,
            asymmetry: geometry.asymmetry,
            bbox: BBox {
                min_row: 0,
                max_row: rows - 1,
                min_col: 0,
                max_col: cols - 1,
            },
        }
    }
}

pub(crate) struct Geometry {
    pub length_width: f64,
    pub shape_index: f64,
    pub asymmetry: f64,
}

impl Geometry {
    /// `var_row`/`var_col` already include the pixel-extent term.
    pub(crate) fn from_moments(area: u64, perimeter: u64, var_row: f64, var_col: f64, cov: f64) -> Self {
        let half_trace = 0.5 * (var_row + var_col);
        let disc = (0.25 * (var_row - var_col).powi(2) + cov * cov).sqrt();
        let major = half_trace + disc;
        let minor = (half_trace - disc).max(PIXEL_VARIANCE);
        Geometry {
            length_width: (major / minor).sqrt().max(1.0),
            shape_index: perimeter as f64 / (4.0 * (area as f64).sqrt()),
            asymmetry: if major > 0.0 { (1.0 - (minor / major).sqrt()).max(0.0) } else { 0.0 },
        }
    }
}

/// One record per segment, in segment-id order.
pub fn compute_features(raster: &MultibandRaster, seg: &Segmentation) -> Result<Vec<ObjectRecord>> {
    let (w, h) = (raster.width(), raster.height());
    if seg.width != w || seg.height != h || seg.ids.len() != w * h {
        return Err(Error::DimensionMismatch {
            expected_w: w,
            expected_h: h,
            actual_w: seg.width,
            actual_h: seg.height,
        });
    }
    let bands = raster.spectral_bands()?;
    let k = seg.ids.iter().copied().max().unwrap_or(0) as usize;
    if seg.ids.contains(&0) {
        return Err(Error::invalid("segment id 0 is not allowed"));
    }

    // Bucket pixel indices by segment.
    let mut offsets = vec![0usize; k + 1];
    for &id in &seg.ids {
        offsets[id as usize] += 1;
    }
    for i in 1..=k {
        offsets[i] += offsets[i - 1];
    }
    let mut cursor = offsets.clone();
    let mut members = vec![0u32; w * h];
    for (p, &id) in seg.ids.iter().enumerate() {
        let slot = &mut cursor[id as usize - 1];
        members[*slot] = p as u32;
        *slot += 1;
    }

    let records = (0..k)
        .into_par_iter()
        .map(|s| {
            let pixels = &members[offsets[s]..offsets[s + 1]];
            if pixels.is_empty() {
                return Err(Error::invalid(format!("segment id {} has no pixels", s + 1)));
            }
            Ok(object_record(s as u32 + 1, pixels, &bands, &seg.ids, w, h))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(records)
}

fn object_record(id: u32, pixels: &[u32], bands: &[&[f32]; 4], ids: &[u32], w: usize, h: usize) -> ObjectRecord {
    let n = pixels.len() as f64;
    let mut mean = [0.0; 4];
    let (mut mean_r, mut mean_c) = (0.0, 0.0);
    let mut perimeter = 0u64;
    let mut bbox = BBox {
        min_row: usize::MAX,
        max_row: 0,
        min_col: usize::MAX,
        max_col: 0,
    };
    for &p in pixels {
        let p = p as usize;
        for b in 0..4 {
            mean[b] += bands[b][p] as f64;
        }
        let (r, c) = (p / w, p % w);
        mean_r += r as f64;
        mean_c += c as f64;
        bbox.min_row = bbox.min_row.min(r);
        bbox.max_row = bbox.max_row.max(r);
        bbox.min_col = bbox.min_col.min(c);
        bbox.max_col = bbox.max_col.max(c);
        perimeter += [
            r == 0 || ids[p - w] != id,
            r + 1 == h || ids[p + w] != id,
            c == 0 || ids[p - 1] != id,
            c + 1 == w || ids[p + 1] != id,
        ]
        .iter()
        .filter(|e| **e)
        .count() as u64;
    }
    for m in &mut mean {
        *m /= n;
    }
    mean_r /= n;
    mean_c /= n;

    let mut var = [0.0; 4];
    let (mut var_r, mut var_c, mut cov) = (0.0, 0.0, 0.0);
    for &p in pixels {
        let p = p as usize;
        for b in 0..4 {
            let d = bands[b][p] as f64 - mean[b];
            var[b] += d * d;
        }
        let dr = (p / w) as f64 - mean_r;
        let dc = (p % w) as f64 - mean_c;
        var_r += dr * dr;
        var_c += dc * dc;
        cov += dr * dc;
    }
    let std = var.map(|v| (v / n).sqrt());
    let area = pixels.len() as u64;
    let geometry = Geometry::from_moments(area, perimeter, var_r / n + PIXEL_VARIANCE, var_c / n + PIXEL_VARIANCE, cov / n);
    ObjectRecord {
        segment_id: id,
        area_px: area,
        perimeter_px: perimeter,
        mean,
        std,
        brightness: mean.iter().sum::<f64>() / 4.0,
        ndvi: ndvi(mean[3], mean[2]),
        ndwi: ndwi(mean[1], mean[3]),
        length_width: geometry.length_width,
        shape_index: geometry.shape_index,
        asymmetry: geometry.asymmetry,
        bbox,
    }
}

pub fn features_csv(records: &[ObjectRecord]) -> String {
    let mut out = String::from(
        "segment_id,area_px,perimeter_px,mean_blue,mean_green,mean_red,mean_nir,std_blue,std_green,std_red,std_nir,\
         brightness,ndvi,ndwi,length_width,shape_index,asymmetry,min_row,max_row,min_col,max_col\n",
    );
    for r in records {
        let _ = write!(out, "{},{},{}", r.segment_id, r.area_px, r.perimeter_px);
        for v in r.mean.iter().chain(&r.std) {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(
            out,
            ",{},{},{},{},{},{},{},{},{},{}",
            r.brightness,
            r.ndvi,
            r.ndwi,
            r.length_width,
            r.shape_index,
            r.asymmetry,
            r.bbox.min_row,
            r.bbox.max_row,
            r.bbox.min_col,
            r.bbox.max_col
        );
    }
    out
}
