//! Multiresolution region-merging segmentation.
//!
//! Every pixel starts as its own segment. Passes sweep the live segments in
//! ascending order of their lowest pixel index; a segment merges with its
//! cheapest 4-neighbour when that neighbour's cheapest neighbour is the
//! segment itself and the merge cost is below `scale²`. A segment takes part
//! in at most one merge per pass. The run stops after a pass without merges,
//! which happens exactly when no admissible merge is left: the globally
//! cheapest edge is always mutually best under the (cost, id) ordering.
//!
//! Merge cost is the weighted increase in heterogeneity,
//! `(1 - w_shape) * dh_color + w_shape * dh_shape`, with
//! `dh_color = sum_b w_b (n_m s_m - n_1 s_1 - n_2 s_2)` over per-band
//! population standard deviations, and `dh_shape` mixing the compactness
//! (`l * sqrt(n)`) and smoothness (`n * l / b`) terms by the compactness
//! weight. `l` counts exposed pixel edges, `b` is the bounding-box perimeter.

mod audit;
mod esp;

pub use audit::{audit_segmentation, AuditReport, Violation};
pub use esp::{esp_scan, EspRow};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BandRole, MultibandRaster};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegParams {
    pub scale: f64,
    pub shape_weight: f64,
    pub compactness_weight: f64,
    /// One weight per raster band, in band order.
    pub band_weights: Vec<f64>,
}

impl SegParams {
    /// Scale 100, shape 0.2, compactness 0.6, unit weight on each of four bands.
    pub fn urban_default() -> Self {
        SegParams {
            scale: 100.0,
            shape_weight: 0.2,
            compactness_weight: 0.6,
            band_weights: vec![1.0; 4],
        }
    }

    pub fn with_scale(&self, scale: f64) -> Self {
        SegParams { scale, ..self.clone() }
    }

    pub fn validate(&self, band_count: usize) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::invalid(format!("scale must be positive, got {}", self.scale)));
        }
        if !(0.0..1.0).contains(&self.shape_weight) {
            return Err(Error::invalid(format!("shape weight must lie in [0, 1), got {}", self.shape_weight)));
        }
        if !(0.0..=1.0).contains(&self.compactness_weight) {
            return Err(Error::invalid(format!(
                "compactness weight must lie in [0, 1], got {}",
                self.compactness_weight
            )));
        }
        if self.band_weights.len() != band_count {
            return Err(Error::invalid(format!(
                "{} band weights given for a {band_count}-band raster",
                self.band_weights.len()
            )));
        }
        if self.band_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("band weights must be finite and non-negative"));
        }
        if !self.band_weights.iter().any(|w| *w > 0.0) {
            return Err(Error::invalid("at least one band weight must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BBox {
    pub min_row: usize,
    pub max_row: usize,
    pub min_col: usize,
    pub max_col: usize,
}

impl BBox {
    fn pixel(row: usize, col: usize) -> Self {
        BBox {
            min_row: row,
            max_row: row,
            min_col: col,
            max_col: col,
        }
    }

    fn union(&self, other: &BBox) -> BBox {
        BBox {
            min_row: self.min_row.min(other.min_row),
            max_row: self.max_row.max(other.max_row),
            min_col: self.min_col.min(other.min_col),
            max_col: self.max_col.max(other.max_col),
        }
    }

    /// Perimeter of the box in pixel edges.
    pub fn perimeter(&self) -> f64 {
        2.0 * ((self.max_row - self.min_row + 1) + (self.max_col - self.min_col + 1)) as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SegmentStats {
    pub count: u64,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
    /// Pixel edges adjacent to another segment or to the raster border.
    pub perimeter: u64,
    pub bbox: BBox,
}

impl SegmentStats {
    pub fn mean(&self, band: usize) -> f64 {
        self.sum[band] / self.count as f64
    }

    /// Population standard deviation of one band.
    pub fn std(&self, band: usize) -> f64 {
        population_std(self.count as f64, self.sum[band], self.sum_sq[band])
    }
}

fn population_std(n: f64, sum: f64, sum_sq: f64) -> f64 {
    let mean = sum / n;
    (sum_sq / n - mean * mean).max(0.0).sqrt()
}

/// One accepted merge. `a` and `b` are provisional ids: one plus the lowest
/// row-major pixel index of each segment at the time of the merge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeRecord {
    pub a: u32,
    pub b: u32,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub width: usize,
    pub height: usize,
    /// Segment id per pixel, dense in `1..=K`, numbered by lowest pixel index.
    pub ids: Vec<u32>,
    /// Stats of segment `id` live at index `id - 1`.
    pub stats: Vec<SegmentStats>,
    pub merge_log: Vec<MergeRecord>,
}

impl Segmentation {
    pub fn segment_count(&self) -> usize {
        self.stats.len()
    }

    pub fn stats_of(&self, id: u32) -> &SegmentStats {
        &self.stats[id as usize - 1]
    }

    /// Segment ids as a single-band raster carrying integral float32 values.
    pub fn id_raster(&self) -> Result<MultibandRaster> {
        let plane = self.ids.iter().map(|&id| id as f32).collect();
        MultibandRaster::new(self.width, self.height, vec![(BandRole::Index, plane)])
    }

    /// Rebuilds a segmentation from a saved id plane (see [`Segmentation::id_raster`]),
    /// recomputing per-segment stats from `raster`. The merge log is empty.
    pub fn from_id_raster(ids: &MultibandRaster, raster: &MultibandRaster) -> Result<Segmentation> {
        let (w, h) = (raster.width(), raster.height());
        if (ids.width(), ids.height()) != (w, h) {
            return Err(Error::DimensionMismatch {
                expected_w: w,
                expected_h: h,
                actual_w: ids.width(),
                actual_h: ids.height(),
            });
        }
        if ids.band_count() != 1 {
            return Err(Error::invalid("segment id raster must have exactly one band"));
        }
        let plane: Vec<u32> = ids.bands()[0]
            .data
            .iter()
            .map(|&v| {
                if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f32 {
                    Ok(v as u32)
                } else {
                    Err(Error::invalid(format!("segment id {v} is not a positive integer")))
                }
            })
            .collect::<Result<_>>()?;
        let k = plane.iter().copied().max().unwrap_or(0) as usize;
        let bands = raster.band_count();
        let mut stats: Vec<Option<SegmentStats>> = vec![None; k];
        for (p, &id) in plane.iter().enumerate() {
            let (r, c) = (p / w, p % w);
            let exposed = [
                r == 0 || plane[p - w] != id,
                r + 1 == h || plane[p + w] != id,
                c == 0 || plane[p - 1] != id,
                c + 1 == w || plane[p + 1] != id,
            ]
            .iter()
            .filter(|&&e| e)
            .count() as u64;
            let st = stats[id as usize - 1].get_or_insert_with(|| SegmentStats {
                count: 0,
                sum: vec![0.0; bands],
                sum_sq: vec![0.0; bands],
                perimeter: 0,
                bbox: BBox::pixel(r, c),
            });
            st.count += 1;
            st.perimeter += exposed;
            st.bbox = st.bbox.union(&BBox::pixel(r, c));
            for (b, band) in raster.bands().iter().enumerate() {
                let v = band.data[p] as f64;
                st.sum[b] += v;
                st.sum_sq[b] += v * v;
            }
        }
        let stats = stats
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| Error::invalid(format!("segment ids are not dense: {} is unused", i + 1))))
            .collect::<Result<_>>()?;
        Ok(Segmentation {
            width: w,
            height: h,
            ids: plane,
            stats,
            merge_log: Vec::new(),
        })
    }

    pub fn merge_log_csv(&self) -> String {
        let mut out = String::from("a,b,cost\n");
        for m in &self.merge_log {
            let _ = writeln!(out, "{},{},{}", m.a, m.b, m.cost);
        }
        out
    }
}

struct Merger<'a> {
    bands: usize,
    width: usize,
    weights: &'a [f64],
    params: &'a SegParams,
    count: Vec<u64>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    perimeter: Vec<u64>,
    bbox: Vec<BBox>,
    /// (neighbour, shared edge count) per segment.
    neighbours: Vec<Vec<(u32, u32)>>,
    parent: Vec<u32>,
    last_pass: Vec<u32>,
}

impl<'a> Merger<'a> {
    fn new(raster: &MultibandRaster, params: &'a SegParams) -> Self {
        let (w, h) = (raster.width(), raster.height());
        let n = w * h;
        let bands = raster.band_count();
        let mut sum = vec![0.0; n * bands];
        let mut sum_sq = vec![0.0; n * bands];
        for (b, band) in raster.bands().iter().enumerate() {
            for (i, &v) in band.data.iter().enumerate() {
                let v = v as f64;
                sum[i * bands + b] = v;
                sum_sq[i * bands + b] = v * v;
            }
        }
        let mut neighbours = Vec::with_capacity(n);
        let mut bbox = Vec::with_capacity(n);
        for r in 0..h {
            for c in 0..w {
                let i = (r * w + c) as u32;
                let mut list = Vec::with_capacity(4);
                if r > 0 {
                    list.push((i - w as u32, 1));
                }
                if c > 0 {
                    list.push((i - 1, 1));
                }
                if c + 1 < w {
                    list.push((i + 1, 1));
                }
                if r + 1 < h {
                    list.push((i + w as u32, 1));
                }
                neighbours.push(list);
                bbox.push(BBox::pixel(r, c));
            }
        }
        Merger {
            bands,
            width: w,
            weights: &params.band_weights,
            params,
            count: vec![1; n],
            sum,
            sum_sq,
            perimeter: vec![4; n],
            bbox,
            neighbours,
            parent: (0..n as u32).collect(),
            last_pass: vec![0; n],
        }
    }

    /// Weighted sum over bands of n * sigma for a (possibly hypothetical) segment.
    fn color_term(&self, n: f64, sum: impl Fn(usize) -> f64, sum_sq: impl Fn(usize) -> f64) -> f64 {
        (0..self.bands)
            .filter(|&b| self.weights[b] > 0.0)
            .map(|b| self.weights[b] * n * population_std(n, sum(b), sum_sq(b)))
            .sum()
    }

    /// Merge cost of segments `lo < hi` sharing `shared` edges. Argument
    /// order is canonical so both endpoints see bit-identical costs.
    fn cost(&self, lo: usize, hi: usize, shared: u32) -> f64 {
        debug_assert!(lo < hi);
        let p = self.params;
        let (n1, n2) = (self.count[lo] as f64, self.count[hi] as f64);
        let nm = n1 + n2;
        let k = self.bands;

        let color = if p.shape_weight < 1.0 {
            let merged = self.color_term(
                nm,
                |b| self.sum[lo * k + b] + self.sum[hi * k + b],
                |b| self.sum_sq[lo * k + b] + self.sum_sq[hi * k + b],
            );
            let first = self.color_term(n1, |b| self.sum[lo * k + b], |b| self.sum_sq[lo * k + b]);
            let second = self.color_term(n2, |b| self.sum[hi * k + b], |b| self.sum_sq[hi * k + b]);
            merged - first - second
        } else {
            0.0
        };

        let shape = if p.shape_weight > 0.0 {
            let (l1, l2) = (self.perimeter[lo] as f64, self.perimeter[hi] as f64);
            let lm = l1 + l2 - 2.0 * shared as f64;
            let (b1, b2) = (self.bbox[lo].perimeter(), self.bbox[hi].perimeter());
            let bm = self.bbox[lo].union(&self.bbox[hi]).perimeter();
            let compact = lm * nm.sqrt() - l1 * n1.sqrt() - l2 * n2.sqrt();
            let smooth = nm * lm / bm - n1 * l1 / b1 - n2 * l2 / b2;
            p.compactness_weight * compact + (1.0 - p.compactness_weight) * smooth
        } else {
            0.0
        };

        (1.0 - p.shape_weight) * color + p.shape_weight * shape
    }

    fn pair_cost(&self, a: usize, b: usize, shared: u32) -> f64 {
        if a < b {
            self.cost(a, b, shared)
        } else {
            self.cost(b, a, shared)
        }
    }

    /// Cheapest neighbour, ties to the lowest id.
    fn best_neighbour(&self, seg: usize) -> Option<(usize, f64, u32)> {
        let mut best: Option<(usize, f64, u32)> = None;
        for &(nb, shared) in &self.neighbours[seg] {
            let nb = nb as usize;
            let f = self.pair_cost(seg, nb, shared);
            let better = match best {
                None => true,
                Some((bid, bf, _)) => f < bf || (f == bf && nb < bid),
            };
            if better {
                best = Some((nb, f, shared));
            }
        }
        best
    }

    /// Folds `victim` into `survivor` (survivor < victim).
    fn merge(&mut self, survivor: usize, victim: usize, shared: u32) {
        let k = self.bands;
        self.count[survivor] += self.count[victim];
        for b in 0..k {
            self.sum[survivor * k + b] += self.sum[victim * k + b];
            self.sum_sq[survivor * k + b] += self.sum_sq[victim * k + b];
        }
        self.perimeter[survivor] = self.perimeter[survivor] + self.perimeter[victim] - 2 * shared as u64;
        self.bbox[survivor] = self.bbox[survivor].union(&self.bbox[victim]);

        let victim_list = std::mem::take(&mut self.neighbours[victim]);
        let (s32, v32) = (survivor as u32, victim as u32);
        self.neighbours[survivor].retain(|&(nb, _)| nb != v32);
        for (nb, sh) in victim_list {
            if nb == s32 {
                continue;
            }
            let list = &mut self.neighbours[nb as usize];
            let pos_v = list.iter().position(|&(x, _)| x == v32).expect("adjacency is symmetric");
            match list.iter().position(|&(x, _)| x == s32) {
                Some(pos_s) => {
                    list[pos_s].1 += sh;
                    list.swap_remove(pos_v);
                }
                None => list[pos_v].0 = s32,
            }
            let own = &mut self.neighbours[survivor];
            match own.iter_mut().find(|(x, _)| *x == nb) {
                Some(entry) => entry.1 += sh,
                None => own.push((nb, sh)),
            }
        }
        self.parent[victim] = s32;
    }

    fn run(&mut self) -> Vec<MergeRecord> {
        let threshold = self.params.scale * self.params.scale;
        let mut live: Vec<usize> = (0..self.count.len()).collect();
        let mut log = Vec::new();
        let mut pass = 0u32;
        loop {
            pass += 1;
            let mut merged = false;
            for idx in 0..live.len() {
                let seg = live[idx];
                if self.parent[seg] as usize != seg || self.last_pass[seg] == pass {
                    continue;
                }
                let Some((nb, f, shared)) = self.best_neighbour(seg) else {
                    continue;
                };
                if self.last_pass[nb] == pass || f >= threshold {
                    continue;
                }
                match self.best_neighbour(nb) {
                    Some((back, _, _)) if back == seg => {}
                    _ => continue,
                }
                let (survivor, victim) = if seg < nb { (seg, nb) } else { (nb, seg) };
                self.merge(survivor, victim, shared);
                self.last_pass[survivor] = pass;
                self.last_pass[victim] = pass;
                log.push(MergeRecord {
                    a: survivor as u32 + 1,
                    b: victim as u32 + 1,
                    cost: f,
                });
                merged = true;
            }
            if !merged {
                break;
            }
            live.retain(|&s| self.parent[s] as usize == s);
        }
        log
    }

    fn root(&mut self, mut i: usize) -> usize {
        let mut r = i;
        while self.parent[r] as usize != r {
            r = self.parent[r] as usize;
        }
        while self.parent[i] as usize != r {
            let next = self.parent[i] as usize;
            self.parent[i] = r as u32;
            i = next;
        }
        r
    }

    fn finish(mut self, height: usize, merge_log: Vec<MergeRecord>) -> Segmentation {
        let n = self.count.len();
        let mut dense = vec![0u32; n];
        let mut stats = Vec::new();
        for seg in 0..n {
            if self.parent[seg] as usize == seg {
                stats.push(SegmentStats {
                    count: self.count[seg],
                    sum: self.sum[seg * self.bands..(seg + 1) * self.bands].to_vec(),
                    sum_sq: self.sum_sq[seg * self.bands..(seg + 1) * self.bands].to_vec(),
                    perimeter: self.perimeter[seg],
                    bbox: self.bbox[seg],
                });
                dense[seg] = stats.len() as u32;
            }
        }
        let ids = (0..n).map(|i| dense[self.root(i)]).collect();
        Segmentation {
            width: self.width,
            height,
            ids,
            stats,
            merge_log,
        }
    }
}

/// Segments `raster` by local mutual best-fit region merging.
pub fn segment(raster: &MultibandRaster, params: &SegParams) -> Result<Segmentation> {
    params.validate(raster.band_count())?;
    let mut merger = Merger::new(raster, params);
    let log = merger.run();
    Ok(merger.finish(raster.height(), log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_band(w: usize, h: usize, f: impl Fn(usize, usize) -> f32) -> MultibandRaster {
        let data = (0..w * h).map(|i| f(i / w, i % w)).collect();
        MultibandRaster::new(w, h, vec![(BandRole::Red, data)]).unwrap()
    }

    fn color_only(scale: f64) -> SegParams {
        SegParams {
            scale,
            shape_weight: 0.0,
            compactness_weight: 0.5,
            band_weights: vec![1.0],
        }
    }

    #[test]
    fn uniform_raster_is_one_segment() {
        let r = single_band(20, 13, |_, _| 700.0);
        let s = segment(&r, &color_only(0.5)).unwrap();
        assert_eq!(s.segment_count(), 1);
        assert!(s.ids.iter().all(|&id| id == 1));
        assert_eq!(s.stats[0].perimeter, 2 * (20 + 13));
    }

    #[test]
    fn tiny_scale_keeps_every_pixel() {
        let r = single_band(9, 7, |_, _| 700.0);
        let mut p = color_only(1e-12);
        p.shape_weight = 0.3;
        let s = segment(&r, &p).unwrap();
        assert_eq!(s.segment_count(), 63);
        assert!(s.merge_log.is_empty());
    }

    /// By hand: merging inside a half costs 0, while any merge spanning the
    /// boundary between a left part of n1 pixels and a right part of n2
    /// pixels costs 1000 * sqrt(n1 * n2), which exceeds 50² = 2500 once both
    /// halves have grown beyond a handful of pixels.
    #[test]
    fn two_tone_raster_splits_in_two() {
        let r = single_band(16, 16, |_, c| if c < 8 { 0.0 } else { 1000.0 });
        let s = segment(&r, &color_only(50.0)).unwrap();
        assert_eq!(s.segment_count(), 2);
        for row in 0..16 {
            for col in 0..16 {
                assert_eq!(s.ids[row * 16 + col], if col < 8 { 1 } else { 2 });
            }
        }
        assert!(audit_segmentation(&r, &s, &color_only(50.0)).passed());
    }

    #[test]
    fn cross_boundary_cost_matches_closed_form() {
        // Two single pixels 0 and 1000: n_m * sigma_m = 2 * 500 = 1000.
        let r = single_band(2, 1, |_, c| c as f32 * 1000.0);
        let p = color_only(1.0);
        let m = Merger::new(&r, &p);
        assert_eq!(m.cost(0, 1, 1), 1000.0);
        // 31.6² = 998.56 rejects the merge, 31.7² = 1004.89 admits it.
        assert_eq!(segment(&r, &color_only(31.6)).unwrap().segment_count(), 2);
        assert_eq!(segment(&r, &color_only(31.7)).unwrap().segment_count(), 1);
    }

    #[test]
    fn id_raster_round_trip() {
        let r = single_band(16, 16, |_, c| if c < 8 { 0.0 } else { 1000.0 });
        let s = segment(&r, &color_only(50.0)).unwrap();
        let mut back = Segmentation::from_id_raster(&s.id_raster().unwrap(), &r).unwrap();
        back.merge_log = s.merge_log.clone();
        assert_eq!(back, s);
    }

    #[test]
    fn invalid_params() {
        let r = single_band(2, 2, |_, _| 1.0);
        assert!(segment(&r, &color_only(0.0)).is_err());
        let mut p = color_only(1.0);
        p.shape_weight = 1.0;
        assert!(segment(&r, &p).is_err());
        let mut p = color_only(1.0);
        p.band_weights = vec![0.0];
        assert!(segment(&r, &p).is_err());
        let mut p = color_only(1.0);
        p.band_weights = vec![1.0, 1.0];
        assert!(segment(&r, &p).is_err());
    }

    #[test]
    fn shape_term_of_adjacent_pixels() {
        // Two uniform pixels side by side: compactness 6*sqrt(2) - 8, smoothness 2*6/6 - 2*(4/4) = 0.
        let r = single_band(2, 1, |_, _| 5.0);
        let p = SegParams {
            scale: 10.0,
            shape_weight: 0.5,
            compactness_weight: 1.0,
            band_weights: vec![1.0],
        };
        let m = Merger::new(&r, &p);
        let expected = 0.5 * (6.0 * 2f64.sqrt() - 8.0);
        assert!((m.cost(0, 1, 1) - expected).abs() < 1e-12);
    }
}
