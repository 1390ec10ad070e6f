use std::collections::VecDeque;
use std::fmt;

use super::{BBox, SegParams, Segmentation};
use crate::raster::MultibandRaster;

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Partition(String),
    Disconnected { segment: u32 },
    Stats { segment: u32, field: String, stored: f64, recomputed: f64 },
    MergeCost { entry: usize, cost: f64, bound: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Partition(msg) => write!(f, "partition: {msg}"),
            Violation::Disconnected { segment } => write!(f, "segment {segment} is not 4-connected"),
            Violation::Stats {
                segment,
                field,
                stored,
                recomputed,
            } => write!(f, "segment {segment}: {field} stored {stored} but recomputed {recomputed}"),
            Violation::MergeCost { entry, cost, bound } => {
                write!(f, "merge log entry {entry} has cost {cost} >= {bound}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub segments: usize,
    pub violation: Option<Violation>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }
}

const STATS_TOLERANCE: f64 = 1e-6;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= STATS_TOLERANCE * a.abs().max(b.abs()).max(1e-300)
}

/// Re-derives everything a segmentation claims from the raster itself.
/// Checks run in order: partition, 4-connectivity, per-segment stats, merge
/// cost bound; the first failure is reported.
pub fn audit_segmentation(raster: &MultibandRaster, seg: &Segmentation, params: &SegParams) -> AuditReport {
    let report = |violation| AuditReport {
        segments: seg.stats.len(),
        violation,
    };
    let (w, h) = (raster.width(), raster.height());
    if seg.width != w || seg.height != h || seg.ids.len() != w * h {
        return report(Some(Violation::Partition(format!(
            "segmentation is {}x{} with {} ids, raster is {w}x{h}",
            seg.width,
            seg.height,
            seg.ids.len()
        ))));
    }
    let k = seg.stats.len();
    let mut seen = vec![false; k];
    for (i, &id) in seg.ids.iter().enumerate() {
        if id == 0 || id as usize > k {
            return report(Some(Violation::Partition(format!("pixel {i} has id {id} outside 1..={k}"))));
        }
        seen[id as usize - 1] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return report(Some(Violation::Partition(format!("id {} is unused", missing + 1))));
    }

    // Connectivity: flood each segment from its first pixel.
    let mut visited = vec![false; w * h];
    let mut member_counts = vec![0usize; k];
    for &id in &seg.ids {
        member_counts[id as usize - 1] += 1;
    }
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if visited[start] {
            continue;
        }
        let id = seg.ids[start];
        visited[start] = true;
        queue.push_back(start);
        let mut reached = 0;
        while let Some(p) = queue.pop_front() {
            reached += 1;
            let (r, c) = (p / w, p % w);
            let mut visit = |q: usize| {
                if !visited[q] && seg.ids[q] == id {
                    visited[q] = true;
                    queue.push_back(q);
                }
            };
            if r > 0 {
                visit(p - w);
            }
            if r + 1 < h {
                visit(p + w);
            }
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < w {
                visit(p + 1);
            }
        }
        if reached != member_counts[id as usize - 1] {
            return report(Some(Violation::Disconnected { segment: id }));
        }
    }

    // Stats from scratch.
    let bands = raster.band_count();
    let mut count = vec![0u64; k];
    let mut sum = vec![0.0f64; k * bands];
    let mut sum_sq = vec![0.0f64; k * bands];
    let mut perimeter = vec![0u64; k];
    let mut bbox: Vec<Option<BBox>> = vec![None; k];
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            let s = seg.ids[p] as usize - 1;
            count[s] += 1;
            for (b, band) in raster.bands().iter().enumerate() {
                let v = band.data[p] as f64;
                sum[s * bands + b] += v;
                sum_sq[s * bands + b] += v * v;
            }
            let exposed = [
                r == 0 || seg.ids[p - w] != seg.ids[p],
                r + 1 == h || seg.ids[p + w] != seg.ids[p],
                c == 0 || seg.ids[p - 1] != seg.ids[p],
                c + 1 == w || seg.ids[p + 1] != seg.ids[p],
            ];
            perimeter[s] += exposed.iter().filter(|e| **e).count() as u64;
            let b = bbox[s].get_or_insert(BBox {
                min_row: r,
                max_row: r,
                min_col: c,
                max_col: c,
            });
            b.min_row = b.min_row.min(r);
            b.max_row = b.max_row.max(r);
            b.min_col = b.min_col.min(c);
            b.max_col = b.max_col.max(c);
        }
    }
    for (s, stats) in seg.stats.iter().enumerate() {
        let id = s as u32 + 1;
        let fail = |field: String, stored: f64, recomputed: f64| {
            report(Some(Violation::Stats {
                segment: id,
                field,
                stored,
                recomputed,
            }))
        };
        if stats.count != count[s] {
            return fail("count".into(), stats.count as f64, count[s] as f64);
        }
        if stats.perimeter != perimeter[s] {
            return fail("perimeter".into(), stats.perimeter as f64, perimeter[s] as f64);
        }
        if Some(stats.bbox) != bbox[s] {
            return fail("bbox".into(), stats.bbox.perimeter(), bbox[s].map_or(0.0, |b| b.perimeter()));
        }
        if stats.sum.len() != bands || stats.sum_sq.len() != bands {
            return fail("band count".into(), stats.sum.len() as f64, bands as f64);
        }
        for b in 0..bands {
            if !close(stats.sum[b], sum[s * bands + b]) {
                return fail(format!("sum[{b}]"), stats.sum[b], sum[s * bands + b]);
            }
            if !close(stats.sum_sq[b], sum_sq[s * bands + b]) {
                return fail(format!("sum_sq[{b}]"), stats.sum_sq[b], sum_sq[s * bands + b]);
            }
        }
    }

    let bound = params.scale * params.scale;
    if let Some((entry, m)) = seg.merge_log.iter().enumerate().find(|(_, m)| !(m.cost < bound)) {
        return report(Some(Violation::MergeCost {
            entry,
            cost: m.cost,
            bound,
        }));
    }
    report(None)
}
