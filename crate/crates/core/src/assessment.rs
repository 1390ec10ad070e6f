//! Accuracy assessment against a reference map.
//!
//! Confusion matrices are oriented with rows = reference and columns =
//! predicted, so producer accuracy is row-wise and user accuracy column-wise.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::{LabelRaster, UNCLASSIFIED};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    /// `counts[reference][predicted]`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(classes: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = classes.len();
        if k == 0 || counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::invalid(format!("confusion matrix must be {k}x{k}")));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.classes.len()).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("reference\\predicted");
        for c in &self.classes {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.counts) {
            out.push_str(c);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Counts reference/predicted pairs over `mask` (pixel indices) or every pixel.
/// Classes are the truth legend in id order; truth-Unclassified pixels are skipped.
pub fn confusion(truth: &LabelRaster, pred: &LabelRaster, mask: Option<&[usize]>) -> Result<ConfusionMatrix> {
    if (truth.width(), truth.height()) != (pred.width(), pred.height()) {
        return Err(Error::DimensionMismatch {
            expected_w: truth.width(),
            expected_h: truth.height(),
            actual_w: pred.width(),
            actual_h: pred.height(),
        });
    }
    let slot: BTreeMap<u32, usize> = truth.legend().keys().enumerate().map(|(i, &id)| (id, i)).collect();
    for (id, name) in pred.legend() {
        if truth.legend().get(id) != Some(name) {
            return Err(Error::ClassMismatch(format!("predicted class {id} `{name}` is not in the reference legend")));
        }
    }
    let k = slot.len();
    let mut counts = vec![vec![0u64; k]; k];
    let mut tally = |p: usize| -> Result<()> {
        let t = truth.labels()[p];
        if t == UNCLASSIFIED {
            return Ok(());
        }
        let q = pred.labels()[p];
        let col = slot
            .get(&q)
            .ok_or_else(|| Error::ClassMismatch(format!("pixel {p} is unclassified in the prediction")))?;
        counts[slot[&t]][*col] += 1;
        Ok(())
    };
    match mask {
        Some(m) => {
            for &p in m {
                if p >= truth.labels().len() {
                    return Err(Error::invalid(format!("mask index {p} is outside the raster")));
                }
                tally(p)?;
            }
        }
        None => (0..truth.labels().len()).try_for_each(&mut tally)?,
    }
    let cm = ConfusionMatrix {
        classes: truth.legend().values().cloned().collect(),
        counts,
    };
    if cm.total() == 0 {
        return Err(Error::EmptySample("no classified reference pixels in the assessed set".into()));
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub classes: Vec<String>,
    pub overall: f64,
    pub kappa: f64,
    pub producer: Vec<f64>,
    pub user: Vec<f64>,
    /// Class has no reference samples; its producer accuracy is reported as 0.
    pub absent_reference: Vec<bool>,
    /// Class was never predicted; its user accuracy is reported as 0.
    pub absent_predicted: Vec<bool>,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::EmptySample("confusion matrix is empty".into()));
    }
    let n = n as f64;
    let rows = cm.row_sums();
    let cols = cm.col_sums();
    let diag: Vec<f64> = (0..cm.classes.len()).map(|i| cm.counts[i][i] as f64).collect();
    let ratio = |d: f64, m: u64| if m == 0 { 0.0 } else { d / m as f64 };

    let p_o = diag.iter().sum::<f64>() / n;
    let p_e = rows.iter().zip(&cols).map(|(&r, &c)| r as f64 * c as f64).sum::<f64>() / (n * n);
    let kappa = if p_e == 1.0 { 1.0 } else { (p_o - p_e) / (1.0 - p_e) };
    Ok(Metrics {
        classes: cm.classes.clone(),
        overall: p_o,
        kappa,
        producer: diag.iter().zip(&rows).map(|(&d, &r)| ratio(d, r)).collect(),
        user: diag.iter().zip(&cols).map(|(&d, &c)| ratio(d, c)).collect(),
        absent_reference: rows.iter().map(|&r| r == 0).collect(),
        absent_predicted: cols.iter().map(|&c| c == 0).collect(),
    })
}

impl Metrics {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,class,value,absent\n");
        for (i, c) in self.classes.iter().enumerate() {
            let _ = writeln!(out, "producer,{c},{},{}", self.producer[i], self.absent_reference[i]);
            let _ = writeln!(out, "user,{c},{},{}", self.user[i], self.absent_predicted[i]);
        }
        let _ = writeln!(out, "overall,,{},false", self.overall);
        let _ = writeln!(out, "kappa,,{},false", self.kappa);
        out
    }

    fn rows(&self) -> Vec<(String, f64, bool)> {
        let mut out = Vec::with_capacity(2 * self.classes.len() + 2);
        for (i, c) in self.classes.iter().enumerate() {
            out.push((format!("{c} producer"), self.producer[i], false));
            out.push((format!("{c} user"), self.user[i], false));
        }
        out.push(("Overall".into(), self.overall, false));
        out.push(("Kappa".into(), self.kappa, true));
        out
    }
}

fn format_value(v: f64, is_kappa: bool) -> String {
    if is_kappa {
        format!("{v:.4}")
    } else {
        format!("{:.2}", 100.0 * v)
    }
}

/// Aligned text table with one column per labelled report: producer and
/// user accuracy per class (percent), then overall accuracy and kappa.
pub fn accuracy_table(reports: &[(&str, &Metrics)]) -> Result<String> {
    let Some((_, first)) = reports.first() else {
        return Err(Error::invalid("no reports to tabulate"));
    };
    for (name, m) in reports {
        if m.classes != first.classes {
            return Err(Error::ClassMismatch(format!("report `{name}` has a different class list")));
        }
    }
    let body: Vec<Vec<(String, f64, bool)>> = reports.iter().map(|(_, m)| m.rows()).collect();
    let label_w = body[0].iter().map(|r| r.0.chars().count()).max().unwrap_or(0).max(6);
    let col_w = reports.iter().map(|(n, _)| n.chars().count()).max().unwrap_or(0).max(8);

    let mut out = format!("{:<label_w$}", "Metric");
    for (name, _) in reports {
        let _ = write!(out, "  {name:>col_w$}");
    }
    out.push('\n');
    for r in 0..body[0].len() {
        let _ = write!(out, "{:<label_w$}", body[0][r].0);
        for col in &body {
            let _ = write!(out, "  {:>col_w$}", format_value(col[r].1, col[r].2));
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    /// `a - b`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub names: [String; 2],
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_reports(a_name: &str, a: &Metrics, b_name: &str, b: &Metrics) -> Result<Comparison> {
    if a.classes != b.classes {
        return Err(Error::ClassMismatch(format!(
            "`{a_name}` classes {:?} differ from `{b_name}` classes {:?}",
            a.classes, b.classes
        )));
    }
    let rows = a
        .rows()
        .into_iter()
        .zip(b.rows())
        .map(|((metric, va, _), (_, vb, _))| ComparisonRow {
            metric,
            a: va,
            b: vb,
            delta: va - vb,
        })
        .collect();
    Ok(Comparison {
        names: [a_name.to_string(), b_name.to_string()],
        rows,
    })
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let label_w = self.rows.iter().map(|r| r.metric.chars().count()).max().unwrap_or(0).max(6);
        let [a, b] = &self.names;
        let col_w = a.chars().count().max(b.chars().count()).max(8);
        let mut out = format!("{:<label_w$}  {a:>col_w$}  {b:>col_w$}  {:>col_w$}\n", "Metric", "Delta");
        for r in &self.rows {
            let kappa = r.metric == "Kappa";
            let delta = if kappa {
                format!("{:+.4}", r.delta)
            } else {
                format!("{:+.2}", 100.0 * r.delta)
            };
            let _ = writeln!(
                out,
                "{:<label_w$}  {:>col_w$}  {:>col_w$}  {delta:>col_w$}",
                r.metric,
                format_value(r.a, kappa),
                format_value(r.b, kappa)
            );
        }
        out
    }
}

/// Equal allocation: up to `per_class` distinct pixels drawn from each
/// reference class (all of them when the class is smaller). Returns sorted
/// pixel indices.
pub fn stratified_mask(truth: &LabelRaster, per_class: usize, seed: u64) -> Vec<usize> {
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (p, &l) in truth.labels().iter().enumerate() {
        if l != UNCLASSIFIED {
            by_class.entry(l).or_default().push(p);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = Vec::new();
    for pixels in by_class.values() {
        let take = per_class.min(pixels.len());
        mask.extend(sample(&mut rng, pixels.len(), take).into_iter().map(|i| pixels[i]));
    }
    mask.sort_unstable();
    mask
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassStat {
    pub class_id: u32,
    pub name: String,
    pub pixels: u64,
    pub perimeter_km: f64,
    pub area_ha: f64,
    pub area_ratio_percent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub pixel_size_m: f64,
    /// One row per legend class, in id order.
    pub rows: Vec<ClassStat>,
}

/// Per-class area, boundary length and share of the classified area.
/// Boundary length counts pixel edges that face another class or the raster border.
pub fn class_stats(labels: &LabelRaster, pixel_size_m: f64) -> Result<ClassStats> {
    if !(pixel_size_m.is_finite() && pixel_size_m > 0.0) {
        return Err(Error::invalid(format!("pixel size must be positive, got {pixel_size_m}")));
    }
    let (w, h) = (labels.width(), labels.height());
    let l = labels.labels();
    let mut pixels: BTreeMap<u32, u64> = BTreeMap::new();
    let mut edges: BTreeMap<u32, u64> = BTreeMap::new();
    for r in 0..h {
        for c in 0..w {
            let v = l[r * w + c];
            *pixels.entry(v).or_default() += 1;
            let differs = |rr: Option<usize>, cc: Option<usize>| match (rr, cc) {
                (Some(rr), Some(cc)) if rr < h && cc < w => l[rr * w + cc] != v,
                _ => true,
            };
            let exposed = [
                differs(r.checked_sub(1), Some(c)),
                differs(Some(r + 1), Some(c)),
                differs(Some(r), c.checked_sub(1)),
                differs(Some(r), Some(c + 1)),
            ]
            .iter()
            .filter(|&&e| e)
            .count() as u64;
            *edges.entry(v).or_default() += exposed;
        }
    }
    let classified: u64 = pixels.iter().filter(|(&id, _)| id != UNCLASSIFIED).map(|(_, &n)| n).sum();
    let rows = labels
        .legend()
        .iter()
        .map(|(&id, name)| {
            let n = pixels.get(&id).copied().unwrap_or(0);
            ClassStat {
                class_id: id,
                name: name.clone(),
                pixels: n,
                perimeter_km: edges.get(&id).copied().unwrap_or(0) as f64 * pixel_size_m / 1000.0,
                area_ha: n as f64 * pixel_size_m * pixel_size_m / 10_000.0,
                area_ratio_percent: if classified == 0 { 0.0 } else { 100.0 * n as f64 / classified as f64 },
            }
        })
        .collect();
    Ok(ClassStats { pixel_size_m, rows })
}

impl ClassStats {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class_id,class,pixels,perimeter_km,area_ha,area_ratio_percent\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.class_id, r.name, r.pixels, r.perimeter_km, r.area_ha, r.area_ratio_percent
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let name_w = self.rows.iter().map(|r| r.name.chars().count()).max().unwrap_or(0).max(5);
        let mut out = format!("{:<name_w$}  {:>14}  {:>10}  {:>14}\n", "Class", "Perimeter (km)", "Area (ha)", "Area ratio (%)");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<name_w$}  {:>14.3}  {:>10.4}  {:>14.2}",
                r.name, r.perimeter_km, r.area_ha, r.area_ratio_percent
            );
        }
        out
    }
}
