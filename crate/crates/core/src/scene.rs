//! Deterministic synthetic urban scenes with per-pixel ground truth.
//!
//! A scene is one background class (the largest mixture target) with
//! primitives of the other classes stamped on top until each class reaches
//! its target fraction: straight strips for roads, rectangles for
//! buildings, wobbly blobs for water, vegetation and bare land. Pixel
//! values are the class signature plus independent Gaussian noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::classes::LandClass;
use crate::error::{Error, Result};
use crate::features::ObjectRecord;
use crate::raster::{BandRole, LabelRaster, MultibandRaster};
use crate::ruleset::{builtin_qinhuai_ruleset, classify};

/// Mean and standard deviation per band, Blue/Green/Red/NIR order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Signature {
    pub mean: [f64; 4],
    pub std: [f64; 4],
}

impl Signature {
    pub const fn new(mean: [f64; 4], std: [f64; 4]) -> Self {
        Signature { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGeometry {
    /// Building rectangle side range in pixels.
    pub building_side: (usize, usize),
    /// Road strip width range in pixels.
    pub road_width: (usize, usize),
    /// Road length range as a fraction of the scene's smaller dimension.
    pub road_length: (f64, f64),
    /// Number of water blobs the water target is split over.
    pub water_blobs: usize,
    /// Vegetation patch radius range in pixels (when vegetation is not the background).
    pub vegetation_radius: (f64, f64),
    /// Bare-land blob radius range in pixels.
    pub bare_radius: (f64, f64),
    /// Minimum gap in pixels kept between primitives that must stay separate.
    pub margin: usize,
}

impl SceneGeometry {
    /// Geometry tuned for 512-pixel scenes, scaled linearly to other sizes.
    pub fn scaled(min_dim: usize) -> Self {
        let s = min_dim as f64 / 512.0;
        let px = |v: f64, lo: f64| (v * s).max(lo).round() as usize;
        SceneGeometry {
            building_side: (px(14.0, 6.0), px(44.0, 10.0)),
            road_width: (px(6.0, 3.0), px(10.0, 4.0)),
            road_length: (0.45, 0.9),
            water_blobs: 3,
            vegetation_radius: ((20.0 * s).max(6.0), (40.0 * s).max(10.0)),
            bare_radius: ((14.0 * s).max(6.0), (26.0 * s).max(8.0)),
            margin: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Target area fraction per class, indexed in `LandClass::ALL` order.
    pub mixture: [f64; 5],
    /// Spectral signature per class, indexed in `LandClass::ALL` order.
    pub signatures: [Signature; 5],
    pub geometry: SceneGeometry,
    /// Multiplier on every signature's standard deviation; 0 gives a noise-free scene.
    pub noise_level: f64,
    pub seed: u64,
}

pub const DEFAULT_SIGNATURES: [Signature; 5] = [
    // Vegetation
    Signature::new([600.0, 900.0, 700.0, 2600.0], [250.0, 250.0, 250.0, 250.0]),
    // Water
    Signature::new([900.0, 1000.0, 700.0, 500.0], [250.0, 250.0, 250.0, 250.0]),
    // Road
    Signature::new([1300.0, 1300.0, 1300.0, 1400.0], [250.0, 250.0, 250.0, 250.0]),
    // Bare Land
    Signature::new([1200.0, 1400.0, 1650.0, 1950.0], [250.0, 250.0, 250.0, 250.0]),
    // Building
    Signature::new([1600.0, 1500.0, 1450.0, 1500.0], [250.0, 250.0, 250.0, 250.0]),
];

pub const DEFAULT_MIXTURE: [f64; 5] = [0.40, 0.08, 0.12, 0.10, 0.30];

impl SceneSpec {
    /// Mixed urban scene with default signatures and geometry.
    pub fn standard(width: usize, height: usize, seed: u64) -> Self {
        SceneSpec {
            width,
            height,
            mixture: DEFAULT_MIXTURE,
            signatures: DEFAULT_SIGNATURES,
            geometry: SceneGeometry::scaled(width.min(height)),
            noise_level: 1.0,
            seed,
        }
    }

    pub fn noise_free(mut self) -> Self {
        self.noise_level = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("scene dimensions must be positive"));
        }
        if self.mixture.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::invalid("mixture fractions must be finite and non-negative"));
        }
        let total: f64 = self.mixture.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("mixture fractions sum to {total}, expected 1")));
        }
        if !(self.noise_level.is_finite() && self.noise_level >= 0.0) {
            return Err(Error::invalid("noise level must be finite and non-negative"));
        }
        for (class, sig) in LandClass::ALL.iter().zip(&self.signatures) {
            if sig.mean.iter().chain(&sig.std).any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::invalid(format!("{class} signature must be finite and non-negative")));
            }
        }
        let g = &self.geometry;
        if g.building_side.0 == 0 || g.building_side.0 > g.building_side.1 {
            return Err(Error::invalid("building side range must be non-empty and positive"));
        }
        if g.road_width.0 == 0 || g.road_width.0 > g.road_width.1 {
            return Err(Error::invalid("road width range must be non-empty and positive"));
        }
        if !(0.0 < g.road_length.0 && g.road_length.0 <= g.road_length.1) {
            return Err(Error::invalid("road length range must be non-empty and positive"));
        }
        for (name, (lo, hi)) in [("vegetation", g.vegetation_radius), ("bare land", g.bare_radius)] {
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::invalid(format!("{name} radius range must be non-empty and positive")));
            }
        }
        let min_dim = self.width.min(self.height);
        if self.target(LandClass::Road) > 0.0 && (g.road_width.1 >= min_dim || g.road_length.0 * min_dim as f64 <= 14.0 * g.road_width.1 as f64) {
            return Err(Error::InfeasibleGeometry(format!(
                "roads of width up to {} px cannot form strips in a {}x{} scene",
                g.road_width.1, self.width, self.height
            )));
        }
        if self.target(LandClass::Building) > 0.0 && g.building_side.1 > min_dim {
            return Err(Error::InfeasibleGeometry(format!(
                "building side {} exceeds scene dimension {min_dim}",
                g.building_side.1
            )));
        }
        self.check_separability()
    }

    fn target(&self, class: LandClass) -> f64 {
        self.mixture[class as usize]
    }

    /// Every class present in the mixture must, at its mean signature and an
    /// idealised shape, be labelled as itself by the built-in rule set.
    pub fn check_separability(&self) -> Result<()> {
        let rules = builtin_qinhuai_ruleset();
        let probes: Vec<(LandClass, ObjectRecord)> = LandClass::ALL
            .iter()
            .filter(|c| self.target(**c) > 0.0)
            .map(|&c| {
                let shape = if c == LandClass::Road {
                    IdealShape::Strip
                } else {
                    IdealShape::Square
                };
                (c, ObjectRecord::ideal(c.id(), self.signatures[c as usize].mean, shape))
            })
            .collect();
        let records: Vec<ObjectRecord> = probes.iter().map(|(_, r)| r.clone()).collect();
        let decisions = classify(&records, &rules);
        for ((class, _), decision) in probes.iter().zip(decisions) {
            if decision.class != class.name() {
                return Err(Error::invalid(format!(
                    "{class} signature is classified as {} by the built-in rules",
                    decision.class
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdealShape {
    /// 20x20 square.
    Square,
    /// 8x200 strip.
    Strip,
}

struct Canvas {
    width: usize,
    height: usize,
    labels: Vec<LandClass>,
    background: LandClass,
}

impl Canvas {
    fn free_for(&self, class: LandClass, footprint: &[usize], margin: usize) -> bool {
        let overlap_ok = |other: LandClass| other == self.background || (other == class && class == LandClass::Building);
        let touch_ok = |other: LandClass| {
            other == self.background || (other == class && matches!(class, LandClass::Building | LandClass::Water | LandClass::Vegetation))
        };
        if footprint.iter().any(|&i| !overlap_ok(self.labels[i])) {
            return false;
        }
        let m = margin as isize;
        for &i in footprint {
            let (r, c) = ((i / self.width) as isize, (i % self.width) as isize);
            for dr in -m..=m {
                for dc in -m..=m {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 0 || cc < 0 || rr >= self.height as isize || cc >= self.width as isize {
                        continue;
                    }
                    if !touch_ok(self.labels[rr as usize * self.width + cc as usize]) {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Pixel indices whose centres fall inside `inside(dx, dy)` relative to a
/// centre point, scanned over a bounding radius.
fn stamp(width: usize, height: usize, cx: f64, cy: f64, radius: f64, inside: impl Fn(f64, f64) -> bool) -> Vec<usize> {
    let r0 = ((cy - radius).floor().max(0.0)) as usize;
    let r1 = ((cy + radius).ceil().min(height as f64 - 1.0)).max(0.0) as usize;
    let c0 = ((cx - radius).floor().max(0.0)) as usize;
    let c1 = ((cx + radius).ceil().min(width as f64 - 1.0)).max(0.0) as usize;
    let mut out = Vec::new();
    for r in r0..=r1 {
        for c in c0..=c1 {
            let (dx, dy) = (c as f64 + 0.5 - cx, r as f64 + 0.5 - cy);
            if inside(dx, dy) {
                out.push(r * width + c);
            }
        }
    }
    out
}

fn rotated_rect(width: usize, height: usize, cx: f64, cy: f64, len: f64, thick: f64, angle: f64) -> Vec<usize> {
    let (s, c) = angle.sin_cos();
    let radius = 0.5 * (len * len + thick * thick).sqrt() + 1.0;
    stamp(width, height, cx, cy, radius, |dx, dy| {
        let along = dx * c + dy * s;
        let across = -dx * s + dy * c;
        along.abs() <= len / 2.0 && across.abs() <= thick / 2.0
    })
}

fn blob(width: usize, height: usize, cx: f64, cy: f64, radius: f64, elong: f64, angle: f64, wobble: [(f64, f64); 3]) -> Vec<usize> {
    let (s, c) = angle.sin_cos();
    let reach = radius * elong * 1.4 + 1.0;
    stamp(width, height, cx, cy, reach, |dx, dy| {
        let u = (dx * c + dy * s) / elong;
        let v = (-dx * s + dy * c) * elong;
        let theta = v.atan2(u);
        let mut rr = radius;
        for (k, (amp, phase)) in wobble.iter().enumerate() {
            rr += radius * amp * ((k as f64 + 2.0) * theta + phase).sin();
        }
        u * u + v * v <= rr * rr
    })
}

fn propose(spec: &SceneSpec, class: LandClass, goal: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let (w, h) = (spec.width, spec.height);
    let g = &spec.geometry;
    let cx = rng.random_range(0.0..w as f64);
    let cy = rng.random_range(0.0..h as f64);
    let mut wobble = [(0.0, 0.0); 3];
    match class {
        LandClass::Road => {
            let min_dim = w.min(h) as f64;
            let len = rng.random_range(g.road_length.0..=g.road_length.1) * min_dim;
            let thick = rng.random_range(g.road_width.0..=g.road_width.1) as f64;
            let base = if rng.random_bool(0.5) { 0.0 } else { PI / 2.0 };
            let tilt = rng.random_range(-0.18..0.18);
            let fp = rotated_rect(w, h, cx, cy, len, thick, base + tilt);
            // Strips clipped by the border must still be long and thin.
            if (fp.len() as f64) < 14.0 * thick * thick {
                return Vec::new();
            }
            fp
        }
        LandClass::Building => {
            let a = rng.random_range(g.building_side.0..=g.building_side.1) as f64;
            let b = rng.random_range(g.building_side.0..=g.building_side.1) as f64;
            let angle = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..PI / 2.0) };
            rotated_rect(w, h, cx, cy, a, b, angle)
        }
        LandClass::Water => {
            let per_blob = goal as f64 / g.water_blobs.max(1) as f64;
            let radius = (per_blob / PI).sqrt() * rng.random_range(0.8..1.2);
            for wb in &mut wobble {
                *wb = (rng.random_range(0.0..0.12), rng.random_range(0.0..2.0 * PI));
            }
            let elong = rng.random_range(1.0..1.5);
            blob(w, h, cx, cy, radius, elong, rng.random_range(0.0..PI), wobble)
        }
        LandClass::Vegetation => {
            let radius = rng.random_range(g.vegetation_radius.0..=g.vegetation_radius.1);
            for wb in &mut wobble {
                *wb = (rng.random_range(0.0..0.12), rng.random_range(0.0..2.0 * PI));
            }
            let elong = rng.random_range(1.0..1.5);
            blob(w, h, cx, cy, radius, elong, rng.random_range(0.0..PI), wobble)
        }
        LandClass::BareLand => {
            let radius = rng.random_range(g.bare_radius.0..=g.bare_radius.1);
            for wb in &mut wobble {
                *wb = (rng.random_range(0.0..0.06), rng.random_range(0.0..2.0 * PI));
            }
            let elong = rng.random_range(1.0..1.12);
            // A blob cut by the border loses its near-circular shape.
            let reach = radius * elong * 1.2 + 1.0;
            if cx < reach || cy < reach || cx + reach > w as f64 || cy + reach > h as f64 {
                return Vec::new();
            }
            blob(w, h, cx, cy, radius, elong, rng.random_range(0.0..PI), wobble)
        }
    }
}

const PAINT_ORDER: [LandClass; 5] = [
    LandClass::Road,
    LandClass::Water,
    LandClass::BareLand,
    LandClass::Vegetation,
    LandClass::Building,
];

const ATTEMPTS_PER_CLASS: usize = 20_000;

fn layout(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<LandClass>> {
    let n = spec.width * spec.height;
    let background = LandClass::ALL
        .into_iter()
        .fold(LandClass::Vegetation, |best, c| if spec.target(c) > spec.target(best) { c } else { best });
    let mut canvas = Canvas {
        width: spec.width,
        height: spec.height,
        labels: vec![background; n],
        background,
    };
    for class in PAINT_ORDER {
        if class == background || spec.target(class) == 0.0 {
            continue;
        }
        let goal = (spec.target(class) * n as f64).round() as usize;
        let mut painted = 0usize;
        let mut attempts = 0;
        while painted < goal && attempts < ATTEMPTS_PER_CLASS {
            attempts += 1;
            let fp = propose(spec, class, goal, rng);
            if fp.is_empty() || !canvas.free_for(class, &fp, spec.geometry.margin) {
                continue;
            }
            for i in fp {
                if canvas.labels[i] != class {
                    canvas.labels[i] = class;
                    painted += 1;
                }
            }
        }
        if (goal as f64 - painted as f64) > 0.05 * n as f64 {
            return Err(Error::InfeasibleGeometry(format!(
                "placed {painted} of {goal} {class} pixels after {attempts} attempts"
            )));
        }
    }
    Ok(canvas.labels)
}

const LAYOUT_TRIES: u64 = 16;

/// Random packing can strand the last class on a crowded small canvas, so a
/// failed layout is redrawn from the next generator stream. Stream 1 belongs
/// to the noise.
fn layout_with_retries(spec: &SceneSpec) -> Result<Vec<LandClass>> {
    let mut last = None;
    for attempt in 0..LAYOUT_TRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        if attempt > 0 {
            rng.set_stream(attempt + 1);
        }
        match layout(spec, &mut rng) {
            Ok(classes) => return Ok(classes),
            Err(e @ Error::InfeasibleGeometry(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one layout attempt"))
}

/// Builds the multiband scene and its ground truth. A pure function of `spec`.
pub fn generate_scene(spec: &SceneSpec) -> Result<(MultibandRaster, LabelRaster)> {
    spec.validate()?;
    let classes = layout_with_retries(spec)?;

    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    noise_rng.set_stream(1);
    let n = classes.len();
    let mut planes = vec![vec![0f32; n]; 4];
    for (i, class) in classes.iter().enumerate() {
        let sig = &spec.signatures[*class as usize];
        for b in 0..4 {
            let z: f64 = StandardNormal.sample(&mut noise_rng);
            let v = sig.mean[b] + spec.noise_level * sig.std[b] * z;
            planes[b][i] = v.clamp(0.0, 10_000.0) as f32;
        }
    }
    let bands = BandRole::SPECTRAL.into_iter().zip(planes).collect();
    let raster = MultibandRaster::new(spec.width, spec.height, bands)?;
    let labels = LabelRaster::new(
        spec.width,
        spec.height,
        classes.iter().map(|c| c.id()).collect(),
        LandClass::legend(),
    )?;
    Ok((raster, labels))
}
