//! End-to-end comparison run on a synthetic scene: object-based rules, an
//! object-level CART tree and a pixel-level MLP, each assessed against the
//! scene's ground truth, plus the files that make up a report bundle.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assessment::{
    accuracy_table, class_stats, compare_reports, confusion, metrics, stratified_mask, ConfusionMatrix, Metrics,
};
use crate::classes::LandClass;
use crate::classifiers::{cart_predict, cart_train, mlp_predict, mlp_train, CartTree, Mlp, MlpConfig, SampleSet};
use crate::error::{Error, Result};
use crate::features::{compute_features, features_csv, Feature, ObjectRecord};
use crate::raster::{write_labels, write_raster, LabelRaster, MultibandRaster};
use crate::render::render_class_map;
use crate::ruleset::{builtin_qinhuai_ruleset, classify, rasterize_labels, serialize_ruleset, trace_csv, Decision};
use crate::scene::{generate_scene, SceneSpec};
use crate::segmentation::{segment, SegParams, Segmentation};

/// Everything a run depends on. Serialised as the bundle's `manifest.txt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperConfig {
    /// Seeds the assessment, pixel and object sample draws.
    pub seed: u64,
    pub assess_per_class: usize,
    pub mlp_pixels_per_class: usize,
    pub cart_objects_per_class: usize,
    pub cart_max_depth: usize,
    pub cart_min_leaf: usize,
    pub mlp: MlpConfig,
    pub segmentation: SegParams,
    pub scene: SceneSpec,
}

const ASSESS_STREAM: u64 = 1;
const PIXEL_STREAM: u64 = 2;
const OBJECT_STREAM: u64 = 3;

fn sub_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl PaperConfig {
    /// The standard 512x512 noisy scene with the urban segmentation defaults.
    pub fn standard(seed: u64) -> Self {
        PaperConfig::for_scene(SceneSpec::standard(512, 512, seed), seed)
    }

    pub fn for_scene(scene: SceneSpec, seed: u64) -> Self {
        PaperConfig {
            seed,
            assess_per_class: 200,
            mlp_pixels_per_class: 300,
            cart_objects_per_class: 40,
            cart_max_depth: 8,
            cart_min_leaf: 1,
            mlp: MlpConfig {
                seed,
                ..MlpConfig::default()
            },
            segmentation: SegParams::urban_default(),
            scene,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Syntax {
            line: 0,
            column: 0,
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assessed {
    pub map: LabelRaster,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

fn assess(truth: &LabelRaster, map: LabelRaster, mask: &[usize]) -> Result<Assessed> {
    let confusion = confusion(truth, &map, Some(mask))?;
    let metrics = metrics(&confusion)?;
    Ok(Assessed { map, confusion, metrics })
}

#[derive(Debug, Clone)]
pub struct PaperRun {
    pub config: PaperConfig,
    pub raster: MultibandRaster,
    pub truth: LabelRaster,
    pub segmentation: Segmentation,
    pub objects: Vec<ObjectRecord>,
    pub decisions: Vec<Decision>,
    pub assess_mask: Vec<usize>,
    pub cart: CartTree,
    pub mlp: Mlp,
    pub rules_result: Assessed,
    pub cart_result: Assessed,
    pub mlp_result: Assessed,
}

/// Majority ground-truth class per segment, ties to the lowest class id.
pub fn majority_labels(seg: &Segmentation, truth: &LabelRaster) -> Vec<u32> {
    let mut votes: Vec<BTreeMap<u32, u64>> = vec![BTreeMap::new(); seg.segment_count()];
    for (&id, &t) in seg.ids.iter().zip(truth.labels()) {
        *votes[id as usize - 1].entry(t).or_default() += 1;
    }
    votes
        .iter()
        .map(|v| v.iter().fold((0, 0), |best, (&l, &n)| if n > best.1 { (l, n) } else { best }).0)
        .collect()
}

fn class_id(name: &str) -> Result<u32> {
    LandClass::from_name(name)
        .map(LandClass::id)
        .ok_or_else(|| Error::ClassMismatch(format!("`{name}` is not a land-cover class")))
}

/// Stratified pixel spectra labelled by ground truth.
pub fn pixel_samples(raster: &MultibandRaster, truth: &LabelRaster, per_class: usize, seed: u64) -> Result<SampleSet> {
    let bands = raster.spectral_bands()?;
    let mut set = SampleSet::new(["mean_blue", "mean_green", "mean_red", "mean_nir"].map(String::from).to_vec());
    for p in stratified_mask(truth, per_class, seed) {
        let x = (0..4).map(|b| bands[b][p] as f64).collect();
        set.push(x, &truth.legend()[&truth.labels()[p]])?;
    }
    Ok(set)
}

/// Stratified objects labelled by their majority ground-truth class.
pub fn object_samples(
    objects: &[ObjectRecord],
    majority: &[u32],
    legend: &BTreeMap<u32, String>,
    per_class: usize,
    seed: u64,
) -> Result<SampleSet> {
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in majority.iter().enumerate() {
        if legend.contains_key(&l) {
            by_class.entry(l).or_default().push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = SampleSet::new(Feature::names());
    for (class, members) in &by_class {
        let mut picked: Vec<usize> = sample(&mut rng, members.len(), per_class.min(members.len()))
            .into_iter()
            .map(|i| members[i])
            .collect();
        picked.sort_unstable();
        for i in picked {
            set.push(objects[i].feature_vector(), &legend[class])?;
        }
    }
    Ok(set)
}

/// Runs the rule, CART and MLP classifications. The MLP branch runs on its
/// own thread alongside segmentation; results do not depend on scheduling.
pub fn run_paper(config: &PaperConfig) -> Result<PaperRun> {
    let (raster, truth) = generate_scene(&config.scene)?;
    let legend = truth.legend().clone();
    let assess_mask = stratified_mask(&truth, config.assess_per_class, sub_seed(config.seed, ASSESS_STREAM));

    let (object_side, mlp_side) = thread::scope(|s| {
        let mlp_branch = s.spawn(|| -> Result<(Mlp, LabelRaster)> {
            let samples = pixel_samples(
                &raster,
                &truth,
                config.mlp_pixels_per_class,
                sub_seed(config.seed, PIXEL_STREAM),
            )?;
            let model = mlp_train(&samples, &config.mlp)?;
            let map = mlp_predict(&model, &raster, &legend)?;
            Ok((model, map))
        });
        let object_branch = || -> Result<_> {
            let seg = segment(&raster, &config.segmentation)?;
            let objects = compute_features(&raster, &seg)?;

            let rules = builtin_qinhuai_ruleset();
            let decisions = classify(&objects, &rules);
            let rule_labels = decisions
                .iter()
                .map(|d| Ok((d.segment_id, class_id(&d.class)?)))
                .collect::<Result<BTreeMap<_, _>>>()?;
            let rules_map = rasterize_labels(&seg, &rule_labels, &legend)?;

            let majority = majority_labels(&seg, &truth);
            let samples = object_samples(
                &objects,
                &majority,
                &legend,
                config.cart_objects_per_class,
                sub_seed(config.seed, OBJECT_STREAM),
            )?;
            let tree = cart_train(&samples, config.cart_max_depth, config.cart_min_leaf)?;
            let cart_labels = objects
                .iter()
                .map(|o| Ok((o.segment_id, class_id(cart_predict(&tree, &o.feature_vector())?)?)))
                .collect::<Result<BTreeMap<_, _>>>()?;
            let cart_map = rasterize_labels(&seg, &cart_labels, &legend)?;
            Ok((seg, objects, decisions, rules_map, tree, cart_map))
        };
        let object_side = object_branch();
        let mlp_side = mlp_branch.join().expect("MLP branch panicked");
        (object_side, mlp_side)
    });
    let (segmentation, objects, decisions, rules_map, cart, cart_map) = object_side?;
    let (mlp, mlp_map) = mlp_side?;

    Ok(PaperRun {
        config: config.clone(),
        rules_result: assess(&truth, rules_map, &assess_mask)?,
        cart_result: assess(&truth, cart_map, &assess_mask)?,
        mlp_result: assess(&truth, mlp_map, &assess_mask)?,
        raster,
        truth,
        segmentation,
        objects,
        decisions,
        assess_mask,
        cart,
        mlp,
    })
}

pub const RULES_LABEL: &str = "Object rules";
pub const CART_LABEL: &str = "Object CART";
pub const MLP_LABEL: &str = "Pixel MLP";

impl PaperRun {
    /// Accuracy table for all three classifications followed by the
    /// rule-versus-MLP deltas.
    pub fn table3(&self) -> Result<String> {
        let mut out = accuracy_table(&[
            (RULES_LABEL, &self.rules_result.metrics),
            (CART_LABEL, &self.cart_result.metrics),
            (MLP_LABEL, &self.mlp_result.metrics),
        ])?;
        out.push('\n');
        out.push_str(
            &compare_reports(RULES_LABEL, &self.rules_result.metrics, MLP_LABEL, &self.mlp_result.metrics)?.to_text(),
        );
        out.push_str(&format!(
            "\nAssessed pixels: {}\nIsolated pixels: {} {}, {} {}, {} {}\n",
            self.assess_mask.len(),
            RULES_LABEL,
            self.rules_result.map.isolated_pixel_count(),
            CART_LABEL,
            self.cart_result.map.isolated_pixel_count(),
            MLP_LABEL,
            self.mlp_result.map.isolated_pixel_count()
        ));
        Ok(out)
    }

    /// Class statistics of the ground truth and of the rule-based map.
    pub fn table2(&self) -> Result<String> {
        let px = self.raster.pixel_size_m();
        Ok(format!(
            "Ground truth\n{}\n{RULES_LABEL}\n{}",
            class_stats(&self.truth, px)?.to_text(),
            class_stats(&self.rules_result.map, px)?.to_text()
        ))
    }

    /// Writes the report bundle into `dir` (created if needed) and returns
    /// the written paths in write order.
    pub fn write_bundle(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let mut text = |name: &str, body: &str| -> Result<()> {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            written.push(path);
            Ok(())
        };
        text("manifest.txt", &self.config.to_toml()?)?;
        text("ruleset.toml", &serialize_ruleset(&builtin_qinhuai_ruleset())?)?;
        text("objects.csv", &features_csv(&self.objects))?;
        text("rule_trace.csv", &trace_csv(&self.decisions))?;
        text("cart.toml", &self.cart.to_toml()?)?;
        text("mlp.toml", &self.mlp.to_toml()?)?;
        text("mlp_curve.csv", &self.mlp.training_curve_csv())?;
        let px = self.raster.pixel_size_m();
        text("class_stats_truth.csv", &class_stats(&self.truth, px)?.to_csv())?;
        for (stem, r) in [("rules", &self.rules_result), ("cart", &self.cart_result), ("mlp", &self.mlp_result)] {
            text(&format!("confusion_{stem}.csv"), &r.confusion.to_csv())?;
            text(&format!("metrics_{stem}.csv"), &r.metrics.to_csv())?;
            text(&format!("class_stats_{stem}.csv"), &class_stats(&r.map, px)?.to_csv())?;
        }
        text("table2.txt", &self.table2()?)?;
        text("table3.txt", &self.table3()?)?;

        let palette = LandClass::palette();
        let mut binary = |name: &str, bytes: Vec<u8>| -> Result<()> {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            written.push(path);
            Ok(())
        };
        for (stem, map) in [
            ("truth", &self.truth),
            ("rules", &self.rules_result.map),
            ("cart", &self.cart_result.map),
            ("mlp", &self.mlp_result.map),
        ] {
            binary(&format!("{stem}.png"), render_class_map(map, &palette)?)?;
        }

        write_raster(&self.raster, dir.join("scene"))?;
        write_raster(&self.segmentation.id_raster()?, dir.join("segments"))?;
        for (stem, map) in [
            ("truth", &self.truth),
            ("rules", &self.rules_result.map),
            ("cart", &self.cart_result.map),
            ("mlp", &self.mlp_result.map),
        ] {
            write_labels(map, dir.join(stem))?;
        }
        for stem in ["scene", "segments", "truth", "rules", "cart", "mlp"] {
            written.push(dir.join(format!("{stem}.hdr")));
            written.push(dir.join(format!("{stem}.bin")));
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips() {
        let cfg = PaperConfig::standard(42);
        let text = cfg.to_toml().unwrap();
        assert_eq!(PaperConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn majority_ties_to_lowest_id() {
        let seg = Segmentation {
            width: 4,
            height: 1,
            ids: vec![1, 1, 2, 2],
            stats: vec![Default::default(); 2],
            merge_log: Vec::new(),
        };
        let truth = LabelRaster::new(4, 1, vec![5, 3, 2, 2], LandClass::legend()).unwrap();
        assert_eq!(majority_labels(&seg, &truth), vec![3, 2]);
    }

    #[test]
    fn small_scene_runs() {
        let mut cfg = PaperConfig::for_scene(SceneSpec::standard(128, 128, 3), 3);
        cfg.mlp.epochs = 20;
        cfg.assess_per_class = 50;
        let run = run_paper(&cfg).unwrap();
        assert_eq!(run.rules_result.confusion.total(), run.assess_mask.len() as u64);
        assert!(run.table3().unwrap().contains("Kappa"));
    }
}
