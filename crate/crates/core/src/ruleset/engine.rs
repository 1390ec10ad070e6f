use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{RuleSet, UNCLASSIFIED};
use crate::error::{Error, Result};
use crate::features::ObjectRecord;
use crate::raster::LabelRaster;
use crate::segmentation::Segmentation;

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub segment_id: u32,
    /// Final class name.
    pub class: String,
    pub score: f64,
    /// 1-based stage that settled the final class; `stage_count()` for the remainder.
    pub stage: usize,
    /// Intermediate class the object passed through before folding, if any.
    pub intermediate: Option<String>,
}

/// Runs the stages in order over `objects`.
pub fn classify(objects: &[ObjectRecord], rules: &RuleSet) -> Vec<Decision> {
    let mut labels: Vec<&str> = vec![UNCLASSIFIED; objects.len()];
    let mut scores = vec![1.0; objects.len()];
    let mut fired = vec![0usize; objects.len()];

    for (si, stage) in rules.stages.iter().enumerate() {
        for (i, obj) in objects.iter().enumerate() {
            if labels[i] != stage.source {
                continue;
            }
            if let Some(score) = stage.evaluate(|f| obj.get(f)) {
                labels[i] = &stage.target;
                scores[i] = score;
                fired[i] = si + 1;
            }
        }
    }

    objects
        .iter()
        .enumerate()
        .map(|(i, obj)| {
            let mut class = labels[i];
            let mut intermediate = None;
            if let Some(folded) = rules.intermediate.get(class) {
                intermediate = Some(class.to_string());
                class = folded;
            }
            let (class, score, stage) = if class == UNCLASSIFIED {
                (rules.final_class.as_str(), 1.0, rules.stage_count())
            } else {
                (class, scores[i], fired[i])
            };
            Decision {
                segment_id: obj.segment_id,
                class: class.to_string(),
                score,
                stage,
                intermediate,
            }
        })
        .collect()
}

/// Paints each segment with its class id. `labels` maps segment id to class id.
pub fn rasterize_labels(
    seg: &Segmentation,
    labels: &BTreeMap<u32, u32>,
    legend: &BTreeMap<u32, String>,
) -> Result<LabelRaster> {
    let k = seg.ids.iter().copied().max().unwrap_or(0);
    let mut lut = vec![0u32; k as usize + 1];
    for id in 1..=k {
        lut[id as usize] = *labels.get(&id).ok_or(Error::MissingLabel(id))?;
    }
    let plane = seg.ids.iter().map(|&id| lut[id as usize]).collect();
    LabelRaster::new(seg.width, seg.height, plane, legend.clone())
}

pub fn trace_csv(decisions: &[Decision]) -> String {
    let mut out = String::from("segment_id,final_class,stage_fired,fuzzy_score,intermediate_class\n");
    for d in decisions {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            d.segment_id,
            d.class,
            d.stage,
            d.score,
            d.intermediate.as_deref().unwrap_or("")
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ruleset::builtin_qinhuai_ruleset;
    use crate::scene::IdealShape;

    /// A square object that falls through every stage of the built-in set
    /// unless a test overrides a feature.
    fn neutral() -> ObjectRecord {
        let mut r = ObjectRecord::ideal(1, [1000.0, 1000.0, 1000.0, 1000.0], IdealShape::Square);
        r.ndwi = -0.5;
        r
    }

    fn run(obj: ObjectRecord) -> Decision {
        classify(&[obj], &builtin_qinhuai_ruleset()).remove(0)
    }

    #[test]
    fn vegetation_certain() {
        let mut o = neutral();
        o.ndvi = 0.30;
        o.mean[0] = 1000.0;
        let d = run(o);
        assert_eq!(d.class, "Vegetation");
        assert_eq!(d.score, 1.0);
        assert_eq!(d.stage, 1);
    }

    #[test]
    fn blue_roof_becomes_building() {
        let mut o = neutral();
        o.ndvi = 0.30;
        o.mean[0] = 1300.0;
        let d = run(o);
        assert_eq!(d.class, "Building");
        assert_eq!(d.intermediate.as_deref(), Some("building1"));
        assert_eq!(d.stage, 2);
    }

    #[test]
    fn fuzzy_vegetation_at_cutoff() {
        let mut o = neutral();
        o.ndvi = 0.19;
        let d = run(o);
        assert_eq!(d.class, "Vegetation");
        assert!((d.score - 0.5).abs() < 1e-9);
    }

    #[test]
    fn fuzzy_vegetation_below_cutoff() {
        let mut o = neutral();
        o.ndvi = 0.18;
        assert_eq!(run(o).class, "Building");
    }

    #[test]
    fn water_stage_fires() {
        let mut o = neutral();
        o.ndwi = 0.1;
        o.mean[3] = 900.0;
        let d = run(o);
        assert_eq!(d.class, "Water");
        assert_eq!(d.stage, 3);
    }

    #[test]
    fn small_strip_is_filtered_before_roads() {
        let mut o = neutral();
        o.area_px = 40;
        o.length_width = 10.0;
        o.shape_index = 3.0;
        let d = run(o);
        assert_eq!(d.class, "Building");
        assert_eq!(d.intermediate.as_deref(), Some("small_object"));
    }

    #[test]
    fn large_strip_is_road() {
        let mut o = neutral();
        o.area_px = 400;
        o.length_width = 10.0;
        o.shape_index = 3.0;
        assert_eq!(run(o).class, "Road");
    }

    #[test]
    fn road_removals() {
        let mut o = neutral();
        o.length_width = 10.0;
        o.shape_index = 3.0;
        o.mean[0] = 1500.0;
        assert_eq!(run(o.clone()).intermediate.as_deref(), Some("building2"));
        o.mean[0] = 1100.0;
        o.mean[3] = 2000.0;
        assert_eq!(run(o).intermediate.as_deref(), Some("building3"));
    }

    #[test]
    fn bare_land_by_fuzzy_minimum() {
        let mut o = neutral();
        o.asymmetry = 0.1;
        o.brightness = 1300.0;
        o.mean[2] = 1500.0;
        o.mean[3] = 1800.0;
        let d = run(o.clone());
        assert_eq!(d.class, "Bare Land");
        // Asymmetry is the weakest membership: 1 - 0.1 / 0.8.
        assert!((d.score - 0.875).abs() < 1e-12);
        o.mean[3] = 1500.0;
        assert_eq!(run(o).class, "Building");
    }

    #[test]
    fn stage_order_matters() {
        // Passes both the vegetation and the water stage; the first listed wins.
        let mut o = neutral();
        o.ndvi = 0.3;
        o.ndwi = 0.1;
        o.mean[3] = 900.0;
        assert_eq!(run(o.clone()).class, "Vegetation");
        let mut swapped = builtin_qinhuai_ruleset();
        swapped.stages.swap(0, 2);
        assert_eq!(classify(&[o], &swapped)[0].class, "Water");
    }

    #[test]
    fn rasterize_two_segments() {
        let seg = Segmentation {
            width: 3,
            height: 2,
            ids: vec![1, 1, 2, 1, 2, 2],
            stats: Vec::new(),
            merge_log: Vec::new(),
        };
        let legend = BTreeMap::from([(2, "Water".to_string()), (5, "Building".to_string())]);
        let labels = BTreeMap::from([(1, 2), (2, 5)]);
        let l = rasterize_labels(&seg, &labels, &legend).unwrap();
        assert_eq!(l.labels(), &[2, 2, 5, 2, 5, 5]);
        let missing = BTreeMap::from([(1, 2)]);
        assert!(matches!(rasterize_labels(&seg, &missing, &legend), Err(Error::MissingLabel(2))));
    }

    proptest::proptest! {
        #[test]
        fn every_object_gets_a_final_class(
            mean in proptest::array::uniform4(0.0f64..4000.0),
            area in 1u64..5000,
            lw in 1.0f64..30.0,
            si in 1.0f64..5.0,
            asym in 0.0f64..0.99,
        ) {
            let rules = builtin_qinhuai_ruleset();
            let mut o = ObjectRecord::ideal(1, mean, IdealShape::Square);
            o.area_px = area;
            o.length_width = lw;
            o.shape_index = si;
            o.asymmetry = asym;
            let d = classify(&[o], &rules).remove(0);
            proptest::prop_assert!(rules.classes.contains(&d.class));
            proptest::prop_assert!(d.score >= 0.0 && d.score <= 1.0);
        }
    }
}
