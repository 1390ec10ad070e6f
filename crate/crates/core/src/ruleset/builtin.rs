use std::collections::BTreeMap;

use super::{Comparator::*, MembershipFunction, Predicate, RuleSet, Stage, UNCLASSIFIED};
use crate::classes::LandClass;
use crate::features::Feature;

fn stage(name: &str, source: &str, target: &str, alpha: f64, predicates: Vec<Predicate>) -> Stage {
    Stage {
        name: name.into(),
        source: source.into(),
        target: target.into(),
        predicates,
        alpha,
    }
}

/// The urban rule set: vegetation by NDVI, blue-roof removal, water by
/// NDWI and NIR, a small-object filter, roads by shape, two spectral road
/// removals, bare land by fuzzy brightness/red/NIR/asymmetry, and buildings
/// as the remainder.
pub fn builtin_qinhuai_ruleset() -> RuleSet {
    let vegetation = LandClass::Vegetation.name();
    let water = LandClass::Water.name();
    let road = LandClass::Road.name();
    let bare = LandClass::BareLand.name();
    let building = LandClass::Building.name();
    RuleSet {
        classes: LandClass::ALL.iter().map(|c| c.name().to_string()).collect(),
        intermediate: BTreeMap::from([
            ("building1".to_string(), building.to_string()),
            ("building2".to_string(), building.to_string()),
            ("building3".to_string(), building.to_string()),
            ("small_object".to_string(), UNCLASSIFIED.to_string()),
        ]),
        stages: vec![
            stage(
                "vegetation",
                UNCLASSIFIED,
                vegetation,
                0.5,
                vec![Predicate::fuzzy(Feature::Ndvi, MembershipFunction::up(0.16, 0.22))],
            ),
            stage(
                "blue_roof_removal",
                vegetation,
                "building1",
                1.0,
                vec![Predicate::crisp(Feature::MeanBlue, Gt, 1250.0)],
            ),
            stage(
                "water",
                UNCLASSIFIED,
                water,
                1.0,
                vec![
                    Predicate::crisp(Feature::Ndwi, Ge, -0.085),
                    Predicate::crisp(Feature::MeanNir, Lt, 1100.0),
                ],
            ),
            stage(
                "small_object_filter",
                UNCLASSIFIED,
                "small_object",
                1.0,
                vec![Predicate::crisp(Feature::Area, Lt, 60.0)],
            ),
            stage(
                "road",
                UNCLASSIFIED,
                road,
                1.0,
                vec![
                    Predicate::crisp(Feature::LengthWidth, Gt, 4.8),
                    Predicate::crisp(Feature::ShapeIndex, Gt, 2.0),
                ],
            ),
            stage(
                "bright_road_removal",
                road,
                "building2",
                1.0,
                vec![Predicate::crisp(Feature::MeanBlue, Gt, 1450.0)],
            ),
            stage(
                "nir_road_removal",
                road,
                "building3",
                1.0,
                vec![
                    Predicate::crisp(Feature::MeanNir, Gt, 1930.0),
                    Predicate::crisp(Feature::MeanBlue, Lt, 1200.0),
                ],
            ),
            stage(
                "bare_land",
                UNCLASSIFIED,
                bare,
                0.5,
                vec![
                    Predicate::fuzzy(Feature::Asymmetry, MembershipFunction::down(0.0, 0.8)),
                    Predicate::fuzzy(Feature::Brightness, MembershipFunction::up(1050.0, 1250.0)),
                    Predicate::fuzzy(Feature::MeanRed, MembershipFunction::up(1180.0, 1500.0)),
                    Predicate::fuzzy(Feature::MeanNir, MembershipFunction::up(1380.0, 1800.0)),
                ],
            ),
        ],
        final_class: building.to_string(),
    }
}
