//! The urban land-cover taxonomy shared by the generator, rule sets and baselines.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LandClass {
    Vegetation,
    Water,
    Road,
    BareLand,
    Building,
}

impl LandClass {
    pub const ALL: [LandClass; 5] = [
        LandClass::Vegetation,
        LandClass::Water,
        LandClass::Road,
        LandClass::BareLand,
        LandClass::Building,
    ];

    /// Label-raster id; 0 stays reserved for Unclassified.
    pub fn id(self) -> u32 {
        self as u32 + 1
    }

    pub fn from_id(id: u32) -> Option<LandClass> {
        LandClass::ALL.get((id as usize).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            LandClass::Vegetation => "Vegetation",
            LandClass::Water => "Water",
            LandClass::Road => "Road",
            LandClass::BareLand => "Bare Land",
            LandClass::Building => "Building",
        }
    }

    pub fn from_name(name: &str) -> Option<LandClass> {
        LandClass::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn color(self) -> [u8; 3] {
        match self {
            LandClass::Vegetation => [34, 139, 34],
            LandClass::Water => [30, 90, 200],
            LandClass::Road => [128, 128, 128],
            LandClass::BareLand => [210, 180, 120],
            LandClass::Building => [200, 40, 40],
        }
    }

    pub fn legend() -> BTreeMap<u32, String> {
        LandClass::ALL.iter().map(|c| (c.id(), c.name().to_string())).collect()
    }

    pub fn palette() -> BTreeMap<u32, [u8; 3]> {
        LandClass::ALL.iter().map(|c| (c.id(), c.color())).collect()
    }
}

impl fmt::Display for LandClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LandClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        LandClass::from_name(s).ok_or_else(|| Error::invalid(format!("unknown land class `{s}`")))
    }
}
