use serde::{Deserialize, Serialize};

/// The six annotated regions, in canonical channel order. The channel
/// index of every tensor, mask, and CSV column follows this ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Bolus,
    Mandible,
    HyoidBone,
    VocalFold,
    CervicalSpine,
    SoftTissue,
}

pub const NUM_REGIONS: usize = 6;

pub const ALL_REGIONS: [Region; NUM_REGIONS] = [
    Region::Bolus,
    Region::Mandible,
    Region::HyoidBone,
    Region::VocalFold,
    Region::CervicalSpine,
    Region::SoftTissue,
];

impl Region {
    pub fn index(self) -> usize {
        ALL_REGIONS.iter().position(|&r| r == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::Bolus => "bolus",
            Region::Mandible => "mandible",
            Region::HyoidBone => "hyoid_bone",
            Region::VocalFold => "vocal_fold",
            Region::CervicalSpine => "cervical_spine",
            Region::SoftTissue => "soft_tissue",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        ALL_REGIONS.iter().copied().find(|r| r.name() == name)
    }
}

/// Default context set passed between cascade stages.
pub fn default_context() -> Vec<Region> {
    vec![Region::CervicalSpine, Region::Mandible]
}
