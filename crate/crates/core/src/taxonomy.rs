//! Outlier types injected by the generator and the categories a reviewer files.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Generator-level outlier types; improper radiography has two subtypes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OutlierType {
    #[serde(rename = "implant")]
    Implant,
    #[serde(rename = "pacemaker")]
    Pacemaker,
    #[serde(rename = "loop_recorder")]
    LoopRecorder,
    /// Heterogeneous pectoral muscle.
    #[serde(rename = "improper_radiography_1")]
    ImproperRadiography1,
    #[serde(rename = "improper_radiography_2")]
    ImproperRadiography2,
    #[serde(rename = "lesion_calcification")]
    LesionCalcification,
    #[serde(rename = "exposure_error")]
    ExposureError,
    #[serde(rename = "improper_placement")]
    ImproperPlacement,
}

impl OutlierType {
    pub const ALL: [Self; 8] = [
        Self::Implant,
        Self::Pacemaker,
        Self::LoopRecorder,
        Self::ImproperRadiography1,
        Self::ImproperRadiography2,
        Self::LesionCalcification,
        Self::ExposureError,
        Self::ImproperPlacement,
    ];

    /// Observed frequency among 136 reviewed outliers.
    pub fn reference_count(self) -> u32 {
        match self {
            Self::Implant => 36,
            Self::Pacemaker => 25,
            Self::LoopRecorder => 6,
            Self::ImproperRadiography1 => 38,
            Self::ImproperRadiography2 => 18,
            Self::LesionCalcification => 9,
            Self::ExposureError => 2,
            Self::ImproperPlacement => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Implant => "implant",
            Self::Pacemaker => "pacemaker",
            Self::LoopRecorder => "loop_recorder",
            Self::ImproperRadiography1 => "improper_radiography_1",
            Self::ImproperRadiography2 => "improper_radiography_2",
            Self::LesionCalcification => "lesion_calcification",
            Self::ExposureError => "exposure_error",
            Self::ImproperPlacement => "improper_placement",
        }
    }

    pub fn category(self) -> TriageCategory {
        match self {
            Self::Implant => TriageCategory::Implant,
            Self::Pacemaker => TriageCategory::Pacemaker,
            Self::LoopRecorder => TriageCategory::LoopRecorder,
            Self::ImproperRadiography1 | Self::ImproperRadiography2 => TriageCategory::ImproperRadiography,
            Self::LesionCalcification => TriageCategory::LesionCalcification,
            Self::ExposureError => TriageCategory::ExposureError,
            Self::ImproperPlacement => TriageCategory::ImproperPlacement,
        }
    }
}

impl fmt::Display for OutlierType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownType {
    pub given: String,
    pub allowed: Vec<&'static str>,
}

impl fmt::Display for UnknownType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown outlier type {:?}; allowed: {}", self.given, self.allowed.join(", "))
    }
}

impl std::error::Error for UnknownType {}

impl FromStr for OutlierType {
    type Err = UnknownType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|t| t.as_str() == s).ok_or_else(|| UnknownType {
            given: s.to_string(),
            allowed: Self::ALL.iter().map(|t| t.as_str()).collect(),
        })
    }
}

/// The seven categories a reviewer may assign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriageCategory {
    Implant,
    Pacemaker,
    LoopRecorder,
    ImproperRadiography,
    LesionCalcification,
    ExposureError,
    ImproperPlacement,
}

impl TriageCategory {
    pub const ALL: [Self; 7] = [
        Self::Implant,
        Self::Pacemaker,
        Self::LoopRecorder,
        Self::ImproperRadiography,
        Self::LesionCalcification,
        Self::ExposureError,
        Self::ImproperPlacement,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Implant => "implant",
            Self::Pacemaker => "pacemaker",
            Self::LoopRecorder => "loop_recorder",
            Self::ImproperRadiography => "improper_radiography",
            Self::LesionCalcification => "lesion_calcification",
            Self::ExposureError => "exposure_error",
            Self::ImproperPlacement => "improper_placement",
        }
    }

    pub fn allowed() -> Vec<&'static str> {
        Self::ALL.iter().map(|c| c.as_str()).collect()
    }
}

impl fmt::Display for TriageCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TriageCategory {
    type Err = UnknownType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| UnknownType { given: s.to_string(), allowed: Self::allowed() })
    }
}
