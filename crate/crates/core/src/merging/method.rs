use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DENSITY_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const DEFAULT_ALPHA_GRID: [f64; 5] = [0.8, 1.0, 1.2, 1.4, 1.6];

/// How task vectors are combined and served.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    /// Sign-fixed tuning, summed task vectors, local sign masks.
    SiftMasks,
    /// Plain finetuning and a single averaged model.
    FtMerge,
    /// Plain finetuning, masks from the merged-vs-local threshold rule.
    TallMasks { density_grid: Vec<f64>, alpha_grid: Vec<f64> },
    /// Elect-and-max unified vector with sign-agreement masks and l1 rescaling.
    Emr,
    /// Trim, elect sign, disjoint mean.
    Ties { density: f64 },
    /// One model trained on the pooled data, `steps_per_task * |tasks|` steps.
    Central { steps_per_task: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MethodTag {
    SiftMasks = 1,
    FtMerge = 2,
    TallMasks = 3,
    Emr = 4,
    Ties = 5,
    Central = 6,
}

impl MethodTag {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => Self::SiftMasks,
            2 => Self::FtMerge,
            3 => Self::TallMasks,
            4 => Self::Emr,
            5 => Self::Ties,
            6 => Self::Central,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::SiftMasks => "sift_masks",
            Self::FtMerge => "ft_merge",
            Self::TallMasks => "tall_masks",
            Self::Emr => "emr",
            Self::Ties => "ties",
            Self::Central => "central",
        }
    }
}

impl Method {
    pub fn tall_default() -> Self {
        Self::TallMasks { density_grid: DEFAULT_DENSITY_GRID.to_vec(), alpha_grid: DEFAULT_ALPHA_GRID.to_vec() }
    }

    pub fn tag(&self) -> MethodTag {
        match self {
            Self::SiftMasks => MethodTag::SiftMasks,
            Self::FtMerge => MethodTag::FtMerge,
            Self::TallMasks { .. } => MethodTag::TallMasks,
            Self::Emr => MethodTag::Emr,
            Self::Ties { .. } => MethodTag::Ties,
            Self::Central { .. } => MethodTag::Central,
        }
    }

    pub fn name(&self) -> &'static str {
        self.tag().name()
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::TallMasks { density_grid, alpha_grid } => {
                if density_grid.is_empty() || alpha_grid.is_empty() {
                    return Err(Error::InvalidParameter("TALL grids must be nonempty".into()));
                }
                if let Some(d) = density_grid.iter().find(|d| !(**d > 0.0 && **d <= 1.0)) {
                    return Err(Error::InvalidParameter(format!("density {d} outside (0, 1]")));
                }
                if alpha_grid.iter().any(|a| !a.is_finite()) {
                    return Err(Error::InvalidParameter("alpha grid must be finite".into()));
                }
            }
            Self::Ties { density } if !(*density > 0.0 && *density <= 1.0) => {
                return Err(Error::InvalidParameter(format!("density {density} outside (0, 1]")));
            }
            _ => {}
        }
        Ok(())
    }

    /// Methods that keep one bit mask per retained task.
    pub fn stores_masks(&self) -> bool {
        matches!(self, Self::SiftMasks | Self::TallMasks { .. } | Self::Emr)
    }

    /// Methods whose stored vector is the plain sum of task vectors, so a
    /// task can be removed by subtraction.
    pub fn is_additive(&self) -> bool {
        matches!(self, Self::SiftMasks | Self::FtMerge | Self::TallMasks { .. })
    }

    /// Methods that can unlearn by replaying only the deleted task.
    pub fn unlearns_by_subtraction(&self) -> bool {
        matches!(self, Self::SiftMasks | Self::FtMerge)
    }

    pub fn is_central(&self) -> bool {
        matches!(self, Self::Central { .. })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
