//! Merging task vectors, removing them again, and the localization backends.

mod emr;
mod method;
mod state;
mod tall;
mod ties;

pub use emr::{emr_build, EmrModel};
pub use method::{Method, MethodTag, DEFAULT_ALPHA_GRID, DEFAULT_DENSITY_GRID};
pub use state::{merge, merge_as, merge_sift, Divisor, MergedState};
pub use tall::{lambda_for_density, tall_mask, tall_mask_from_parts, tall_tune, TallChoice};
pub use ties::{keep_count, ties_merge, ties_merge_f64, trim};
