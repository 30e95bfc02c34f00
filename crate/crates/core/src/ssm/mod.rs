//! Zero-order-hold discretization and the selective scan in sequential,
//! parallel-associative and reverse-mode forms.

pub mod backward;
pub mod params;
pub mod path;
pub mod scan;
pub mod zoh;

pub use backward::{
    selective_scan_backward, selective_scan_backward_segmented, ScanGrads, SEGMENT_THRESHOLD,
};
pub use params::SsmParams;
pub use path::{path_backward, path_forward, PathCache};
pub use scan::{
    blelloch_inclusive, selective_scan, selective_scan_parallel, selective_scan_seq, state_matrix,
    Affine, ScanConfig, ScanInputs, ScanOutput,
};
pub use zoh::{expm1_over_x, zoh_discretize, Discretization};
