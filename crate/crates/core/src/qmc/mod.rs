//! Quasi-Monte Carlo point sets, weights and worst-case error tools.

pub mod lattice;
pub mod points;
pub mod polylattice;
pub mod weights;

pub use lattice::{
    cbc_lattice, cbc_lattice_kernel, euler_totient, theoretical_bound, wce_kernel, wce_shift_avg,
    zeta, LatticeKernel, LatticeRule,
};
pub use points::{
    centered_lattice, lattice_points, mc_points, random_shift, tent_fold, to_symmetric,
    PointMeta, QmcPointSet,
};
pub use polylattice::{cbc_interlaced, interlace_digits, PolyLatticeRule};
pub use weights::{pod_weight, spod_weight, WeightKind, WeightSpec};
