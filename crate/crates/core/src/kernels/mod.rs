//! The density φ, its weighted integrals, and Monte-Carlo estimators of the
//! kernels G and H, the stopped index integral φ̄ and the dual value v.

mod density;
mod estimators;
mod levels;
mod table;

pub use density::{
    index_survival_integral, inner_phi_closed, inner_phi_integral, phi_density, stopped_exp_moment,
};
pub use estimators::{
    deriv_v_r, deriv_v_rr, dual_curvature, kernel_g, kernel_h, value_v, varphi_bar,
};
pub use levels::{LagTable, LevelGrid};
pub use table::{build_kernel_table, KernelTable};

pub(crate) use density::gauss5;

pub(crate) use estimators::path_integrals;

pub use crate::mc::{McConfig, McEstimate};
