//! Testing the instrumental-variable exclusion restriction with DirectLiNGAM.
//!
//! The numerical core is generic over the floating-point type (`f32` or
//! `f64`); the aliases at the bottom fix it to `f64`, which is what the
//! command-line tool uses.

pub mod cli;
pub mod data;
pub mod error;
pub mod extests;
pub mod independence;
pub mod lingam;
pub mod normality;
pub mod protocol;
pub mod regress;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod simulate;

pub use data::{iv_roles, load_csv, read_csv, Column, Dataset, Role, RoleMap};
pub use error::{Error, Result};
pub use extests::{run_all, ExclusionConfig, ExclusionVerdict, VerdictLabel};
pub use independence::{hsic_statistic, hsic_test, median_heuristic, KernelSpec, Permutations};
pub use lingam::{direct_lingam, find_root, restricted_lingam, CausalModel, IvEffects};
pub use normality::{jarque_bera, negentropy, nongaussianity_report, shapiro_wilk};
pub use protocol::{run_multi_instrument, run_protocol, MultiIvConfig, MultiIvLabel, MultiIvReport, ProtocolConfig, ProtocolReport};
pub use regress::{exogeneity_check, first_stage_f, ols, tsls, OlsFit};
pub use report::{Decision, TestName, TestOutcome};
pub use rng::RandomSource;
pub use scalar::Scalar;
pub use simulate::{generate, power_analysis, PowerTable, SimulationSpec};

pub type DatasetF64 = Dataset<f64>;
pub type DatasetF32 = Dataset<f32>;
pub type CausalModelF64 = CausalModel<f64>;
pub type OlsFitF64 = OlsFit<f64>;
