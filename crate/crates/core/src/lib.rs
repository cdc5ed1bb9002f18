//! Minimization of the average g-transformed geodesic distance from a point
//! of the sphere to a polyhedral cone cap, and a harness for the
//! halfspace-learning experiment whose optimal rule is that minimizer.

pub mod cli;
pub mod cone;
pub mod error;
pub mod lab;
pub mod nnls;
pub mod optimizer;
pub mod psi;
pub mod quadrature;
pub mod sampling;
pub mod sphere;
pub mod streams;
pub mod verify;

pub use cone::{DualCoefficients, Label, PolyhedralCone};
pub use error::{Error, Result};
pub use optimizer::{minimize_from, multistart_minimize, MinimaReport, OptOptions, OptResult};
pub use psi::{psi_exact_2d, psi_grad_saa, psi_saa, GKind, PsiEstimate};
pub use sampling::{rotate_cloud, sample_cone_cap, sample_sphere, CapSampler, ConeCloud};
pub use sphere::{geodesic_distance, geodesic_midpoint, reflect, Reflection, Rotation, UnitVector};
pub use streams::SeedStream;
