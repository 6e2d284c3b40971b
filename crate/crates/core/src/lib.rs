//! Relative causal knowledge for linear-Gaussian structural causal models.
//!
//! Measures are finite Gaussian mixtures ([`measure`]). Linear additive-noise
//! SCMs ([`scm`]) produce observational and interventional measures together
//! with the affine intervention morphisms relating them. α-abstractions
//! ([`abstraction`]) project a micro model onto a macro one and are checked
//! for interventional consistency. A network sheaf of causal knowledge
//! ([`sheaf`]) attaches SCMs to nodes and shared abstractions to edges;
//! restriction maps project node measures onto edges, extension maps embed
//! edge measures back, and [`rck`] composes them along paths.
//!
//! [`search`] and [`simulate`] look for global sections by adjusting soft
//! coefficients, and [`config`] reads and writes the JSON description of a
//! whole network.

pub mod abstraction;
pub mod config;
pub mod error;
pub mod measure;
pub mod output;
pub mod rck;
pub mod report;
pub mod scm;
pub mod search;
pub mod sheaf;
pub mod simulate;
pub mod transport;

pub use error::{Error, Result};
pub use measure::{
    convex_combine, measures_equal, mixture_distance, pushforward, sample, w2_gaussian, AffineMap,
    GaussianComponent, GaussianMixture,
};
pub use rck::{path_map, rck_family, relative_measure, PathQuery};
pub use report::Report;
pub use scm::{
    apply_intervention, generate_ck, intervention_map, is_valid_soft_measure, mixing_map,
    observational_measure, validate_scm, CausalKnowledge, Intervention, LinearScm,
};
pub use sheaf::{energy, is_global_section, CausalSheaf, Cochain0};
