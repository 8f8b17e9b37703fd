//! Differential forms on trivialized fibre bundle charts, shadow
//! decompositions, gauged relaxation of form-valued variational problems,
//! quasiconvexity testing and a discrete minimizer.

pub mod bundle;
pub mod comass;
pub mod config;
pub mod error;
pub mod field;
pub mod form;
pub mod homotopy;
pub mod metric;
pub mod minimizer;
pub mod multi_index;
pub mod parse;
pub mod poly;
pub mod pullback;
pub mod quasiconvexity;
pub mod quadrature;
pub mod relaxation;
pub mod rng;
pub mod sample;

pub use bundle::{
    check_closedness, horizontal_projection, shadow_decompose, shadow_reconstruct, BundleChart, ShadowData, ShadowEntry,
    ShadowTuple, StarDomain,
};
pub use comass::{comass, comass_value, ComassOptions, ComassResult};
pub use error::{Error, Result};
pub use field::{CallableField, Coefficient, CoordBox, Grid, SampledField};
pub use form::{Form, FormValue};
pub use homotopy::{homotopy_operator, poincare_antiderivative};
pub use metric::{MetricAt, MetricField};
pub use multi_index::{binomial, MultiIndex, Parity};
pub use parse::{parse_form, parse_polynomial};
pub use poly::Polynomial;
pub use pullback::Diffeomorphism;
