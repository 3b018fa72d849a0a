//! Exact enumeration of colored planar maps.
//!
//! The counting engine ([`sd`]) solves the first-order loop equations of a
//! multi-matrix model exactly. Independent routes to the same numbers live
//! alongside it: brute-force gluing of labeled stars ([`oracle`]), a Monte
//! Carlo sampler for the finite-`N` matrix integral ([`mc`]), the one-matrix
//! equilibrium measure ([`one_matrix`]) and the two-matrix Ising model
//! ([`ising`]).

pub mod ising;
pub mod mc;
pub mod ncpoly;
pub mod one_matrix;
pub mod oracle;
pub mod potential;
pub mod rational;
pub mod sd;

pub use ising::{
    bms_series, dressed_series, ising_series, verify_change_of_variables, BivariateSeries, BmsSolution, IsingCouplings,
    IsingError, IsingIndex, IsingNormalization, IsingSeries,
};
pub use mc::{estimate_moments, sample, sd_residual, EnsembleState, McConfig, McError, Model, MomentEstimate};
pub use ncpoly::{Monomial, NCPolynomial, NcError, TensorPolynomial};
pub use one_matrix::{solve_endpoints, EquilibriumMeasure, OneMatrixError};
pub use oracle::{
    count_by_genus, count_ising_filtered, count_ising_rooted, count_m0, count_planar, enumerate_gluings, genus,
    symmetrized_count, symmetrized_count_with, EnumOptions, GenusCensus, GluingDiagram, IsingStars, OracleError,
    StarList,
};
pub use potential::{
    bind_parameters, parse_potential, parse_word, Param, ParameterAssignment, Potential, PotentialError, StarSpec,
    StarTerm,
};
pub use sd::{
    catalan, semicircle_moment, Convention, EntropySeries, FreeEnergySeries, MapCountTable, MultiIndex, SdError,
    SeriesValue, TruncationBound,
};
