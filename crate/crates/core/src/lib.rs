//! Numerical laboratory for a dilute Bose gas with three-body interactions
//! on the torus T³ = (ℝ/2πℤ)³.
//!
//! The crate implements and cross-verifies the chain of effective
//! descriptions for such a gas at desk scale:
//!
//! * [`grid`] — spectral calculus on the torus (transforms, Sobolev weights,
//!   periodic convolution);
//! * [`potential`] — compactly supported symmetric three-body potentials,
//!   their N-rescalings, the limiting coupling constant and the nonlocal
//!   Hartree nonlinearity;
//! * [`hartree`] — Strang-splitting time integration of the quintic NLS and
//!   the quintic Hartree equation, with conservation monitors and
//!   Hartree→NLS convergence sweeps;
//! * [`bogoliubov`] — pair-excitation kernels, their Hilbert–Schmidt scaling
//!   laws, the (γ, α) density-matrix evolution, and the pairing-term
//!   eigenvalue certification;
//! * [`fock`] — truncated bosonic Fock space over finitely many excited
//!   modes: ladder algebra, second quantization, the quadratic generator,
//!   the cubic-and-higher correction terms of the transformed many-body
//!   generator, and eigenvalue certification of their quadratic-form bounds;
//! * [`fewbody`] — exact two- and three-boson dynamics on a tiny periodic
//!   lattice with reduced density matrices, the condensate-excitation
//!   transform, and a brute-force check of the transformed-generator
//!   identity.
//!
//! All core math is generic over the scalar type through [`scalar::Real`]
//! (`f32` or `f64`); concrete `f64` aliases are exported at the crate root.

pub mod bogoliubov;
pub mod fewbody;
pub mod fock;
pub mod grid;
pub mod hartree;
pub mod io;
pub mod linalg;
pub mod potential;
pub mod scalar;

pub use scalar::{cast, Cx, Real};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("grid mismatch between operands")]
    GridMismatch,
    #[error("invalid potential: {0}")]
    InvalidPotential(String),
    #[error("unsupported potential form for this operation: {0}")]
    UnsupportedForm(String),
    #[error("quadrature resolutions disagree: {0}")]
    QuadratureInconsistent(String),
    #[error("invalid evolution problem: {0}")]
    InvalidProblem(String),
    #[error("blow-up detected at t = {time}")]
    BlowUp { time: f64 },
    #[error("dense materialization too large: {0}")]
    DenseTooLarge(String),
    #[error("unsupported condensate: {0}")]
    UnsupportedCondensate(String),
    #[error("cutoff too large: {0}")]
    CutoffTooLarge(String),
    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("not normalized: {0}")]
    NotNormalized(String),
    #[error("numerical instability: {0}")]
    Instability(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

// Concrete f64 aliases for the common types (the experiment drivers use
// these; f32 instantiations remain available through the generic API).
pub type TorusGrid64 = grid::TorusGrid<f64>;
pub type Field64 = grid::Field<f64>;
pub type PairProfile64 = potential::PairProfile<f64>;
pub type ThreeBodyPotential64 = potential::ThreeBodyPotential<f64>;
pub type EvolutionProblem64 = hartree::EvolutionProblem<f64>;
pub type Trajectory64 = hartree::Trajectory<f64>;
pub type PairKernels64 = bogoliubov::PairKernels<f64>;
pub type BogoliubovState64 = bogoliubov::BogoliubovState<f64>;
pub type FockBasis64 = fock::FockBasis;
pub type FockOperator64 = fock::FockOperator<f64>;
pub type FockVector64 = fock::FockVector<f64>;
pub type GeneratorBundle64 = fock::GeneratorBundle<f64>;
pub type Lattice64 = fewbody::Lattice<f64>;
pub type FewBodyState64 = fewbody::FewBodyState<f64>;
