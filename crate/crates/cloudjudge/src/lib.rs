//! `cloudjudge` scores generative models of particle clouds (jets)
//! against reference samples.
//!
//! It computes jet observables (mass, cardinality, jet images) and
//! energy-flow polynomials, and compares real versus generated samples
//! with batched 1-Wasserstein feature distances, a Fréchet-Gaussian
//! distance over pluggable activations, the exact energy mover's
//! distance, and the coverage / minimum-matching-distance pair. A
//! seeded toy jet generator makes the whole pipeline runnable with no
//! external dataset, and bit-exact binary formats plus CSV interchange
//! connect it to external tooling.
//!
//! Every stochastic protocol draws from seeded substreams, so results
//! are bit-reproducible across runs and thread counts. Observables and
//! metrics are exactly invariant under particle permutations, and
//! zero-padded (masked) slots are ignored everywhere.
//!
//! The `cloudjudge` binary fronts the pipeline; see the crate README
//! for the command set.

pub mod covmmd;
pub mod efp;
pub mod emd;
pub mod eval;
pub mod frechet;
pub mod io;
pub mod kinematics;
pub mod model;
pub mod mplayer;
pub mod rng;
pub mod toygen;
pub mod w1;

pub use eval::{evaluate, EvalConfig, EvalError};
pub use model::{CloudSample, JetClass, MetricReport, Particle, ParticleCloud};
