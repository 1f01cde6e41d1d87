//! Core domain types: particle clouds, labeled samples, feature series,
//! and the metric report. Owns the feature schema and its validity rules.
//!
//! A jet is a variable-size set of particles, each carrying the relative
//! kinematic features `(eta_rel, phi_rel, pt_rel)` plus a binary `mask`
//! flag separating genuine particles from zero-padded slots. Slots with
//! `mask = 0` carry no physical meaning and are ignored by every
//! observable and metric in this crate.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::eval::EvalEcho;
use crate::w1::W1Score;

/// Default slot capacity, matching the 30-particle dataset convention.
pub const DEFAULT_CAPACITY: usize = 30;

const TWO_PI: f64 = 2.0 * PI;

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_phi(phi: f64) -> f64 {
    let mut r = phi.rem_euclid(TWO_PI);
    if r > PI {
        r -= TWO_PI;
    }
    // rem_euclid can round up to exactly 2*pi for tiny negative inputs.
    if r <= -PI {
        r += TWO_PI;
    }
    r
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sample contains no clouds")]
    EmptySample,
    #[error("clouds in one sample must share a capacity (found {first} and {other})")]
    MixedCapacity { first: usize, other: usize },
    #[error("feature series '{name}' contains a non-finite value at index {index}")]
    NonFiniteSeries { name: String, index: usize },
    #[error("unknown jet class '{0}'")]
    UnknownClass(String),
}

/// One particle slot: three relative kinematic features plus the mask flag.
///
/// The mask is stored as a float so that validation can report non-binary
/// values read from external files instead of silently coercing them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub eta_rel: f64,
    pub phi_rel: f64,
    pub pt_rel: f64,
    pub mask: f64,
}

impl Particle {
    /// A genuine particle (`mask = 1`).
    pub fn genuine(eta_rel: f64, phi_rel: f64, pt_rel: f64) -> Self {
        Self { eta_rel, phi_rel, pt_rel, mask: 1.0 }
    }

    /// An all-zero padding slot (`mask = 0`).
    pub fn padding() -> Self {
        Self { eta_rel: 0.0, phi_rel: 0.0, pt_rel: 0.0, mask: 0.0 }
    }

    pub fn is_genuine(&self) -> bool {
        self.mask == 1.0
    }
}

/// One jet as a variable-size set of particle slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleCloud {
    particles: Vec<Particle>,
    capacity: usize,
}

impl ParticleCloud {
    /// Build a cloud from explicit slots. Invariants are not enforced
    /// here; [`validate`] reports violations without aborting.
    pub fn new(particles: Vec<Particle>, capacity: usize) -> Self {
        Self { particles, capacity }
    }

    /// Build a cloud from genuine particles, zero-padded to `capacity`.
    pub fn from_genuine(
        particles: impl IntoIterator<Item = (f64, f64, f64)>,
        capacity: usize,
    ) -> Self {
        let mut slots: Vec<Particle> =
            particles.into_iter().map(|(eta, phi, pt)| Particle::genuine(eta, phi, pt)).collect();
        while slots.len() < capacity {
            slots.push(Particle::padding());
        }
        Self::new(slots, capacity)
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Iterator over genuine (unmasked) slots, in slot order.
    pub fn unmasked(&self) -> impl Iterator<Item = &Particle> {
        self.particles.iter().filter(|p| p.is_genuine())
    }

    /// Genuine particles as `(pt_rel, eta_rel, phi_rel)` triples sorted by
    /// that key. Summations over this order are invariant under slot
    /// permutations bit for bit, which is how the exact permutation
    /// invariance of the observables and metrics is achieved.
    pub fn canonical_unmasked(&self) -> Vec<(f64, f64, f64)> {
        let mut parts: Vec<(f64, f64, f64)> =
            self.unmasked().map(|p| (p.pt_rel, p.eta_rel, p.phi_rel)).collect();
        parts.sort_by(|a, b| {
            a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2))
        });
        parts
    }
}

/// Rules checked by [`validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ViolationRule {
    NonBinaryMask,
    NoUnmaskedParticles,
    NegativePtRel,
    CapacityExceeded,
    PhiOutOfRange,
    NonFiniteFeature,
}

impl ViolationRule {
    pub fn name(&self) -> &'static str {
        match self {
            ViolationRule::NonBinaryMask => "non-binary mask",
            ViolationRule::NoUnmaskedParticles => "no unmasked particles",
            ViolationRule::NegativePtRel => "negative pt_rel",
            ViolationRule::CapacityExceeded => "capacity exceeded",
            ViolationRule::PhiOutOfRange => "phi_rel out of (-pi, pi]",
            ViolationRule::NonFiniteFeature => "non-finite feature",
        }
    }
}

/// One violated invariant, naming the slot it was found at (if any).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub slot: Option<usize>,
    pub rule: ViolationRule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.slot {
            Some(slot) => write!(f, "{} at slot {}", self.rule.name(), slot),
            None => write!(f, "{}", self.rule.name()),
        }
    }
}

/// Check every cloud invariant, returning one entry per violation.
/// Validation never aborts; an empty list means the cloud is valid.
pub fn validate(cloud: &ParticleCloud) -> Vec<Violation> {
    let mut out = Vec::new();
    if cloud.particles.len() > cloud.capacity {
        out.push(Violation { slot: None, rule: ViolationRule::CapacityExceeded });
    }
    let mut any_unmasked = false;
    for (slot, p) in cloud.particles.iter().enumerate() {
        let finite = p.eta_rel.is_finite()
            && p.phi_rel.is_finite()
            && p.pt_rel.is_finite()
            && p.mask.is_finite();
        if !finite {
            out.push(Violation { slot: Some(slot), rule: ViolationRule::NonFiniteFeature });
            continue;
        }
        if p.mask != 0.0 && p.mask != 1.0 {
            out.push(Violation { slot: Some(slot), rule: ViolationRule::NonBinaryMask });
            continue;
        }
        if p.is_genuine() {
            any_unmasked = true;
            if p.pt_rel < 0.0 {
                out.push(Violation { slot: Some(slot), rule: ViolationRule::NegativePtRel });
            }
            if !(p.phi_rel > -PI && p.phi_rel <= PI) {
                out.push(Violation { slot: Some(slot), rule: ViolationRule::PhiOutOfRange });
            }
        }
    }
    if !any_unmasked {
        out.push(Violation { slot: None, rule: ViolationRule::NoUnmaskedParticles });
    }
    out
}

/// Wrap every genuine `phi_rel` into `(-pi, pi]` and zero all features of
/// masked slots, preserving slot order. Idempotent.
pub fn canonicalize(cloud: &ParticleCloud) -> ParticleCloud {
    let particles = cloud
        .particles
        .iter()
        .map(|p| {
            if p.is_genuine() {
                Particle { phi_rel: wrap_phi(p.phi_rel), ..*p }
            } else {
                Particle { mask: p.mask, ..Particle::padding() }
            }
        })
        .collect();
    ParticleCloud { particles, capacity: cloud.capacity }
}

/// Jet class labels carried by a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JetClass {
    Gluon,
    LightQuark,
    TopQuark,
    Toy,
    Other,
}

impl JetClass {
    pub fn code(self) -> u8 {
        match self {
            JetClass::Gluon => 0,
            JetClass::LightQuark => 1,
            JetClass::TopQuark => 2,
            JetClass::Toy => 3,
            JetClass::Other => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(JetClass::Gluon),
            1 => Some(JetClass::LightQuark),
            2 => Some(JetClass::TopQuark),
            3 => Some(JetClass::Toy),
            4 => Some(JetClass::Other),
            _ => None,
        }
    }
}

impl fmt::Display for JetClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            JetClass::Gluon => "gluon",
            JetClass::LightQuark => "light_quark",
            JetClass::TopQuark => "top_quark",
            JetClass::Toy => "toy",
            JetClass::Other => "other",
        };
        f.write_str(s)
    }
}

impl FromStr for JetClass {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gluon" => Ok(JetClass::Gluon),
            "light_quark" => Ok(JetClass::LightQuark),
            "top_quark" => Ok(JetClass::TopQuark),
            "toy" => Ok(JetClass::Toy),
            "other" => Ok(JetClass::Other),
            other => Err(ModelError::UnknownClass(other.to_string())),
        }
    }
}

/// An ordered collection of clouds with provenance metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudSample {
    clouds: Vec<ParticleCloud>,
    label: JetClass,
    seed: Option<u64>,
}

impl CloudSample {
    pub fn new(
        clouds: Vec<ParticleCloud>,
        label: JetClass,
        seed: Option<u64>,
    ) -> Result<Self, ModelError> {
        let first = clouds.first().ok_or(ModelError::EmptySample)?.capacity();
        if let Some(other) = clouds.iter().find(|c| c.capacity() != first) {
            return Err(ModelError::MixedCapacity { first, other: other.capacity() });
        }
        Ok(Self { clouds, label, seed })
    }

    pub fn clouds(&self) -> &[ParticleCloud] {
        &self.clouds
    }

    pub fn label(&self) -> JetClass {
        self.label
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.clouds[0].capacity()
    }
}

/// A named list of finite scalar values, the carrier for per-jet or
/// per-particle feature distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSeries {
    name: String,
    values: Vec<f64>,
}

impl FeatureSeries {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Result<Self, ModelError> {
        let name = name.into();
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteSeries { name, index });
        }
        Ok(Self { name, values })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// How the Fréchet score of a report was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrechetProvider {
    /// Activations of an external classifier, read from file.
    External,
    /// Built-in feature surrogate (correlators, mass, cardinality).
    /// Scores are not comparable to externally published classifier-based
    /// numbers and are labeled accordingly.
    EfpSurrogate,
}

/// The six evaluation scores plus the configuration they were produced
/// under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema: u32,
    pub w1m: W1Score,
    pub w1p: W1Score,
    pub w1efp: W1Score,
    pub frechet: Option<f64>,
    pub frechet_provider: Option<FrechetProvider>,
    pub cov: f64,
    pub mmd: f64,
    pub config: EvalEcho,
    pub warnings: Vec<String>,
}
