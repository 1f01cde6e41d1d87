//! Coordinate transforms, per-jet observables, and jet-image
//! discretization.
//!
//! Particles are treated as massless when four-momenta are rebuilt from
//! relative features; the relative jet mass is the invariant mass of the
//! summed constituent four-momenta, so it is dimensionless like `pt_rel`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{wrap_phi, ParticleCloud};

/// Default jet-image resolution (pixels per axis).
pub const DEFAULT_IMAGE_RESOLUTION: usize = 24;
/// Default jet-image half-width, half the R = 0.8 cone.
pub const DEFAULT_IMAGE_HALF_WIDTH: f64 = 0.4;

/// Negative mass-squared beyond this fraction of `E^2` indicates broken
/// inputs rather than round-off.
const MASS_CLAMP_REL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("transverse momentum is zero; pseudorapidity undefined")]
    DegenerateMomentum,
}

/// Cartesian four-momentum in consistent, arbitrary energy units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourMomentum {
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub e: f64,
}

impl FourMomentum {
    pub fn new(px: f64, py: f64, pz: f64, e: f64) -> Self {
        Self { px, py, pz, e }
    }

    /// Massless four-momentum from `(pt, eta, phi)`.
    pub fn massless(pt: f64, eta: f64, phi: f64) -> Self {
        Self { px: pt * phi.cos(), py: pt * phi.sin(), pz: pt * eta.sinh(), e: pt * eta.cosh() }
    }

    pub fn pt(&self) -> f64 {
        self.px.hypot(self.py)
    }

    /// Invariant mass, clamped at zero against round-off.
    pub fn mass(&self) -> f64 {
        let p2 = self.px * self.px + self.py * self.py + self.pz * self.pz;
        let m2 = self.e * self.e - p2;
        if m2 < 0.0 {
            debug_assert!(
                m2 >= -MASS_CLAMP_REL * self.e * self.e,
                "mass^2 = {m2} is too negative for round-off at E = {}",
                self.e
            );
            return 0.0;
        }
        m2.sqrt()
    }
}

impl std::ops::Add for FourMomentum {
    type Output = FourMomentum;

    fn add(self, rhs: FourMomentum) -> FourMomentum {
        FourMomentum {
            px: self.px + rhs.px,
            py: self.py + rhs.py,
            pz: self.pz + rhs.pz,
            e: self.e + rhs.e,
        }
    }
}

/// Transform to pseudo-angular coordinates `(pt, eta, phi)` with
/// `eta = -log(tan(theta/2))` and `phi` in `(-pi, pi]`.
pub fn to_pseudoangular(p: &FourMomentum) -> Result<(f64, f64, f64), KinematicsError> {
    let pt = p.pt();
    if pt == 0.0 {
        return Err(KinematicsError::DegenerateMomentum);
    }
    // asinh(pz/pt) equals -log(tan(theta/2)) and is stable at large |eta|.
    let eta = (p.pz / pt).asinh();
    let phi = wrap_phi(p.py.atan2(p.px));
    Ok((pt, eta, phi))
}

/// Massless four-momenta of the genuine particles, in slot order.
pub fn from_relative(cloud: &ParticleCloud) -> Vec<FourMomentum> {
    cloud.unmasked().map(|p| FourMomentum::massless(p.pt_rel, p.eta_rel, p.phi_rel)).collect()
}

/// Relative jet mass: invariant mass of the summed massless constituent
/// four-momenta. Exactly invariant under slot permutations.
pub fn jet_mass(cloud: &ParticleCloud) -> f64 {
    let mut sum = FourMomentum::new(0.0, 0.0, 0.0, 0.0);
    for (pt, eta, phi) in cloud.canonical_unmasked() {
        sum = sum + FourMomentum::massless(pt, eta, phi);
    }
    sum.mass()
}

/// Number of genuine particles.
pub fn cardinality(cloud: &ParticleCloud) -> usize {
    cloud.unmasked().count()
}

/// Discretized jet: a square grid of `pt_rel` intensities over the
/// angular plane. Row index bins `eta_rel`, column index bins `phi_rel`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JetImage {
    grid: Vec<f64>,
    resolution: usize,
    eta_half_width: f64,
    phi_half_width: f64,
}

impl JetImage {
    fn zeros(resolution: usize, half_width: f64) -> Self {
        Self {
            grid: vec![0.0; resolution * resolution],
            resolution,
            eta_half_width: half_width,
            phi_half_width: half_width,
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn eta_half_width(&self) -> f64 {
        self.eta_half_width
    }

    pub fn phi_half_width(&self) -> f64 {
        self.phi_half_width
    }

    /// Pixel intensity at (eta bin, phi bin).
    pub fn pixel(&self, eta_bin: usize, phi_bin: usize) -> f64 {
        self.grid[eta_bin * self.resolution + phi_bin]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.grid
    }

    pub fn total(&self) -> f64 {
        self.grid.iter().sum()
    }

    /// Pixel-wise mean of a set of images with identical geometry.
    pub fn mean(images: &[JetImage]) -> Option<JetImage> {
        let first = images.first()?;
        let mut out = JetImage::zeros(first.resolution, first.eta_half_width);
        for image in images {
            if image.resolution != first.resolution || image.eta_half_width != first.eta_half_width
            {
                return None;
            }
            for (acc, v) in out.grid.iter_mut().zip(&image.grid) {
                *acc += v;
            }
        }
        let n = images.len() as f64;
        for v in &mut out.grid {
            *v /= n;
        }
        Some(out)
    }
}

/// Bin the genuine particles of a cloud into a `resolution x resolution`
/// grid over `[-half_width, half_width]^2`; pixel value is the summed
/// `pt_rel` of the particles landing there. Out-of-range particles are
/// dropped; the upper boundary falls into the last bin.
pub fn discretize(cloud: &ParticleCloud, resolution: usize, half_width: f64) -> JetImage {
    assert!(resolution >= 1, "resolution must be at least 1");
    assert!(half_width > 0.0, "half_width must be positive");
    let mut image = JetImage::zeros(resolution, half_width);
    let width = 2.0 * half_width;
    let bin_of = |x: f64| -> Option<usize> {
        if x < -half_width || x > half_width {
            return None;
        }
        let b = ((x + half_width) / width * resolution as f64).floor() as usize;
        Some(b.min(resolution - 1))
    };
    for (pt, eta, phi) in cloud.canonical_unmasked() {
        if let (Some(be), Some(bp)) = (bin_of(eta), bin_of(phi)) {
            image.grid[be * resolution + bp] += pt;
        }
    }
    image
}
