//! Bit-exact dataset and activation file formats, plus CSV interchange.
//!
//! Cloud files (`JNP1`) carry a fixed 24-byte little-endian header
//! (magic, version, jet count, capacity, feature count, label code,
//! three reserved bytes) followed by `n_jets * capacity * 4` 32-bit
//! floats in `(eta_rel, phi_rel, pt_rel, mask)` slot order. Activation
//! files (`JACT`) carry a 12-byte header (magic, row count, dimension)
//! followed by row-major 32-bit floats; row `i` belongs to cloud `i` of
//! a named cloud file. Clouds are canonicalized on write so masked
//! slots serialize as zeros and files are byte-reproducible.

use std::fs;
use std::path::Path;
use thiserror::Error;

use crate::frechet::ActivationMatrix;
use crate::model::{canonicalize, validate, CloudSample, JetClass, Particle, ParticleCloud};
use crate::mplayer::{Activation, FeatureMap, MpError};

pub const CLOUD_MAGIC: [u8; 4] = *b"JNP1";
pub const CLOUD_VERSION: u32 = 1;
pub const CLOUD_HEADER_LEN: usize = 24;
pub const N_FEATURES: u32 = 4;

pub const ACTIVATION_MAGIC: [u8; 4] = *b"JACT";
pub const ACTIVATION_HEADER_LEN: usize = 12;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("bad magic {found:?} in {path}")]
    BadMagic { path: String, found: [u8; 4] },
    #[error("unsupported version {found} in {path}")]
    BadVersion { path: String, found: u32 },
    #[error("corrupt payload in {path} at byte offset {offset}: {detail}")]
    CorruptPayload { path: String, offset: u64, detail: String },
    #[error("jet {jet} in {path} failed validation: {detail}")]
    ValidationFailure { path: String, jet: usize, detail: String },
    #[error("parse failure in {path} at line {line}: {detail}")]
    ParseFailure { path: String, line: usize, detail: String },
    #[error("i/o failure on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    FeatureMap(#[from] MpError),
}

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io { path: path.display().to_string(), source }
}

/// Serialize a sample into the binary cloud format.
pub fn write_clouds_bytes(sample: &CloudSample) -> Vec<u8> {
    let capacity = sample.capacity();
    let mut out = Vec::with_capacity(CLOUD_HEADER_LEN + sample.len() * capacity * 16);
    out.extend_from_slice(&CLOUD_MAGIC);
    out.extend_from_slice(&CLOUD_VERSION.to_le_bytes());
    out.extend_from_slice(&(sample.len() as u32).to_le_bytes());
    out.extend_from_slice(&(capacity as u32).to_le_bytes());
    out.extend_from_slice(&N_FEATURES.to_le_bytes());
    out.push(sample.label().code());
    out.extend_from_slice(&[0u8; 3]);
    for cloud in sample.clouds() {
        let canon = canonicalize(cloud);
        let mut slots = canon.particles().to_vec();
        slots.resize(capacity, Particle::padding());
        for p in &slots {
            out.extend_from_slice(&(p.eta_rel as f32).to_le_bytes());
            out.extend_from_slice(&(p.phi_rel as f32).to_le_bytes());
            out.extend_from_slice(&(p.pt_rel as f32).to_le_bytes());
            out.extend_from_slice(&(p.mask as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_clouds(sample: &CloudSample, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    fs::write(path, write_clouds_bytes(sample)).map_err(|e| io_err(path, e))
}

/// Parse the binary cloud format, validating every cloud strictly.
pub fn read_clouds_bytes(bytes: &[u8], path_label: &str) -> Result<CloudSample, IoError> {
    let corrupt = |offset: usize, detail: &str| IoError::CorruptPayload {
        path: path_label.to_string(),
        offset: offset as u64,
        detail: detail.to_string(),
    };
    if bytes.len() < CLOUD_HEADER_LEN {
        return Err(corrupt(bytes.len(), "file shorter than the 24-byte header"));
    }
    if bytes[0..4] != CLOUD_MAGIC {
        return Err(IoError::BadMagic {
            path: path_label.to_string(),
            found: [bytes[0], bytes[1], bytes[2], bytes[3]],
        });
    }
    let read_u32 =
        |at: usize| u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
    let version = read_u32(4);
    if version != CLOUD_VERSION {
        return Err(IoError::BadVersion { path: path_label.to_string(), found: version });
    }
    let n_jets = read_u32(8) as usize;
    let capacity = read_u32(12) as usize;
    let n_features = read_u32(16);
    if n_features != N_FEATURES {
        return Err(corrupt(16, &format!("n_features must be {N_FEATURES}, found {n_features}")));
    }
    if n_jets == 0 {
        return Err(corrupt(8, "n_jets is zero"));
    }
    let label = JetClass::from_code(bytes[20])
        .ok_or_else(|| corrupt(20, &format!("unknown label code {}", bytes[20])))?;

    let expected = CLOUD_HEADER_LEN + n_jets * capacity * 16;
    if bytes.len() < expected {
        return Err(corrupt(bytes.len(), &format!("payload truncated, expected {expected} bytes")));
    }
    if bytes.len() > expected {
        return Err(corrupt(expected, "trailing bytes after payload"));
    }

    let mut clouds = Vec::with_capacity(n_jets);
    let mut at = CLOUD_HEADER_LEN;
    for jet in 0..n_jets {
        let mut slots = Vec::with_capacity(capacity);
        for _ in 0..capacity {
            let f = |k: usize| {
                f32::from_le_bytes([
                    bytes[at + k],
                    bytes[at + k + 1],
                    bytes[at + k + 2],
                    bytes[at + k + 3],
                ]) as f64
            };
            slots.push(Particle { eta_rel: f(0), phi_rel: f(4), pt_rel: f(8), mask: f(12) });
            at += 16;
        }
        let cloud = ParticleCloud::new(slots, capacity);
        let violations = validate(&cloud);
        if !violations.is_empty() {
            let detail = violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
            return Err(IoError::ValidationFailure { path: path_label.to_string(), jet, detail });
        }
        clouds.push(cloud);
    }
    CloudSample::new(clouds, label, None).map_err(|e| IoError::ValidationFailure {
        path: path_label.to_string(),
        jet: 0,
        detail: e.to_string(),
    })
}

pub fn read_clouds(path: impl AsRef<Path>) -> Result<CloudSample, IoError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    read_clouds_bytes(&bytes, &path.display().to_string())
}

pub const CSV_HEADER: &str = "jet_id,slot,eta_rel,phi_rel,pt_rel,mask";

/// Write a sample as CSV with one row per slot. Real-valued features are
/// serialized with nine significant digits; the mask prints as 0 or 1.
pub fn write_csv(sample: &CloudSample, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    let capacity = sample.capacity();
    for (jet, cloud) in sample.clouds().iter().enumerate() {
        let canon = canonicalize(cloud);
        let mut slots = canon.particles().to_vec();
        slots.resize(capacity, Particle::padding());
        for (slot, p) in slots.iter().enumerate() {
            out.push_str(&format!(
                "{jet},{slot},{:.8e},{:.8e},{:.8e},{}\n",
                p.eta_rel,
                p.phi_rel,
                p.pt_rel,
                if p.is_genuine() { 1 } else { 0 }
            ));
        }
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Parse the CSV cloud format. The label is not part of the CSV schema,
/// so samples read back with [`JetClass::Other`].
pub fn read_csv(path: impl AsRef<Path>) -> Result<CloudSample, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let label = path.display().to_string();
    let fail = |line: usize, detail: &str| IoError::ParseFailure {
        path: label.clone(),
        line,
        detail: detail.to_string(),
    };

    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == CSV_HEADER => {}
        Some((_, _)) => return Err(fail(1, &format!("header must be '{CSV_HEADER}'"))),
        None => return Err(fail(1, "empty file")),
    }

    let mut clouds: Vec<ParticleCloud> = Vec::new();
    let mut current_jet: Option<usize> = None;
    let mut slots: Vec<Particle> = Vec::new();
    let mut capacity: Option<usize> = None;

    let finish_jet = |slots: &mut Vec<Particle>,
                      capacity: &mut Option<usize>,
                      line: usize|
     -> Result<ParticleCloud, IoError> {
        let cap = *capacity.get_or_insert(slots.len());
        if slots.len() != cap {
            return Err(fail(line, &format!("jet has {} slots, expected {cap}", slots.len())));
        }
        Ok(ParticleCloud::new(std::mem::take(slots), cap))
    };

    for (idx, line) in lines {
        let line_no = idx + 1;
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 6 {
            return Err(fail(line_no, &format!("expected 6 fields, found {}", fields.len())));
        }
        let jet: usize =
            fields[0].parse().map_err(|_| fail(line_no, "jet_id is not an integer"))?;
        let slot: usize = fields[1].parse().map_err(|_| fail(line_no, "slot is not an integer"))?;
        let mut values = [0.0f64; 4];
        for (k, v) in values.iter_mut().enumerate() {
            *v = fields[k + 2]
                .parse()
                .map_err(|_| fail(line_no, &format!("field {} is not a number", k + 3)))?;
        }
        match current_jet {
            Some(j) if j == jet => {}
            Some(_) => {
                let cloud = finish_jet(&mut slots, &mut capacity, line_no)?;
                clouds.push(cloud);
                current_jet = Some(jet);
            }
            None => current_jet = Some(jet),
        }
        if slot != slots.len() {
            return Err(fail(
                line_no,
                &format!("slot {slot} out of order, expected {}", slots.len()),
            ));
        }
        slots.push(Particle {
            eta_rel: values[0],
            phi_rel: values[1],
            pt_rel: values[2],
            mask: values[3],
        });
    }
    if current_jet.is_some() {
        let cloud = finish_jet(&mut slots, &mut capacity, text.lines().count())?;
        clouds.push(cloud);
    }
    for (jet, cloud) in clouds.iter().enumerate() {
        let violations = validate(cloud);
        if !violations.is_empty() {
            let detail = violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
            return Err(IoError::ValidationFailure { path: label.clone(), jet, detail });
        }
    }
    CloudSample::new(clouds, JetClass::Other, None).map_err(|e| IoError::ValidationFailure {
        path: label.clone(),
        jet: 0,
        detail: e.to_string(),
    })
}

/// Serialize an activation matrix.
pub fn write_activations_bytes(acts: &ActivationMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(ACTIVATION_HEADER_LEN + acts.data().len() * 4);
    out.extend_from_slice(&ACTIVATION_MAGIC);
    out.extend_from_slice(&(acts.n_rows() as u32).to_le_bytes());
    out.extend_from_slice(&(acts.dim() as u32).to_le_bytes());
    for v in acts.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn write_activations(acts: &ActivationMatrix, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    fs::write(path, write_activations_bytes(acts)).map_err(|e| io_err(path, e))
}

pub fn read_activations_bytes(bytes: &[u8], path_label: &str) -> Result<ActivationMatrix, IoError> {
    let corrupt = |offset: usize, detail: &str| IoError::CorruptPayload {
        path: path_label.to_string(),
        offset: offset as u64,
        detail: detail.to_string(),
    };
    if bytes.len() < ACTIVATION_HEADER_LEN {
        return Err(corrupt(bytes.len(), "file shorter than the 12-byte header"));
    }
    if bytes[0..4] != ACTIVATION_MAGIC {
        return Err(IoError::BadMagic {
            path: path_label.to_string(),
            found: [bytes[0], bytes[1], bytes[2], bytes[3]],
        });
    }
    let n_rows = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let dim = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let expected = ACTIVATION_HEADER_LEN + n_rows * dim * 4;
    if bytes.len() < expected {
        return Err(corrupt(bytes.len(), &format!("payload truncated, expected {expected} bytes")));
    }
    if bytes.len() > expected {
        return Err(corrupt(expected, "trailing bytes after payload"));
    }
    let mut data = Vec::with_capacity(n_rows * dim);
    for (k, chunk) in bytes[ACTIVATION_HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
        if !v.is_finite() {
            return Err(corrupt(ACTIVATION_HEADER_LEN + 4 * k, "non-finite activation"));
        }
        data.push(v);
    }
    ActivationMatrix::new(n_rows, dim, data)
        .map_err(|e| corrupt(ACTIVATION_HEADER_LEN, &e.to_string()))
}

pub fn read_activations(path: impl AsRef<Path>) -> Result<ActivationMatrix, IoError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    read_activations_bytes(&bytes, &path.display().to_string())
}

/// Store feature-map parameters in the activation container (one row of
/// flattened weights and biases), for cross-language parity tests.
/// 32-bit storage rounds the parameters accordingly.
pub fn write_feature_map(map: &FeatureMap, path: impl AsRef<Path>) -> Result<(), IoError> {
    let params = map.flat_params();
    let acts =
        ActivationMatrix::new(1, params.len(), params).expect("feature map parameters are finite");
    write_activations(&acts, path)
}

/// Rebuild a feature map written by [`write_feature_map`]; the layer
/// dimensions and output activation are the caller's contract.
pub fn read_feature_map(
    path: impl AsRef<Path>,
    dims: Vec<usize>,
    output_activation: Activation,
) -> Result<FeatureMap, IoError> {
    let acts = read_activations(path)?;
    Ok(FeatureMap::from_flat_params(dims, acts.data(), output_activation)?)
}
