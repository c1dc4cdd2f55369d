//! Dataset directory: `dataset.json` manifest plus a `pixels.bin` blob
//! (`FFACES01` magic, then every image as row-major little-endian f32).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use upada_core::faces::{Dataset, Domain, FactorSpec, Sample};

use crate::error::{io, Error, Result};

pub const MAGIC: &[u8; 8] = b"FFACES01";
pub const MANIFEST_FILE: &str = "dataset.json";
pub const BLOB_FILE: &str = "pixels.bin";
const FORMAT: &str = "ffaces/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub id: usize,
    pub subject: usize,
    pub expression: usize,
    pub pose: usize,
    pub domain: Domain,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub spec: FactorSpec,
    pub count: usize,
    pub pixels_per_image: usize,
    pub blob: String,
    pub blob_sha256: String,
    pub samples: Vec<SampleMeta>,
}

pub fn encode_blob(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(MAGIC.len() + ds.len() * ds.spec.pixels() * 4);
    out.extend_from_slice(MAGIC);
    for s in ds.samples() {
        for &v in &s.image {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn manifest_for(ds: &Dataset, blob: &[u8]) -> DatasetManifest {
    DatasetManifest {
        format: FORMAT.into(),
        spec: ds.spec.clone(),
        count: ds.len(),
        pixels_per_image: ds.spec.pixels(),
        blob: BLOB_FILE.into(),
        blob_sha256: hex::encode(Sha256::digest(blob)),
        samples: ds
            .samples()
            .iter()
            .map(|s| SampleMeta {
                id: s.id,
                subject: s.subject,
                expression: s.expression,
                pose: s.pose,
                domain: s.domain,
                noise_seed: s.noise_seed,
            })
            .collect(),
    }
}

/// Writes the manifest and blob into `dir` (created if needed).
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let blob = encode_blob(ds);
    let manifest = manifest_for(ds, &blob);
    let blob_path = dir.join(BLOB_FILE);
    fs::write(&blob_path, &blob).map_err(io(&blob_path))?;
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, json).map_err(io(&path))?;
    Ok(manifest)
}

/// SHA-256 of the manifest file, which itself pins the blob's hash.
pub fn dataset_hash(dir: &Path) -> Result<String> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(io(&path))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(io(&path))?;
    let m: DatasetManifest =
        serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, "manifest", e.to_string()))?;
    let blob_path = dir.join(&m.blob);
    let blob = fs::read(&blob_path).map_err(io(&blob_path))?;
    decode(&m, &path, &blob, &blob_path)
}

/// Validates a manifest against its blob and rebuilds the dataset.
pub fn decode(m: &DatasetManifest, path: &Path, blob: &[u8], blob_path: &Path) -> Result<Dataset> {
    if m.format != FORMAT {
        return Err(Error::format(path, "format", format!("expected `{FORMAT}`, found `{}`", m.format)));
    }
    m.spec
        .validate()
        .map_err(|e| Error::format(path, "spec", e.to_string()))?;
    if m.count != m.samples.len() {
        return Err(Error::format(
            path,
            "count",
            format!("manifest says {} samples but lists {}", m.count, m.samples.len()),
        ));
    }
    let d = m.spec.pixels();
    if m.pixels_per_image != d {
        return Err(Error::format(
            path,
            "pixels_per_image",
            format!("{} does not match side {} (expected {d})", m.pixels_per_image, m.spec.side),
        ));
    }
    if blob.len() < MAGIC.len() || &blob[..MAGIC.len()] != MAGIC {
        return Err(Error::format(blob_path, "offset 0", "missing FFACES01 magic"));
    }
    let expected = MAGIC.len() + m.count * d * 4;
    if blob.len() != expected {
        let sample = (blob.len().saturating_sub(MAGIC.len())) / (d * 4);
        return Err(Error::format(
            blob_path,
            format!("offset {}", blob.len().min(expected)),
            format!(
                "pixel blob has {} bytes, expected {expected} (first incomplete sample: {sample})",
                blob.len()
            ),
        ));
    }
    let digest = hex::encode(Sha256::digest(blob));
    if digest != m.blob_sha256 {
        return Err(Error::format(path, "blob_sha256", "does not match the pixel blob"));
    }
    let mut samples = Vec::with_capacity(m.count);
    for (k, meta) in m.samples.iter().enumerate() {
        for (field, v, n) in [
            ("subject", meta.subject, m.spec.n_subjects),
            ("expression", meta.expression, m.spec.n_expressions),
            ("pose", meta.pose, m.spec.n_poses),
        ] {
            if v >= n {
                return Err(Error::format(path, format!("samples[{k}].{field}"), format!("{v} out of range 0..{n}")));
            }
        }
        let start = MAGIC.len() + k * d * 4;
        let image: Vec<f32> = blob[start..start + d * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(j) = image.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::format(
                blob_path,
                format!("offset {}", start + j * 4),
                format!("pixel {} outside [0, 1]", image[j]),
            ));
        }
        samples.push(Sample {
            id: meta.id,
            subject: meta.subject,
            expression: meta.expression,
            pose: meta.pose,
            domain: meta.domain,
            noise_seed: meta.noise_seed,
            image,
        });
    }
    Ok(Dataset::from_samples(m.spec.clone(), samples)?)
}
