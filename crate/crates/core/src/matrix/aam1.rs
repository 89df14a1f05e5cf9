//! The AAM1 container: a JSON manifest plus one row-major little-endian
//! `f32` payload per (layer, head), either embedded as base64 under
//! `payload["L{l}H{h}"]` or stored next to the manifest as `L{l}H{h}.f32`.
//!
//! A bundle on disk is either a directory holding `manifest.json` and the
//! side-car files, or a single `.json` document with embedded payloads.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Provenance, ScoreMatrix};
use crate::error::{Error, MatrixError};

pub const AAM1_VERSION: &str = "AAM1";
pub const DTYPE_F32: &str = "f32";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Rows of stored f32 softmax output sum to one only to single precision.
pub const F32_ROW_SUM_TOLERANCE: f64 = 1e-4;

fn default_method() -> String {
    "attention".into()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub sentence_id: String,
    pub n_layers: usize,
    pub n_heads: usize,
    pub encoder_tokens: Vec<String>,
    pub decoder_tokens: Vec<String>,
    pub dtype: String,
    /// `attention`, or the saliency method that produced the scores.
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default = "default_true")]
    pub normalized: bool,
    /// Layers present; all of `0..n_layers` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<usize>>,
    /// Heads present; all of `0..n_heads` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heads: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<BTreeMap<String, String>>,
}

impl Manifest {
    pub fn payload_key(layer: usize, head: usize) -> String {
        format!("L{layer}H{head}")
    }

    fn layer_list(&self) -> Vec<usize> {
        self.layers.clone().unwrap_or_else(|| (0..self.n_layers).collect())
    }

    fn head_list(&self) -> Vec<usize> {
        self.heads.clone().unwrap_or_else(|| (0..self.n_heads).collect())
    }
}

/// All matrices of one sentence, sorted by (layer, head).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBundle {
    pub sentence_id: String,
    pub n_layers: usize,
    pub n_heads: usize,
    pub method: String,
    pub encoder_tokens: Vec<String>,
    pub decoder_tokens: Vec<String>,
    pub matrices: Vec<ScoreMatrix>,
}

impl AttentionBundle {
    pub fn layer(&self, layer: usize) -> Vec<ScoreMatrix> {
        self.matrices.iter().filter(|m| m.layer() == layer).cloned().collect()
    }
}

fn decode_f32(bytes: &[u8], rows: usize, cols: usize, layer: usize, head: usize) -> Result<Array2<f64>, MatrixError> {
    if bytes.len() != rows * cols * 4 {
        return Err(MatrixError::Dimension(format!(
            "payload L{layer}H{head} has {} bytes, expected {} for {rows}x{cols} f32",
            bytes.len(),
            rows * cols * 4
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), data).expect("length checked"))
}

fn encode_f32(values: &Array2<f64>) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

/// Parses a manifest document; `sidecar_dir` resolves `L{l}H{h}.f32` files
/// when payloads are not embedded.
pub fn parse_bundle(text: &str, sidecar_dir: Option<&Path>) -> Result<AttentionBundle, Error> {
    let manifest: Manifest =
        serde_json::from_str(text).map_err(|e| MatrixError::Manifest(e.to_string()))?;
    if manifest.version != AAM1_VERSION {
        return Err(MatrixError::UnknownVersion(manifest.version).into());
    }
    if manifest.dtype != DTYPE_F32 {
        return Err(MatrixError::UnsupportedDtype(manifest.dtype).into());
    }
    let layers = manifest.layer_list();
    let heads = manifest.head_list();
    if let Some(l) = layers.iter().find(|&&l| l >= manifest.n_layers) {
        return Err(MatrixError::Manifest(format!("layer {l} >= n_layers")).into());
    }
    if let Some(h) = heads.iter().find(|&&h| h >= manifest.n_heads) {
        return Err(MatrixError::Manifest(format!("head {h} >= n_heads")).into());
    }
    let rows = manifest.decoder_tokens.len();
    let cols = manifest.encoder_tokens.len();
    let mut matrices = Vec::with_capacity(layers.len() * heads.len());
    let mut layers_sorted = layers.clone();
    layers_sorted.sort_unstable();
    let mut heads_sorted = heads.clone();
    heads_sorted.sort_unstable();
    for &layer in &layers_sorted {
        for &head in &heads_sorted {
            let key = Manifest::payload_key(layer, head);
            let bytes = match manifest.payload.as_ref().and_then(|p| p.get(&key)) {
                Some(b64) => B64
                    .decode(b64)
                    .map_err(|e| MatrixError::Manifest(format!("payload {key}: {e}")))?,
                None => {
                    let dir = sidecar_dir.ok_or(MatrixError::MissingPayload { layer, head })?;
                    let path = dir.join(format!("{key}.f32"));
                    if !path.exists() {
                        return Err(MatrixError::MissingPayload { layer, head }.into());
                    }
                    fs::read(&path).map_err(|e| Error::io(&path, e))?
                }
            };
            let values = decode_f32(&bytes, rows, cols, layer, head)?;
            let mut m = ScoreMatrix::new(
                values,
                Provenance::Head { layer, head },
                manifest.encoder_tokens.clone(),
                manifest.decoder_tokens.clone(),
            )?;
            if manifest.normalized {
                m = m.into_normalized(F32_ROW_SUM_TOLERANCE)?;
            }
            matrices.push(m);
        }
    }
    Ok(AttentionBundle {
        sentence_id: manifest.sentence_id,
        n_layers: manifest.n_layers,
        n_heads: manifest.n_heads,
        method: manifest.method,
        encoder_tokens: manifest.encoder_tokens,
        decoder_tokens: manifest.decoder_tokens,
        matrices,
    })
}

/// Loads one bundle: a directory with `manifest.json`, or a manifest file.
pub fn load_matrices(path: impl AsRef<Path>) -> Result<AttentionBundle, Error> {
    let path = path.as_ref();
    let (manifest_path, dir): (PathBuf, Option<&Path>) = if path.is_dir() {
        (path.join(MANIFEST_FILE), Some(path))
    } else {
        (path.to_path_buf(), path.parent())
    };
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    parse_bundle(&text, dir)
}

/// Loads every bundle under `dir` (sub-directories with a manifest and
/// `.json` documents), keyed by sentence id.
pub fn load_matrix_dir(dir: impl AsRef<Path>) -> Result<BTreeMap<String, AttentionBundle>, Error> {
    let dir = dir.as_ref();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    if dir.join(MANIFEST_FILE).exists() {
        entries = vec![dir.to_path_buf()];
    }
    let mut out = BTreeMap::new();
    for p in entries {
        let is_bundle = (p.is_dir() && p.join(MANIFEST_FILE).exists())
            || (p.is_file() && p.extension().is_some_and(|e| e == "json"));
        if !is_bundle {
            continue;
        }
        let bundle = load_matrices(&p)?;
        if out.contains_key(&bundle.sentence_id) {
            return Err(Error::Input(format!("duplicate sentence id `{}`", bundle.sentence_id)));
        }
        out.insert(bundle.sentence_id.clone(), bundle);
    }
    Ok(out)
}

fn manifest_of(bundle: &AttentionBundle, normalized: bool) -> Manifest {
    let mut layers: Vec<usize> = bundle.matrices.iter().map(ScoreMatrix::layer).collect();
    layers.dedup();
    let mut heads: Vec<usize> = bundle.matrices.iter().filter_map(ScoreMatrix::head).collect();
    heads.sort_unstable();
    heads.dedup();
    let full_layers = layers == (0..bundle.n_layers).collect::<Vec<_>>();
    let full_heads = heads == (0..bundle.n_heads).collect::<Vec<_>>();
    Manifest {
        version: AAM1_VERSION.into(),
        sentence_id: bundle.sentence_id.clone(),
        n_layers: bundle.n_layers,
        n_heads: bundle.n_heads,
        encoder_tokens: bundle.encoder_tokens.clone(),
        decoder_tokens: bundle.decoder_tokens.clone(),
        dtype: DTYPE_F32.into(),
        method: bundle.method.clone(),
        normalized,
        layers: (!full_layers).then_some(layers),
        heads: (!full_heads).then_some(heads),
        payload: None,
    }
}

/// Serializes a bundle as one document with base64 payloads.
pub fn write_bundle_embedded(bundle: &AttentionBundle) -> String {
    let normalized = bundle.matrices.iter().all(|m| m.normalized);
    let mut manifest = manifest_of(bundle, normalized);
    let payload = bundle
        .matrices
        .iter()
        .filter_map(|m| {
            let h = m.head()?;
            Some((Manifest::payload_key(m.layer(), h), B64.encode(encode_f32(&m.values))))
        })
        .collect();
    manifest.payload = Some(payload);
    serde_json::to_string_pretty(&manifest).expect("manifest serializes")
}

/// Writes `manifest.json` plus `L{l}H{h}.f32` side-car files into `dir`.
pub fn write_bundle_dir(bundle: &AttentionBundle, dir: impl AsRef<Path>) -> Result<(), Error> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let normalized = bundle.matrices.iter().all(|m| m.normalized);
    let manifest = manifest_of(bundle, normalized);
    for m in &bundle.matrices {
        if let Some(h) = m.head() {
            let path = dir.join(format!("{}.f32", Manifest::payload_key(m.layer(), h)));
            fs::write(&path, encode_f32(&m.values)).map_err(|e| Error::io(&path, e))?;
        }
    }
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn manifest_json(payload: &str, normalized: bool) -> String {
        format!(
            r#"{{"version":"AAM1","sentence_id":"s1","n_layers":1,"n_heads":1,
                "encoder_tokens":["a","b","c"],"decoder_tokens":["x","y"],
                "dtype":"f32","normalized":{normalized},"payload":{{"L0H0":"{payload}"}}}}"#
        )
    }

    fn b64(values: &[f32]) -> String {
        B64.encode(values.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>())
    }

    #[test]
    fn loads_normalized_matrix() {
        let text = manifest_json(&b64(&[0.5, 0.3, 0.2, 0.1, 0.8, 0.1]), true);
        let b = parse_bundle(&text, None).unwrap();
        assert_eq!(b.matrices.len(), 1);
        let m = &b.matrices[0];
        assert!(m.normalized);
        assert_eq!(m.dim(), (2, 3));
        assert!((m.values[[1, 1]] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn rejects_unnormalized_row() {
        let text = manifest_json(&b64(&[0.5, 0.5, 0.5, 0.1, 0.8, 0.1]), true);
        let err = parse_bundle(&text, None).unwrap_err();
        assert!(matches!(err, Error::Matrix(MatrixError::NotNormalized { row: 0, .. })));
        let text = manifest_json(&b64(&[0.5, 0.5, 0.5, 0.1, 0.8, 0.1]), false);
        assert!(parse_bundle(&text, None).is_ok());
    }

    #[test]
    fn rejects_bad_payloads() {
        let short = manifest_json(&b64(&[0.5, 0.5]), false);
        assert!(matches!(parse_bundle(&short, None), Err(Error::Matrix(MatrixError::Dimension(_)))));
        let nan = manifest_json(&b64(&[f32::NAN, 0.0, 0.0, 0.0, 0.0, 0.0]), false);
        assert!(matches!(parse_bundle(&nan, None), Err(Error::Matrix(MatrixError::NonFinite { .. }))));
        let v2 = manifest_json(&b64(&[0.0; 6]), false).replace("AAM1", "AAM2");
        assert!(matches!(parse_bundle(&v2, None), Err(Error::Matrix(MatrixError::UnknownVersion(_)))));
    }

    #[test]
    fn sidecar_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let enc: Vec<String> = vec!["a".into(), "b".into()];
        let dec: Vec<String> = vec!["x".into()];
        let matrices = (0..2)
            .flat_map(|l| (0..3).map(move |h| (l, h)))
            .map(|(l, h)| {
                let p = (l * 3 + h) as f64 / 10.0;
                ScoreMatrix::new(array![[p, 1.0 - p]], Provenance::Head { layer: l, head: h }, enc.clone(), dec.clone())
                    .unwrap()
                    .into_normalized(1e-6)
                    .unwrap()
            })
            .collect();
        let bundle = AttentionBundle {
            sentence_id: "s".into(),
            n_layers: 2,
            n_heads: 3,
            method: "attention".into(),
            encoder_tokens: enc,
            decoder_tokens: dec,
            matrices,
        };
        write_bundle_dir(&bundle, dir.path().join("s")).unwrap();
        let loaded = load_matrix_dir(dir.path()).unwrap();
        let got = &loaded["s"];
        assert_eq!(got.matrices.len(), 6);
        for (a, b) in got.matrices.iter().zip(&bundle.matrices) {
            assert_eq!(a.provenance, b.provenance);
            assert!((&a.values - &b.values).iter().all(|d| d.abs() < 1e-7));
        }
        let embedded = parse_bundle(&write_bundle_embedded(&bundle), None).unwrap();
        assert_eq!(embedded.matrices.len(), 6);
    }
}
