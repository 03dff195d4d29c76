//! Dataset directory: `manifest.json`, one `modality_{t}.f64` file per
//! modality (little-endian `f64`, sample-major, `n·h·w` values) and an
//! optional `labels.csv` (`sample_id,label`).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{normalize_unit, ModalityDataset, Split};
use crate::numerics::FeatureMap;
use crate::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
const DTYPE: &str = "f64le";
const LABEL_FILE: &str = "labels.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityFile {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub modalities: usize,
    pub samples: usize,
    pub height: usize,
    pub width: usize,
    pub dtype: String,
    pub split: Split,
    pub files: Vec<ModalityFile>,
    pub label_file: Option<String>,
    pub label_sha256: Option<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn labels_csv(labels: &[usize]) -> String {
    let mut s = String::from("sample_id,label\n");
    for (i, l) in labels.iter().enumerate() {
        writeln!(s, "{i},{l}").expect("writing to a String");
    }
    s
}

fn parse_labels(text: &str, n: usize) -> Result<Vec<usize>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("sample_id,label") {
        return Err(Error::Format("labels.csv must start with the header sample_id,label".into()));
    }
    let mut labels = Vec::with_capacity(n);
    for (row, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("labels.csv line {}: expected <sample_id>,<label>", row + 2));
        let (id, label) = line.split_once(',').ok_or_else(bad)?;
        let id: usize = id.trim().parse().map_err(|_| bad())?;
        if id != labels.len() {
            return Err(Error::Format(format!("labels.csv line {}: sample ids must be 0..n in order", row + 2)));
        }
        labels.push(label.trim().parse().map_err(|_| bad())?);
    }
    if labels.len() != n {
        return Err(Error::Format(format!("labels.csv has {} rows, manifest says {n} samples", labels.len())));
    }
    Ok(labels)
}

/// Writes `ds` into `dir` (created if missing). Output bytes depend only on
/// the dataset.
pub fn save_dataset(ds: &ModalityDataset, dir: &Path) -> Result<DatasetManifest> {
    ds.validate()?;
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(ds.modality_count());
    for (t, m) in ds.modalities.iter().enumerate() {
        let mut bytes = Vec::with_capacity(m.data.len() * 8);
        for v in &m.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let name = format!("modality_{t}.f64");
        fs::write(dir.join(&name), &bytes)?;
        files.push(ModalityFile {
            file: name,
            sha256: sha256_hex(&bytes),
        });
    }
    let (label_file, label_sha256) = match &ds.labels {
        Some(l) => {
            let csv = labels_csv(l);
            fs::write(dir.join(LABEL_FILE), csv.as_bytes())?;
            (Some(LABEL_FILE.to_string()), Some(sha256_hex(csv.as_bytes())))
        }
        None => (None, None),
    };
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        modalities: ds.modality_count(),
        samples: ds.samples(),
        height: ds.height(),
        width: ds.width(),
        dtype: DTYPE.into(),
        split: ds.split,
        files,
        label_file,
        label_sha256,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

fn read_file(dir: &Path, name: &str) -> Result<Vec<u8>> {
    if name.contains('/') || name.contains('\\') || name == ".." {
        return Err(Error::Format(format!("file name {name:?} must not contain a path")));
    }
    fs::read(dir.join(name)).map_err(|e| Error::Format(format!("cannot read {}: {e}", dir.join(name).display())))
}

/// Loads and verifies a dataset directory. Values outside [0, 1] are rescaled
/// per modality.
pub fn load_dataset(dir: &Path) -> Result<ModalityDataset> {
    let text = fs::read_to_string(dir.join("manifest.json"))
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", dir.join("manifest.json").display())))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest.json: {e}")))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Format(format!("unsupported manifest version {}", manifest.version)));
    }
    if manifest.dtype != DTYPE {
        return Err(Error::Format(format!("unsupported dtype {:?}, expected {DTYPE:?}", manifest.dtype)));
    }
    if manifest.files.len() != manifest.modalities || manifest.modalities == 0 {
        return Err(Error::Format(format!(
            "manifest lists {} files for {} modalities",
            manifest.files.len(),
            manifest.modalities
        )));
    }
    let per_file = manifest.samples * manifest.height * manifest.width;
    let mut modalities = Vec::with_capacity(manifest.modalities);
    for f in &manifest.files {
        let bytes = read_file(dir, &f.file)?;
        if bytes.len() != per_file * 8 {
            return Err(Error::Format(format!(
                "{} holds {} bytes, manifest shape needs {}",
                f.file,
                bytes.len(),
                per_file * 8
            )));
        }
        if sha256_hex(&bytes) != f.sha256 {
            return Err(Error::Format(format!("checksum mismatch for {}", f.file)));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        modalities.push(FeatureMap::from_vec(manifest.samples, manifest.height, manifest.width, 1, data)?);
    }
    let labels = match (&manifest.label_file, &manifest.label_sha256) {
        (Some(name), sum) => {
            let bytes = read_file(dir, name)?;
            if let Some(sum) = sum {
                if &sha256_hex(&bytes) != sum {
                    return Err(Error::Format(format!("checksum mismatch for {name}")));
                }
            }
            let text = String::from_utf8(bytes).map_err(|_| Error::Format(format!("{name} is not UTF-8")))?;
            Some(parse_labels(&text, manifest.samples)?)
        }
        (None, _) => None,
    };
    normalize_unit(&mut modalities)?;
    ModalityDataset::new(modalities, labels, manifest.split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{gen_synthetic, SyntheticSpec};

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let s = gen_synthetic(&SyntheticSpec::fixture(8)).unwrap();
        save_dataset(&s.validation, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), s.validation);
    }

    #[test]
    fn saving_twice_gives_identical_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let s = gen_synthetic(&SyntheticSpec::fixture(8)).unwrap();
        save_dataset(&s.learning, a.path()).unwrap();
        save_dataset(&s.learning, b.path()).unwrap();
        for f in ["manifest.json", "modality_0.f64", "labels.csv"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        }
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let s = gen_synthetic(&SyntheticSpec::fixture(8)).unwrap();
        save_dataset(&s.validation, dir.path()).unwrap();
        let manifest = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        fs::write(dir.path().join("manifest.json"), manifest.replace("\"height\": 8", "\"height\": 7")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Format(_))));
        fs::write(dir.path().join("manifest.json"), &manifest).unwrap();
        let mut bytes = fs::read(dir.path().join("modality_1.f64")).unwrap();
        bytes[3] ^= 1;
        fs::write(dir.path().join("modality_1.f64"), bytes).unwrap();
        assert!(load_dataset(dir.path()).unwrap_err().to_string().contains("checksum"));
    }

    #[test]
    fn missing_directory_is_an_error() {
        assert!(load_dataset(Path::new("/nonexistent/dataset")).is_err());
    }

    #[test]
    fn labels_parse() {
        assert_eq!(parse_labels("sample_id,label\n0,2\n1,0\n", 2).unwrap(), vec![2, 0]);
        assert!(parse_labels("id,label\n0,2\n", 1).is_err());
        assert!(parse_labels("sample_id,label\n1,2\n", 1).is_err());
        assert!(parse_labels("sample_id,label\n0,x\n", 1).is_err());
    }
}
