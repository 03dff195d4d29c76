//! Synthetic union-of-subspaces data, the on-disk dataset format and run
//! configuration files.

mod config;
mod store;
mod synthetic;

pub use config::{load_config, parse_config, ClusterOptions, RunConfig};
pub use store::{load_dataset, save_dataset, DatasetManifest, MANIFEST_VERSION};
pub use synthetic::{gen_synthetic, select_samples, SyntheticSpec, SyntheticSplits};

use serde::{Deserialize, Serialize};

use crate::numerics::FeatureMap;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Learning,
    Validation,
}

/// `T` aligned single-channel views of the same `n` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityDataset {
    pub modalities: Vec<FeatureMap>,
    pub labels: Option<Vec<usize>>,
    pub split: Split,
}

impl ModalityDataset {
    pub fn new(modalities: Vec<FeatureMap>, labels: Option<Vec<usize>>, split: Split) -> Result<Self> {
        let ds = ModalityDataset {
            modalities,
            labels,
            split,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .modalities
            .first()
            .ok_or_else(|| Error::Dimension("dataset has no modalities".into()))?;
        for (t, m) in self.modalities.iter().enumerate() {
            if m.channels != 1 {
                return Err(Error::Dimension(format!("modality {t} has {} channels, expected 1", m.channels)));
            }
            if (m.batch, m.height, m.width) != (first.batch, first.height, first.width) {
                return Err(Error::Dimension(format!(
                    "modality {t} is {}x{}x{}, modality 0 is {}x{}x{}",
                    m.batch, m.height, m.width, first.batch, first.height, first.width
                )));
            }
            m.ensure_finite(&format!("modality {t}"))?;
        }
        if let Some(l) = &self.labels {
            if l.len() != first.batch {
                return Err(Error::Dimension(format!("{} labels for {} samples", l.len(), first.batch)));
            }
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        self.modalities[0].batch
    }

    pub fn modality_count(&self) -> usize {
        self.modalities.len()
    }

    pub fn height(&self) -> usize {
        self.modalities[0].height
    }

    pub fn width(&self) -> usize {
        self.modalities[0].width
    }

    /// Number of distinct labels, if labelled.
    pub fn cluster_count(&self) -> Option<usize> {
        self.labels.as_ref().map(|l| {
            let mut u = l.clone();
            u.sort_unstable();
            u.dedup();
            u.len()
        })
    }
}

/// Rescales each modality affinely onto [0, 1]. Modalities whose values
/// already lie in [0, 1] are left untouched so that splits normalized together
/// keep a common scale.
pub fn normalize_unit(modalities: &mut [FeatureMap]) -> Result<()> {
    for (t, m) in modalities.iter_mut().enumerate() {
        let lo = m.data.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = m.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::NonFinite(format!("modality {t}")));
        }
        if lo >= 0.0 && hi <= 1.0 {
            continue;
        }
        if hi == lo {
            return Err(Error::Degenerate(format!("modality {t} is constant")));
        }
        let scale = hi - lo;
        m.data.iter_mut().for_each(|v| *v = (*v - lo) / scale);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_modalities() {
        let a = FeatureMap::zeros(3, 2, 2, 1);
        let b = FeatureMap::zeros(4, 2, 2, 1);
        assert!(ModalityDataset::new(vec![a.clone(), b], None, Split::Learning).is_err());
        assert!(ModalityDataset::new(vec![a.clone()], Some(vec![0, 1]), Split::Learning).is_err());
        let mut nan = a.clone();
        nan.data[0] = f64::NAN;
        assert!(ModalityDataset::new(vec![a, nan], None, Split::Learning).is_err());
    }

    #[test]
    fn normalization() {
        let mut m = vec![FeatureMap::from_vec(1, 1, 3, 1, vec![-1.0, 0.0, 3.0]).unwrap()];
        normalize_unit(&mut m).unwrap();
        assert_eq!(m[0].data, vec![0.0, 0.25, 1.0]);
        let before = vec![FeatureMap::from_vec(1, 1, 2, 1, vec![0.2, 0.7]).unwrap()];
        let mut after = before.clone();
        normalize_unit(&mut after).unwrap();
        assert_eq!(before, after);
        let mut flat = vec![FeatureMap::from_vec(1, 1, 2, 1, vec![2.0, 2.0]).unwrap()];
        assert!(normalize_unit(&mut flat).is_err());
    }
}
