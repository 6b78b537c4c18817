use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use se2inv::classification::{ClassificationConfig, Metric};
use se2inv::experiments::InvarianceConfig;
use se2inv::mra::MraConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InvarianceFile {
    /// Image file; a random image from `image_seed` when absent.
    pub image: Option<PathBuf>,
    pub image_seed: u64,
    pub invariance: InvarianceConfig,
}

impl Default for InvarianceFile {
    fn default() -> Self {
        Self {
            image: None,
            image_seed: 0,
            invariance: InvarianceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MraFile {
    /// Ground-truth image used for every trial; random images seeded
    /// `truth_seed + trial` when absent.
    pub truth: Option<PathBuf>,
    pub truth_seed: u64,
    pub num_images_list: Vec<usize>,
    /// `null` entries mean noiseless.
    pub snr_list: Vec<Option<f64>>,
    pub trials: usize,
    pub mra: MraConfig,
}

impl Default for MraFile {
    fn default() -> Self {
        Self {
            truth: None,
            truth_seed: 0,
            num_images_list: vec![100, 1_000, 10_000],
            snr_list: vec![Some(0.5)],
            trials: 15,
            mra: MraConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyFile {
    pub t_max_list: Vec<f64>,
    pub metrics: Vec<Metric>,
    pub classification: ClassificationConfig,
}

impl Default for ClassifyFile {
    fn default() -> Self {
        Self {
            t_max_list: vec![0.0, 2.5, 5.0, 7.5, 10.0],
            metrics: vec![Metric::Se2, Metric::Rotation],
            classification: ClassificationConfig::default(),
        }
    }
}

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn dump<T: Serialize>(cfg: &T) -> Result<(), CliError> {
    crate::commands::print_stdout(&serde_json::to_string_pretty(cfg).map_err(|e| CliError::Usage(e.to_string()))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn files_round_trip_and_reject_unknown_keys() {
        let m = MraFile::default();
        let back: MraFile = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        let c = ClassifyFile::default();
        let back: ClassifyFile = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let i = InvarianceFile::default();
        let back: InvarianceFile = serde_json::from_str(&serde_json::to_string(&i).unwrap()).unwrap();
        assert_eq!(back, i);
        assert!(serde_json::from_str::<MraFile>(r#"{"trails": 3}"#).is_err());
        assert!(serde_json::from_str::<ClassifyFile>(r#"{"classification": {"clases": 3}}"#).is_err());
        assert!(serde_json::from_str::<InvarianceFile>(r#"{"invariance": {"samples": 3}}"#).is_err());
    }

    #[test]
    fn partial_files_take_defaults() {
        let m: MraFile = serde_json::from_str(r#"{"trials": 2, "mra": {"num_images": 50}}"#).unwrap();
        assert_eq!(m.trials, 2);
        assert_eq!(m.mra.num_images, 50);
        assert_eq!(m.mra.bandlimit, MraConfig::default().bandlimit);
    }
}
