//! TOML scenario files.
//!
//! ```toml
//! [scenario]
//! h = 0.5
//! q_omega = 1.0
//! x0_true = [1.0, 0.5]
//! x0_hat = [2.0, 1.0]
//! p0 = [[1.0, 0.0], [0.0, 1.0]]
//! horizon = 100
//! runs = 1000
//! seed = 20240601
//! stage1 = "smf"          # smf | bmf | sk | ma
//! state_fusion = "ssf"    # ssf | bsf
//! noiseless = false
//!
//! [[clusters]]
//! n_sensors = 10          # variances 0.5 + 0.25 i, i = 0..n
//!
//! [[clusters]]
//! noise_variances = [0.4, 0.6, 0.9]
//! ```
//!
//! Every `[scenario]` key is optional and defaults to the built-in scenario.
//! Without any `[[clusters]]` the built-in 10/8/6 clusters are used.

use std::path::{Path, PathBuf};

use clusterfuse_core::pipeline::{ClusterConfig, ScenarioConfig};
use clusterfuse_core::Matrix;
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    #[serde(default)]
    scenario: ScenarioSection,
    #[serde(default)]
    clusters: Vec<ClusterSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioSection {
    h: Option<f64>,
    q_omega: Option<f64>,
    x0_true: Option<Vec<f64>>,
    x0_hat: Option<Vec<f64>>,
    p0: Option<Vec<Vec<f64>>>,
    horizon: Option<usize>,
    runs: Option<usize>,
    seed: Option<u64>,
    stage1: Option<String>,
    state_fusion: Option<String>,
    noiseless: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClusterSection {
    n_sensors: Option<usize>,
    noise_variances: Option<Vec<f64>>,
}

pub fn load(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse(&text, path)
}

/// `path` only labels errors.
pub fn parse(text: &str, path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let file: File = toml::from_str(text).map_err(|source| ConfigError::Parse {
        path: path.to_path_buf(),
        source: Box::new(source),
    })?;
    let invalid = |message: String| ConfigError::Invalid {
        path: path.to_path_buf(),
        message,
    };

    let mut config = ScenarioConfig::builtin();
    let s = file.scenario;
    if let Some(v) = s.h {
        config.h = v;
    }
    if let Some(v) = s.q_omega {
        config.q_omega = v;
    }
    if let Some(v) = s.x0_true {
        config.x0_true = v;
    }
    if let Some(v) = s.x0_hat {
        config.x0_hat = v;
    }
    if let Some(rows) = s.p0 {
        config.p0 = matrix_from_rows(&rows).ok_or_else(|| invalid("p0 must be a non-empty square array".into()))?;
    }
    if let Some(v) = s.horizon {
        config.horizon = v;
    }
    if let Some(v) = s.runs {
        config.runs = v;
    }
    if let Some(v) = s.seed {
        config.seed = v;
    }
    if let Some(v) = s.stage1 {
        config.stage1 = v.parse().map_err(|e| invalid(format!("stage1: {e}")))?;
    }
    if let Some(v) = s.state_fusion {
        config.state_fusion = v.parse().map_err(|e| invalid(format!("state_fusion: {e}")))?;
    }
    if let Some(v) = s.noiseless {
        config.noiseless = v;
    }

    if !file.clusters.is_empty() {
        config.clusters = file
            .clusters
            .into_iter()
            .enumerate()
            .map(|(i, c)| match (c.n_sensors, c.noise_variances) {
                (Some(n), None) => Ok(ClusterConfig::with_default_noise(n)),
                (None, Some(v)) => Ok(ClusterConfig { noise_variances: v }),
                (Some(n), Some(v)) if n == v.len() => Ok(ClusterConfig { noise_variances: v }),
                _ => Err(invalid(format!(
                    "cluster {}: give n_sensors or noise_variances (of that length)",
                    i + 1
                ))),
            })
            .collect::<Result<_, _>>()?;
    }

    config.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(config)
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Option<Matrix> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return None;
    }
    Some(Matrix::from_fn(n, n, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("test.toml")
    }

    #[test]
    fn empty_file_is_the_builtin_scenario() {
        assert_eq!(parse("", p()).unwrap(), ScenarioConfig::builtin());
    }

    #[test]
    fn overrides_and_clusters() {
        let c = parse(
            "[scenario]\nh = 0.25\nseed = 3\nstage1 = \"ma\"\n\n[[clusters]]\nn_sensors = 2\n\n[[clusters]]\nnoise_variances = [1.0]\n",
            p(),
        )
        .unwrap();
        assert_eq!(c.h, 0.25);
        assert_eq!(c.seed, 3);
        assert_eq!(c.stage1.as_str(), "ma");
        assert_eq!(c.clusters.len(), 2);
        assert_eq!(c.clusters[0].noise_variances, vec![0.5, 0.75]);
        assert_eq!(c.clusters[1].noise_variances, vec![1.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            parse("[scenario]\nbogus = 1\n", p()),
            Err(ConfigError::Parse { .. })
        ));
        assert!(matches!(
            parse("[scenario]\nh = -1.0\n", p()),
            Err(ConfigError::Invalid { .. })
        ));
        assert!(matches!(parse("[[clusters]]\n", p()), Err(ConfigError::Invalid { .. })));
        assert!(matches!(
            parse("[scenario]\np0 = [[1.0, 0.0]]\n", p()),
            Err(ConfigError::Invalid { .. })
        ));
        assert!(matches!(
            parse("[scenario]\nstage1 = \"xx\"\n", p()),
            Err(ConfigError::Invalid { .. })
        ));
        let err = load(Path::new("/nonexistent/scenario.toml")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/scenario.toml"));
    }
}
