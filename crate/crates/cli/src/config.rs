use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stp_relex::corpus::SyntheticConfig;
use stp_relex::deptree::PruneMode;
use stp_relex::eval::BagSetting;
use stp_relex::model::QueryMode;
use stp_relex::numerics::TrainConfig;

use crate::UsageError;

/// Input and output locations. Relative paths resolve against the
/// directory of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train: PathBuf,
    pub test: PathBuf,
    pub train_parses: PathBuf,
    pub test_parses: PathBuf,
    pub types: PathBuf,
    pub embeddings: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            train: "train.jsonl".into(),
            test: "test.jsonl".into(),
            train_parses: "train.conllu".into(),
            test_parses: "test.conllu".into(),
            types: "types.tsv".into(),
            embeddings: None,
            out: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides `train.seed` and `synthetic.seed`.
    pub seed: u64,
    pub mode: PruneMode,
    pub setting: BagSetting,
    pub pretrain_epochs: usize,
    /// NA bags kept per non-NA bag each epoch. A large ratio keeps all.
    pub na_ratio: Option<f64>,
    pub val_fraction: f64,
    pub query_mode: QueryMode,
    pub p_at_n: Vec<usize>,
    pub paths: Paths,
    pub train: TrainConfig,
    pub synthetic: SyntheticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            mode: PruneMode::Stp,
            setting: BagSetting::All,
            pretrain_epochs: 10,
            na_ratio: Some(1.0),
            val_fraction: 0.1,
            query_mode: QueryMode::Shared,
            p_at_n: vec![100, 200, 300],
            paths: Paths::default(),
            train: TrainConfig::default(),
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (or defaults) and resolves relative paths.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.paths.resolve(base);
        Ok(config)
    }

    /// The desk-scale settings written next to generated corpora.
    pub fn desk() -> Self {
        RunConfig {
            pretrain_epochs: 5,
            train: TrainConfig {
                hidden: 16,
                word_dim: 16,
                pos_dim: 5,
                lr: 0.01,
                batch_size: 16,
                epochs: 10,
                ..TrainConfig::default()
            },
            ..RunConfig::default()
        }
    }

    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.train.seed = self.seed;
        self.synthetic.seed = self.seed;
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.train.validate().map_err(|e| UsageError(e.to_string()))?;
        if self.p_at_n.contains(&0) {
            return Err(UsageError("p_at_n cutoffs must be positive".into()).into());
        }
        Ok(())
    }

    pub fn pruned_path(&self, split: &str) -> PathBuf {
        self.paths.out.join(format!("{split}.{}.jsonl", self.mode))
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.train,
            &mut self.test,
            &mut self.train_parses,
            &mut self.test_parses,
            &mut self.types,
            &mut self.out,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = &mut self.embeddings {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Fails with a usage error unless every path exists.
pub fn require(paths: &[&Path]) -> anyhow::Result<()> {
    let missing: Vec<String> = paths.iter().filter(|p| !p.exists()).map(|p| p.display().to_string()).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(UsageError(format!("missing input: {}", missing.join(", "))).into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::desk();
        let text = toml::to_string(&c).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = toml::from_str("mode = \"sdp\"\n[train]\nhidden = 8\n").unwrap();
        assert_eq!(c.mode, PruneMode::Sdp);
        assert_eq!(c.train.hidden, 8);
        assert_eq!(c.train.word_dim, 50);
        assert_eq!(c.setting, BagSetting::All);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("modee = \"sdp\"").is_err());
    }

    #[test]
    fn relative_paths_follow_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[paths]\ntrain = \"a.jsonl\"\nout = \"/abs\"\n").unwrap();
        let c = RunConfig::load(Some(&path)).unwrap();
        assert_eq!(c.paths.train, dir.path().join("a.jsonl"));
        assert_eq!(c.paths.out, PathBuf::from("/abs"));
    }
}
