//! Run configuration: file loading, overrides, validation, path resolution,
//! and the effective-config hash stamped into every artifact.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use cmn_core::model::ModelConfig;
use cmn_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Scoring settings: contrastive-set size, latent draws per estimate, and
/// the seed from which each pair derives its own RNG stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub n_negatives: usize,
    pub mc_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

impl EvalConfig {
    fn validate(&self) -> Result<()> {
        if self.n_negatives < 1 {
            bail!("eval.n_negatives must be at least 1");
        }
        if self.mc_samples < 1 {
            bail!("eval.mc_samples must be at least 1");
        }
        Ok(())
    }
}

/// File locations. Relative entries resolve against the directory of the
/// config file itself, so a config can be invoked from anywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Training corpus (JSONL, one dialogue pair per line).
    pub corpus: PathBuf,
    /// Human annotation CSV: pair_id, annotator_id, appropriateness, coherence.
    pub annotations: PathBuf,
    /// Where `train` publishes the final checkpoint and `score`/`project` read it.
    pub checkpoint: PathBuf,
    /// Directory receiving every artifact a command writes.
    pub output_dir: PathBuf,
}

/// One file describing a complete run: architecture, optimization, scoring,
/// and file locations. TOML natively; JSON when the file ends in `.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    /// Field-level validation; error messages name the offending section and
    /// field so a bad config is diagnosable from the exit message alone.
    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| anyhow!("model: {e}"))?;
        self.train.validate().map_err(|e| anyhow!("train: {e}"))?;
        self.eval.validate()?;
        for (field, path) in [
            ("paths.corpus", &self.paths.corpus),
            ("paths.annotations", &self.paths.annotations),
            ("paths.checkpoint", &self.paths.checkpoint),
            ("paths.output_dir", &self.paths.output_dir),
        ] {
            if path.as_os_str().is_empty() {
                bail!("{field} must not be empty");
            }
        }
        Ok(())
    }
}

/// Parses a config file, picking the format from the extension
/// (`.json` → JSON, anything else → TOML).
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config `{}`", path.display()))?;
    let is_json = path
        .extension()
        .is_some_and(|ext| ext.eq_ignore_ascii_case("json"));
    let config: RunConfig = if is_json {
        serde_json::from_str(&text)
            .with_context(|| format!("parsing JSON config `{}`", path.display()))?
    } else {
        toml::from_str(&text)
            .with_context(|| format!("parsing TOML config `{}`", path.display()))?
    };
    Ok(config)
}

/// The single seed override for a run, if any. Precedence: the `--seed`
/// flag beats the `CMN_SEED` environment variable, which beats the config
/// file. The override, when present, replaces the model, train, and eval
/// seeds alike so one number pins the whole run.
pub fn seed_override(flag: Option<u64>, env: Option<u64>) -> Option<u64> {
    flag.or(env)
}

/// Reads `CMN_SEED` from the environment, rejecting non-integer values.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var("CMN_SEED") {
        Ok(raw) => {
            let value = raw
                .trim()
                .parse::<u64>()
                .map_err(|_| anyhow!("CMN_SEED must be an unsigned integer, got `{raw}`"))?;
            Ok(Some(value))
        }
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(anyhow!("reading CMN_SEED: {e}")),
    }
}

/// All seeds governing a run, as recorded in artifacts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub model: u64,
    pub train: u64,
    pub eval: u64,
}

/// SHA-256 of the canonical (JSON) serialization of the effective config.
/// Paths are hashed as written in the file, not as resolved, so the hash is
/// stable across machines and working directories.
pub fn config_hash(config: &RunConfig) -> String {
    let bytes = serde_json::to_vec(config).expect("run config serializes to JSON");
    Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Paths from the config resolved to concrete locations.
#[derive(Debug, Clone)]
pub struct ResolvedPaths {
    pub corpus: PathBuf,
    pub annotations: PathBuf,
    pub checkpoint: PathBuf,
    pub output_dir: PathBuf,
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// A validated configuration with overrides applied, ready for a command:
/// the effective config (hashed), resolved paths, and the provenance stamp.
pub struct RunContext {
    pub config: RunConfig,
    pub paths: ResolvedPaths,
    pub hash: String,
}

impl RunContext {
    /// Loads `config_path`, applies the seed override (flag over `CMN_SEED`
    /// over file) and the output-dir flag, validates, resolves relative
    /// paths against the config file's directory, and hashes the result.
    pub fn prepare(
        config_path: &Path,
        seed_flag: Option<u64>,
        env_seed: Option<u64>,
        output_dir_flag: Option<&Path>,
    ) -> Result<Self> {
        let mut config = load_config(config_path)?;
        if let Some(seed) = seed_override(seed_flag, env_seed) {
            config.model.seed = seed;
            config.train.seed = seed;
            config.eval.seed = seed;
        }
        if let Some(dir) = output_dir_flag {
            config.paths.output_dir = dir.to_path_buf();
        }
        config
            .validate()
            .with_context(|| format!("invalid config `{}`", config_path.display()))?;

        let base = config_path.parent().unwrap_or_else(|| Path::new("."));
        let paths = ResolvedPaths {
            corpus: resolve(base, &config.paths.corpus),
            annotations: resolve(base, &config.paths.annotations),
            checkpoint: resolve(base, &config.paths.checkpoint),
            // An --output-dir flag is relative to the caller's working
            // directory, not the config file.
            output_dir: if output_dir_flag.is_some() {
                config.paths.output_dir.clone()
            } else {
                resolve(base, &config.paths.output_dir)
            },
        };
        let hash = config_hash(&config);
        Ok(Self {
            config,
            paths,
            hash,
        })
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            model: self.config.model.seed,
            train: self.config.train.seed,
            eval: self.config.eval.seed,
        }
    }

    /// Errors unless `path` names an existing file; the message leads with
    /// the config field so the failure is traceable to its source.
    pub fn require_file(&self, field: &str, path: &Path) -> Result<()> {
        if !path.is_file() {
            bail!("{field}: `{}` is not a readable file", path.display());
        }
        Ok(())
    }

    /// Creates the output directory (and parents) if needed.
    pub fn ensure_output_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.paths.output_dir).with_context(|| {
            format!(
                "paths.output_dir: cannot create `{}`",
                self.paths.output_dir.display()
            )
        })
    }
}
