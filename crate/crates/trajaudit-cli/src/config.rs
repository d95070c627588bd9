//! Run configuration: defaults, optional TOML file, flag overrides.
//!
//! Resolution order is fixed: built-in defaults, then the `--config` file,
//! then command-line flags (which clap also reads from `TRAJAUDIT_*`
//! environment variables). The fully resolved configuration is echoed into
//! the output directory so a run can be reproduced from its artifacts.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use trajaudit_core::judge::{JudgeDescriptor, DEFAULT_MAX_IN_FLIGHT, DEFAULT_TIMEOUT_SECS};
use trajaudit_core::metrics::{calibrate_epsilon, OpdConfig, DEFAULT_NOISE_SIGMA, DEFAULT_TAIL_PROB};
use trajaudit_core::sampler::{PhaseFilter, SamplerConfig};
use trajaudit_core::trace::ValidationPolicy;

/// On-disk layout of the optional config file (TOML, flat sections).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub opd: OpdSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub judge: JudgeSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub strict: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpdSection {
    pub milestone_count: Option<u32>,
    pub ppl_delta: Option<f64>,
    /// Explicit stagnation threshold; when absent it is calibrated from
    /// `sigma` and `tail`.
    pub str_epsilon: Option<f64>,
    pub sigma: Option<f64>,
    pub tail: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub chunk_size: Option<u32>,
    pub quota_per_cell: Option<usize>,
    pub dt_boundaries: Option<Vec<u32>>,
    pub bin_small_max: Option<f64>,
    pub bin_medium_max: Option<f64>,
    pub all_phases: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeSection {
    pub spec: Option<String>,
    pub max_in_flight: Option<usize>,
    pub timeout_secs: Option<f64>,
}

/// Fully resolved configuration for one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
    pub validation: ValidationPolicy,
    pub opd: OpdConfig,
    pub sampler: SamplerConfig,
    pub judge_spec: Option<String>,
    pub judge_max_in_flight: usize,
    pub judge_timeout_secs: f64,
}

/// Flag-level overrides shared by the subcommands.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub strict: bool,
    pub clamp: bool,
    pub judge: Option<String>,
}

pub fn load_file(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config file {}", path.display()))
        }
    }
}

pub fn resolve(file: &FileConfig, overrides: &Overrides) -> Result<RunConfig> {
    let sigma = file.opd.sigma.unwrap_or(DEFAULT_NOISE_SIGMA);
    let tail = file.opd.tail.unwrap_or(DEFAULT_TAIL_PROB);
    let str_epsilon = match file.opd.str_epsilon {
        Some(e) => e,
        None => calibrate_epsilon(sigma, tail).context("calibrating stagnation threshold")?,
    };
    let defaults = OpdConfig::default();
    let opd = OpdConfig {
        milestone_count: file.opd.milestone_count.unwrap_or(defaults.milestone_count),
        ppl_delta: file.opd.ppl_delta.unwrap_or(defaults.ppl_delta),
        str_epsilon,
    };
    opd.validate()?;

    let sampler_defaults = SamplerConfig::default();
    let seed = overrides.seed.or(file.run.seed).unwrap_or(0);
    let sampler = SamplerConfig {
        chunk_size: file.sampler.chunk_size.unwrap_or(sampler_defaults.chunk_size),
        quota_per_cell: file
            .sampler
            .quota_per_cell
            .unwrap_or(sampler_defaults.quota_per_cell),
        dt_boundaries: file.sampler.dt_boundaries.clone(),
        bin_boundaries: (
            file.sampler.bin_small_max.unwrap_or(sampler_defaults.bin_boundaries.0),
            file.sampler.bin_medium_max.unwrap_or(sampler_defaults.bin_boundaries.1),
        ),
        seed,
        phase_filter: if file.sampler.all_phases.unwrap_or(false) {
            PhaseFilter::All
        } else {
            PhaseFilter::RetainedOnly
        },
    };

    let strict = if overrides.strict {
        true
    } else if overrides.clamp {
        false
    } else {
        file.run.strict.unwrap_or(false)
    };

    Ok(RunConfig {
        seed,
        jobs: overrides.jobs.or(file.run.jobs).unwrap_or(1).max(1),
        out: overrides
            .out
            .clone()
            .or_else(|| file.run.out.clone())
            .unwrap_or_else(|| PathBuf::from("out")),
        validation: if strict { ValidationPolicy::Strict } else { ValidationPolicy::Clamp },
        opd,
        sampler,
        judge_spec: overrides.judge.clone().or_else(|| file.judge.spec.clone()),
        judge_max_in_flight: file.judge.max_in_flight.unwrap_or(DEFAULT_MAX_IN_FLIGHT),
        judge_timeout_secs: file.judge.timeout_secs.unwrap_or(DEFAULT_TIMEOUT_SECS),
    })
}

impl RunConfig {
    pub fn judge_descriptor(&self) -> Result<Option<JudgeDescriptor>> {
        let Some(spec) = &self.judge_spec else { return Ok(None) };
        let mut descriptor = trajaudit_core::judge::parse_judge_spec(spec)?;
        descriptor.max_in_flight = self.judge_max_in_flight;
        descriptor.timeout_secs = self.judge_timeout_secs;
        Ok(Some(descriptor))
    }

    /// Write the resolved configuration next to the run outputs.
    pub fn echo(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out)?;
        let rendered = toml::to_string_pretty(&toml_view(self))?;
        std::fs::write(self.out.join("resolved_config.toml"), rendered)?;
        Ok(())
    }
}

/// Re-render the resolved config in the file-config layout so the echo can
/// be fed back through `--config` verbatim.
fn toml_view(config: &RunConfig) -> FileConfig {
    FileConfig {
        run: RunSection {
            seed: Some(config.seed),
            jobs: Some(config.jobs),
            out: Some(config.out.clone()),
            strict: Some(config.validation == ValidationPolicy::Strict),
        },
        opd: OpdSection {
            milestone_count: Some(config.opd.milestone_count),
            ppl_delta: Some(config.opd.ppl_delta),
            str_epsilon: Some(config.opd.str_epsilon),
            sigma: None,
            tail: None,
        },
        sampler: SamplerSection {
            chunk_size: Some(config.sampler.chunk_size),
            quota_per_cell: Some(config.sampler.quota_per_cell),
            dt_boundaries: config.sampler.dt_boundaries.clone(),
            bin_small_max: Some(config.sampler.bin_boundaries.0),
            bin_medium_max: Some(config.sampler.bin_boundaries.1),
            all_phases: Some(config.sampler.phase_filter == PhaseFilter::All),
        },
        judge: JudgeSection {
            spec: config.judge_spec.clone(),
            max_in_flight: Some(config.judge_max_in_flight),
            timeout_secs: Some(config.judge_timeout_secs),
        },
    }
}
