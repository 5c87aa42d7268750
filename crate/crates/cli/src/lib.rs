//! Seeded, config-driven experiments over the `acolab` core.
//!
//! Every experiment reads one optional TOML file, writes CSV/JSON artifacts
//! into one output directory and finishes with `manifest.json`. Checks that
//! fail are recorded in the manifest, never raised as errors.

// `!(x > 0)` also rejects NaN; index loops mirror the matrix formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod experiments;
pub mod manifest;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

pub use manifest::{Check, RunManifest};

/// One registered experiment.
#[derive(Debug, Clone, Copy)]
pub struct ExperimentInfo {
    pub name: &'static str,
    pub description: &'static str,
    /// Short tag naming the result under test.
    pub anchor: &'static str,
    run: fn(&mut RunContext) -> Result<Outcome>,
}

/// What a single invocation should do.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentSpec {
    pub name: String,
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
}

/// Everything an experiment body needs from the harness.
pub struct RunContext<'a> {
    pub config: Option<&'a Path>,
    pub seed: u64,
    pub artifacts: &'a mut Artifacts,
}

/// Result of an experiment body before the harness adds bookkeeping.
pub struct Outcome {
    pub config: serde_json::Value,
    pub checks: Vec<Check>,
}

/// Writes files into the output directory and remembers their names.
pub struct Artifacts {
    dir: PathBuf,
    written: Vec<String>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

static REGISTRY: [ExperimentInfo; 11] = [
    ExperimentInfo {
        name: "aco-full",
        description: "End-to-end condition optimization on the 1-D toy: denoise, match, clip, update",
        anchor: "condition-optimization loop with EMA target, epsilon schedule and warmup",
        run: experiments::refinement::aco_full,
    },
    ExperimentInfo {
        name: "ergodicity",
        description: "Total-variation decay between two initial laws of an AR(1) condition chain",
        anchor: "geometric ergodicity of the condition chain",
        run: experiments::chain::ergodicity,
    },
    ExperimentInfo {
        name: "inconsistency-energy",
        description: "Extraneous-information energy of a vector AR step, projections and regularity witnesses",
        anchor: "minimal sufficient subspace and extraneous-energy decomposition",
        run: experiments::chain::inconsistency_energy,
    },
    ExperimentInfo {
        name: "lemma2-control-term",
        description: "Conditional energy excess against the guidance-term energy, both time-scaling conventions",
        anchor: "conditional control term of guided sampling",
        run: experiments::gaussian::lemma2_control_term,
    },
    ExperimentInfo {
        name: "prop1-gaussian-decay",
        description: "Closed-form conditional score against finite differences; c-invariance of the conditional variance",
        anchor: "Gaussian conditional law and its score",
        run: experiments::gaussian::prop1_gaussian_decay,
    },
    ExperimentInfo {
        name: "sinkhorn-error-decay",
        description: "Frobenius error of truncated Sinkhorn against a converged plan, swept over epsilon",
        anchor: "Sinkhorn approximation error decay",
        run: experiments::transport::sinkhorn_error_decay,
    },
    ExperimentInfo {
        name: "sinkhorn-validate",
        description: "Marginal feasibility, small-instance oracles, divergence sign and 1-D agreement of Sinkhorn",
        anchor: "entropic optimal transport correctness",
        run: experiments::transport::sinkhorn_validate,
    },
    ExperimentInfo {
        name: "snr-curves",
        description: "SNR and noise intensity along DDIM trajectories under unrefined and refined conditions",
        anchor: "SNR and noise-intensity instrumentation of denoising",
        run: experiments::refinement::snr_curves,
    },
    ExperimentInfo {
        name: "thm1-upper-bound",
        description: "Unconditional score-matching loss against the conditional loss on random Gaussian joints",
        anchor: "unconditional loss bounded by the conditional loss",
        run: experiments::gaussian::thm1_upper_bound,
    },
    ExperimentInfo {
        name: "thm2-gradient-decay",
        description: "Geometric decay of the conditional score norm along AR(1) condition chains",
        anchor: "stationary gradient-norm bound under an AR condition process",
        run: experiments::chain::thm2_gradient_decay,
    },
    ExperimentInfo {
        name: "thm3-contraction",
        description: "Particle JKO flow toward a normal target: fitted contraction rate and energy monotonicity",
        anchor: "Wasserstein contraction of the condition flow",
        run: experiments::transport::thm3_contraction,
    },
];

/// Registered experiments, sorted by name.
pub fn list_experiments() -> &'static [ExperimentInfo] {
    &REGISTRY
}

pub fn find_experiment(name: &str) -> Result<&'static ExperimentInfo> {
    match REGISTRY.iter().find(|e| e.name == name) {
        Some(e) => Ok(e),
        None => {
            let names: Vec<&str> = REGISTRY.iter().map(|e| e.name).collect();
            bail!("unknown experiment `{name}`; registered experiments: {}", names.join(", "))
        }
    }
}

/// Runs one experiment and writes its artifacts plus `manifest.json`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunManifest> {
    let info = find_experiment(&spec.name)?;
    let started_at = manifest::timestamp();
    let mut artifacts = Artifacts::new(&spec.out)?;
    let outcome = {
        let mut ctx = RunContext {
            config: spec.config.as_deref(),
            seed: spec.seed,
            artifacts: &mut artifacts,
        };
        (info.run)(&mut ctx).with_context(|| format!("experiment `{}`", info.name))?
    };
    let manifest = RunManifest::new(info.name, spec.seed, &outcome.config, outcome.checks, started_at, artifacts.written().to_vec())?;
    artifacts.write("manifest.json", &manifest.to_json()?)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_is_sorted_and_complete() {
        let names: Vec<&str> = list_experiments().iter().map(|e| e.name).collect();
        assert_eq!(names.len(), 11);
        let mut sorted = names.clone();
        sorted.sort_unstable();
        assert_eq!(names, sorted);
        assert!(list_experiments().iter().all(|e| !e.anchor.is_empty() && !e.description.is_empty()));
    }

    #[test]
    fn unknown_name_lists_registry() {
        let err = find_experiment("thm4").unwrap_err().to_string();
        assert!(err.contains("thm4"));
        for e in list_experiments() {
            assert!(err.contains(e.name));
        }
    }
}
