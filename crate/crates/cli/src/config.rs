//! Experiment configuration file. Every section and key is optional; missing
//! values take the library defaults. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use dealio::cost_transform::{TimeIndexing, TransformConfig};
use dealio::dealio::{BaselineConfig, DealioConfig, ExpertConfig};
use dealio::discriminator::{DiscConfig, HeadLayout};
use dealio::dynamics_fit::FitConfig;
use dealio::envs::{DiscEnv, DiscParams};
use dealio::lqr::LqrConfig;
use dealio::net::AdamConfig;
use dealio::pi2::Pi2Config;
use dealio::pilqr::PilqrConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSection,
    pub expert: ExpertSection,
    pub demos: DemoSection,
    pub dealio: LoopSection,
    pub lqr: LqrSection,
    pub pi2: Pi2Section,
    pub pilqr: PilqrSection,
    pub disc: DiscSection,
    pub fit: FitSection,
    pub transform: TransformSection,
    pub baseline: BaselineSection,
    pub paths: PathSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    #[default]
    Disc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub kind: EnvKind,
    pub mass: f64,
    pub damping: f64,
    pub dt: f64,
    pub horizon: usize,
    pub target_red: [f64; 2],
    pub target_green: [f64; 2],
    pub switch_radius: f64,
    pub x0: [f64; 2],
    pub x0_jitter: f64,
    pub noise_std: f64,
    pub action_limit: f64,
    pub distance_weight: f64,
    pub action_penalty: f64,
    pub surrogate_hold: usize,
}

impl Default for EnvSection {
    fn default() -> Self {
        let p = DiscParams::default();
        Self {
            kind: EnvKind::Disc,
            mass: p.mass,
            damping: p.damping,
            dt: p.dt,
            horizon: p.horizon,
            target_red: p.target_red,
            target_green: p.target_green,
            switch_radius: p.switch_radius,
            x0: p.x0,
            x0_jitter: p.x0_jitter,
            noise_std: p.noise_std,
            action_limit: p.action_limit,
            distance_weight: p.distance_weight,
            action_penalty: p.action_penalty,
            surrogate_hold: p.surrogate_hold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertSection {
    pub trajectories_per_iteration: usize,
    pub max_iterations: usize,
    pub rel_tol: f64,
    pub patience: usize,
    pub init_cov: f64,
    pub cov_floor: f64,
    pub cov_ceiling: f64,
    pub eval_rollouts: usize,
    pub seed: u64,
}

impl Default for ExpertSection {
    fn default() -> Self {
        let e = ExpertConfig::default();
        Self {
            trajectories_per_iteration: e.trajectories_per_iteration,
            max_iterations: e.max_iterations,
            rel_tol: e.rel_tol,
            patience: e.patience,
            init_cov: e.init_cov,
            cov_floor: e.cov_floor,
            cov_ceiling: e.cov_ceiling,
            eval_rollouts: e.eval_rollouts,
            seed: e.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoSection {
    pub count: usize,
    pub seed: u64,
}

impl Default for DemoSection {
    fn default() -> Self {
        Self { count: 20, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopSection {
    pub trajectories_per_iteration: usize,
    pub max_iterations: usize,
    pub disc_batches: usize,
    pub controller_updates: usize,
    pub init_cov: f64,
    pub cov_floor: f64,
    pub cov_ceiling: f64,
    pub entropy_decay: f64,
    pub controller_step: f64,
    pub eval_rollouts: usize,
    pub eval_stochastic: bool,
    pub seed: u64,
}

impl Default for LoopSection {
    fn default() -> Self {
        let d = DealioConfig::default();
        Self {
            trajectories_per_iteration: d.trajectories_per_iteration,
            max_iterations: d.max_iterations,
            disc_batches: d.disc_batches,
            controller_updates: d.controller_updates,
            init_cov: d.init_cov,
            cov_floor: d.cov_floor,
            cov_ceiling: d.cov_ceiling,
            entropy_decay: d.entropy_decay,
            controller_step: d.controller_step,
            eval_rollouts: d.eval_rollouts,
            eval_stochastic: d.eval_stochastic,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqrSection {
    pub quu_reg_init: f64,
    pub quu_reg_growth: f64,
    pub max_reg_steps: usize,
    pub entropy_temp: f64,
}

impl Default for LqrSection {
    fn default() -> Self {
        let l = LqrConfig::default();
        Self {
            quu_reg_init: l.quu_reg_init,
            quu_reg_growth: l.quu_reg_growth,
            max_reg_steps: l.max_reg_steps,
            entropy_temp: l.entropy_temp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Pi2Section {
    pub temperature: f64,
    pub normalize_costs: bool,
    pub cov_update: bool,
    pub ridge: f64,
    pub cov_floor: f64,
}

impl Default for Pi2Section {
    fn default() -> Self {
        let p = Pi2Config::default();
        Self {
            temperature: p.temperature,
            normalize_costs: p.normalize_costs,
            cov_update: p.cov_update,
            ridge: p.ridge,
            cov_floor: p.cov_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PilqrSection {
    pub prior_weight: f64,
    pub gain_prior_strength: f64,
}

impl Default for PilqrSection {
    fn default() -> Self {
        let p = PilqrConfig::default();
        Self {
            prior_weight: p.prior_weight,
            gain_prior_strength: p.gain_prior_strength,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LayoutName {
    #[default]
    NextBlockGram,
    FullGram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscSection {
    pub hidden: Vec<usize>,
    pub output_scale: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub std_floor: f64,
    pub layout: LayoutName,
}

impl Default for DiscSection {
    fn default() -> Self {
        let d = DiscConfig::default();
        Self {
            hidden: d.hidden,
            output_scale: d.output_scale,
            learning_rate: d.adam.learning_rate,
            beta1: d.adam.beta1,
            beta2: d.adam.beta2,
            epsilon: d.adam.epsilon,
            std_floor: d.std_floor,
            layout: LayoutName::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub reg: f64,
    pub cov_floor: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        let f = FitConfig::default();
        Self {
            reg: f.reg,
            cov_floor: f.cov_floor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IndexingName {
    #[default]
    MeanState,
    AverageOfTransforms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformSection {
    pub delta_reg: f64,
    pub indexing: IndexingName,
    pub project_psd: bool,
}

impl Default for TransformSection {
    fn default() -> Self {
        let t = TransformConfig::default();
        Self {
            delta_reg: t.delta_reg,
            indexing: IndexingName::default(),
            project_psd: t.project_psd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub learning_rate: f64,
    pub clip_norm: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        let b = BaselineConfig::default();
        Self {
            learning_rate: b.learning_rate,
            clip_norm: b.clip_norm,
        }
    }
}

/// Optional prebuilt artifacts for `run`. Relative paths resolve against the
/// config file's directory. When unset, `run` trains the expert and draws
/// the demonstrations itself from the seeds above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PathSection {
    pub expert: Option<PathBuf>,
    pub demos: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads a config file; relative artifact paths are made relative to it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg =
            Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.paths.expert, &mut cfg.paths.demos]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// The fully resolved document, every default spelled out.
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn disc_params(&self) -> DiscParams {
        let e = &self.env;
        DiscParams {
            mass: e.mass,
            damping: e.damping,
            dt: e.dt,
            horizon: e.horizon,
            target_red: e.target_red,
            target_green: e.target_green,
            switch_radius: e.switch_radius,
            x0: e.x0,
            x0_jitter: e.x0_jitter,
            noise_std: e.noise_std,
            action_limit: e.action_limit,
            distance_weight: e.distance_weight,
            action_penalty: e.action_penalty,
            surrogate_hold: e.surrogate_hold,
        }
    }

    pub fn environment(&self) -> Result<DiscEnv> {
        match self.env.kind {
            EnvKind::Disc => Ok(DiscEnv::new(self.disc_params())?),
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            reg: self.fit.reg,
            cov_floor: self.fit.cov_floor,
        }
    }

    pub fn pilqr_config(&self) -> PilqrConfig {
        let (l, p) = (&self.lqr, &self.pi2);
        PilqrConfig {
            lqr: LqrConfig {
                quu_reg_init: l.quu_reg_init,
                quu_reg_growth: l.quu_reg_growth,
                max_reg_steps: l.max_reg_steps,
                entropy_temp: l.entropy_temp,
            },
            pi2: Pi2Config {
                temperature: p.temperature,
                normalize_costs: p.normalize_costs,
                cov_update: p.cov_update,
                ridge: p.ridge,
                cov_floor: p.cov_floor,
            },
            prior_weight: self.pilqr.prior_weight,
            gain_prior_strength: self.pilqr.gain_prior_strength,
        }
    }

    pub fn expert_config(&self) -> ExpertConfig {
        let e = &self.expert;
        ExpertConfig {
            trajectories_per_iteration: e.trajectories_per_iteration,
            max_iterations: e.max_iterations,
            rel_tol: e.rel_tol,
            patience: e.patience,
            init_cov: e.init_cov,
            cov_floor: e.cov_floor,
            cov_ceiling: e.cov_ceiling,
            pilqr: self.pilqr_config(),
            fit: self.fit_config(),
            eval_rollouts: e.eval_rollouts,
            seed: e.seed,
        }
    }

    pub fn dealio_config(&self) -> DealioConfig {
        let (l, d) = (&self.dealio, &self.disc);
        DealioConfig {
            trajectories_per_iteration: l.trajectories_per_iteration,
            max_iterations: l.max_iterations,
            disc_batches: l.disc_batches,
            controller_updates: l.controller_updates,
            init_cov: l.init_cov,
            cov_floor: l.cov_floor,
            cov_ceiling: l.cov_ceiling,
            entropy_decay: l.entropy_decay,
            controller_step: l.controller_step,
            pilqr: self.pilqr_config(),
            disc: DiscConfig {
                hidden: d.hidden.clone(),
                output_scale: d.output_scale,
                adam: AdamConfig {
                    learning_rate: d.learning_rate,
                    beta1: d.beta1,
                    beta2: d.beta2,
                    epsilon: d.epsilon,
                },
                std_floor: d.std_floor,
                layout: match d.layout {
                    LayoutName::NextBlockGram => HeadLayout::NextBlockGram,
                    LayoutName::FullGram => HeadLayout::FullGram,
                },
            },
            fit: self.fit_config(),
            transform: TransformConfig {
                delta_reg: self.transform.delta_reg,
                indexing: match self.transform.indexing {
                    IndexingName::MeanState => TimeIndexing::MeanState,
                    IndexingName::AverageOfTransforms => TimeIndexing::AverageOfTransforms,
                },
                project_psd: self.transform.project_psd,
            },
            baseline: BaselineConfig {
                learning_rate: self.baseline.learning_rate,
                clip_norm: self.baseline.clip_norm,
            },
            eval_rollouts: l.eval_rollouts,
            eval_stochastic: l.eval_stochastic,
            seed: l.seed,
        }
    }
}
