//! Subcommand bodies. Each writes its artifacts plus the resolved config
//! that produced them.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::info;
use serde::{Deserialize, Serialize};

use dealio::dealio::{
    generate_demos, run_algorithm, train_expert, Algorithm, RunOutput, ScoreReference,
};
use dealio::envs::Environment;
use dealio::io::{
    load, read_controller, read_demonstrations, save, write_controller, write_demonstrations,
};
use dealio::verify::{self, Check, Suite};
use dealio::{DemonstrationSet, TvlgController};

use crate::config::ExperimentConfig;
use crate::plot::{
    aggregate, expand, parse_curve_spec, read_curve, render_svg, write_aggregate, Series,
};

pub const CURVE_FILE: &str = "curve.csv";
pub const CONTROLLER_FILE: &str = "controller.txt";
pub const DISCRIMINATOR_FILE: &str = "discriminator.txt";
pub const EXPERT_FILE: &str = "expert.txt";
pub const DEMOS_FILE: &str = "demos.txt";
pub const REFERENCES_FILE: &str = "references.toml";
pub const CONFIG_FILE: &str = "config.toml";
const LOCK_FILE: &str = ".lock";

/// `expert.txt` → `expert.config.toml`.
pub fn provenance_path(artifact: &Path) -> PathBuf {
    artifact.with_extension("config.toml")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_config(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    write_text(path, &cfg.to_toml()?)
}

/// Held for the lifetime of a run; the directory is refused to other
/// processes while it exists.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(LOCK_FILE);
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .with_context(|| {
                format!(
                    "run directory {} is locked ({} exists)",
                    dir.display(),
                    path.display()
                )
            })?;
        writeln!(f, "{}", std::process::id())?;
        Ok(Self { path })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn load_expert(path: &Path) -> Result<TvlgController> {
    load(path, read_controller).with_context(|| format!("reading expert {}", path.display()))
}

pub fn load_demos(path: &Path) -> Result<DemonstrationSet> {
    load(path, read_demonstrations)
        .with_context(|| format!("reading demonstrations {}", path.display()))
}

fn check_expert(env: &dyn Environment, expert: &TvlgController) -> Result<()> {
    let spec = env.spec();
    ensure!(
        expert.state_dim() == spec.n
            && expert.action_dim() == spec.m
            && expert.horizon() == spec.horizon,
        "expert has shape n={} m={} T={} but the environment expects n={} m={} T={}",
        expert.state_dim(),
        expert.action_dim(),
        expert.horizon(),
        spec.n,
        spec.m,
        spec.horizon
    );
    Ok(())
}

pub struct ExpertSummary {
    pub controller: TvlgController,
    pub iterations: usize,
    pub final_return: f64,
}

pub fn train_expert_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<ExpertSummary> {
    let env = cfg.environment()?;
    let (controller, returns) = train_expert(&env, &cfg.expert_config())?;
    let final_return = *returns
        .last()
        .context("expert training ran no iterations")?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save(out, |w| write_controller(w, &controller))?;
    write_config(cfg, &provenance_path(out))?;
    Ok(ExpertSummary {
        controller,
        iterations: returns.len(),
        final_return,
    })
}

pub fn gen_demos_cmd(
    cfg: &ExperimentConfig,
    expert: &Path,
    count: usize,
    out: &Path,
) -> Result<DemonstrationSet> {
    ensure!(count >= 1, "--count must be at least 1");
    let env = cfg.environment()?;
    let expert = load_expert(expert)?;
    check_expert(&env, &expert)?;
    let demos = generate_demos(&env, &expert, count, cfg.demos.seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save(out, |w| write_demonstrations(w, &demos))?;
    let mut resolved = cfg.clone();
    resolved.demos.count = count;
    write_config(&resolved, &provenance_path(out))?;
    Ok(demos)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct References {
    random_return: f64,
    expert_return: f64,
}

/// Expert and demonstrations for a run: loaded from the configured paths,
/// or produced from the config's seeds and cached in `dir`.
fn prepare_inputs(
    cfg: &ExperimentConfig,
    env: &dyn Environment,
    dir: &Path,
) -> Result<(TvlgController, DemonstrationSet)> {
    let expert = match &cfg.paths.expert {
        Some(p) => load_expert(p)?,
        None => {
            info!("training expert");
            train_expert(env, &cfg.expert_config())?.0
        }
    };
    check_expert(env, &expert)?;
    let demos = match &cfg.paths.demos {
        Some(p) => load_demos(p)?,
        None => generate_demos(env, &expert, cfg.demos.count, cfg.demos.seed)?,
    };
    save(dir.join(EXPERT_FILE), |w| write_controller(w, &expert))?;
    save(dir.join(DEMOS_FILE), |w| write_demonstrations(w, &demos))?;
    Ok((expert, demos))
}

pub fn references(
    cfg: &ExperimentConfig,
    env: &dyn Environment,
    expert: &TvlgController,
) -> Result<ScoreReference> {
    Ok(ScoreReference::compute(
        env,
        expert,
        cfg.dealio.init_cov,
        cfg.dealio.eval_rollouts,
        cfg.expert.seed,
        cfg.dealio.eval_stochastic,
    )?)
}

/// Runs one algorithm into `dir`, overriding the config seed with `seed`.
pub fn run_cmd(
    cfg: &ExperimentConfig,
    algo: Algorithm,
    seed: u64,
    dir: &Path,
) -> Result<RunOutput> {
    let _lock = DirLock::acquire(dir)?;
    let mut resolved = cfg.clone();
    resolved.dealio.seed = seed;
    write_config(&resolved, &dir.join(CONFIG_FILE))?;
    let env = resolved.environment()?;
    let (expert, demos) = prepare_inputs(&resolved, &env, dir)?;
    let refs = references(&resolved, &env, &expert)?;
    write_text(
        &dir.join(REFERENCES_FILE),
        &toml::to_string(&References {
            random_return: refs.random_return,
            expert_return: refs.expert_return,
        })?,
    )?;
    let out = run_algorithm(&env, &demos, &resolved.dealio_config(), refs, algo)?;
    save(dir.join(CURVE_FILE), |w| out.curve.write_csv(w))?;
    save(dir.join(CONTROLLER_FILE), |w| {
        write_controller(w, &out.controller)
    })?;
    save(dir.join(DISCRIMINATOR_FILE), |w| out.discriminator.write(w))?;
    Ok(out)
}

/// Aggregates each `label=glob` spec into one band; writes the SVG and an
/// aggregated CSV next to it.
pub fn plot_cmd(specs: &[String], out: &Path) -> Result<Vec<Series>> {
    ensure!(
        !specs.is_empty(),
        "at least one --curves pattern is required"
    );
    let mut series = Vec::new();
    let mut sources = String::new();
    for spec in specs {
        let (label, pattern) = parse_curve_spec(spec);
        let paths = expand(&pattern)?;
        let curves = paths
            .iter()
            .map(|p| read_curve(p))
            .collect::<Result<Vec<_>>>()?;
        for p in &paths {
            sources.push_str(&format!("{label}\t{}\n", p.display()));
        }
        series.push(aggregate(&label, &curves)?);
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_text(out, &render_svg(&series))?;
    let mut table = Vec::new();
    write_aggregate(&mut table, &series)?;
    fs::write(out.with_extension("csv"), table)?;
    write_text(&out.with_extension("sources.txt"), &sources)?;
    Ok(series)
}

pub fn verify_cmd(suite: &str, seed: u64, out: &mut dyn Write) -> Result<Vec<Check>> {
    let suites = Suite::parse_list(suite)?;
    let checks = verify::run_suites(&suites, seed);
    for c in &checks {
        writeln!(out, "{c}")?;
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    writeln!(out, "{} checks, {} failed", checks.len(), failed)?;
    if failed > 0 {
        bail!("{failed} verification checks failed");
    }
    Ok(checks)
}

/// Reads the reference returns cached by [`run_cmd`].
pub fn read_references(dir: &Path) -> Result<ScoreReference> {
    let text = fs::read_to_string(dir.join(REFERENCES_FILE))?;
    let r: References = toml::from_str(&text)?;
    Ok(ScoreReference {
        random_return: r.random_return,
        expert_return: r.expert_return,
    })
}

pub fn read_run_curve(dir: &Path) -> Result<dealio::dealio::LearningCurve> {
    let f = File::open(dir.join(CURVE_FILE))?;
    Ok(dealio::dealio::LearningCurve::read_csv(BufReader::new(f))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.env.horizon = 20;
        cfg.expert.max_iterations = 3;
        cfg.demos.count = 3;
        cfg.dealio.max_iterations = 2;
        cfg.disc.hidden = vec![8];
        cfg
    }

    #[test]
    fn provenance_sits_next_to_the_artifact() {
        assert_eq!(
            provenance_path(Path::new("a/expert.txt")),
            Path::new("a/expert.config.toml")
        );
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = DirLock::acquire(dir.path()).unwrap();
        assert!(DirLock::acquire(dir.path()).is_err());
        drop(lock);
        assert!(DirLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn expert_demos_and_run_write_their_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = quick();
        let expert_path = dir.path().join("expert.txt");
        let summary = train_expert_cmd(&cfg, &expert_path).unwrap();
        assert!(summary.final_return.is_finite());
        assert_eq!(load_expert(&expert_path).unwrap(), summary.controller);
        assert!(provenance_path(&expert_path).exists());

        let demos_path = dir.path().join("demos.txt");
        let demos = gen_demos_cmd(&cfg, &expert_path, 4, &demos_path).unwrap();
        assert_eq!(load_demos(&demos_path).unwrap(), demos);
        assert!(std::fs::read_to_string(&demos_path)
            .unwrap()
            .starts_with("n=10 m=0 T=20 count=4"));
        assert!(gen_demos_cmd(&cfg, &expert_path, 0, &demos_path).is_err());

        let mut with_paths = cfg.clone();
        with_paths.paths.expert = Some(expert_path);
        with_paths.paths.demos = Some(demos_path);
        let run_dir = dir.path().join("run");
        let out = run_cmd(&with_paths, Algorithm::Dealio, 4, &run_dir).unwrap();
        assert_eq!(read_run_curve(&run_dir).unwrap(), out.curve);
        for f in [
            CONFIG_FILE,
            CONTROLLER_FILE,
            DISCRIMINATOR_FILE,
            REFERENCES_FILE,
            EXPERT_FILE,
            DEMOS_FILE,
        ] {
            assert!(run_dir.join(f).exists(), "{f}");
        }
        assert!(!run_dir.join(LOCK_FILE).exists());
        let resolved = ExperimentConfig::load(&run_dir.join(CONFIG_FILE)).unwrap();
        assert_eq!(resolved.dealio.seed, 4);
        assert!(read_references(&run_dir).unwrap().expert_return.is_finite());
    }

    #[test]
    fn mismatched_expert_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = quick();
        let expert_path = dir.path().join("expert.txt");
        train_expert_cmd(&cfg, &expert_path).unwrap();
        let mut longer = cfg.clone();
        longer.env.horizon = 30;
        assert!(gen_demos_cmd(&longer, &expert_path, 2, &dir.path().join("d.txt")).is_err());
    }
}
