//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use dealio::cost_transform::to_state_action;
use dealio::dealio::{
    generate_demos, run_algorithm, train_expert, Algorithm, LearningCurve, PoisonedCost,
};
use dealio::envs::Environment;
use dealio::io::write_controller;
use dealio::verify;
use dealio_cli::config::ExperimentConfig;
use dealio_cli::{commands, plot};

const SEED: u64 = 0;
const HEADLINE_SEEDS: u64 = 10;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> anyhow::Result<Outcome> {
    Ok(Outcome { passed, detail })
}

fn substitution() -> anyhow::Result<Outcome> {
    let start = Instant::now();
    let (gap, asym) = verify::substitution_identity(to_state_action, 10_000, SEED)?;
    let elapsed = start.elapsed();
    outcome(
        gap <= 1e-9 && asym == 0.0 && elapsed < Duration::from_secs(60),
        format!(
            "10000 tuples, max gap {gap:.2e}, asymmetry {asym:.1e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn lqr() -> anyhow::Result<Outcome> {
    let k0 = verify::analytic_one_step_gain()?;
    let (instances, margin) = verify::perturbation_oracle(20, 100, SEED)?;
    let (action_gap, cost_margin, step) = verify::grid_oracle(10, SEED)?;
    let ce = verify::certainty_equivalence(20, SEED)?;
    outcome(
        (k0 + 0.5).abs() <= 1e-10
            && margin >= 0.0
            && action_gap <= step
            && cost_margin >= -1e-12
            && ce < 1e-10,
        format!(
            "K0 {k0:.12}, worst perturbation margin {margin:.2e} over {instances}x100, \
             grid action gap {action_gap:.2e} (step {step:.0e}), noise gain change {ce:.1e}"
        ),
    )
}

fn dynamics() -> anyhow::Result<Outcome> {
    let err = verify::dynamics_recovery(0.01, 200, SEED)?;
    let residual = verify::noiseless_residual(SEED)?;
    outcome(
        err <= 0.05 && residual <= 1e-8,
        format!("noisy Frobenius error {err:.2e}, noiseless residual {residual:.2e}"),
    )
}

fn gradients() -> anyhow::Result<Outcome> {
    let rel = verify::disc_gradient_check(20, SEED)?;
    outcome(
        rel <= 1e-4,
        format!("20 nets, max relative error {rel:.2e}"),
    )
}

fn pi2() -> anyhow::Result<Outcome> {
    let (sum_err, exact, shift_err) = verify::pi2_weight_checks(SEED);
    let improved = verify::pi2_improvement(10, 20, SEED)?;
    outcome(
        sum_err <= 1e-12 && exact && improved >= 9,
        format!(
            "weight sum error {sum_err:.1e}, exact shift invariance {exact}, \
             general shift change {shift_err:.1e}, improved {improved}/10"
        ),
    )
}

/// Transitions until the score first reaches `threshold`. Runs that never get
/// there are charged the full budget plus one more iteration.
fn censored(curve: &LearningCurve, threshold: f64, per_iteration: u64) -> u64 {
    curve
        .transitions_to_reach(threshold)
        .unwrap_or_else(|| curve.rows.last().map_or(0, |r| r.env_transitions) + per_iteration)
}

fn headline(out_dir: &Path) -> anyhow::Result<Outcome> {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let env = cfg.environment()?;
    let (expert, _) = train_expert(&env, &cfg.expert_config())?;
    let demos = generate_demos(&env, &expert, cfg.demos.count, cfg.demos.seed)?;
    let refs = commands::references(&cfg, &env, &expert)?;
    let base = cfg.dealio_config();
    let per_iteration = (base.trajectories_per_iteration * env.spec().horizon) as u64;
    let budget = base.max_iterations as u64 * per_iteration;

    let mut hits = 0;
    let mut series = Vec::new();
    let mut mean_to_half = Vec::new();
    for algo in [Algorithm::Dealio, Algorithm::Baseline] {
        let mut curves = Vec::new();
        for seed in 0..HEADLINE_SEEDS {
            let run = run_algorithm(
                &env,
                &demos,
                &dealio::dealio::DealioConfig {
                    seed,
                    ..base.clone()
                },
                refs,
                algo,
            )?;
            if algo == Algorithm::Dealio
                && run
                    .curve
                    .transitions_to_reach(0.8)
                    .is_some_and(|t| t <= budget)
            {
                hits += 1;
            }
            curves.push(run.curve);
        }
        let total: u64 = curves.iter().map(|c| censored(c, 0.5, per_iteration)).sum();
        mean_to_half.push(total as f64 / curves.len() as f64);
        series.push(plot::aggregate(algo.name(), &curves)?);
        for (seed, c) in curves.iter().enumerate() {
            let dir = out_dir.join(algo.name()).join(seed.to_string());
            std::fs::create_dir_all(&dir)?;
            let mut buf = Vec::new();
            c.write_csv(&mut buf)?;
            std::fs::write(dir.join(commands::CURVE_FILE), buf)?;
        }
    }
    std::fs::write(out_dir.join("headline.svg"), plot::render_svg(&series))?;
    let elapsed = start.elapsed();
    outcome(
        hits >= 7 && mean_to_half[1] > mean_to_half[0] && elapsed <= Duration::from_secs(30 * 60),
        format!(
            "dealio reached 0.8 in {hits}/{HEADLINE_SEEDS} seeds; mean transitions to 0.5: dealio {:.0}, \
             baseline {:.0} (unreached counted as {}); {:.1}s; curves in {}",
            mean_to_half[0],
            mean_to_half[1],
            budget + per_iteration,
            elapsed.as_secs_f64(),
            out_dir.display()
        ),
    )
}

fn determinism(work: &Path) -> anyhow::Result<Outcome> {
    std::fs::create_dir_all(work)?;
    let config = work.join("experiment.toml");
    std::fs::write(&config, ExperimentConfig::default().to_toml()?)?;
    let mut curves = Vec::new();
    for name in ["first", "second"] {
        let dir = work.join(name);
        let _ = std::fs::remove_dir_all(&dir);
        let status = Command::new(env!("CARGO_BIN_EXE_dealio"))
            .args(["run", "--seed", "7", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&dir)
            .output()?;
        anyhow::ensure!(
            status.status.success(),
            "run failed: {}",
            String::from_utf8_lossy(&status.stderr)
        );
        curves.push(std::fs::read(dir.join(commands::CURVE_FILE))?);
    }
    outcome(
        curves[0] == curves[1] && !curves[0].is_empty(),
        format!(
            "two `run --seed 7` curves, {} bytes, identical: {}",
            curves[0].len(),
            curves[0] == curves[1]
        ),
    )
}

fn leakage() -> anyhow::Result<Outcome> {
    let cfg = ExperimentConfig::default();
    let env = cfg.environment()?;
    let (expert, _) = train_expert(&env, &cfg.expert_config())?;
    let demos = generate_demos(&env, &expert, cfg.demos.count, cfg.demos.seed)?;
    let refs = commands::references(&cfg, &env, &expert)?;
    let run_cfg = dealio::dealio::DealioConfig {
        max_iterations: 10,
        ..cfg.dealio_config()
    };
    let poisoned = PoisonedCost { inner: &env };
    let mut identical = true;
    let mut eval_differs = true;
    for algo in [Algorithm::Dealio, Algorithm::Baseline] {
        let clean = run_algorithm(&env, &demos, &run_cfg, refs, algo)?;
        let dirty = run_algorithm(&poisoned, &demos, &run_cfg, refs, algo)?;
        let bytes = |run: &dealio::dealio::RunOutput| -> anyhow::Result<Vec<u8>> {
            let mut buf = Vec::new();
            for r in &run.curve.rows {
                buf.extend_from_slice(
                    format!(
                        "{},{},{:.16e}\n",
                        r.iteration, r.env_transitions, r.disc_loss
                    )
                    .as_bytes(),
                );
            }
            write_controller(&mut buf, &run.controller)?;
            run.discriminator.write(&mut buf)?;
            Ok(buf)
        };
        identical &= bytes(&clean)? == bytes(&dirty)?;
        eval_differs &= clean
            .curve
            .rows
            .iter()
            .zip(&dirty.curve.rows)
            .all(|(a, b)| a.mean_true_return != b.mean_true_return);
    }
    outcome(
        identical && eval_differs,
        format!(
            "both algorithms, 10 iterations: training bytes identical {identical}, \
             evaluation columns differ {eval_differs}"
        ),
    )
}

fn main() -> ExitCode {
    let work = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    if let Err(e) = std::fs::create_dir_all(&work) {
        eprintln!("cannot create {}: {e}", work.display());
        return ExitCode::FAILURE;
    }
    let start = Instant::now();
    let criteria: Vec<(&str, Box<dyn Fn() -> anyhow::Result<Outcome>>)> = vec![
        ("substitution identity", Box::new(substitution)),
        ("lqr correctness", Box::new(lqr)),
        ("dynamics fit recovery", Box::new(dynamics)),
        ("discriminator gradients", Box::new(gradients)),
        ("pi2 sanity", Box::new(pi2)),
        (
            "headline disc run",
            Box::new(|| headline(&work.join("headline"))),
        ),
        (
            "determinism",
            Box::new(|| determinism(&work.join("determinism"))),
        ),
        ("leakage guard", Box::new(leakage)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (passed, detail) = match check() {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        if !passed {
            failed += 1;
        }
        println!(
            "{} {}. {name}: {detail} [{:.1}s]",
            if passed { "PASS" } else { "FAIL" },
            i + 1,
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {}/{} passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
