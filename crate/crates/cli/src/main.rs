//! `homp`: simulate, fit, evaluate and check higher-order Markov process
//! models from a JSON run configuration.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical error or
//! failed diagnostic, 4 optimizer did not converge.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use homp::inference::{ck_consistency_check, estimate_jump_moment, CKReport, JumpMomentEstimate};
use homp::{Dataset, FitOptions, SimConfig};
use serde::Serialize;
use serde_json::json;

use config::{Command, RunConfig};

const VERSION: &str = concat!("homp ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Parser)]
#[command(name = "homp", version, about = "Higher-order Markov process toolkit")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress the summary line on standard output.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<homp::Error> for Failure {
    fn from(e: homp::Error) -> Self {
        let code = if e.is_numerical() { 3 } else { 2 };
        Self { code, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("homp {}: {}", cli.command.name(), f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> Result<u8, Failure> {
    let mut cfg = config::load(&cli.config).map_err(Failure::config)?;
    if let Some(c) = cfg.command {
        if c != cli.command {
            return Err(Failure::config(format!(
                "config is for `{}` but `{}` was requested",
                c.name(),
                cli.command.name()
            )));
        }
    }
    cfg.command = Some(cli.command);
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| Failure::config(format!("cannot create {}: {e}", cli.out.display())))?;
    let base = cli.config.parent().unwrap_or(Path::new("."));
    let ctx = Ctx { cfg: &cfg, out: &cli.out, base, quiet: cli.quiet };
    match cli.command {
        Command::Simulate => run_simulate(&ctx),
        Command::Fit => run_fit(&ctx),
        Command::Loglik => run_loglik(&ctx),
        Command::Check => run_check(&ctx),
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
    base: &'a Path,
    quiet: bool,
}

impl Ctx<'_> {
    fn write(&self, name: &str, contents: &str) -> Result<(), Failure> {
        let path = self.out.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| Failure::config(format!("cannot serialize {name}: {e}")))?;
        text.push('\n');
        self.write(name, &text)
    }

    fn manifest(&self, outputs: &[String]) -> Result<(), Failure> {
        self.write_json(
            "manifest.json",
            &json!({
                "version": VERSION,
                "command": self.cfg.command.map(Command::name),
                "seed": self.cfg.seed,
                "config": self.cfg,
                "outputs": outputs,
            }),
        )
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn read_data(&self, path: &Path) -> Result<Dataset, Failure> {
        let full = self.base.join(path);
        let text = std::fs::read_to_string(&full)
            .map_err(|e| Failure::config(format!("cannot read data {}: {e}", full.display())))?;
        Dataset::from_csv(&text).map_err(|e| match e {
            homp::Error::Parse { line, message } => {
                Failure::config(format!("{}: line {line}: {message}", full.display()))
            }
            other => other.into(),
        })
    }
}

fn run_simulate(ctx: &Ctx) -> Result<u8, Failure> {
    let sim = ctx
        .cfg
        .simulation
        .as_ref()
        .ok_or_else(|| Failure::config("`simulation` section is required"))?;
    let model = ctx.cfg.model.build()?;
    let init = ctx.cfg.initial_condition(&model, sim.dt)?;
    let sc = SimConfig::new(sim.dt, sim.horizon, sim.n_paths, ctx.cfg.seed);
    let paths = homp::simulate_ensemble(&model, &init, &sc)?;
    let mut outputs = Vec::with_capacity(paths.len());
    for (i, p) in paths.iter().enumerate() {
        let name = format!("path_{i}.csv");
        ctx.write(&name, &p.to_csv())?;
        outputs.push(name);
    }
    ctx.manifest(&outputs)?;
    ctx.say(format!("wrote {} path(s) to {}", paths.len(), ctx.out.display()));
    Ok(0)
}

fn fit_options(ctx: &Ctx, model: &homp::ModelSpec) -> Result<(FitOptions, Dataset), Failure> {
    let fit = ctx
        .cfg
        .fit
        .as_ref()
        .ok_or_else(|| Failure::config("`fit` section is required"))?;
    let data = ctx.read_data(&fit.data)?;
    let opts = FitOptions {
        dt: fit.dt,
        optimizer: fit.optimizer.clone(),
        max_evals: fit.max_evals,
        n_restarts: fit.n_restarts,
        initial: ctx.cfg.fit_params(fit, model),
        seed: ctx.cfg.seed,
        initial_sigma2: ctx.cfg.model.initial_sigma2,
    };
    Ok((opts, data))
}

fn run_fit(ctx: &Ctx) -> Result<u8, Failure> {
    let model = ctx.cfg.model.build()?;
    let (opts, data) = fit_options(ctx, &model)?;
    let result = homp::fit_mle(&model, &data, &opts)?;
    ctx.write_json("fit_result.json", &result)?;
    ctx.manifest(&["fit_result.json".to_string()])?;
    let summary: Vec<String> = result.theta_hat.iter().map(|(k, v)| format!("{k}={v:.6}")).collect();
    ctx.say(format!(
        "loglik {:.6} at {} ({} evaluations{})",
        result.loglik,
        summary.join(", "),
        result.n_evals,
        if result.converged { "" } else { ", not converged" }
    ));
    Ok(if result.converged { 0 } else { 4 })
}

fn run_loglik(ctx: &Ctx) -> Result<u8, Failure> {
    let model = ctx.cfg.model.build()?;
    let (opts, data) = fit_options(ctx, &model)?;
    let ll = homp::log_likelihood(&model, &data, &opts)?;
    let series = homp::interpolate_dataset(&data, opts.dt)?;
    let blocks = homp::partition_blocks(&series, model.tau)?;
    ctx.write_json(
        "loglik.json",
        &json!({
            "loglik": ll,
            "params": model.params,
            "n_steps": series.n_steps(),
            "n_blocks": blocks.segments.len(),
            "has_remainder": blocks.has_remainder,
        }),
    )?;
    ctx.manifest(&["loglik.json".to_string()])?;
    ctx.say(format!("loglik {ll:.6}"));
    Ok(0)
}

#[derive(Serialize)]
struct MomentCheck {
    #[serde(flatten)]
    estimate: JumpMomentEstimate,
    expected: f64,
    /// Deterministic finite-`delta_t` offset of the estimator, added to the
    /// 3 standard error tolerance.
    bias: f64,
    passed: bool,
}

fn moment_check(estimate: JumpMomentEstimate, expected: f64, bias: f64) -> MomentCheck {
    // slack for rounding when the standard error is exactly zero
    let slack = 1e-12 * (1.0 + expected.abs());
    let passed = (estimate.value - expected).abs() <= 3.0 * estimate.std_error + bias + slack;
    MomentCheck { estimate, expected, bias, passed }
}

#[derive(Serialize)]
struct Diagnostics {
    #[serde(rename = "D1")]
    d1: MomentCheck,
    #[serde(rename = "D2")]
    d2: MomentCheck,
    ks_statistic: f64,
    ck: CKReport,
    ck_passed: bool,
    passed: bool,
}

fn run_check(ctx: &Ctx) -> Result<u8, Failure> {
    let check = ctx
        .cfg
        .check
        .as_ref()
        .ok_or_else(|| Failure::config("`check` section is required"))?;
    let model = ctx.cfg.model.build()?;
    let init = ctx.cfg.initial_condition(&model, check.dt)?;
    let seed = ctx.cfg.seed;

    let sigma2 = init.sigma2.as_ref();
    let drift = model.drift_with(&init.history, sigma2)?;
    let diffusion = model.diffusion_with(&init.history, sigma2)?;
    let d1 = estimate_jump_moment(&model, &init, 1, check.delta_t, check.n_samples, seed)?;
    let d2 = estimate_jump_moment(&model, &init, 2, check.delta_t, check.n_samples, seed)?;
    let t = check.t.unwrap_or(2.0 * model.tau);
    let terminal = check.terminal_time.unwrap_or(4.0 * model.tau);
    let ck = ck_consistency_check(&model, &init, t, terminal, check.ck_samples, seed)?;

    // E[dy^2] / (2 dt) = diffusion^2 / 2 + drift^2 dt / 2 for one Euler step
    let d1 = moment_check(d1, drift, 0.0);
    let d2 = moment_check(d2, 0.5 * diffusion * diffusion, 0.5 * drift * drift * check.delta_t);
    let ck_passed = ck.passed();
    let passed = d1.passed && d2.passed && ck_passed;
    let report = Diagnostics { d1, d2, ks_statistic: ck.ks_statistic, ck, ck_passed, passed };
    ctx.write_json("diagnostics.json", &report)?;
    ctx.manifest(&["diagnostics.json".to_string()])?;
    ctx.say(format!(
        "D1 {:.6} (expected {:.6}), D2 {:.6} (expected {:.6}), KS {:.5} (critical {:.5}): {}",
        report.d1.estimate.value,
        report.d1.expected,
        report.d2.estimate.value,
        report.d2.expected,
        report.ks_statistic,
        report.ck.critical_value,
        if passed { "pass" } else { "FAIL" }
    ));
    Ok(if passed { 0 } else { 3 })
}
