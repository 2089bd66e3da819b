//! Command-line front end: wires TOML run configs to the estimators, keeps
//! an append-only run ledger, and supports deterministic replay.

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use pflab_core::config::{RunConfig, TestFunctionSpec};
use pflab_core::decay::{
    envelope_confining1, envelope_confining2, envelope_nonconfining, profile_bound_state,
    verify_envelope,
};
use pflab_core::fieldkernel::{build_kernel_cached, FieldKernel, KernelTabulation};
use pflab_core::potentials::{decompose_e, kato_classify, DecompositionHints, KatoVerdict};
use pflab_core::report::{append_ledger, content_hash, to_sorted_json, write_csv};
use pflab_core::rng::SeedSpec;
use pflab_core::scattering::{
    build_variable_mass_cutoff, emit_cutoff_tables, solve_ls, PhiHatSpec, ScatteringProblem,
};
use pflab_core::semigroup::{
    check_diamagnetic, check_semigroup, check_symmetry, ground_energy, TestFunction,
};
use pflab_core::Error as CoreError;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pflab", about = "Path-integral semigroup laboratory")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = default pool). Must not change any result.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Kato-class classification: ball norms and the exponential-moment curve.
    Kato,
    /// Solve the stationary scattering problems and emit cutoff tables.
    Ls,
    /// Ground-state energy from the log-slope of matrix elements.
    Energy,
    /// Bound-state profile, decay envelope, and domination check.
    Decay,
    /// Semigroup, symmetry, and field-domination z-score table.
    Laws,
    /// Re-run the op recorded in a previous report and compare hashes.
    Replay {
        /// Previous report JSON produced by this binary.
        against: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            // inconclusive / infeasible outcomes exit 2, hard errors 1
            let code = match e.downcast_ref::<CoreError>() {
                Some(
                    CoreError::ParameterInfeasible { .. }
                    | CoreError::FitUnstable { .. }
                    | CoreError::GapViolation { .. },
                ) => 2,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let path = cli.config.as_ref().context("--config is required")?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.display().to_string();
    }
    if cfg.workers > 0 {
        // best effort: the pool may already exist in tests
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    Ok(cfg)
}

fn knob(cfg: &RunConfig, key: &str, default: f64) -> f64 {
    cfg.extra.get(key).copied().unwrap_or(default)
}

fn test_function(cfg: &RunConfig) -> TestFunction {
    let spec = cfg.test_function.unwrap_or(TestFunctionSpec { sigma: 1.0, center_radius: 0.0 });
    let mut f = TestFunction::gaussian(cfg.dim, spec.sigma);
    f.center[0] = spec.center_radius;
    f
}

fn kernel_for(cfg: &RunConfig) -> anyhow::Result<Option<FieldKernel>> {
    if cfg.alpha == 0.0 {
        return Ok(None);
    }
    let model = cfg.cutoff_model()?.context("alpha > 0 requires a cutoff preset")?;
    let tab = cfg.kernel_tabulation.unwrap_or_else(KernelTabulation::default);
    let cache = Path::new(&cfg.out_dir).join("kernel-cache");
    std::fs::create_dir_all(&cache)?;
    Ok(Some(build_kernel_cached(&model, cfg.dispersion(), tab, &cache)?))
}

/// Report JSON: {op, config_hash, seed, result, result_hash, timestamp}.
/// The hash covers everything except the timestamp.
fn write_report<T: Serialize>(cfg: &RunConfig, op: &str, result: &T) -> anyhow::Result<PathBuf> {
    #[derive(Serialize)]
    struct Hashed<'a, T> {
        op: &'a str,
        config_hash: String,
        seed: u64,
        result: &'a T,
    }
    let hashed = Hashed { op, config_hash: cfg.hash(), seed: cfg.seed, result };
    let result_hash = content_hash(&hashed);
    let mut value = serde_json::to_value(&hashed)?;
    let ts = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    value["result_hash"] = serde_json::Value::String(result_hash.clone());
    value["timestamp"] = serde_json::Value::from(ts);
    let path = Path::new(&cfg.out_dir).join(format!("{op}.json"));
    std::fs::write(&path, to_sorted_json(&value)?)?;
    append_ledger(
        &Path::new(&cfg.out_dir).join("ledger.jsonl"),
        &serde_json::json!({
            "op": op,
            "config_hash": hashed.config_hash,
            "result_hash": result_hash,
            "timestamp": ts,
        }),
    )?;
    println!("{op}: wrote {}", path.display());
    Ok(path)
}

fn run(cli: &Cli) -> anyhow::Result<ExitCode> {
    match &cli.cmd {
        Cmd::Kato => cmd_kato(&load_config(cli)?),
        Cmd::Ls => cmd_ls(&load_config(cli)?),
        Cmd::Energy => cmd_energy(&load_config(cli)?),
        Cmd::Decay => cmd_decay(&load_config(cli)?),
        Cmd::Laws => cmd_laws(&load_config(cli)?),
        Cmd::Replay { against } => cmd_replay(cli, against),
    }
}

fn probe_grid(cfg: &RunConfig) -> Vec<Vec<f64>> {
    let r = knob(cfg, "kato_probe_radius", 1.0);
    [0.0, 0.5 * r, r]
        .iter()
        .map(|&s| {
            let mut x = vec![0.0; cfg.dim];
            x[0] = s;
            x
        })
        .collect()
}

fn cmd_kato(cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    let radii: Vec<f64> = (0..4).map(|i| knob(cfg, "kato_r_max", 2.0) / f64::powi(2.0, i)).collect();
    let report = kato_classify(
        cfg.selected_potential(),
        &radii,
        &cfg.t_list,
        &probe_grid(cfg),
        cfg.n_samples,
        SeedSpec::new(cfg.seed, 0),
    )?;
    write_report(cfg, "kato", &report)?;
    Ok(if report.verdict == KatoVerdict::Inconclusive {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_ls(cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    if cfg.dim != 3 {
        bail!("scattering solves are three-dimensional");
    }
    let phi = PhiHatSpec {
        k_min: knob(cfg, "ls_k_min", 0.5),
        k_max: knob(cfg, "ls_k_max", 1.5),
    };
    let n_k = knob(cfg, "ls_n_k", 2.0) as usize;
    let n = knob(cfg, "ls_n", 9.0) as usize;
    let half_width = knob(cfg, "ls_half_width", 1.5);
    let v = cfg.selected_potential().clone();
    let mut solutions = Vec::new();
    for (k, _) in pflab_core::scattering::variable_mass_k_grid(&phi, n_k) {
        let problem = ScatteringProblem::new(v.clone(), k, half_width, n);
        let solution = solve_ls(&problem)?;
        solutions.push((problem, solution));
    }
    let tables = build_variable_mass_cutoff(
        &solutions,
        &phi,
        cfg.dispersion(),
        knob(cfg, "omega_power", 1.0),
    )?;
    let out = Path::new(&cfg.out_dir);
    emit_cutoff_tables(&tables, &out.join("tables.json"), &out.join("tables.csv"))?;
    #[derive(Serialize)]
    struct LsSummary {
        n_k_nodes: usize,
        n_x_nodes: usize,
        max_residual: f64,
    }
    let summary = LsSummary {
        n_k_nodes: tables.k_nodes.len(),
        n_x_nodes: tables.x_nodes.len(),
        max_residual: solutions
            .iter()
            .map(|(_, s)| s.residual_norm)
            .fold(0.0, f64::max),
    };
    write_report(cfg, "ls", &summary)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_energy(cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    if cfg.t_list.len() < 3 {
        bail!("energy fits need at least three times in t_list");
    }
    let kernel = kernel_for(cfg)?;
    let est = ground_energy(
        &test_function(cfg),
        cfg.selected_potential(),
        kernel.as_ref(),
        cfg.alpha,
        &cfg.t_list,
        cfg.n_steps_per_unit_t,
        cfg.n_samples,
        SeedSpec::new(cfg.seed, 0),
        knob(cfg, "fit_threshold", 0.05),
    )?;
    write_report(cfg, "energy", &est)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_decay(cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    let v = cfg.selected_potential();
    let hints = DecompositionHints {
        u_radius: knob(cfg, "u_radius", 1.0),
        p: knob(cfg, "lp_p", if cfg.dim == 1 { 1.0 } else { 2.0 }),
        ..Default::default()
    };
    let decomp = decompose_e(v, hints)?;
    let e = knob(cfg, "energy", 0.5);
    let alpha_exp = knob(cfg, "martingale_alpha", 0.4);
    let envelope = match knob(cfg, "envelope_case", 1.0) as usize {
        1 => envelope_confining1(
            &decomp,
            e,
            knob(cfg, "growth_n", 1.0) as usize,
            knob(cfg, "growth_gamma", 0.5),
            knob(cfg, "compact_radius", 0.0),
            alpha_exp,
        )?,
        2 => envelope_confining2(&decomp, e, knob(cfg, "c_level", 5.0), None, alpha_exp)?,
        3 => envelope_nonconfining(&decomp, e, knob(cfg, "decay_beta", 0.5))?,
        other => bail!("envelope_case must be 1, 2, or 3 (got {other})"),
    };
    let r_max = knob(cfg, "profile_r_max", 3.0);
    let n_r = knob(cfg, "profile_n_r", 13.0) as usize;
    let radii: Vec<f64> = (0..n_r).map(|i| r_max * i as f64 / (n_r - 1) as f64).collect();
    let kernel = kernel_for(cfg)?;
    let profile = profile_bound_state(
        v,
        kernel.as_ref(),
        cfg.alpha,
        e,
        &radii,
        knob(cfg, "t_iter", 0.5),
        knob(cfg, "n_iter", 6.0) as usize,
        cfg.n_steps_per_unit_t,
        cfg.n_samples,
        &test_function(cfg),
        SeedSpec::new(cfg.seed, 0),
    )?;
    let window = (knob(cfg, "fit_window_lo", 1.5), knob(cfg, "fit_window_hi", r_max));
    let verdict = verify_envelope(&profile, &envelope, window);
    let rows: Vec<Vec<f64>> = profile
        .radii
        .iter()
        .zip(&profile.values)
        .zip(&profile.stderrs)
        .map(|((r, v), s)| vec![*r, *v, *s])
        .collect();
    write_csv(
        &Path::new(&cfg.out_dir).join("profile.csv"),
        "radius,value,stderr",
        &rows,
    )?;
    #[derive(Serialize)]
    struct DecayReport<A, B, C> {
        envelope: A,
        profile: B,
        verdict: C,
    }
    let ok = verdict.violations.is_empty();
    write_report(cfg, "decay", &DecayReport { envelope, profile, verdict })?;
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_laws(cfg: &RunConfig) -> anyhow::Result<ExitCode> {
    let v = cfg.selected_potential();
    let kernel = kernel_for(cfg)?;
    let f = test_function(cfg);
    let mut g = f.clone();
    g.center[0] += knob(cfg, "symmetry_shift", 0.5);
    let (s, t) = match cfg.t_list.as_slice() {
        [] => (0.25, 0.25),
        [t] => (*t / 2.0, *t / 2.0),
        [s, t, ..] => (*s, *t),
    };
    let n_steps = (cfg.n_steps_per_unit_t as f64 * (s + t).max(1.0)) as usize;
    let seed = SeedSpec::new(cfg.seed, 0);
    let semi = check_semigroup(
        &f,
        &f,
        s,
        t,
        v,
        kernel.as_ref(),
        cfg.alpha,
        cfg.n_steps_per_unit_t,
        cfg.n_samples,
        seed,
    )?;
    let (sym_a, sym_b, sym_z) = check_symmetry(
        &f,
        &g,
        s + t,
        v,
        kernel.as_ref(),
        cfg.alpha,
        n_steps,
        cfg.n_samples,
        seed.child(1),
    )?;
    let dia = match &kernel {
        Some(k) => Some(check_diamagnetic(
            &f,
            &f,
            s + t,
            v,
            k,
            cfg.alpha,
            n_steps,
            cfg.n_samples,
            seed.child(2),
        )?),
        None => None,
    };
    #[derive(Serialize)]
    struct LawsReport<A, B, C> {
        semigroup: A,
        symmetry: B,
        symmetry_z: f64,
        diamagnetic: Option<C>,
    }
    let dia_ok = dia.as_ref().map(|d| d.holds).unwrap_or(true);
    let all_ok = semi.z_score.abs() < 3.0 && sym_z.abs() < 3.0 && dia_ok;
    write_report(
        cfg,
        "laws",
        &LawsReport { semigroup: semi, symmetry: (sym_a, sym_b), symmetry_z: sym_z, diamagnetic: dia },
    )?;
    Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_replay(cli: &Cli, against: &Path) -> anyhow::Result<ExitCode> {
    let prev: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(against)?)?;
    let op = prev["op"].as_str().context("report missing op field")?.to_string();
    let prev_hash = prev["result_hash"].as_str().context("report missing result_hash")?.to_string();
    let replay_cli = Cli {
        config: cli.config.clone(),
        seed: cli.seed,
        workers: cli.workers,
        out: cli.out.clone(),
        cmd: match op.as_str() {
            "kato" => Cmd::Kato,
            "ls" => Cmd::Ls,
            "energy" => Cmd::Energy,
            "decay" => Cmd::Decay,
            "laws" => Cmd::Laws,
            other => bail!("cannot replay op '{other}'"),
        },
    };
    let _ = run(&replay_cli)?;
    let cfg = load_config(cli)?;
    let new_path = Path::new(&cfg.out_dir).join(format!("{op}.json"));
    let new: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&new_path)?)?;
    let new_hash = new["result_hash"].as_str().unwrap_or_default();
    if new_hash == prev_hash {
        println!("replay: {op} reproduced ({prev_hash})");
        Ok(ExitCode::SUCCESS)
    } else {
        bail!("replay mismatch for {op}: {prev_hash} vs {new_hash}")
    }
}
