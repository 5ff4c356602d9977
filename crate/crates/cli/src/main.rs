//! Command-line driver for the quantum secure imaging toolkit.
//!
//! Subcommands:
//! - `analyze`      closed-form attack statistics and the QBER security bound
//! - `simulate`     run a decoy-state BB84 session and issue a verdict
//! - `image`        reconstruct the configured object through the full chain
//! - `attack-sweep` tabulate the measured QBER against the bound as the
//!   attacked-pulse fraction grows
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime or infeasibility
//! error, 4 a simulated session was judged compromised.

use clap::{Args, Parser, Subcommand};
use qsi_core::attack::{min_error_rate, overlap_coefficients, AttackProfile};
use qsi_core::cgi::{
    bucket_counts, default_regions, energy_fractions, generate_patterns, pearson_correlation,
    reconstruct, snr_db, CgiError, CountSource, ObjectMask, SnrReport,
};
use qsi_core::config::{ChannelSpec, ConfigError, CountMode, RunConfig};
use qsi_core::decoy::{
    decoy_inequality_check, qber_lower_bound, ChannelModel, DecoyError, DecoyObservables,
};
use qsi_core::image_io::{read_object, write_float_grid, write_pattern_matrix, write_pgm};
use qsi_core::security::{verdict, Decision, KeyRateParams, SecurityVerdict};
use qsi_core::sim::{
    calibrate_channel, run_session, run_session_scaled, AttackConfig, SimError, SimulationConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "qsi",
    version,
    about = "Decoy-state BB84 quantum secure imaging toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the per-photon-number attack error table and the QBER bound
    Analyze(CommonArgs),
    /// Run a full session and decide secure / compromised / inconclusive
    Simulate(CommonArgs),
    /// Generate patterns, collect bucket counts, reconstruct, and report SNR
    Image(CommonArgs),
    /// Run sessions over a grid of attacked-pulse fractions
    AttackSweep(SweepArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Config file (key = value lines); built-in defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override sim.seed
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory (defaults to the config's output.dir)
    #[arg(long)]
    out: Option<PathBuf>,

    /// Override sim.pulses_per_frame
    #[arg(long)]
    pulses: Option<u64>,

    /// Override sim.frames (ignored by `image`, which runs one frame per pattern)
    #[arg(long)]
    frames: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Number of attack fractions from 0 to 1 inclusive (overrides sweep.steps)
    #[arg(long)]
    steps: Option<usize>,
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DecoyError> for CliError {
    fn from(e: DecoyError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidConfig(_) | SimError::Decoy(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<CgiError> for CliError {
    fn from(e: CgiError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<qsi_core::image_io::FormatError> for CliError {
    fn from(e: qsi_core::image_io::FormatError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<qsi_core::security::SecurityError> for CliError {
    fn from(e: qsi_core::security::SecurityError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Analyze(args) => cmd_analyze(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Image(args) => cmd_image(&args),
        Command::AttackSweep(args) => cmd_attack_sweep(&args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn out_dir(args: &CommonArgs, config: &RunConfig) -> PathBuf {
    args.out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.output_dir))
}

fn load_config(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    config.apply_env_overrides()?;
    if let Some(seed) = args.seed {
        config.sim_seed = seed;
    }
    if let Some(pulses) = args.pulses {
        config.sim_pulses_per_frame = pulses;
    }
    if let Some(frames) = args.frames {
        config.sim_frames = frames;
    }
    Ok(config)
}

fn resolve_channel(config: &RunConfig) -> Result<ChannelModel, CliError> {
    match config.channel_spec()? {
        ChannelSpec::Calibrate => Ok(calibrate_channel(
            &config.observables()?,
            &config.intensity()?,
        )?),
        ChannelSpec::Explicit {
            transmittance,
            background_yield,
            misalignment,
        } => Ok(ChannelModel::new(
            transmittance,
            background_yield,
            misalignment,
        )?),
    }
}

fn simulation_config(
    config: &RunConfig,
    channel: ChannelModel,
) -> Result<SimulationConfig, CliError> {
    let attack = if config.attack_enabled {
        Some(AttackConfig {
            profile: AttackProfile::standard(config.attack_n_max, config.attack_resend),
            fraction: config.attack_fraction,
        })
    } else {
        None
    };
    Ok(SimulationConfig {
        pulse_rate_hz: config.sim_pulse_rate_hz,
        pulses_per_frame: config.sim_pulses_per_frame,
        source: config.intensity()?,
        channel,
        attack,
        rng_seed: config.sim_seed,
    })
}

fn key_rate_params(config: &RunConfig) -> KeyRateParams {
    KeyRateParams {
        pulse_rate_hz: config.sim_pulse_rate_hz,
        signal_fraction: config.source_p_signal,
        sifting_factor: config.keyrate_sifting_factor,
        error_correction_efficiency: config.keyrate_f_ec,
    }
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}

/// Shared reproducibility record: the resolved config plus a manifest with
/// its hash. No timestamps, so identical runs produce identical bytes.
fn write_manifest(dir: &Path, command: &str, config: &RunConfig) -> Result<(), CliError> {
    let serialized = config.serialize();
    let digest = Sha256::digest(serialized.as_bytes());
    let mut hash = String::new();
    for byte in digest {
        write!(hash, "{byte:02x}").expect("string write");
    }
    write_out(dir, "config.ini", &serialized)?;
    let manifest = format!(
        "command={command}\nversion={}\nconfig_sha256={hash}\nseed={}\nframes={}\npulses_per_frame={}\n",
        env!("CARGO_PKG_VERSION"),
        config.sim_seed,
        config.sim_frames,
        config.sim_pulses_per_frame,
    );
    write_out(dir, "manifest.txt", &manifest)
}

fn observables_csv(obs: &DecoyObservables) -> String {
    let keyed = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from(
        "q_mu,q_nu,y0,e_mu,e_nu,\
         signal_sent,signal_detected,signal_sifted,signal_errors,\
         decoy_sent,decoy_detected,decoy_sifted,decoy_errors,\
         vacuum_sent,vacuum_detected,vacuum_sifted,vacuum_errors\n",
    );
    let class = |cc: Option<qsi_core::decoy::ClassCounts>| {
        cc.map_or_else(
            || ",,,".to_string(),
            |cc| format!("{},{},{},{}", cc.sent, cc.detected, cc.sifted, cc.errors),
        )
    };
    out.push_str(&format!(
        "{},{},{},{},{},{},{},{}\n",
        obs.q_mu(),
        obs.q_nu(),
        obs.y0(),
        keyed(obs.e_mu()),
        keyed(obs.e_nu()),
        class(obs.counts().map(|c| c.signal)),
        class(obs.counts().map(|c| c.decoy)),
        class(obs.counts().map(|c| c.vacuum)),
    ));
    out
}

fn cmd_analyze(args: &CommonArgs) -> Result<u8, CliError> {
    let config = load_config(args)?;
    let intensity = config.intensity()?;
    let observables = config.observables()?;

    let mut table_csv = String::from("n,c0,c1,c2,c3,e_min\n");
    let mut report = String::new();
    report.push_str("Filtered measurement statistics per photon number\n");
    report.push_str("   n      c0      c1      c2      c3      e_min\n");
    for n in 1..=10u32 {
        let c = overlap_coefficients(n).expect("n >= 1").values();
        let e = min_error_rate(n).expect("n >= 1").error_rate;
        writeln!(
            report,
            "{n:4}  {:.4}  {:.4}  {:.4}  {:.4}   {e:.6}",
            c[0], c[1], c[2], c[3]
        )
        .expect("string write");
        writeln!(table_csv, "{n},{},{},{},{},{e}", c[0], c[1], c[2], c[3])
            .expect("string write");
    }

    let e1 = min_error_rate(1).expect("n >= 1").error_rate;
    let e2 = min_error_rate(2).expect("n >= 1").error_rate;
    let inequalities = decoy_inequality_check(config.source_mu, config.source_nu, 100)?;
    let bound = qber_lower_bound(&observables, &intensity, e2)?;

    writeln!(report, "\nsingle-photon attack error floor e_1 = {e1:.6}").expect("string write");
    writeln!(report, "two-photon attack error floor    e_2 = {e2:.6}").expect("string write");
    writeln!(
        report,
        "decoy inequalities (mu={}, nu={}, n<=100): {}",
        config.source_mu,
        config.source_nu,
        if inequalities.all_pass() {
            "PASS"
        } else {
            "FAIL"
        }
    )
    .expect("string write");
    writeln!(
        report,
        "decoy QBER lower bound E_nu^L = {:.6} ({:.2}%)",
        bound.value,
        bound.value * 100.0
    )
    .expect("string write");
    writeln!(
        report,
        "configured measured E_nu      = {:.6} ({:.2}%)",
        config.observables_e_nu,
        config.observables_e_nu * 100.0
    )
    .expect("string write");

    print!("{report}");
    let out = out_dir(args, &config);
    std::fs::create_dir_all(&out)?;
    write_out(&out, "analysis.txt", &report)?;
    write_out(&out, "analysis.csv", &table_csv)?;
    write_manifest(&out, "analyze", &config)?;
    Ok(0)
}

fn cmd_simulate(args: &CommonArgs) -> Result<u8, CliError> {
    let config = load_config(args)?;
    let channel = resolve_channel(&config)?;
    let sim = simulation_config(&config, channel)?;
    let session = run_session(&sim, config.sim_frames)?;

    let e2 = min_error_rate(2).expect("n >= 1").error_rate;
    let verdict = verdict(
        &session.observables,
        &config.intensity()?,
        e2,
        &key_rate_params(&config),
        config.monitor_min_decoy_sifted,
    )?;

    print!("{}", verdict.key_value_block());
    let out = out_dir(args, &config);
    std::fs::create_dir_all(&out)?;
    write_out(&out, "observables.csv", &observables_csv(&session.observables))?;
    write_out(&out, "verdict.txt", &verdict.key_value_block())?;
    write_out(
        &out,
        "verdict.csv",
        &format!("{}\n{}\n", SecurityVerdict::csv_header(), verdict.csv_row()),
    )?;
    write_manifest(&out, "simulate", &config)?;

    Ok(if verdict.decision == Decision::Compromised {
        4
    } else {
        0
    })
}

fn load_object(config: &RunConfig) -> Result<ObjectMask, CliError> {
    let object = read_object(Path::new(&config.imaging_object))?;
    if object.width() != config.imaging_grid_width || object.height() != config.imaging_grid_height
    {
        return Err(CliError::Config(format!(
            "object grid {}x{} does not match configured {}x{}",
            object.width(),
            object.height(),
            config.imaging_grid_width,
            config.imaging_grid_height
        )));
    }
    Ok(object)
}

fn cmd_image(args: &CommonArgs) -> Result<u8, CliError> {
    let config = load_config(args)?;
    let object = load_object(&config)?;
    let patterns = generate_patterns(
        config.imaging_mode,
        config.imaging_grid_width,
        config.imaging_grid_height,
        config.imaging_patterns,
        config.imaging_pattern_seed,
    )?;

    // Stream 0 is reserved for imaging noise; session frames use 1..=N.
    let mut noise_rng = ChaCha12Rng::seed_from_u64(config.sim_seed);
    noise_rng.set_stream(0);

    let counts = match config.imaging_source {
        CountMode::Analytic => bucket_counts(
            &object,
            &patterns,
            CountSource::Analytic {
                kappa: config.imaging_kappa,
                shot_noise: config.imaging_shot_noise,
            },
            config.imaging_leakage,
            &mut noise_rng,
        )?,
        CountMode::MonteCarlo => {
            let channel = resolve_channel(&config)?;
            let sim = simulation_config(&config, channel)?;
            let scales = energy_fractions(&object, &patterns)?;
            let session = run_session_scaled(&sim, &scales)?;
            bucket_counts(
                &object,
                &patterns,
                CountSource::Measured {
                    frame_counts: &session.frame_counts,
                },
                config.imaging_leakage,
                &mut noise_rng,
            )?
        }
    };

    let weights: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let image = reconstruct(&patterns, &weights)?;

    let correlation = pearson_correlation(&image.values, object.values());
    let (signal_region, background_region) = default_regions(&object);
    let snr: Option<SnrReport> =
        if signal_region.iter().any(|&s| s) && background_region.iter().any(|&b| b) {
            Some(snr_db(&image, &signal_region, &background_region)?)
        } else {
            None
        };

    let opt_str = |v: Option<String>| v.unwrap_or_default();
    let snr_csv = format!(
        "signal_mean,background_variance,snr_db,infinite,pearson_correlation\n{},{},{},{},{}\n",
        opt_str(snr.map(|s| s.signal_mean.to_string())),
        opt_str(snr.map(|s| s.background_variance.to_string())),
        opt_str(snr.map(|s| s.snr_db.to_string())),
        opt_str(snr.map(|s| s.infinite.to_string())),
        opt_str(correlation.map(|c| c.to_string())),
    );

    let mut counts_csv = String::from("pattern,bucket_count\n");
    for (i, count) in counts.iter().enumerate() {
        writeln!(counts_csv, "{i},{count}").expect("string write");
    }

    match (&snr, correlation) {
        (Some(report), Some(corr)) => println!(
            "snr_db={} correlation={corr:.6} signal_mean={} background_variance={}",
            report.snr_db, report.signal_mean, report.background_variance
        ),
        _ => println!("snr_db=undefined (degenerate object regions)"),
    }

    let out = out_dir(args, &config);
    std::fs::create_dir_all(&out)?;
    write_pgm(&out.join("image.pgm"), &image)?;
    write_float_grid(&out.join("image.txt"), &image)?;
    write_pattern_matrix(&out.join("patterns.txt"), &patterns)?;
    write_out(&out, "bucket_counts.csv", &counts_csv)?;
    write_out(&out, "snr.csv", &snr_csv)?;
    write_manifest(&out, "image", &config)?;
    Ok(0)
}

fn cmd_attack_sweep(args: &SweepArgs) -> Result<u8, CliError> {
    let config = load_config(&args.common)?;
    let steps = args.steps.unwrap_or(config.sweep_steps);
    if steps < 2 {
        return Err(CliError::Config(
            "sweep needs at least 2 steps to span fractions 0..1".to_string(),
        ));
    }
    let channel = resolve_channel(&config)?;
    let intensity = config.intensity()?;
    let e2 = min_error_rate(2).expect("n >= 1").error_rate;
    let params = key_rate_params(&config);
    let profile = AttackProfile::standard(config.attack_n_max, config.attack_resend);

    let mut csv = String::from("fraction,e_nu,e_nu_lower_bound,decision\n");
    for step in 0..steps {
        let fraction = step as f64 / (steps - 1) as f64;
        let mut sim = simulation_config(&config, channel)?;
        sim.attack = Some(AttackConfig {
            profile: profile.clone(),
            fraction,
        });
        sim.rng_seed = config.sim_seed.wrapping_add(step as u64);
        let session = run_session(&sim, config.sim_frames)?;
        let verdict = verdict(
            &session.observables,
            &intensity,
            e2,
            &params,
            config.monitor_min_decoy_sifted,
        )?;
        let row = format!(
            "{fraction},{},{},{}\n",
            verdict
                .measured_e_nu
                .map(|e| e.to_string())
                .unwrap_or_default(),
            verdict
                .bound
                .map(|b| b.value.to_string())
                .unwrap_or_default(),
            verdict.decision,
        );
        print!("{row}");
        csv.push_str(&row);
    }

    let out = out_dir(&args.common, &config);
    std::fs::create_dir_all(&out)?;
    write_out(&out, "sweep.csv", &csv)?;
    write_manifest(&out, "attack-sweep", &config)?;
    Ok(0)
}
