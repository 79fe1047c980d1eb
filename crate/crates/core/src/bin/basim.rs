//! Campaign CLI: run protocol campaigns, validate committee sampling,
//! fit complexity models, and replay traces.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use basim::harness::{
    self, fit, sampling, CampaignReport, ExperimentConfig, HarnessError,
};
use basim::params::derive_params;
use basim::sim::adversary::AdversarySpec;
use basim::sim::{InputAssignment, Protocol};

#[derive(Parser)]
#[command(name = "basim", about = "Committee-sampled Byzantine agreement simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ParamArgs {
    #[arg(long)]
    n: u32,
    #[arg(long, default_value_t = 0.2)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.05)]
    d: f64,
    #[arg(long, default_value_t = false)]
    full_participation: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded Monte-Carlo campaign of one protocol.
    Run {
        #[command(flatten)]
        params: ParamArgs,
        /// shared_coin | whp_coin | approver | agreement
        #[arg(long)]
        protocol: String,
        /// fifo | uniform_random | targeted_delay | min_value_suppressor |
        /// crash_f | equivocator
        #[arg(long, default_value = "uniform_random")]
        adversary: String,
        /// Victim ids for targeted_delay.
        #[arg(long, value_delimiter = ',')]
        victims: Vec<u32>,
        /// all_zero | all_one | all_bot | split_zero_one | split_zero_bot |
        /// split_one_bot | random
        #[arg(long, default_value = "all_zero")]
        inputs: String,
        #[arg(long, default_value_t = 100)]
        trials: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        round_cap: u64,
        /// Directory for campaign.json + trials.csv (stdout summary only if
        /// omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write one replayable .trace file per trial under OUT/traces.
        #[arg(long, default_value_t = false)]
        trace: bool,
    },
    /// Draw committees and validate the sampling properties S1-S6.
    VerifySampling {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, default_value_t = 1000)]
        committees: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = false)]
        randomize_corrupted: bool,
        #[arg(long, default_value_t = 4)]
        subset_checks: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit words-vs-n growth models from campaign JSON files.
    Fit {
        /// campaign.json files, one per n.
        #[arg(required = true)]
        campaigns: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-execute recorded traces and verify their report hashes.
    Replay {
        /// A .trace file or a directory of them.
        #[arg(required = true)]
        path: PathBuf,
    },
}

fn parse_protocol(s: &str) -> Result<Protocol, HarnessError> {
    match s {
        "shared_coin" => Ok(Protocol::SharedCoin),
        "whp_coin" => Ok(Protocol::WhpCoin),
        "approver" => Ok(Protocol::Approver),
        "agreement" => Ok(Protocol::Agreement),
        other => Err(HarnessError::Config(format!("unknown protocol {other:?}"))),
    }
}

fn parse_inputs(s: &str) -> Result<InputAssignment, HarnessError> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| HarnessError::Config(format!("unknown input rule {s:?}")))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::Run {
            params,
            protocol,
            adversary,
            victims,
            inputs,
            trials,
            seed,
            round_cap,
            out,
            trace,
        } => {
            let adversary = AdversarySpec::parse(&adversary, &victims)
                .ok_or_else(|| HarnessError::Config(format!("unknown adversary {adversary:?}")))?;
            let config = ExperimentConfig {
                protocol: parse_protocol(&protocol)?,
                n: params.n,
                epsilon: params.epsilon,
                d: params.d,
                full_participation: params.full_participation,
                adversary,
                inputs: parse_inputs(&inputs)?,
                trials,
                base_seed: seed,
                round_cap,
                detail: false,
            };
            let (report, rows) = harness::run_campaign_with_rows(&config, out.is_some())?;
            if trace {
                let dir = out
                    .clone()
                    .unwrap_or_else(|| PathBuf::from("."))
                    .join("traces");
                std::fs::create_dir_all(&dir)?;
                let trial_cfg = config.trial_config()?;
                for i in 0..config.trials {
                    let path = dir.join(format!("trial-{i:06}.trace"));
                    basim::sim::run_trial_traced(
                        &trial_cfg,
                        &config.adversary,
                        config.base_seed + i,
                        &path,
                    )?;
                }
            }
            if let Some(dir) = &out {
                harness::write_campaign_outputs(&report, &rows, dir)?;
            }
            print_campaign_summary(&report);
            // nonzero exit iff a safety violation had no logged sampling
            // failure to explain it
            if report.violations.safety_unexplained > 0 {
                eprintln!(
                    "unexplained safety violations: {} (seeds {:?})",
                    report.violations.safety_unexplained,
                    report.violations.safety_unexplained_seeds
                );
                return Ok(ExitCode::from(1));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::VerifySampling {
            params,
            committees,
            seed,
            randomize_corrupted,
            subset_checks,
            out,
        } => {
            let p = derive_params(params.n, params.epsilon, params.d, params.full_participation)?;
            let cfg = sampling::SamplingConfig {
                params: p,
                committees,
                base_seed: seed,
                randomize_corrupted,
                subset_checks,
            };
            let report = sampling::verify_sampling_properties(&cfg);
            let json = serde_json::to_string_pretty(&report)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("sampling.json"), &json)?;
            }
            println!("{json}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Fit { campaigns, out } => {
            let mut points = Vec::new();
            for path in &campaigns {
                let report: CampaignReport =
                    serde_json::from_str(&std::fs::read_to_string(path)?)?;
                points.push((report.config.n, report.mean_words));
            }
            let fit = fit::fit_complexity(&points)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            let json = serde_json::to_string_pretty(&fit)?;
            if let Some(path) = out {
                std::fs::write(path, &json)?;
            }
            println!("{json}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { path } => {
            let (reports, mismatches) = if path.is_dir() {
                harness::replay_campaign(&path)?
            } else {
                let trace = basim::sim::trace::read_trace(&path)?;
                let expected = trace.report_hash.clone();
                let report = basim::sim::trace::replay(trace)?;
                let mismatch = expected.is_some_and(|h| h != report.hash());
                (vec![report], mismatch as u64)
            };
            for r in &reports {
                println!("{} seed={} hash={}", r.adversary, r.seed, r.hash());
            }
            if mismatches > 0 {
                eprintln!("{mismatches} trace(s) failed hash verification");
                return Ok(ExitCode::from(1));
            }
            println!("replayed {} trace(s), all hashes verified", reports.len());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn print_campaign_summary(report: &CampaignReport) {
    println!(
        "{:?} n={} trials={} adversary={}",
        report.config.protocol,
        report.config.n,
        report.trials,
        report.config.adversary.name()
    );
    println!(
        "  unanimous0={:.4} [{:.4},{:.4}]  unanimous1={:.4} [{:.4},{:.4}]",
        report.unanimous0.rate,
        report.unanimous0.ci_low,
        report.unanimous0.ci_high,
        report.unanimous1.rate,
        report.unanimous1.ci_low,
        report.unanimous1.ci_high
    );
    println!(
        "  all_returned={:.4}  decided_all={:.4}  mean_rounds={:.2}  p99_rounds={:.1}",
        report.all_returned.rate,
        report.decided_all.rate,
        report.mean_rounds,
        report.p99_rounds
    );
    println!(
        "  mean_words={:.1}  mean_duration={:.2}  s_failure_rates={:?}",
        report.mean_words, report.mean_duration, report.committee_s_failure_rates
    );
    println!(
        "  violations: safety={} (unexplained={}) liveness={} common_core={}",
        report.violations.safety,
        report.violations.safety_unexplained,
        report.violations.liveness,
        report.violations.common_core
    );
}
