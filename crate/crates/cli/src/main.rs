use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use approxfl::boundcheck::{bound_cnn, bound_mlp, check_cnn_bound, check_empirical};
use approxfl::channel::ChannelConfig;
use approxfl::codec::{decode_naive, decode_with_clamp, encode, Float32Bits};
use approxfl::harness::{
    accuracy_vs_airtime, run_experiment, same_snr_same_ber_suite, time_to_target,
    write_accuracy_vs_airtime, write_round_reports, write_suite_csv, ExperimentConfig, RoundReport,
};
use approxfl::link::StrategyKind;
use approxfl::modem::{
    ber_sweep, format_table1, msb_lsb_error_table, qpsk_rayleigh_ber, Constellation, ModOrder,
};

#[derive(Parser)]
#[command(
    name = "approxfl",
    version,
    about = "Federated learning over a lossy wireless uplink"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train with each uplink strategy and write accuracy-vs-airtime CSVs.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Run only this strategy (default: all three).
        #[arg(long)]
        strategy: Option<StrategyKind>,
    },
    /// Approximate strategy across modulations at equal SNR and equal BER.
    Fig4 {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
    },
    /// Monte-Carlo BER over Rayleigh fading.
    SweepBer {
        #[arg(long = "mod", default_value = "qpsk")]
        order: ModOrder,
        #[arg(long, value_delimiter = ',', default_value = "0,5,10,15,20,25,30")]
        snr_db: Vec<f64>,
        #[arg(long, default_value_t = 1_000_000)]
        bits: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Fading block length in bits (default: one symbol).
        #[arg(long)]
        block_len_bits: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Randomized check of the gradient magnitude bound.
    Bounds {
        #[arg(long, value_enum, default_value = "mlp")]
        model: BoundModel,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        weight_limit: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// 16-QAM MSB/LSB nearest-neighbour error table.
    Table1,
    /// Print the default experiment config as TOML.
    Config,
    Codec {
        #[command(subcommand)]
        command: CodecCommand,
    },
    Modem {
        #[command(subcommand)]
        command: ModemCommand,
    },
}

#[derive(Subcommand)]
enum CodecCommand {
    /// Show a value's bits and how it decodes with and without the clamp.
    Roundtrip {
        #[arg(long, allow_hyphen_values = true)]
        value: f32,
    },
}

#[derive(Subcommand)]
enum ModemCommand {
    /// Print `snr_db,ber[,closed_form]` rows to stdout.
    Ber {
        #[arg(long = "mod", default_value = "qpsk")]
        order: ModOrder,
        #[arg(long, value_delimiter = ',', default_value = "10,20")]
        snr_db: Vec<f64>,
        #[arg(long, default_value_t = 1_000_000)]
        bits: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Same as the top-level `table1`.
    Table1,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundModel {
    Mlp,
    Cnn,
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn cmd_run(cfg: ExperimentConfig, out: &Path, only: Option<StrategyKind>) -> Result<()> {
    let kinds = match only {
        Some(k) => vec![k],
        None => vec![
            StrategyKind::Ecrt,
            StrategyKind::Approximate,
            StrategyKind::Naive,
        ],
    };
    let target = cfg.experiment.target_accuracy;
    let mut runs: Vec<(String, Vec<RoundReport>)> = Vec::new();
    let mut failure = None;
    for kind in kinds {
        let mut c = cfg.clone();
        c.link.kind = kind;
        let run = run_experiment(&c)?;
        write_round_reports(create(out, &format!("rounds_{kind}.csv"))?, &run.reports)?;
        let last = run.reports.last().map_or(0.0, |r| r.accuracy);
        match time_to_target(&run.reports, target) {
            Some((round, air)) => {
                println!("{kind}: final accuracy {last:.4}, reached {target} at round {round} ({air} symbols)")
            }
            None => println!("{kind}: final accuracy {last:.4}, never reached {target}"),
        }
        if let Some(e) = run.aborted {
            eprintln!("{kind}: aborted after {} rounds: {e}", run.reports.len());
            failure.get_or_insert(e);
        }
        runs.push((kind.to_string(), run.reports));
    }
    let labelled: Vec<(&str, &[RoundReport])> = runs
        .iter()
        .map(|(k, r)| (k.as_str(), r.as_slice()))
        .collect();
    write_accuracy_vs_airtime(
        create(out, "fig3_accuracy_vs_time.csv")?,
        &accuracy_vs_airtime(&labelled),
        cfg.experiment.symbol_rate_hz,
    )?;
    let find = |k: StrategyKind| {
        runs.iter()
            .find(|(n, _)| *n == k.to_string())
            .map(|(_, r)| r.as_slice())
    };
    if let (Some(e), Some(a)) = (find(StrategyKind::Ecrt), find(StrategyKind::Approximate)) {
        match (time_to_target(e, target), time_to_target(a, target)) {
            (Some((_, te)), Some((_, ta))) => {
                println!(
                    "time-to-target ratio ecrt/approximate: {:.3}",
                    te as f64 / ta as f64
                )
            }
            _ => println!("time-to-target ratio ecrt/approximate: undefined (target not reached)"),
        }
    }
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn cmd_fig4(cfg: ExperimentConfig, out: &Path, seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        bail!("at least one seed is required");
    }
    let suite = same_snr_same_ber_suite(&cfg, seeds)?;
    write_suite_csv(create(out, "fig4a_same_snr.csv")?, &suite.same_snr)?;
    write_suite_csv(create(out, "fig4b_same_ber.csv")?, &suite.same_ber)?;
    for (name, curves) in [("same SNR", &suite.same_snr), ("same BER", &suite.same_ber)] {
        for c in curves {
            println!(
                "{name}: {} measured BER {:.4e}, final accuracy {:.4}",
                c.label(),
                c.measured_ber,
                c.final_accuracy()
            );
        }
    }
    Ok(())
}

fn print_table1(out: &mut impl Write) -> Result<()> {
    let c = Constellation::new(ModOrder::Qam16);
    write!(
        out,
        "{}",
        format_table1(&msb_lsb_error_table(&c, 1), c.bits_per_symbol())
    )?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut stdout = stdout.lock();
    match cli.command {
        Command::Run {
            config,
            out,
            strategy,
        } => cmd_run(load_config(config.as_deref())?, &out, strategy)?,
        Command::Fig4 { config, out, seeds } => {
            cmd_fig4(load_config(config.as_deref())?, &out, &seeds)?
        }
        Command::SweepBer {
            order,
            snr_db,
            bits,
            seed,
            block_len_bits,
            out,
        } => {
            let c = Constellation::new(order);
            let channel = ChannelConfig {
                block_len_bits: block_len_bits.unwrap_or(c.bits_per_symbol()),
                ..Default::default()
            };
            let points = ber_sweep(&c, &channel, &snr_db, bits, seed)?;
            let mut w = create(&out, "ber_sweep.csv")?;
            writeln!(w, "modulation,snr_db,ber,bits")?;
            for (snr, ber) in points {
                writeln!(w, "{order},{snr},{ber},{bits}")?;
                writeln!(stdout, "{order} {snr} dB: BER {ber:.4e}")?;
            }
            w.flush()?;
        }
        Command::Bounds {
            model,
            trials,
            seed,
            weight_limit,
            out,
        } => {
            let report = match model {
                BoundModel::Mlp => check_empirical(&bound_mlp(), trials, seed, weight_limit)?,
                BoundModel::Cnn => check_cnn_bound(&bound_cnn(), trials, seed, weight_limit)?,
            };
            let mut w = create(&out, "bound_report.csv")?;
            report.write_csv(&mut w)?;
            w.flush()?;
            report.write_csv(&mut stdout)?;
            if !report.passed() {
                bail!("bound check failed");
            }
        }
        Command::Table1
        | Command::Modem {
            command: ModemCommand::Table1,
        } => print_table1(&mut stdout)?,
        Command::Config => write!(stdout, "{}", ExperimentConfig::default().to_toml())?,
        Command::Codec {
            command: CodecCommand::Roundtrip { value },
        } => {
            let bits = Float32Bits::from_f32(value);
            let frame = encode(&[value])?;
            writeln!(stdout, "value:   {value:e}")?;
            writeln!(stdout, "bits:    {}", bits.pretty())?;
            writeln!(stdout, "naive:   {:e}", decode_naive(&frame)?[0])?;
            writeln!(
                stdout,
                "clamped: {:e} ({})",
                decode_with_clamp(&frame)?[0],
                bits.clamped().pretty()
            )?;
        }
        Command::Modem {
            command:
                ModemCommand::Ber {
                    order,
                    snr_db,
                    bits,
                    seed,
                },
        } => {
            let c = Constellation::new(order);
            let channel = ChannelConfig {
                block_len_bits: c.bits_per_symbol(),
                ..Default::default()
            };
            let points = ber_sweep(&c, &channel, &snr_db, bits, seed)?;
            if order == ModOrder::Qpsk {
                writeln!(stdout, "snr_db,ber,closed_form")?;
            } else {
                writeln!(stdout, "snr_db,ber")?;
            }
            for (snr, ber) in points {
                if order == ModOrder::Qpsk {
                    let gamma_b = 10f64.powf(snr / 10.0) / 2.0;
                    writeln!(stdout, "{snr},{ber},{}", qpsk_rayleigh_ber(gamma_b))?;
                } else {
                    writeln!(stdout, "{snr},{ber}")?;
                }
            }
        }
    }
    Ok(())
}
