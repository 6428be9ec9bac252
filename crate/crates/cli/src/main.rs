mod args;
mod commands;
mod config;
mod error;
mod output;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use config::parse_point;
use error::{config_err, CliError};
use output::Output;

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("TCHEBY_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| config_err(format!("TCHEBY_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let (effective, cfg) = config::resolve(&cli.global)?;

    // flag values that only make sense per subcommand; still config errors
    let ref_point = match &cli.command {
        Command::Eval(a) => a.ref_point.as_deref(),
        Command::Front(a) => a.ref_point.as_deref(),
        Command::GpEhv(a) => a.ref_point.as_deref(),
        _ => None,
    }
    .map(|s| parse_point("ref-point", s))
    .transpose()?;
    let wild_type = match &cli.command {
        Command::Generate(a) => a
            .wild_type
            .as_ref()
            .or(cfg.file.generate.wild_type.as_ref())
            .map(|s| cfg.vocab.encode(s).map_err(|e| config_err(format!("wild type: {e}"))))
            .transpose()?,
        _ => None,
    };
    if let Command::Front(a) = &cli.command {
        if a.concave.is_some_and(|n| n < 3) {
            return Err(config_err("--concave needs at least 3 points"));
        }
    }

    let mut out = Output::new(&cli.global.out);
    match &cli.command {
        Command::Synth => commands::synth(&cfg, &mut out)?,
        Command::Stats(a) => commands::stats(&cfg, &mut out, &a.data)?,
        Command::Pretrain(a) => commands::pretrain(&cfg, &mut out, &a.data)?,
        Command::Train(a) => commands::train(&cfg, &mut out, a)?,
        Command::Eval(a) => commands::eval(&cfg, &mut out, a, ref_point)?,
        Command::Front(a) => commands::front(&cfg, &mut out, a, ref_point)?,
        Command::Generate(a) => commands::generate(&cfg, &mut out, a, wild_type)?,
        Command::GpFit(a) => commands::gp_fit(&cfg, &mut out, &a.data)?,
        Command::GpEhv(a) => commands::gp_ehv(&cfg, &mut out, a, ref_point)?,
        Command::Scalarize(a) => commands::scalarize(&cfg, &mut out, &a.data)?,
        Command::Report(a) => commands::report(&mut out, a)?,
    }
    out.finish(cli.command.name(), cfg.file.seed, &effective)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            std::process::exit(0);
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ").to_string();
            eprintln!("{}", config_err(first));
            std::process::exit(1);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
