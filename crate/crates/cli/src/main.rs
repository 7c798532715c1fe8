//! `berngraph` command-line interface.

mod commands;
mod config;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use berngraph::checkpoint::read_header;
use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};

use config::{defaults, layer, read_kv, RunConfig, KEYS};

const SUBCOMMANDS: &[(&str, &str)] = &[
    ("simulate", "Generate a synthetic cohort and its ground truth"),
    ("stats", "Write marginal and conditional event statistics"),
    ("graph", "Dump one patient's graph as JSON"),
    ("train", "Train a gnn, lr or mlp model and save a checkpoint"),
    ("eval", "Score a checkpoint on the test rows with bootstrap resampling"),
    ("ablate", "Train and score every ablation arm into one CSV"),
    ("export-viz", "Export node activations with top-k flags for one patient"),
];

fn cli() -> Command {
    let keys: Vec<Arg> = KEYS
        .iter()
        .map(|k| {
            let help = if k.default.is_empty() {
                k.help.to_string()
            } else {
                format!("{} [default: {}]", k.help, k.default)
            };
            Arg::new(k.name)
                .long(k.name.replace('_', "-"))
                .value_name("VALUE")
                .help(help)
                .help_heading("Configuration")
                .allow_negative_numbers(true)
        })
        .collect();
    Command::new("berngraph")
        .about("Graph networks over Bernoulli event statistics for drug recommendation")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("threads")
                .long("threads")
                .global(true)
                .value_name("N")
                .value_parser(value_parser!(usize))
                .help("worker threads (falls back to BERNGRAPH_THREADS)"),
        )
        .arg(
            Arg::new("deterministic")
                .long("deterministic")
                .global(true)
                .action(ArgAction::SetTrue)
                .help("run single-threaded"),
        )
        .subcommands(SUBCOMMANDS.iter().map(|&(name, about)| {
            Command::new(name)
                .about(about)
                .arg(
                    Arg::new("config")
                        .long("config")
                        .value_name("FILE")
                        .value_parser(value_parser!(PathBuf))
                        .help("key=value config file; flags take precedence"),
                )
                .args(keys.clone())
        }))
}

fn flag_overrides(m: &ArgMatches) -> BTreeMap<String, String> {
    KEYS.iter()
        .filter_map(|k| m.get_one::<String>(k.name).map(|v| (k.name.to_string(), v.clone())))
        .collect()
}

/// Training settings stored in a checkpoint, used as the base layer when
/// scoring it so the split and encodings match the training run.
fn checkpoint_layer(user: &BTreeMap<String, String>) -> Result<BTreeMap<String, String>> {
    let mut probe = defaults();
    layer(&mut probe, user.clone())?;
    let path = match probe.get("checkpoint").map(String::as_str) {
        Some("") | None => PathBuf::from(&probe["out"]).join("checkpoint.bin"),
        Some(p) => PathBuf::from(p),
    };
    let header = read_header(&path).with_context(|| format!("cannot read checkpoint {}", path.display()))?;
    let mut out = BTreeMap::new();
    if let Some(obj) = header.hyper.as_object() {
        for (k, v) in obj {
            if KEYS.iter().any(|key| key.name == k) {
                if let Some(s) = v.as_str() {
                    out.insert(k.clone(), s.to_string());
                }
            }
        }
    }
    out.remove("out");
    out.insert("checkpoint".into(), path.display().to_string());
    Ok(out)
}

fn resolve(name: &str, m: &ArgMatches) -> Result<RunConfig> {
    let mut user = match m.get_one::<PathBuf>("config") {
        Some(path) => read_kv(path)?,
        None => BTreeMap::new(),
    };
    layer(&mut user, flag_overrides(m))?;
    let mut map = defaults();
    if matches!(name, "eval" | "export-viz") {
        layer(&mut map, checkpoint_layer(&user)?)?;
    }
    layer(&mut map, user)?;
    RunConfig::from_map(map)
}

fn thread_count(m: &ArgMatches) -> Result<Option<usize>> {
    if m.get_flag("deterministic") {
        return Ok(Some(1));
    }
    if let Some(&n) = m.get_one::<usize>("threads") {
        return Ok(Some(n));
    }
    match std::env::var("BERNGRAPH_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .with_context(|| format!("BERNGRAPH_THREADS={v} is not a thread count")),
        _ => Ok(None),
    }
}

fn dispatch(name: &str, cfg: &RunConfig) -> Result<()> {
    match name {
        "simulate" => commands::simulate(cfg),
        "stats" => commands::stats(cfg),
        "graph" => commands::graph(cfg),
        "train" => commands::train_cmd(cfg),
        "eval" => commands::eval(cfg),
        "ablate" => commands::ablate_cmd(cfg),
        "export-viz" => commands::export_viz_cmd(cfg),
        _ => unreachable!("clap rejects unknown subcommands"),
    }
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");

    let threads = match thread_count(&matches) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::FAILURE;
        }
    }

    let cfg = match resolve(name, sub) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match dispatch(name, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_is_well_formed() {
        cli().debug_assert();
    }

    #[test]
    fn flags_map_to_keys() {
        let m = cli()
            .try_get_matches_from(["berngraph", "train", "--node-mode", "llr", "--epochs", "3"])
            .unwrap();
        let (_, sub) = m.subcommand().unwrap();
        let o = flag_overrides(sub);
        assert_eq!(o["node_mode"], "llr");
        assert_eq!(o["epochs"], "3");
        assert_eq!(o.len(), 2);
    }
}
