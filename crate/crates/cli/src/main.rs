//! `tlf`: synthesize sky videos, train the now and future models, evaluate
//! them against baselines and emit predictions.

mod commands;
mod config;
mod manifest;

use clap::{Arg, ArgAction, Command};
use tlf_core::kv::KeyValues;
use tlf_core::model::AttentionVariant;

use config::UsageError;

fn path(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name).long(name).value_name("DIR").help(help)
}

fn out_arg(required: bool) -> Arg {
    path("out", "Directory receiving every output of the run").required(required)
}

fn config_arg() -> Arg {
    Arg::new("config")
        .long("config")
        .value_name("FILE")
        .help("`key = value` settings file (a run manifest works too)")
}

/// One `--key value` flag per setting, with underscores also accepted as
/// dashes.
fn key_args(known: &KeyValues) -> Vec<Arg> {
    known
        .keys()
        .map(|k| {
            let mut a = Arg::new(k.to_string())
                .long(k.to_string())
                .value_name("VALUE")
                .help_heading("Settings")
                .help(format!("[default: {}]", known.get_str(k).unwrap()));
            if k.contains('_') {
                a = a.alias(k.replace('_', "-"));
            }
            if k == "attention" {
                let names: Vec<String> = AttentionVariant::ALL.iter().map(|v| v.to_string()).collect();
                a = a.value_parser(names);
            }
            a
        })
        .collect()
}

fn cli() -> Command {
    let train = commands::train_keys();
    Command::new("tlf")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Segment-and-measure now/future prediction for sky videos")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("synth")
                .about("Generate a synthetic dataset, one directory per sequence")
                .arg(out_arg(true))
                .arg(config_arg())
                .args(key_args(&commands::synth_keys())),
        )
        .subcommand(
            Command::new("train-now")
                .about("Train the now model on every frame of a dataset")
                .arg(path("data", "Dataset root").required(true))
                .arg(out_arg(true))
                .arg(config_arg())
                .args(key_args(&train)),
        )
        .subcommand(
            Command::new("train-future")
                .about("Train a future model on top of a trained now model")
                .arg(path("data", "Dataset root").required(true))
                .arg(path("now", "Run directory of train-now").required(true))
                .arg(out_arg(true))
                .arg(config_arg())
                .args(key_args(&train)),
        )
        .subcommand(
            Command::new("train-ar")
                .about("Train the autoregressive baseline on top of a trained now model")
                .arg(path("data", "Dataset root").required(true))
                .arg(path("now", "Run directory of train-now").required(true))
                .arg(out_arg(true))
                .arg(config_arg())
                .args(key_args(&train)),
        )
        .subcommand(
            Command::new("eval")
                .about("Score a model per frame (now) or per horizon (future)")
                .arg(path("model", "Run directory of the model under test").required(true))
                .arg(path("data", "Dataset root").required(true))
                .arg(out_arg(true))
                .arg(
                    Arg::new("protocol")
                        .long("protocol")
                        .value_parser(["now", "future"])
                        .required(true),
                )
                .arg(
                    Arg::new("baselines")
                        .long("baselines")
                        .action(ArgAction::SetTrue)
                        .help("Also score persistence (and the autoregressive model given by --ar)"),
                )
                .arg(path("ar", "Run directory of train-ar")),
        )
        .subcommand(
            Command::new("predict")
                .about("Write predicted masks, attention maps and irradiance for one window")
                .arg(path("model", "Run directory of train-future").required(true))
                .arg(path("window", "Sequence directory whose first frames are the inputs").required(true))
                .arg(out_arg(true))
                .arg(
                    Arg::new("persistence")
                        .long("persistence")
                        .action(ArgAction::SetTrue)
                        .help("Repeat the now prediction of the last input frame"),
                ),
        )
        .subcommand(
            Command::new("gradcheck")
                .about("Compare every analytic gradient with central finite differences")
                .arg(out_arg(false)),
        )
}

fn run() -> anyhow::Result<()> {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            std::process::exit(e.exit_code());
        }
    };
    let (name, m) = matches.subcommand().expect("subcommand is required");
    match name {
        "synth" => commands::synth(m),
        "train-now" => commands::train_now_cmd(m),
        "train-future" => commands::train_from_now(m, false),
        "train-ar" => commands::train_from_now(m, true),
        "eval" => commands::eval(m),
        "predict" => commands::predict(m),
        "gradcheck" => commands::gradcheck(m),
        _ => unreachable!("clap rejects unknown subcommands"),
    }
}

fn main() {
    if let Err(e) = run() {
        if let Some(u) = e.downcast_ref::<UsageError>() {
            eprintln!("error: {u}\n\nFor more information, try '--help'.");
            std::process::exit(2);
        }
        // Library errors already quote their cause; skip repeated links.
        let mut msg = e.to_string();
        for cause in e.chain().skip(1) {
            let c = cause.to_string();
            if !msg.contains(&c) {
                msg = format!("{msg}: {c}");
            }
        }
        eprintln!("error: {msg}");
        std::process::exit(1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        cli().debug_assert();
    }
}
