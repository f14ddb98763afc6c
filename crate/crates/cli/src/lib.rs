//! Command-line pipeline: `synth`, `pretrain`, `invert`, `generate`,
//! `evaluate` and `inspect`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 input or format error,
//! 4 numerical failure.

// `as f64` casts are identities unless the `f32` feature is on.
#![allow(clippy::unnecessary_cast)]

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Arg, ArgAction, ArgMatches, Command};

use config::{default_value, RunConfig, KEYS};
use error::{CliError, EXIT_CONFIG, EXIT_OK};

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

pub fn command() -> Command {
    let mut keys_help =
        String::from("Config keys (file `key = value`, or flag --key-name value):\n");
    for k in KEYS {
        keys_help.push_str(&format!(
            "  {:<20} default {:?}\n",
            k.name,
            default_value(k)
        ));
    }
    let mut cmd = Command::new("motinv")
        .about("Motion-embedding inversion for a toy video diffusion model")
        .subcommand_required(true)
        .after_help(keys_help)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("FILE")
                .help("key = value file applied before flags"),
        )
        .subcommand(
            Command::new("synth").about("render the training corpus and the reference video"),
        )
        .subcommand(
            Command::new("pretrain").about("train the denoiser on the corpus and freeze it"),
        )
        .subcommand(Command::new("invert").about("fit motion embeddings to the reference video"))
        .subcommand(
            Command::new("generate").about("sample a video, optionally with motion embeddings"),
        )
        .subcommand(Command::new("evaluate").about("score a generated video against the reference"))
        .subcommand(
            Command::new("inspect")
                .about("summarise an .mden, .memb or .mvid file")
                .arg(Arg::new("file").required(true).value_name("FILE")),
        );
    for k in KEYS {
        cmd = cmd.arg(
            Arg::new(k.name)
                .long(flag_name(k.name))
                .global(true)
                .value_name("VALUE")
                .action(ArgAction::Set)
                .help(format!(
                    "{} [key {}, default {:?}]",
                    k.help,
                    k.name,
                    default_value(k)
                )),
        );
    }
    cmd
}

/// Defaults, then `--config`, then flags.
pub fn resolve(m: &ArgMatches) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        cfg.load_file(&PathBuf::from(path))?;
    }
    for k in KEYS {
        if let Some(v) = m.get_one::<String>(k.name) {
            cfg.set(k.name, v.clone())?;
        }
    }
    Ok(cfg)
}

fn dispatch(m: &ArgMatches) -> Result<(), CliError> {
    let (name, sub) = m.subcommand().expect("subcommand required");
    let cfg = resolve(sub)?;
    if name == "inspect" {
        let file = sub.get_one::<String>("file").expect("required");
        print!("{}", commands::inspect(&PathBuf::from(file))?);
        return Ok(());
    }
    eprint!("# resolved config\n{}", cfg.resolved());
    match name {
        "synth" => commands::synth(&cfg),
        "pretrain" => commands::pretrain(&cfg),
        "invert" => commands::invert(&cfg),
        "generate" => commands::generate(&cfg),
        "evaluate" => commands::evaluate(&cfg),
        other => unreachable!("unknown subcommand {other}"),
    }
}

/// Runs one invocation and returns its exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let m = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(&m) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_is_well_formed() {
        command().debug_assert();
    }

    #[test]
    fn help_lists_every_key_and_default() {
        let help = command().render_long_help().to_string();
        for k in KEYS {
            assert!(help.contains(k.name), "{}", k.name);
            assert!(
                help.contains(&format!("{:?}", default_value(k))),
                "{}",
                k.name
            );
        }
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(&file, "frames = 4\nheight = 8\n").unwrap();
        let m = command()
            .try_get_matches_from([
                "motinv",
                "synth",
                "--config",
                file.to_str().unwrap(),
                "--height",
                "12",
            ])
            .unwrap();
        let cfg = resolve(m.subcommand().unwrap().1).unwrap();
        assert_eq!(cfg.get("frames"), "4");
        assert_eq!(cfg.get("height"), "12");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["motinv", "synth", "--no-such-flag", "1"]), EXIT_CONFIG);
        assert_eq!(run(["motinv", "--help"]), EXIT_OK);
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.cfg");
        std::fs::write(&bad, "bogus_key = 1\n").unwrap();
        assert_eq!(
            run(["motinv", "synth", "--config", bad.to_str().unwrap()]),
            EXIT_CONFIG
        );
        let junk = dir.path().join("junk.mden");
        std::fs::write(&junk, b"not a checkpoint").unwrap();
        assert_eq!(
            run(["motinv", "inspect", junk.to_str().unwrap()]),
            error::EXIT_INPUT
        );
    }
}
