use std::fs;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use mlctx_cli::commands::{cmd_bench, cmd_eval, cmd_prestudy, cmd_shapes, cmd_train};
use mlctx_cli::config::ConfigArgs;

#[derive(Parser)]
#[command(name = "mlctx", version, about = "Multilevel-context CNN training and benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a preset and write the log CSV and checkpoints
    Train(ConfigArgs),
    /// Evaluate a checkpoint with center-crop and/or multi-crop protocols
    Eval(ConfigArgs),
    /// Time forward/backward passes and report multilevel overhead
    Bench(ConfigArgs),
    /// Print the per-layer shape table and diff it against the reference
    Shapes(ConfigArgs),
    /// Frozen-trunk feature study: top stage alone vs. two stages concatenated
    Prestudy(ConfigArgs),
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let out = cmd_train(&cfg)?;
            let last = out.log.iter().rev().find_map(|r| r.loss);
            let val = out.log.iter().rev().find_map(|r| r.val_top1);
            println!(
                "trained {} for {} iterations; last loss {}, last val top-1 {}",
                cfg.preset_key,
                out.log.len().saturating_sub(1),
                last.map_or("-".into(), |l| format!("{l:.4}")),
                val.map_or("-".into(), |v| format!("{:.2}%", 100.0 * v)),
            );
            println!("outputs in {}", cfg.out.display());
        }
        Command::Eval(args) => {
            let cfg = args.resolve()?;
            print!("{}", cmd_eval(&cfg)?.text);
        }
        Command::Bench(args) => {
            let cfg = args.resolve()?;
            let out = cmd_bench(&cfg.presets, cfg.train.batch_size, cfg.reps, cfg.seed)?;
            print!("{}", out.text);
            let dir = cfg.ensure_out_dir()?;
            fs::write(dir.join("bench.csv"), &out.csv).context("writing bench.csv")?;
        }
        Command::Shapes(args) => {
            let map = args.merged()?;
            let key = map.get("preset").map_or("alexnet-full++", String::as_str);
            let out = cmd_shapes(key)?;
            print!("{}", out.text);
            if let Some(dir) = map.get("out") {
                fs::create_dir_all(dir)?;
                fs::write(format!("{dir}/shapes.csv"), out.table.to_csv()).context("writing shapes.csv")?;
            }
            if out.diff.is_some_and(|d| !d.is_empty()) {
                std::process::exit(1);
            }
        }
        Command::Prestudy(args) => {
            let cfg = args.resolve()?;
            print!("{}", cmd_prestudy(&cfg, true)?.text);
        }
    }
    Ok(())
}
