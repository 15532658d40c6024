use std::fs;
use std::process::ExitCode;

use anyhow::{Context, Result};
use swiftnet_cli::parse_config;
use swiftnet_core::budget::MonotonicClock;
use swiftnet_core::harness::{manifest_path, recipe_matrix, run, summary_table};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            // clap renders its own help/version/usage text
            if let Some(c) = e.downcast_ref::<clap::Error>() {
                let _ = c.print();
                return ExitCode::from(c.exit_code() as u8);
            }
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<ExitCode> {
    let inv = parse_config(std::env::args_os(), std::env::var("CIFAR_DIR").ok())?;
    if let Some(recipes) = &inv.recipes {
        let rows = recipe_matrix(&inv.config, recipes, &inv.sources, MonotonicClock::new);
        let table = summary_table(&rows);
        let path = inv.config.metrics_out.with_extension("summary.csv");
        fs::write(&path, &table).with_context(|| format!("writing {}", path.display()))?;
        print!("{table}");
        let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
        return Ok(if failed == 0 {
            ExitCode::SUCCESS
        } else {
            ExitCode::FAILURE
        });
    }
    let summary = run(&inv.config, &inv.sources, &MonotonicClock::new())?;
    let m = &summary.manifest;
    println!(
        "{}: {:.2}% after {} epochs in {:.1}s (metrics {}, manifest {})",
        m.recipe,
        m.final_accuracy,
        m.epochs_completed,
        m.total_seconds,
        inv.config.metrics_out.display(),
        manifest_path(&inv.config.metrics_out).display()
    );
    Ok(ExitCode::SUCCESS)
}
