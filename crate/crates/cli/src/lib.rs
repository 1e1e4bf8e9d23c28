//! Declarative experiment runner for the `oblique` library.

pub mod config;
pub mod output;
pub mod runner;

use std::io::Write;
use std::path::{Path, PathBuf};

use config::{load_config, validate, OutputFormat};
use runner::{diagnostics, load_data, run_experiment, RunError};

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub format: Option<OutputFormat>,
}

fn prepare(path: &Path, ov: &Overrides) -> Result<config::ValidatedConfig, RunError> {
    let mut cfg = load_config(path)?;
    if let Some(s) = ov.seed {
        cfg.seed = s;
    }
    if let Some(o) = &ov.output {
        cfg.output.path = Some(o.clone());
    }
    if let Some(f) = ov.format {
        cfg.output.format = f;
    }
    Ok(validate(&cfg)?)
}

/// `validate`: prints diagnostics, returns the exit code.
pub fn validate_command(path: &Path, ov: &Overrides, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let res = prepare(path, ov).and_then(|cfg| {
        let data = load_data(&cfg)?;
        diagnostics(&cfg, &data)
    });
    match res {
        Ok(lines) => {
            let _ = writeln!(out, "config OK");
            for l in lines {
                let _ = writeln!(out, "  {l}");
            }
            0
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// `run`: executes the sweep, writes the result file (or stdout when no
/// output path is configured) and prints a summary table.
pub fn run_command(path: &Path, ov: &Overrides, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let res = (|| {
        let cfg = prepare(path, ov)?;
        let data = load_data(&cfg)?;
        let rows = run_experiment(&cfg, &data, |r| {
            let _ = writeln!(err, "done: {} debiased={} m={} ({} ms)",
                r.sketch, r.debiased, r.size_label(), r.wall_time_ms.unwrap_or(0));
        })?;
        let file_rows = output::finalize_rows(&rows, cfg.raw.output.timing);
        let text = output::render(cfg.raw.output.format, &cfg.raw, &data.provenance, &file_rows);
        match &cfg.raw.output.path {
            Some(p) => {
                std::fs::write(p, text).map_err(|e| RunError::Io(format!("{}: {e}", p.display())))?;
                let _ = write!(out, "{}", output::summary_table(&rows));
                let _ = writeln!(out, "wrote {}", p.display());
            }
            None => {
                let _ = write!(out, "{text}");
            }
        }
        Ok::<(), RunError>(())
    })();
    match res {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
