use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use erflow_core::{jsonl, run_batch, Error, RuntimeConfig};

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;

pub fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

pub fn run(config: &Path, out: &Path, report: &Path, threads: Option<usize>) -> u8 {
    let mut cfg = match RuntimeConfig::from_path(config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("erflow: {}: {e}", config.display());
            return EXIT_CONFIG;
        }
    };
    if threads.is_some() {
        cfg.threads = threads;
        if let Err(e) = cfg.validate() {
            eprintln!("erflow: {e}");
            return EXIT_CONFIG;
        }
    }
    let output = match run_batch(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("erflow: {e}");
            return exit_code(&e);
        }
    };
    let written = write_file(out, |w| jsonl::write(&output.profiles, w)).and_then(|_| {
        write_file(report, |w| {
            serde_json::to_writer_pretty(&mut *w, &output.report)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    });
    if let Err(e) = written {
        eprintln!("erflow: writing output: {e}");
        return EXIT_RUNTIME;
    }
    tracing::info!(profiles = output.profiles.len(), "batch run complete");
    0
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> erflow_core::Result<()>) -> erflow_core::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}
