use std::fs;
use std::path::Path;

use wpm_core::topology::{generate_sequence, write_binary, write_edge_csv, TopologySequence};
use wpm_core::TopologyError;

use crate::CliError;

/// Generates a sequence and writes it as WPMT, or as a `t,i,j` edge list when
/// `out` ends in `.csv`.
pub fn cmd_gen_topology(
    devices: usize,
    density: f64,
    iterations: usize,
    window: usize,
    seed: u64,
    out: &Path,
) -> Result<TopologySequence, CliError> {
    let seq = generate_sequence(devices, density, iterations, window, seed).map_err(|e| match e {
        TopologyError::Io(_) => CliError::Runtime(e.to_string()),
        other => CliError::Config(other.to_string()),
    })?;
    let mut bytes = Vec::new();
    let written = if out.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")) {
        write_edge_csv(&seq, &mut bytes)
    } else {
        write_binary(&seq, &mut bytes)
    };
    written.map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Runtime(format!("creating {}: {e}", parent.display())))?;
    }
    fs::write(out, bytes).map_err(|e| CliError::Runtime(format!("writing {}: {e}", out.display())))?;
    Ok(seq)
}
