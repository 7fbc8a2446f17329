use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use wpm_core::simulator::TraceRow;

use crate::svg::{render, Series};
use crate::{trace_csv, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    Loss,
    Consensus,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Accuracy, Metric::Loss, Metric::Consensus];

    pub fn value(self, row: &TraceRow) -> f64 {
        match self {
            Self::Accuracy => row.mean_accuracy,
            Self::Loss => row.mean_loss,
            Self::Consensus => row.consensus_distance,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Accuracy => "accuracy",
            Self::Loss => "loss",
            Self::Consensus => "consensus",
        }
    }

    fn axis_label(self) -> &'static str {
        match self {
            Self::Accuracy => "mean test accuracy",
            Self::Loss => "mean test loss",
            Self::Consensus => "consensus distance",
        }
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "accuracy" => Ok(Self::Accuracy),
            "loss" => Ok(Self::Loss),
            "consensus" | "consensus_distance" => Ok(Self::Consensus),
            other => Err(format!("unknown metric {other:?} (expected accuracy, loss or consensus)")),
        }
    }
}

pub fn render_metric(metric: Metric, series: &[Series]) -> String {
    render(metric.axis_label(), "iteration", metric.axis_label(), series)
}

/// Writes `<dir>/<metric>.svg` for every metric present in `series`.
pub fn write_metric_plots(dir: &Path, series: &[(Metric, Series)]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for metric in Metric::ALL {
        let chosen: Vec<Series> = series.iter().filter(|(m, _)| *m == metric).map(|(_, s)| s.clone()).collect();
        if chosen.is_empty() {
            continue;
        }
        let path = dir.join(format!("{}.svg", metric.name()));
        fs::write(&path, render_metric(metric, &chosen))
            .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
        files.push(path);
    }
    Ok(files)
}

/// Legend label of a trace: the name of the directory holding it.
pub fn trace_label(path: &Path) -> String {
    path.parent()
        .and_then(Path::file_name)
        .or_else(|| path.file_stem())
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn cmd_plot(traces: &[PathBuf], out: &Path, metric: Metric) -> Result<(), CliError> {
    if traces.is_empty() {
        return Err(CliError::Config("plot needs at least one trace".into()));
    }
    let mut series = Vec::with_capacity(traces.len());
    for path in traces {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Runtime(format!("reading {}: {e}", path.display())))?;
        let rows = trace_csv::from_csv(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        series.push(Series {
            label: trace_label(path),
            points: rows.iter().map(|r| (r.t as f64, metric.value(r))).collect(),
        });
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Runtime(format!("creating {}: {e}", parent.display())))?;
    }
    fs::write(out, render_metric(metric, &series))
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", out.display())))
}
