use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use wpm_core::data::{load_dataset, partition, synthesize_blobs, Dataset, Split};
use wpm_core::learners::{centralized_reference, lipschitz_estimate, ConvexModelSpec};
use wpm_core::simulator::{
    analyze_lemma1, analyze_regret, convergence_speed, run, write_sidecar, Diagnostics,
    ExperimentConfig, Method, MetricsTrace, Problem, RunOutput,
};
use wpm_core::topology::{
    generate_sequence, mixing_constants, read_binary, read_edge_csv, verify_assumption1,
    write_binary, TopologySequence,
};
use wpm_core::TopologyError;

use crate::config::{DatasetSource, RunConfig};
use crate::plot::{write_metric_plots, Metric};
use crate::svg::Series;
use crate::{trace_csv, CliError};

/// Everything a successful `run` wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config: String,
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub duration: Duration,
    /// `(p, final mean accuracy, convergence iteration)` per executed run.
    pub results: Vec<(u32, f64, Option<usize>)>,
}

pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset), CliError> {
    match &cfg.dataset {
        DatasetSource::Files { kind, dir } => {
            let train = load_dataset(*kind, dir, Split::Train, cfg.train_limit)
                .map_err(|e| CliError::Runtime(format!("loading training data: {e}")))?;
            let test = load_dataset(*kind, dir, Split::Test, cfg.test_limit)
                .map_err(|e| CliError::Runtime(format!("loading test data: {e}")))?;
            Ok((train, test))
        }
        DatasetSource::Blobs { train, test, dim, classes, spread } => {
            let all = synthesize_blobs(train + test, *dim, *classes, *spread, cfg.experiment.seed)
                .map_err(|e| CliError::Config(format!("blobs: {e}")))?;
            let mut tr = all.subset(&(0..*train).collect::<Vec<_>>());
            let mut te = all.subset(&(*train..train + test).collect::<Vec<_>>());
            if let Some(n) = cfg.train_limit {
                tr = tr.truncated(n);
            }
            if let Some(n) = cfg.test_limit {
                te = te.truncated(n);
            }
            Ok((tr, te))
        }
    }
}

fn topology_error(e: TopologyError) -> CliError {
    match e {
        TopologyError::InvalidParameters(_) | TopologyError::GenerationFailed { .. } => {
            CliError::Config(format!("topology: {e}"))
        }
        other => CliError::Runtime(format!("topology: {other}")),
    }
}

pub fn load_topology(path: &Path, cfg: &ExperimentConfig) -> Result<TopologySequence, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Runtime(format!("reading {}: {e}", path.display())))?;
    let seq = if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")) {
        read_edge_csv(&bytes[..], cfg.devices, Some(cfg.iterations), cfg.window)
    } else {
        read_binary(&bytes[..])
    };
    seq.map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn obtain_topology(cfg: &RunConfig) -> Result<TopologySequence, CliError> {
    let e = &cfg.experiment;
    match &cfg.topology {
        Some(path) => load_topology(path, e),
        None => generate_sequence(e.devices, e.density, e.iterations, e.window, e.seed)
            .map_err(topology_error),
    }
}

fn write_file(path: &Path, bytes: &[u8], files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
    files.push(path.to_path_buf());
    Ok(())
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Runtime(format!("creating {}: {e}", path.display())))
}

fn diagnostics_summary(
    cfg: &RunConfig,
    problem: &Problem,
    topology: &TopologySequence,
    diag: &Diagnostics,
) -> String {
    let zeta = verify_assumption1(topology).min_positive_entry;
    let (vartheta, kappa) = mixing_constants(zeta, cfg.experiment.devices, topology.window());
    let g = lipschitz_estimate(&problem.spec, problem.train);
    let lemma = analyze_lemma1(diag, vartheta, kappa, g);
    let mut s = format!(
        "zeta={zeta}\nvartheta={vartheta}\nkappa={kappa}\nlipschitz_estimate={g}\n\
         lemma1_violations={}\nlemma1_max_ratio={}\n",
        lemma.violations,
        lemma.max_ratio()
    );
    let regret = centralized_reference(&problem.spec, problem.train, cfg.reference_eta, cfg.reference_iterations, 0)
        .map_err(|e| e.to_string())
        .and_then(|x| {
            analyze_regret(diag, &problem.spec, problem.train, &x, vartheta, kappa, g).map_err(|e| e.to_string())
        });
    match regret {
        Ok(r) => s.push_str(&format!(
            "regret_lhs={}\nregret_rhs={}\nregret_ratio={}\n",
            r.lhs,
            r.rhs,
            r.ratio()
        )),
        Err(e) => s.push_str(&format!("regret=unavailable ({e})\n")),
    }
    s
}

fn summary_text(cfg: &RunConfig, label: &str, exp: &ExperimentConfig, trace: &MetricsTrace, extra: &str) -> String {
    let last = trace.rows.last().expect("at least one iteration");
    let eta = exp.power_config().map(|c| c.eta()).unwrap_or(f64::NAN);
    let conv = convergence_speed(trace, cfg.target_accuracy)
        .map_or_else(|| "none".to_string(), |t| t.to_string());
    let mut s = format!(
        "label={label}\nmethod={}\np={}\neta={eta}\niterations={}\n\
         final_mean_accuracy={}\nfinal_mean_loss={}\nfinal_consensus_distance={}\n\
         target_accuracy={}\nconvergence_iteration={conv}\n",
        exp.method,
        exp.p,
        trace.rows.len(),
        last.mean_accuracy,
        last.mean_loss,
        last.consensus_distance,
        cfg.target_accuracy,
    );
    s.push_str(extra);
    s.push_str("\n# config\n");
    s.push_str(&cfg.to_text());
    s
}

fn series(label: &str, trace: &MetricsTrace) -> Vec<(Metric, Series)> {
    Metric::ALL
        .iter()
        .map(|&m| {
            (
                m,
                Series {
                    label: label.to_string(),
                    points: trace.rows.iter().map(|r| (r.t as f64, m.value(r))).collect(),
                },
            )
        })
        .collect()
}

/// Executes the configured experiment (or p sweep) and writes its outputs
/// under `out`.
pub fn cmd_run(cfg: &RunConfig, out: &Path) -> Result<RunManifest, CliError> {
    let start = Instant::now();
    let (train, test) = load_data(cfg)?;
    let spec = ConvexModelSpec::new(cfg.model, train.dim(), train.num_classes()).with_l2(cfg.l2);
    if test.dim() != train.dim() {
        return Err(CliError::Runtime("train and test feature dimensions differ".into()));
    }
    let part = partition(&train, cfg.experiment.devices, cfg.partition, cfg.experiment.seed)
        .map_err(|e| CliError::Config(format!("partition: {e}")))?;
    let topology = obtain_topology(cfg)?;
    let problem = Problem { spec, train: &train, test: &test, partition: &part };

    create_dir(out)?;
    let mut files = Vec::new();
    let mut topo_bytes = Vec::new();
    write_binary(&topology, &mut topo_bytes).map_err(topology_error)?;
    write_file(&out.join("topology.wpmt"), &topo_bytes, &mut files)?;

    let sweep = cfg.p_values.len() > 1;
    let base_label = cfg.name.clone().unwrap_or_else(|| {
        out.file_name().map_or_else(|| "run".to_string(), |n| n.to_string_lossy().into_owned())
    });
    let mut results = Vec::new();
    let mut all_series: Vec<(Metric, Series)> = Vec::new();
    let mut sweep_summary = String::new();

    for &p in &cfg.p_values {
        let exp = ExperimentConfig { p, ..cfg.experiment.clone() };
        let RunOutput { trace, diagnostics } = run(&exp, &topology, &problem)
            .map_err(|e| CliError::Runtime(format!("p={p}: {e}")))?;
        let (dir, label) = if sweep {
            (out.join(format!("p{p}")), format!("p={p}"))
        } else {
            (out.to_path_buf(), base_label.clone())
        };
        create_dir(&dir.join("plots"))?;
        write_file(&dir.join("trace.csv"), trace_csv::to_csv(&trace.rows).as_bytes(), &mut files)?;

        let mut extra = String::new();
        if let (Some(diag), Method::Wpm) = (&diagnostics, exp.method) {
            let mut buf = Vec::new();
            write_sidecar(diag, &mut buf).map_err(|e| CliError::Runtime(e.to_string()))?;
            write_file(&dir.join("diagnostics.wpms"), &buf, &mut files)?;
            extra = diagnostics_summary(cfg, &problem, &topology, diag);
        }
        write_file(
            &dir.join("summary.txt"),
            summary_text(cfg, &label, &exp, &trace, &extra).as_bytes(),
            &mut files,
        )?;
        let s = series(&label, &trace);
        files.extend(write_metric_plots(&dir.join("plots"), &s)?);
        all_series.extend(s);

        let acc = trace.final_accuracy().unwrap_or(f64::NAN);
        let conv = convergence_speed(&trace, cfg.target_accuracy);
        sweep_summary.push_str(&format!(
            "p={p} final_mean_accuracy={acc} convergence_iteration={}\n",
            conv.map_or_else(|| "none".to_string(), |t| t.to_string())
        ));
        results.push((p, acc, conv));
    }

    if sweep {
        create_dir(&out.join("plots"))?;
        files.extend(write_metric_plots(&out.join("plots"), &all_series)?);
        let text = format!(
            "target_accuracy={}\n{sweep_summary}\n# config\n{}",
            cfg.target_accuracy,
            cfg.to_text()
        );
        write_file(&out.join("summary.txt"), text.as_bytes(), &mut files)?;
    }

    Ok(RunManifest {
        config: cfg.to_text(),
        out_dir: out.to_path_buf(),
        files,
        duration: start.elapsed(),
        results,
    })
}
