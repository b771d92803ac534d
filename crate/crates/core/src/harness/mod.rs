//! Experiment plumbing: configuration, replicas, output files and the
//! bundled reproduction suites.

pub mod config;
pub mod csv;
pub mod reproduce;
pub mod svg;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::engines::{consensus_run, gaussian_init, optimize_run, EngineConfig, EngineKind, OptimizationProblem, RunTrace};
use crate::error::{Error, Result};
use crate::mixing::{calibrate_sigma, sample_window_spectra, WindowSpectrum};
use crate::objectives::{gen_linreg, gen_logreg, Dataset};
use crate::rng::{substream, Stream};
use crate::theory::{
    build_lti, corollary1_t, lambda_rate, lemma5_check, prop1_alpha_bound, theorem1_alpha, u_from_trace,
    verify_lemma2, verify_prop1, ErrorVector, Lemma5Report, TheoryInputs,
};
use crate::topology::{build_joint_topology, JointTopologyStream, SnapshotSource};

pub use config::{DataSpec, ExperimentConfig, ExperimentKind, SpectraSpec, TheorySpec, TopologySpec};
pub use csv::{aggregate, export_csv, read_csv, AggregateRow, TRACE_HEADER};
pub use reproduce::{desk_theory_config, reference_linreg_config, reproduce, ConsensusRun, OptimizationRun, ReproduceReport, SpectraRun, Suite};
pub use svg::export_svg;

/// Environment variable that overrides the configured output directory.
pub const OUT_ENV: &str = "DICS_OUT";

/// `DICS_OUT` if set, else the configured directory, else `fallback`.
pub fn resolve_out_dir(configured: Option<&Path>, fallback: &Path) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => configured.map_or_else(|| fallback.to_path_buf(), Path::to_path_buf),
    }
}

/// Runs `f` on the topology of replica seed `seed`: a materialized
/// sequence when a horizon is configured, an on-demand stream otherwise.
pub(crate) fn with_source<T>(
    spec: &TopologySpec,
    seed: u64,
    f: impl FnOnce(&mut dyn SnapshotSource) -> Result<T>,
) -> Result<T> {
    let rng = substream(seed, Stream::Topology);
    match spec.horizon {
        Some(h) => {
            let topo = build_joint_topology(&spec.er_params(), spec.window, h, rng).map_err(|e| e.in_stage("topology"))?;
            f(&mut topo.replay())
        }
        None => {
            let mut stream = JointTopologyStream::new(spec.er_params(), spec.window, rng).map_err(|e| e.in_stage("topology"))?;
            f(&mut stream)
        }
    }
}

/// Files written and traces produced by one experiment.
#[derive(Debug)]
pub struct ExperimentOutput {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub traces: Vec<RunTrace>,
    pub summary: serde_json::Value,
}

/// The optimization instance shared by all replicas.
pub struct Problem {
    pub dataset: Dataset,
    pub x_star: Vec<f64>,
    pub l: f64,
    pub mu: f64,
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    let mut rng = substream(cfg.seed, Stream::Data);
    let dataset = match cfg.kind {
        ExperimentKind::Logreg => gen_logreg(&cfg.logreg_params()?, &mut rng),
        _ => gen_linreg(&cfg.linreg_params()?, &mut rng).map(|(ds, _)| ds),
    }
    .map_err(|e| e.in_stage("data"))?;
    let c = dataset.constants().map_err(|e| e.in_stage("data"))?;
    let x_star = dataset.centralized_optimum().map_err(|e| e.in_stage("optimum"))?.x_star;
    Ok(Problem {
        dataset,
        x_star,
        l: c.l,
        mu: c.mu,
    })
}

/// Replica `r` runs with seed `cfg.seed + r` for its topology, masks,
/// samples and initial state; the experiment seed replaces the seed inside
/// the engine section. The dataset is drawn once from `cfg.seed`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let dir = resolve_out_dir(cfg.out.as_deref(), Path::new("out"));
    run_experiment_in(cfg, &dir)
}

pub fn run_experiment_in(cfg: &ExperimentConfig, dir: &Path) -> Result<ExperimentOutput> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    std::fs::create_dir_all(dir).map_err(|e| Error::from(e).in_stage("output"))?;
    let mut out = match cfg.kind {
        ExperimentKind::Consensus | ExperimentKind::Linreg | ExperimentKind::Logreg => run_replicas(cfg, dir)?,
        ExperimentKind::Spectra => run_spectra(cfg, dir)?,
        ExperimentKind::Theory => {
            let report = run_theory(cfg, dir)?;
            ExperimentOutput {
                dir: dir.to_path_buf(),
                files: report.files.clone(),
                traces: Vec::new(),
                summary: serde_json::to_value(&report.summary).expect("report serializes"),
            }
        }
    };
    let echo = dir.join("config.json");
    std::fs::write(&echo, cfg.to_json()).map_err(|e| Error::from(e).in_stage("output"))?;
    out.files.push(echo);
    Ok(out)
}

fn seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.repeat as u64).map(|r| cfg.seed.wrapping_add(r)).collect()
}

fn run_replicas(cfg: &ExperimentConfig, dir: &Path) -> Result<ExperimentOutput> {
    let data = cfg.data()?;
    let (n, d) = (cfg.topology.nodes, data.dim);
    let problem = match cfg.kind {
        ExperimentKind::Consensus => None,
        _ => Some(build_problem(cfg)?),
    };
    let traces = seeds(cfg)
        .into_par_iter()
        .map(|seed| {
            let x0 = gaussian_init(n, d, data.init_scale, &mut substream(seed, Stream::Init));
            with_source(&cfg.topology, seed, |source| match &problem {
                None => {
                    let c = cfg.consensus.clone().expect("validated");
                    consensus_run(source, &x0, &crate::engines::ConsensusConfig { seed, ..c })
                }
                Some(p) => {
                    let engine = EngineConfig {
                        seed,
                        ..cfg.engine()?.clone()
                    };
                    let problem = OptimizationProblem {
                        dataset: &p.dataset,
                        x_star: &p.x_star,
                        l: p.l,
                    };
                    optimize_run(source, &problem, &x0, &engine)
                }
            })
            .map_err(|e| e.in_stage("run"))
        })
        .collect::<Result<Vec<_>>>()?;
    let label = cfg.kind.name();
    let files = write_traces(dir, label, &traces)?;
    let summary = json!({
        "kind": label,
        "replicas": traces.iter().zip(seeds(cfg)).map(|(t, seed)| trace_summary(t, seed)).collect::<Vec<_>>(),
    });
    let mut out = ExperimentOutput {
        dir: dir.to_path_buf(),
        files,
        traces,
        summary,
    };
    let path = dir.join(format!("{label}_summary.json"));
    write_json(&path, &out.summary)?;
    out.files.push(path);
    Ok(out)
}

pub(crate) fn trace_summary(t: &RunTrace, seed: u64) -> serde_json::Value {
    json!({
        "seed": seed,
        "engine": t.kind.name(),
        "steps": t.steps_run,
        "final_residual": t.final_residual(),
        "comm_entries": t.comm_entries_total(),
        "grad_evals": t.grad_evals_total(),
        "seconds": t.duration.as_secs_f64(),
        "diagnostics": t.diagnostics,
    })
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::from(e).in_stage("output"))
}

/// One CSV per replica, the aggregate CSV and a residual plot.
pub(crate) fn write_traces(dir: &Path, label: &str, traces: &[RunTrace]) -> Result<Vec<PathBuf>> {
    let io = |e: Error| e.in_stage("output");
    let mut files = Vec::new();
    for (r, t) in traces.iter().enumerate() {
        let path = dir.join(format!("{label}_r{r}.csv"));
        export_csv(&t.records, &path).map_err(io)?;
        files.push(path);
    }
    let refs: Vec<_> = traces.iter().map(|t| t.records.as_slice()).collect();
    let path = dir.join(format!("{label}_aggregate.csv"));
    std::fs::write(&path, csv::aggregate_csv(&aggregate(&refs).map_err(io)?)).map_err(|e| io(e.into()))?;
    files.push(path);
    let series: Vec<(String, &[_])> = traces
        .iter()
        .enumerate()
        .map(|(r, t)| (format!("{label} r{r}"), t.records.as_slice()))
        .collect();
    let path = dir.join(format!("{label}_residual.svg"));
    export_svg(&series, "t", "residual", &path).map_err(io)?;
    files.push(path);
    Ok(files)
}

pub const SPECTRA_HEADER: &str = "replica,window,coordinate,lambda1,lambda2,sigma,gap";

fn run_spectra(cfg: &ExperimentConfig, dir: &Path) -> Result<ExperimentOutput> {
    let spec = cfg.spectra.as_ref().expect("validated");
    let d = cfg.data()?.dim;
    let per_replica: Vec<Vec<WindowSpectrum>> = seeds(cfg)
        .into_par_iter()
        .map(|seed| {
            with_source(&cfg.topology, seed, |source| {
                sample_window_spectra(source, d, spec.q, spec.gamma, spec.windows, &mut substream(seed, Stream::Masks))
            })
            .map_err(|e| e.in_stage("spectra"))
        })
        .collect::<Result<_>>()?;
    let mut text = String::from(SPECTRA_HEADER);
    text.push('\n');
    for (r, rows) in per_replica.iter().enumerate() {
        for s in rows {
            text.push_str(&format!(
                "{r},{},{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                s.window, s.coordinate, s.lambda1, s.lambda2, s.sigma, s.gap
            ));
        }
    }
    let all = || per_replica.iter().flatten();
    let summary = json!({
        "replicas": cfg.repeat,
        "windows": spec.windows,
        "coordinates": d,
        "q": spec.q,
        "gamma": spec.gamma,
        "window": cfg.topology.window,
        "lambda2_max": all().map(|s| s.lambda2).fold(0.0, f64::max),
        "sigma_max": all().map(|s| s.sigma).fold(0.0, f64::max),
        "gap_min": all().map(|s| s.gap).fold(f64::INFINITY, f64::min),
        "all_lambda2_below_one": all().all(|s| s.lambda2 < 1.0),
    });
    let csv_path = dir.join("spectra.csv");
    std::fs::write(&csv_path, text).map_err(|e| Error::from(e).in_stage("output"))?;
    let json_path = dir.join("spectra.json");
    write_json(&json_path, &summary)?;
    Ok(ExperimentOutput {
        dir: dir.to_path_buf(),
        files: vec![csv_path, json_path],
        traces: Vec::new(),
        summary,
    })
}

/// What the `theory` experiment reports.
#[derive(Clone, Debug, Serialize)]
pub struct TheorySummary {
    /// Largest sigma over the calibration sample and the ensemble windows.
    pub sigma: f64,
    pub sigma_calibrated: f64,
    pub l: f64,
    pub mu: f64,
    pub q_tilde: f64,
    /// Step size of the rate theorem for these constants.
    pub alpha: f64,
    #[serde(rename = "T")]
    pub t: usize,
    pub lambda: f64,
    pub lemma5_ok: bool,
    pub lemma5: Lemma5Report,
    /// Step size of the ensemble runs.
    pub alpha_run: f64,
    pub alpha_run_admissible: bool,
    pub ensemble: usize,
    pub prop1_worst_ratio: f64,
    pub prop1_worst_at: Option<(usize, usize)>,
    /// The deterministic full-gradient run checked without variance terms.
    pub prop1_full_grad_ratio: f64,
    pub lemma2_worst_ratio: f64,
}

#[derive(Clone, Debug)]
pub struct TheoryOutput {
    pub summary: TheorySummary,
    pub mean_errors: Vec<ErrorVector>,
    pub files: Vec<PathBuf>,
}

/// Seed offset of the calibration sample, kept apart from replica seeds.
const CALIBRATION_SEED: u64 = 0x5eed_ca1b;

pub fn run_theory(cfg: &ExperimentConfig, dir: &Path) -> Result<TheoryOutput> {
    let th = cfg.theory.clone().unwrap_or_default();
    let engine = cfg.engine()?.clone();
    let problem = build_problem(cfg)?;
    let (n, d) = (cfg.topology.nodes, problem.dataset.dim());
    let stage = |e: Error| e.in_stage("theory");

    let cal_seed = cfg.seed.wrapping_add(CALIBRATION_SEED);
    let sigma_calibrated = with_source(&cfg.topology, cal_seed, |source| {
        calibrate_sigma(source, d, engine.q, engine.gamma, th.calibration_windows, &mut substream(cal_seed, Stream::Masks))
    })
    .map_err(stage)?;
    let calibrated = TheoryInputs::new(sigma_calibrated, problem.l, problem.mu, cfg.topology.window, n).map_err(stage)?;
    let alpha_run = th.alpha_fraction * prop1_alpha_bound(&calibrated);

    let run = |kind: EngineKind, seed: u64| -> Result<RunTrace> {
        let x0 = gaussian_init(n, d, cfg.data()?.init_scale, &mut substream(seed, Stream::Init));
        let ecfg = EngineConfig {
            kind,
            alpha: alpha_run,
            seed,
            record_snapshots: true,
            track_window_spectra: true,
            ..engine.clone()
        };
        let p = OptimizationProblem {
            dataset: &problem.dataset,
            x_star: &problem.x_star,
            l: problem.l,
        };
        with_source(&cfg.topology, seed, |source| optimize_run(source, &p, &x0, &ecfg)).map_err(|e| e.in_stage("run"))
    };
    let max_sigma = |t: &RunTrace| t.window_sigmas.iter().copied().fold(0.0, f64::max);

    let ensemble: Vec<(Vec<ErrorVector>, f64)> = (0..th.ensemble as u64)
        .into_par_iter()
        .map(|r| {
            let trace = run(EngineKind::Svrg, cfg.seed.wrapping_add(r))?;
            Ok((u_from_trace(&trace, &problem.x_star, problem.l)?, max_sigma(&trace)))
        })
        .collect::<Result<_>>()?;
    let full = run(EngineKind::FullGrad, cfg.seed)?;
    let sigma = ensemble
        .iter()
        .map(|e| e.1)
        .chain([sigma_calibrated, max_sigma(&full)])
        .fold(0.0, f64::max);
    let inputs = TheoryInputs::new(sigma, problem.l, problem.mu, cfg.topology.window, n).map_err(stage)?;
    let lti = build_lti(alpha_run, &inputs);
    let errors: Vec<Vec<ErrorVector>> = ensemble.into_iter().map(|e| e.0).collect();
    let prop1 = verify_prop1(&errors, &lti, true).map_err(stage)?;
    let full_errors = u_from_trace(&full, &problem.x_star, problem.l).map_err(stage)?;
    let prop1_full = verify_prop1(&[full_errors], &lti, false).map_err(stage)?;
    let lemma2 = verify_lemma2(&full, alpha_run).map_err(stage)?;

    let alpha = theorem1_alpha(&inputs);
    let t = corollary1_t(&inputs);
    let lemma5 = lemma5_check(alpha, &inputs).map_err(stage)?;
    let summary = TheorySummary {
        sigma,
        sigma_calibrated,
        l: problem.l,
        mu: problem.mu,
        q_tilde: inputs.q_tilde,
        alpha,
        t,
        lambda: lambda_rate(&inputs, t as f64),
        lemma5_ok: lemma5.ok(),
        lemma5,
        alpha_run,
        alpha_run_admissible: lti.admissible,
        ensemble: errors.len(),
        prop1_worst_ratio: prop1.worst_ratio,
        prop1_worst_at: prop1.worst_at,
        prop1_full_grad_ratio: prop1_full.worst_ratio,
        lemma2_worst_ratio: lemma2.worst_ratio,
    };

    let runs = errors.len() as f64;
    let mean_errors: Vec<ErrorVector> = (0..errors[0].len())
        .map(|k| {
            let mut e = ErrorVector {
                t: errors[0][k].t,
                u: [0.0; 3],
                u_tilde: [0.0; 3],
            };
            for run in &errors {
                for c in 0..3 {
                    e.u[c] += run[k].u[c] / runs;
                    e.u_tilde[c] += run[k].u_tilde[c] / runs;
                }
            }
            e
        })
        .collect();
    let mut text = String::from(U_HEADER);
    text.push('\n');
    for e in &mean_errors {
        text.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            e.t, e.u[0], e.u[1], e.u[2], e.u_tilde[0], e.u_tilde[1]
        ));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::from(e).in_stage("output"))?;
    let csv_path = dir.join("theory_u.csv");
    std::fs::write(&csv_path, text).map_err(|e| Error::from(e).in_stage("output"))?;
    let json_path = dir.join("theory.json");
    write_json(&json_path, &summary)?;
    Ok(TheoryOutput {
        summary,
        mean_errors,
        files: vec![csv_path, json_path],
    })
}

/// Columns of the ensemble-mean error sequence file.
pub const U_HEADER: &str = "t,u_consensus,u_optimality,u_tracking,u_tilde_consensus,u_tilde_optimality";
