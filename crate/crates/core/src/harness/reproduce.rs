//! The bundled desk-scale reproduction suites.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde_json::json;

use crate::engines::{consensus_run, gaussian_init, optimize_run, ConsensusConfig, EngineConfig, EngineKind, OptimizationProblem, RunTrace};
use crate::error::{Error, Result};
use crate::harness::config::{DataSpec, ExperimentConfig, ExperimentKind, TheorySpec, TopologySpec};
use crate::harness::{build_problem, export_csv, export_svg, run_theory, trace_summary, with_source, write_json, TheoryOutput};
use crate::mixing::{sample_window_spectra, WindowSpectrum};
use crate::rng::{substream, Stream};
use crate::theory::{corollary1_t, lambda_rate, lemma5_check, theorem1_alpha, TheoryInputs};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Consensus,
    Optimization,
    Spectra,
    Theory,
    All,
}

impl Suite {
    pub fn parse(name: &str) -> Result<Suite> {
        Ok(match name {
            "consensus" => Suite::Consensus,
            "optimization" => Suite::Optimization,
            "spectra" => Suite::Spectra,
            "theory" => Suite::Theory,
            "all" => Suite::All,
            _ => {
                return Err(Error::invalid(format!(
                    "unknown suite `{name}` (expected consensus, optimization, spectra, theory or all)"
                )))
            }
        })
    }

    fn includes(self, other: Suite) -> bool {
        self == Suite::All || self == other
    }
}

pub const SEED: u64 = 1;
pub const NODES: usize = 10;
pub const DIM: usize = 64;
pub const GAMMA: f64 = 0.05;
pub const CONSENSUS_WINDOWS: [usize; 2] = [1, 10];
pub const CONSENSUS_Q: [f64; 2] = [1.0, 0.078];
pub const CONSENSUS_THRESHOLD: f64 = 1e-12;
pub const CONSENSUS_MAX_STEPS: usize = 200_000;
pub const OPT_WINDOWS: [usize; 5] = [1, 2, 3, 4, 5];
pub const OPT_Q: [f64; 3] = [1.0, 0.08, 0.05];
pub const OPT_ALPHA: f64 = 0.002;
pub const SAMPLES_PER_NODE: usize = 200;
/// Gradient updates per optimizing run; a run lasts `B` times as many steps.
pub const OPT_UPDATES: usize = 120_000;
/// Updates per SVRG epoch.
pub const OPT_EPOCH_UPDATES: usize = 2_000;
pub const SPECTRA_Q: [f64; 3] = [1.0, 0.25, 0.078];
pub const SPECTRA_TOPOLOGIES: usize = 20;
pub const SPECTRA_WINDOWS: usize = 10;
pub const THEORY_SIGMAS: [f64; 4] = [0.0, 0.5, 0.9, 0.99];
pub const THEORY_CONDITIONS: [f64; 3] = [1.0, 10.0, 100.0];

/// Series of the original figures that are not reimplemented here.
pub const ABSENT_BASELINES: [&str; 4] = ["Push-DIGing", "TV-AB", "quantized push-sum (Q-Push-sum)", "Q-Push-Gossip"];

fn reference_topology(window: usize) -> TopologySpec {
    TopologySpec {
        nodes: NODES,
        p: 0.9,
        drop: 2,
        window,
        horizon: None,
    }
}

#[derive(Debug)]
pub struct ConsensusRun {
    pub window: usize,
    pub q: f64,
    pub trace: RunTrace,
}

#[derive(Debug)]
pub struct OptimizationRun {
    pub window: usize,
    pub q: f64,
    pub trace: RunTrace,
}

#[derive(Debug)]
pub struct SpectraRun {
    pub window: usize,
    pub q: f64,
    pub seed: u64,
    pub spectra: Vec<WindowSpectrum>,
}

#[derive(Debug, Default)]
pub struct ReproduceReport {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub consensus: Vec<ConsensusRun>,
    pub optimization: Vec<OptimizationRun>,
    pub spectra: Vec<SpectraRun>,
    pub theory: Option<TheoryOutput>,
    /// Wall-clock time per suite, in run order.
    pub timings: Vec<(&'static str, Duration)>,
}

fn q_label(q: f64) -> String {
    format!("{q}").replace('.', "p")
}

fn io(e: impl Into<Error>) -> Error {
    e.into().in_stage("output")
}

/// Runs the selected suites, writing under `dir/<suite>/`.
pub fn reproduce(suite: Suite, dir: &Path) -> Result<ReproduceReport> {
    let mut report = ReproduceReport {
        dir: dir.to_path_buf(),
        ..ReproduceReport::default()
    };
    if suite.includes(Suite::Consensus) {
        let started = Instant::now();
        consensus_suite(&dir.join("consensus"), &mut report)?;
        report.timings.push(("consensus", started.elapsed()));
    }
    if suite.includes(Suite::Optimization) {
        let started = Instant::now();
        optimization_suite(&dir.join("optimization"), &mut report)?;
        report.timings.push(("optimization", started.elapsed()));
    }
    if suite.includes(Suite::Spectra) {
        let started = Instant::now();
        spectra_suite(&dir.join("spectra"), &mut report)?;
        report.timings.push(("spectra", started.elapsed()));
    }
    if suite.includes(Suite::Theory) {
        let started = Instant::now();
        theory_suite(&dir.join("theory"), &mut report)?;
        report.timings.push(("theory", started.elapsed()));
    }
    Ok(report)
}

fn consensus_suite(dir: &Path, report: &mut ReproduceReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io)?;
    let configs: Vec<(usize, f64)> = CONSENSUS_WINDOWS
        .iter()
        .flat_map(|&b| CONSENSUS_Q.iter().map(move |&q| (b, q)))
        .collect();
    let runs = configs
        .into_par_iter()
        .map(|(b, q)| {
            let x0 = gaussian_init(NODES, DIM, 1.0, &mut substream(SEED, Stream::Init));
            let cfg = ConsensusConfig {
                seed: SEED,
                stop_below: Some(CONSENSUS_THRESHOLD),
                ..ConsensusConfig::new(GAMMA, q, CONSENSUS_MAX_STEPS)
            };
            let trace = with_source(&reference_topology(b), SEED, |s| consensus_run(s, &x0, &cfg)).map_err(|e| e.in_stage("consensus"))?;
            Ok(ConsensusRun { window: b, q, trace })
        })
        .collect::<Result<Vec<_>>>()?;
    for run in &runs {
        let path = dir.join(format!("B{}_q{}.csv", run.window, q_label(run.q)));
        export_csv(&run.trace.records, &path).map_err(io)?;
        report.files.push(path);
    }
    for b in CONSENSUS_WINDOWS {
        let series: Vec<(String, &[_])> = runs
            .iter()
            .filter(|r| r.window == b)
            .map(|r| (format!("Di-CS-AC q={}", r.q), r.trace.records.as_slice()))
            .collect();
        for (x, name) in [("t", "iterations"), ("comm_entries_cum", "communication")] {
            let path = dir.join(format!("B{b}_residual_vs_{name}.svg"));
            export_svg(&series, x, "residual", &path).map_err(io)?;
            report.files.push(path);
        }
    }
    let summary = json!({
        "threshold": CONSENSUS_THRESHOLD,
        "runs": runs.iter().map(|r| json!({
            "window": r.window,
            "q": r.q,
            "steps_to_threshold": r.trace.steps_to(CONSENSUS_THRESHOLD),
            "summary": trace_summary(&r.trace, SEED),
        })).collect::<Vec<_>>(),
        "absent_series": ABSENT_BASELINES,
        "note": "The quantized push-sum baselines of the original consensus figures are not reimplemented; their series are absent from these files.",
    });
    let path = dir.join("summary.json");
    write_json(&path, &summary)?;
    report.files.push(path);
    report.consensus = runs;
    Ok(())
}

pub fn reference_linreg_config(window: usize, q: f64, kind: EngineKind) -> ExperimentConfig {
    ExperimentConfig {
        kind: ExperimentKind::Linreg,
        seed: SEED,
        repeat: 1,
        out: None,
        topology: reference_topology(window),
        data: Some(DataSpec {
            dim: DIM,
            samples_per_node: SAMPLES_PER_NODE,
            noise_variance: 0.01,
            reg: 1e-3,
            label_flip: 0.1,
            init_scale: 1.0,
        }),
        consensus: None,
        engine: Some(EngineConfig {
            seed: SEED,
            record_stride: Some(1000 * window),
            ..EngineConfig::new(
                kind,
                OPT_ALPHA,
                window,
                OPT_EPOCH_UPDATES * window,
                OPT_UPDATES / OPT_EPOCH_UPDATES,
                q,
            )
        }),
        spectra: None,
        theory: None,
    }
}

fn optimization_suite(dir: &Path, report: &mut ReproduceReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io)?;
    let problem = build_problem(&reference_linreg_config(1, 1.0, EngineKind::Svrg))?;
    let kinds = [EngineKind::Svrg, EngineKind::FullGrad, EngineKind::PlainSgd];
    let configs: Vec<(usize, f64, EngineKind)> = OPT_WINDOWS
        .iter()
        .flat_map(|&b| OPT_Q.iter().flat_map(move |&q| kinds.into_iter().map(move |k| (b, q, k))))
        .collect();
    let runs = configs
        .into_par_iter()
        .map(|(b, q, kind)| {
            let cfg = reference_linreg_config(b, q, kind);
            let x0 = gaussian_init(NODES, DIM, 1.0, &mut substream(SEED, Stream::Init));
            let p = OptimizationProblem {
                dataset: &problem.dataset,
                x_star: &problem.x_star,
                l: problem.l,
            };
            let engine = cfg.engine.as_ref().expect("engine section");
            let trace = with_source(&cfg.topology, SEED, |s| optimize_run(s, &p, &x0, engine)).map_err(|e| e.in_stage("optimization"))?;
            Ok(OptimizationRun { window: b, q, trace })
        })
        .collect::<Result<Vec<_>>>()?;
    for run in &runs {
        let path = dir.join(format!("B{}_q{}_{}.csv", run.window, q_label(run.q), run.trace.kind.name()));
        export_csv(&run.trace.records, &path).map_err(io)?;
        report.files.push(path);
    }
    for b in OPT_WINDOWS {
        for q in OPT_Q {
            let series: Vec<(String, &[_])> = runs
                .iter()
                .filter(|r| r.window == b && r.q == q)
                .map(|r| (r.trace.kind.name().to_string(), r.trace.records.as_slice()))
                .collect();
            for (x, name) in [("t", "iterations"), ("grad_evals_cum", "gradients"), ("comm_entries_cum", "communication")] {
                let path = dir.join(format!("B{b}_q{}_residual_vs_{name}.svg", q_label(q)));
                export_svg(&series, x, "residual", &path).map_err(io)?;
                report.files.push(path);
            }
        }
    }
    let summary = json!({
        "alpha": OPT_ALPHA,
        "L": problem.l,
        "mu": problem.mu,
        "updates": OPT_UPDATES,
        "runs": runs.iter().map(|r| json!({
            "window": r.window,
            "q": r.q,
            "summary": trace_summary(&r.trace, SEED),
        })).collect::<Vec<_>>(),
        "absent_series": ["Push-DIGing", "TV-AB"],
        "note": "Third-party baselines of the original optimization figures are not reimplemented.",
    });
    let path = dir.join("summary.json");
    write_json(&path, &summary)?;
    report.files.push(path);
    report.optimization = runs;
    Ok(())
}

fn spectra_suite(dir: &Path, report: &mut ReproduceReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io)?;
    let configs: Vec<(usize, f64, u64)> = CONSENSUS_WINDOWS
        .iter()
        .flat_map(|&b| {
            SPECTRA_Q
                .iter()
                .flat_map(move |&q| (0..SPECTRA_TOPOLOGIES as u64).map(move |s| (b, q, SEED + s)))
        })
        .collect();
    let runs = configs
        .into_par_iter()
        .map(|(b, q, seed)| {
            let spectra = with_source(&reference_topology(b), seed, |s| {
                sample_window_spectra(s, DIM, q, GAMMA, SPECTRA_WINDOWS, &mut substream(seed, Stream::Masks))
            })
            .map_err(|e| e.in_stage("spectra"))?;
            Ok(SpectraRun { window: b, q, seed, spectra })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut text = format!("{SUITE_SPECTRA_HEADER}\n");
    for r in &runs {
        for s in &r.spectra {
            text.push_str(&format!(
                "{},{},{},{},{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                r.window, r.q, r.seed, s.window, s.coordinate, s.lambda1, s.lambda2, s.sigma, s.gap
            ));
        }
    }
    let path = dir.join("spectra.csv");
    std::fs::write(&path, text).map_err(io)?;
    report.files.push(path);
    let summary: Vec<_> = CONSENSUS_WINDOWS
        .iter()
        .flat_map(|&b| SPECTRA_Q.iter().map(move |&q| (b, q)))
        .map(|(b, q)| {
            let rows = || runs.iter().filter(|r| r.window == b && r.q == q).flat_map(|r| &r.spectra);
            json!({
                "window": b,
                "q": q,
                "lambda2_max": rows().map(|s| s.lambda2).fold(0.0, f64::max),
                "sigma_max": rows().map(|s| s.sigma).fold(0.0, f64::max),
                "all_lambda2_below_one": rows().all(|s| s.lambda2 < 1.0),
            })
        })
        .collect();
    let path = dir.join("spectra.json");
    write_json(&path, &summary)?;
    report.files.push(path);
    report.spectra = runs;
    Ok(())
}

/// Desk-scale instance for the error-recursion checks: small enough that a
/// 100-run ensemble with per-window spectra takes seconds.
pub fn desk_theory_config() -> ExperimentConfig {
    ExperimentConfig {
        kind: ExperimentKind::Theory,
        seed: SEED,
        repeat: 1,
        out: None,
        topology: TopologySpec {
            nodes: 5,
            p: 0.6,
            drop: 0,
            window: 2,
            horizon: None,
        },
        data: Some(DataSpec {
            dim: 4,
            samples_per_node: 20,
            noise_variance: 0.01,
            reg: 1e-3,
            label_flip: 0.1,
            init_scale: 1.0,
        }),
        consensus: None,
        // alpha is replaced by the admissible step size
        engine: Some(EngineConfig::new(EngineKind::Svrg, 1.0, 2, 40, 10, 1.0)),
        spectra: None,
        theory: Some(TheorySpec::default()),
    }
}

pub const SUITE_SPECTRA_HEADER: &str = "window_len,q,seed,window,coordinate,lambda1,lambda2,sigma,gap";

pub const GRID_HEADER: &str = "sigma,q_tilde,alpha,T,lambda,lemma5_ok,rho_j,j_norm,j_target,resolvent_norm";

fn theory_suite(dir: &Path, report: &mut ReproduceReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut text = format!("{GRID_HEADER}\n");
    for s in THEORY_SIGMAS {
        for q in THEORY_CONDITIONS {
            let inputs = TheoryInputs::with_condition(s, q, 1, NODES)?;
            let alpha = theorem1_alpha(&inputs);
            let t = corollary1_t(&inputs);
            let l5 = lemma5_check(alpha, &inputs)?;
            text.push_str(&format!(
                "{s},{q},{alpha:.16e},{t},{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                lambda_rate(&inputs, t as f64),
                l5.ok(),
                l5.rho_j,
                l5.j_norm,
                l5.j_target,
                l5.resolvent_norm
            ));
        }
    }
    let path = dir.join("constants_grid.csv");
    std::fs::write(&path, text).map_err(io)?;
    report.files.push(path);
    let out = run_theory(&desk_theory_config(), dir)?;
    report.files.extend(out.files.iter().cloned());
    report.theory = Some(out);
    Ok(())
}
