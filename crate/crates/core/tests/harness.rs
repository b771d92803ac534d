use dics_core::engines::{ConsensusConfig, EngineConfig, EngineKind};
use dics_core::harness::csv::{aggregate_header, read_aggregate_csv};
use dics_core::harness::{read_csv, run_experiment_in, DataSpec, ExperimentConfig, ExperimentKind, TopologySpec};
use dics_core::sparsifier::kept_count;
use proptest::prelude::*;

fn topology(nodes: usize, window: usize) -> TopologySpec {
    TopologySpec {
        nodes,
        p: 0.6,
        drop: 0,
        window,
        horizon: None,
    }
}

fn data(dim: usize) -> DataSpec {
    DataSpec {
        dim,
        samples_per_node: 15,
        noise_variance: 0.01,
        reg: 1e-2,
        label_flip: 0.1,
        init_scale: 1.0,
    }
}

fn consensus_cfg(q: f64, repeat: usize) -> ExperimentConfig {
    ExperimentConfig {
        kind: ExperimentKind::Consensus,
        seed: 11,
        repeat,
        out: None,
        topology: topology(6, 2),
        data: Some(data(16)),
        consensus: Some(ConsensusConfig::new(0.05, q, 60)),
        engine: None,
        spectra: None,
        theory: None,
    }
}

#[test]
fn replicas_and_aggregate_agree() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment_in(&consensus_cfg(0.5, 3), dir.path()).unwrap();
    assert_eq!(out.traces.len(), 3);
    let agg_text = std::fs::read_to_string(dir.path().join("consensus_aggregate.csv")).unwrap();
    assert!(agg_text.starts_with(&aggregate_header()));
    let agg = read_aggregate_csv(&agg_text).unwrap();
    for r in 0..3 {
        let text = std::fs::read_to_string(dir.path().join(format!("consensus_r{r}.csv"))).unwrap();
        assert_eq!(read_csv(&text).unwrap(), out.traces[r].records);
    }
    let last = agg.last().unwrap();
    let mean = out.traces.iter().map(|t| t.final_residual()).sum::<f64>() / 3.0;
    assert!((last.mean[0] - mean).abs() <= 1e-12 * mean.max(1.0));
    // replicas differ in seed, so they must not coincide
    assert_ne!(out.traces[0].records, out.traces[1].records);
    assert!(dir.path().join("consensus_residual.svg").exists());
    assert!(dir.path().join("config.json").exists());
}

#[test]
fn sparse_consensus_sends_kept_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let dense = run_experiment_in(&consensus_cfg(1.0, 1), &dir.path().join("dense")).unwrap();
    let sparse = run_experiment_in(&consensus_cfg(0.25, 1), &dir.path().join("sparse")).unwrap();
    let k = kept_count(16, 0.25) as u64;
    assert_eq!(k, 4);
    for (a, b) in dense.traces[0].records.iter().zip(&sparse.traces[0].records) {
        assert_eq!(a.comm_entries_cum * k, b.comm_entries_cum * 16);
    }
}

#[test]
fn optimizing_runs_keep_tracking_identities() {
    for kind in [EngineKind::Svrg, EngineKind::FullGrad, EngineKind::PlainSgd] {
        for loss in [ExperimentKind::Linreg, ExperimentKind::Logreg] {
            let cfg = ExperimentConfig {
                kind: loss,
                consensus: None,
                engine: Some(EngineConfig::new(kind, 0.02, 2, 20, 5, 0.5)),
                ..consensus_cfg(1.0, 1)
            };
            let dir = tempfile::tempdir().unwrap();
            let out = run_experiment_in(&cfg, dir.path()).unwrap();
            let diag = out.traces[0].diagnostics;
            assert!(diag.max_tracking_gap <= 1e-10, "{kind:?} {loss:?} {diag:?}");
            assert!(diag.max_mean_gap <= 1e-10, "{kind:?} {loss:?} {diag:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_json_round_trip(seed in any::<u64>(), repeat in 1usize..5, q in 0.01f64..=1.0, window in 1usize..4, alpha in 1e-4f64..0.5) {
        let cfg = ExperimentConfig {
            kind: ExperimentKind::Linreg,
            seed,
            repeat,
            consensus: None,
            topology: topology(5, window),
            engine: Some(EngineConfig::new(EngineKind::Svrg, alpha, window, 10 * window, 3, q)),
            ..consensus_cfg(q, repeat)
        };
        cfg.validate().unwrap();
        prop_assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}
