use super::*;
use crate::mixing::normalize_out;
use crate::objectives::{gen_linreg, LinregParams, Loss, NodeData};
use crate::rng::{substream, Stream};
use crate::sparsifier::StepMasks;
use crate::topology::{base_weights, build_joint_topology, DigraphSnapshot, ErParams, TimeVaryingTopology};

fn complete_pair(steps: usize) -> TimeVaryingTopology {
    TimeVaryingTopology::new(2, 1, vec![DigraphSnapshot::complete(2); steps]).unwrap()
}

fn random_topology(n: usize, window: usize, horizon: usize, seed: u64) -> TimeVaryingTopology {
    build_joint_topology(&ErParams::new(n, 0.5, 0), window, horizon, substream(seed, Stream::Topology)).unwrap()
}

fn linreg(n: usize, m: usize, d: usize, noise: f64, seed: u64) -> (Dataset, Vec<f64>, f64) {
    let mut rng = substream(seed, Stream::Data);
    let (ds, _) = gen_linreg(&LinregParams::new(n, m, d, noise), &mut rng).unwrap();
    let x_star = ds.centralized_optimum().unwrap().x_star;
    let l = ds.constants().unwrap().l;
    (ds, x_star, l)
}

#[test]
fn two_node_consensus_example() {
    let topo = complete_pair(60);
    let cfg = ConsensusConfig {
        record_snapshots: true,
        ..ConsensusConfig::new(0.05, 1.0, 60)
    };
    let trace = consensus_run(&mut topo.replay(), &[vec![1.0], vec![3.0]], &cfg).unwrap();
    // exact 4x4 iteration z <- (M + gamma F) z
    let half = DMatrix::from_element(2, 2, 0.5);
    let mix = crate::mixing::assemble_mixing(&half, &half).unwrap();
    let m = crate::mixing::block_product(&[mix], 0.05).unwrap();
    let mut z = nalgebra::DVector::from_vec(vec![1.0, 3.0, 0.0, 0.0]);
    for (t, s) in trace.snapshots.iter().enumerate() {
        assert_eq!(s.t, t);
        for i in 0..2 {
            assert!((s.x[i] - z[i]).abs() < 1e-15);
            assert!((s.y[i] - z[2 + i]).abs() < 1e-15);
        }
        let mass: f64 = s.x.iter().chain(&s.y).sum();
        assert!((mass - 4.0).abs() < 1e-12);
        z = &m * z;
    }
    let last = trace.snapshots.last().unwrap();
    for xi in &last.x {
        assert!((xi - 2.0).abs() < 1e-12);
    }
    // the 0.95 mode lives in the surplus sum, which starts and stays at
    // zero, so the observed decay is at least that fast
    for r in &trace.records {
        assert!(r.residual <= 0.95f64.powi(r.t as i32) + 1e-15);
    }
    assert!(trace.diagnostics.max_mass_drift < 1e-14);
}

#[test]
fn equal_states_stay_fixed() {
    let topo = random_topology(4, 2, 20, 1);
    let x0 = vec![vec![0.7, -2.0, 5.0]; 4];
    let trace = consensus_run(&mut topo.replay(), &x0, &ConsensusConfig::new(0.05, 0.5, 20)).unwrap();
    assert_eq!(trace.records[0].residual, 0.0);
    assert!(trace.records.iter().all(|r| r.residual <= 1e-14));
}

#[test]
fn consensus_reports_horizon_exhaustion() {
    let topo = complete_pair(3);
    let err = consensus_run(&mut topo.replay(), &[vec![1.0], vec![3.0]], &ConsensusConfig::new(0.05, 1.0, 5)).unwrap_err();
    assert!(matches!(err, Error::HorizonExhausted { step: 3 }));
}

#[test]
fn consensus_stops_at_threshold() {
    let topo = complete_pair(2000);
    let cfg = ConsensusConfig {
        stop_below: Some(1e-12),
        record_stride: Some(50),
        ..ConsensusConfig::new(0.05, 1.0, 2000)
    };
    let trace = consensus_run(&mut topo.replay(), &[vec![1.0], vec![3.0]], &cfg).unwrap();
    let last = trace.records.last().unwrap();
    assert!(last.residual <= 1e-12);
    assert_eq!(last.t, trace.steps_run);
    assert!(trace.records[trace.records.len() - 2].residual > 1e-12);
    assert_eq!(trace.steps_to(1e-12), Some(last.t));
}

#[test]
fn sparse_and_dense_paths_agree() {
    let n = 5;
    let d = 6;
    let topo = random_topology(n, 3, 60, 2);
    let mut rng = substream(2, Stream::Init);
    let x0 = gaussian_init(n, d, 1.0, &mut rng);
    let run = |path| {
        let cfg = ConsensusConfig {
            mixing_path: path,
            seed: 9,
            ..ConsensusConfig::new(0.05, 0.4, 60)
        };
        consensus_run(&mut topo.replay(), &x0, &cfg).unwrap()
    };
    let (a, b) = (run(MixingPath::Sparse), run(MixingPath::Dense));
    for (ra, rb) in a.records.iter().zip(&b.records) {
        assert!((ra.residual - rb.residual).abs() <= 1e-12);
        assert_eq!(ra.comm_entries_cum, rb.comm_entries_cum);
    }

    let (ds, x_star, l) = linreg(n, 8, d, 0.01, 2);
    let problem = OptimizationProblem {
        dataset: &ds,
        x_star: &x_star,
        l,
    };
    let opt = |path| {
        let mut cfg = EngineConfig::new(EngineKind::Svrg, 0.01, 3, 12, 5, 0.5);
        cfg.mixing_path = path;
        optimize_run(&mut topo.replay(), &problem, &x0, &cfg).unwrap()
    };
    let (a, b) = (opt(MixingPath::Sparse), opt(MixingPath::Dense));
    for (ra, rb) in a.records.iter().zip(&b.records) {
        assert!((ra.residual - rb.residual).abs() <= 1e-12 * ra.residual.max(1.0));
    }
}

#[test]
fn single_node_svrg_is_centralized() {
    // f(x) = (x - 3)^2 as a one-sample least-squares node
    let node = NodeData::new(1, vec![1.0], vec![3.0]).unwrap();
    let ds = Dataset::new(Loss::LeastSquares, vec![node]).unwrap();
    let topo = TimeVaryingTopology::new(1, 1, vec![DigraphSnapshot::empty(1); 200]).unwrap();
    let problem = OptimizationProblem {
        dataset: &ds,
        x_star: &[3.0],
        l: 2.0,
    };
    let cfg = EngineConfig::new(EngineKind::Svrg, 0.1, 1, 20, 10, 1.0);
    let trace = svrg_run(&mut topo.replay(), &problem, &[vec![0.0]], &cfg).unwrap();
    assert!(trace.final_residual() < 1e-12);
    let r = &trace.records;
    let rate = r[5].residual / r[4].residual;
    assert!(rate > 0.0 && rate < 1.0);
}

#[test]
fn estimator_cases() {
    let (ds, _, _) = linreg(3, 7, 4, 0.1, 3);
    let w = vec![0.2, -0.4, 1.0, 0.0];
    let mu = ds.local_full_grad(1, &w);
    for l in 0..7 {
        assert_eq!(svrg_gradient_estimate(&ds, 1, &w, &w, &mu, l), mu);
    }
    let x = vec![1.0, 2.0, -1.0, 0.5];
    let mut mean = vec![0.0; 4];
    for l in 0..7 {
        for (a, b) in mean.iter_mut().zip(svrg_gradient_estimate(&ds, 1, &x, &w, &mu, l)) {
            *a += b / 7.0;
        }
    }
    for (a, b) in mean.iter().zip(ds.local_full_grad(1, &x)) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
    }
    let single = Dataset::new(Loss::LeastSquares, vec![NodeData::new(2, vec![1.0, 2.0], vec![0.5]).unwrap()]).unwrap();
    let mu1 = single.local_full_grad(0, &w[..2]);
    let v = svrg_gradient_estimate(&single, 0, &x[..2], &w[..2], &mu1, 0);
    for (a, b) in v.iter().zip(single.local_full_grad(0, &x[..2])) {
        assert!((a - b).abs() <= 1e-14 * (1.0 + b.abs()));
    }
}

#[test]
fn tracking_update_trivial_and_column_sums() {
    let g = vec![vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.0, 4.0]];
    let v = vec![vec![0.1, 0.2]; 3];
    let identity = vec![DMatrix::identity(3, 3); 2];
    assert_eq!(gradient_tracking_update(&g, &identity, &v, &v).unwrap(), g);

    let mut rng = substream(4, Stream::Init);
    for _ in 0..20 {
        let snap = random_topology(3, 1, 1, rng.random()).snapshots()[0].clone();
        let w = base_weights(&snap);
        let masks = StepMasks::draw(3, 2, 0.5, &mut rng).unwrap();
        let b: Vec<_> = (0..2).map(|m| normalize_out(&w.w_out, &masks.y, m).unwrap()).collect();
        let rand_rows = |rng: &mut StreamRng| gaussian_init(3, 2, 1.0, rng);
        let (g, vn, vo) = (rand_rows(&mut rng), rand_rows(&mut rng), rand_rows(&mut rng));
        let out = gradient_tracking_update(&g, &b, &vn, &vo).unwrap();
        for m in 0..2 {
            let lhs: f64 = out.iter().map(|r| r[m]).sum();
            let rhs: f64 = (0..3).map(|i| g[i][m] + vn[i][m] - vo[i][m]).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }
    assert!(gradient_tracking_update(&g, &identity[..1], &v, &v).is_err());
}

#[test]
fn incremental_mixing_equals_window_product() {
    let n = 3;
    let d = 4;
    let topo = random_topology(n, 3, 3, 5);
    let mut rng = substream(5, Stream::Masks);
    let mut g = gaussian_init(n, d, 1.0, &mut rng).concat();
    let g0 = g.clone();
    let mut products = vec![DMatrix::<f64>::identity(n, n); d];
    for snap in topo.snapshots() {
        let graph = StepGraph::new(snap, true);
        let masks = StepMasks::draw(n, d, 0.5, &mut rng).unwrap();
        let mut next = vec![0.0; n * d];
        push(&graph, &masks.y, d, MixingPath::Sparse, &g, &mut next).unwrap();
        g = next;
        for (m, p) in products.iter_mut().enumerate() {
            *p = normalize_out(&graph.weights().w_out, &masks.y, m).unwrap() * &*p;
        }
    }
    let rows = |flat: &[f64]| flat.chunks(d).map(<[f64]>::to_vec).collect::<Vec<_>>();
    let vn = gaussian_init(n, d, 1.0, &mut rng);
    let vo = gaussian_init(n, d, 1.0, &mut rng);
    let one_shot = gradient_tracking_update(&rows(&g0), &products, &vn, &vo).unwrap();
    for i in 0..n {
        for m in 0..d {
            let incremental = g[i * d + m] + vn[i][m] - vo[i][m];
            assert!((incremental - one_shot[i][m]).abs() <= 1e-12);
        }
    }
}

#[test]
fn full_gradient_reaches_noiseless_optimum() {
    let (ds, x_star, l) = linreg(4, 10, 3, 0.0, 6);
    let topo = random_topology(4, 1, 3000, 6);
    let problem = OptimizationProblem {
        dataset: &ds,
        x_star: &x_star,
        l,
    };
    let x0 = gaussian_init(4, 3, 1.0, &mut substream(6, Stream::Init));
    let cfg = EngineConfig::new(EngineKind::FullGrad, 0.05, 1, 3000, 1, 1.0);
    let trace = ablation_run(&mut topo.replay(), &problem, &x0, &cfg).unwrap();
    assert!(trace.final_residual() <= 1e-10, "{}", trace.final_residual());
    assert!(trace.diagnostics.max_tracking_gap <= 1e-12);
    assert!(trace.diagnostics.max_mean_gap <= 1e-12);
}

#[test]
fn one_sample_nodes_make_svrg_match_full_gradient() {
    let (ds, x_star, l) = linreg(4, 1, 3, 0.0, 7);
    let topo = random_topology(4, 2, 400, 7);
    let problem = OptimizationProblem {
        dataset: &ds,
        x_star: &x_star,
        l,
    };
    let x0 = gaussian_init(4, 3, 1.0, &mut substream(7, Stream::Init));
    let run = |kind| {
        let cfg = EngineConfig::new(kind, 0.02, 2, 40, 10, 0.5);
        optimize_run(&mut topo.replay(), &problem, &x0, &cfg).unwrap()
    };
    let (s, f) = (run(EngineKind::Svrg), run(EngineKind::FullGrad));
    assert_eq!(s.records.len(), f.records.len());
    for (a, b) in s.records.iter().zip(&f.records) {
        assert!((a.residual - b.residual).abs() <= 1e-12 * a.residual.max(1e-3));
        assert_eq!(a.comm_entries_cum, b.comm_entries_cum);
    }
}

#[test]
fn identical_seeds_identical_traces() {
    let (ds, x_star, l) = linreg(5, 6, 4, 0.01, 8);
    let problem = OptimizationProblem {
        dataset: &ds,
        x_star: &x_star,
        l,
    };
    let x0 = gaussian_init(5, 4, 1.0, &mut substream(8, Stream::Init));
    let run = |seed| {
        let topo = random_topology(5, 2, 200, seed);
        let mut cfg = EngineConfig::new(EngineKind::Svrg, 0.01, 2, 20, 10, 0.5);
        cfg.seed = seed;
        optimize_run(&mut topo.replay(), &problem, &x0, &cfg).unwrap().records
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3), run(4));
}

#[test]
fn communication_counts_at_full_fraction() {
    let n = 6;
    let d = 5;
    let topo = random_topology(n, 1, 30, 9);
    let x0 = gaussian_init(n, d, 1.0, &mut substream(9, Stream::Init));
    let trace = consensus_run(&mut topo.replay(), &x0, &ConsensusConfig::new(0.05, 1.0, 30)).unwrap();
    for (t, pair) in trace.records.windows(2).enumerate() {
        let edges = topo.snapshot(t).unwrap().edge_count() as u64;
        assert_eq!(pair[1].comm_entries_cum - pair[0].comm_entries_cum, 2 * d as u64 * edges);
    }

    let (ds, x_star, l) = linreg(n, 4, d, 0.01, 9);
    let problem = OptimizationProblem {
        dataset: &ds,
        x_star: &x_star,
        l,
    };
    let mut cfg = EngineConfig::new(EngineKind::PlainSgd, 0.01, 1, 30, 1, 1.0);
    cfg.record_stride = Some(1);
    let trace = optimize_run(&mut topo.replay(), &problem, &x0, &cfg).unwrap();
    for (t, pair) in trace.records.windows(2).enumerate() {
        let edges = topo.snapshot(t).unwrap().edge_count() as u64;
        assert_eq!(pair[1].comm_entries_cum - pair[0].comm_entries_cum, 3 * d as u64 * edges);
    }
}

#[test]
fn gradient_accounting() {
    let (ds, x_star, l) = linreg(3, 10, 2, 0.01, 10);
    let topo = random_topology(3, 2, 40, 10);
    let problem = OptimizationProblem {
        dataset: &ds,
        x_star: &x_star,
        l,
    };
    let x0 = vec![vec![0.0; 2]; 3];
    let run = |kind| {
        let cfg = EngineConfig::new(kind, 0.01, 2, 10, 4, 1.0);
        optimize_run(&mut topo.replay(), &problem, &x0, &cfg).unwrap().grad_evals_total()
    };
    // 4 epochs of m_i per node, 20 boundaries of 2 per node
    assert!((run(EngineKind::Svrg) - (4.0 * 30.0 + 20.0 * 6.0) / 30.0).abs() < 1e-12);
    assert!((run(EngineKind::FullGrad) - 21.0).abs() < 1e-12);
    assert!((run(EngineKind::PlainSgd) - 3.0).abs() < 1e-12);
}

#[test]
fn oversized_step_is_reported() {
    let (ds, x_star, l) = linreg(3, 5, 2, 0.01, 11);
    let topo = random_topology(3, 1, 5000, 11);
    let problem = OptimizationProblem {
        dataset: &ds,
        x_star: &x_star,
        l,
    };
    let x0 = vec![vec![1.0; 2]; 3];
    let cfg = EngineConfig::new(EngineKind::FullGrad, 100.0, 1, 5000, 1, 1.0);
    let err = optimize_run(&mut topo.replay(), &problem, &x0, &cfg).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }));
}

#[test]
fn element_wise_form_diverges_by_the_step_term() {
    let (ds, x_star, l) = linreg(3, 5, 2, 0.01, 12);
    let topo = random_topology(3, 1, 50, 12);
    let problem = OptimizationProblem {
        dataset: &ds,
        x_star: &x_star,
        l,
    };
    let x0 = vec![vec![1.0; 2]; 3];
    let cfg = EngineConfig::new(EngineKind::FullGrad, 0.01, 1, 50, 1, 1.0);
    let trace = optimize_run(&mut topo.replay(), &problem, &x0, &cfg).unwrap();
    let g0 = (0..3).flat_map(|i| ds.local_full_grad(i, &x0[i])).fold(0.0, |a: f64, v| a.max(v.abs()));
    assert!(trace.diagnostics.max_elementwise_divergence >= 0.01 * g0 * (1.0 - 1e-12));
}

#[test]
fn config_validation() {
    let ok = EngineConfig::new(EngineKind::Svrg, 0.01, 2, 10, 1, 1.0);
    assert!(ok.validate().is_ok());
    let bad = [
        EngineConfig { inner_steps: 9, ..ok.clone() },
        EngineConfig { alpha: 0.0, ..ok.clone() },
        EngineConfig { gamma: 1.0, ..ok.clone() },
        EngineConfig { q: 0.0, ..ok.clone() },
        EngineConfig { kind: EngineKind::Consensus, ..ok.clone() },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
}
