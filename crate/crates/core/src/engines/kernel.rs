//! Per-step mixing kernels over node-major flat buffers (`buf[i * d + m]`).

use nalgebra::DMatrix;

use crate::error::Result;
use crate::mixing::{normalize_in, normalize_out};
use crate::sparsifier::{CoordinateMask, StepMasks};
use crate::topology::{base_weights, BaseWeights, DigraphSnapshot};

/// Which implementation applies the per-coordinate mixing matrices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingPath {
    /// Adjacency lists, cost proportional to edges times kept coordinates.
    #[default]
    Sparse,
    /// Builds every `A_m` and `B_m` explicitly; slow, used as a reference.
    Dense,
}

/// Adjacency of one snapshot in compressed rows, reused across steps.
#[derive(Default)]
pub(crate) struct StepGraph {
    weights: Option<BaseWeights>,
    in_ptr: Vec<usize>,
    in_adj: Vec<(usize, f64)>,
    out_ptr: Vec<usize>,
    out_adj: Vec<(usize, f64)>,
    pub out_degree: Vec<usize>,
}

impl StepGraph {
    #[cfg(test)]
    pub fn new(snapshot: &DigraphSnapshot, with_weights: bool) -> Self {
        let mut g = StepGraph::default();
        g.rebuild(snapshot, with_weights);
        g
    }

    /// Uniform weights over in- and out-neighborhoods (self included).
    /// `with_weights` also keeps the dense weight matrices.
    pub fn rebuild(&mut self, snapshot: &DigraphSnapshot, with_weights: bool) {
        let n = snapshot.node_count();
        let edges = snapshot.edges();
        self.weights = with_weights.then(|| base_weights(snapshot));

        // edges are sorted by source, so out-rows come out in order
        self.out_degree.clear();
        self.out_degree.resize(n, 0);
        let mut in_degree = vec![0usize; n];
        for &(from, to) in edges {
            self.out_degree[from] += 1;
            in_degree[to] += 1;
        }
        fill_ptr(&mut self.out_ptr, &self.out_degree);
        fill_ptr(&mut self.in_ptr, &in_degree);
        self.out_adj.clear();
        self.out_adj.resize(edges.len() + n, (0, 0.0));
        self.in_adj.clear();
        self.in_adj.resize(edges.len() + n, (0, 0.0));
        let mut out_fill = self.out_ptr[..n].to_vec();
        let mut in_fill = self.in_ptr[..n].to_vec();
        for i in 0..n {
            self.out_adj[out_fill[i]] = (i, 1.0 / (self.out_degree[i] + 1) as f64);
            out_fill[i] += 1;
            self.in_adj[in_fill[i]] = (i, 1.0 / (in_degree[i] + 1) as f64);
            in_fill[i] += 1;
        }
        for &(from, to) in edges {
            self.out_adj[out_fill[from]] = (to, 1.0 / (self.out_degree[from] + 1) as f64);
            out_fill[from] += 1;
            self.in_adj[in_fill[to]] = (from, 1.0 / (in_degree[to] + 1) as f64);
            in_fill[to] += 1;
        }
    }

    fn in_row(&self, i: usize) -> &[(usize, f64)] {
        &self.in_adj[self.in_ptr[i]..self.in_ptr[i + 1]]
    }

    fn out_row(&self, j: usize) -> &[(usize, f64)] {
        &self.out_adj[self.out_ptr[j]..self.out_ptr[j + 1]]
    }

    fn node_count(&self) -> usize {
        self.out_degree.len()
    }

    pub fn weights(&self) -> &BaseWeights {
        self.weights.as_ref().expect("step graph built without dense weights")
    }
}

/// Row pointers with one extra slot per row for the self-loop.
fn fill_ptr(ptr: &mut Vec<usize>, degree: &[usize]) {
    ptr.clear();
    ptr.push(0);
    let mut acc = 0;
    for d in degree {
        acc += d + 1;
        ptr.push(acc);
    }
}

/// `out = A x` with `A` the mask-renormalized receiver weights.
pub(crate) fn pull(
    graph: &StepGraph,
    masks: &[CoordinateMask],
    d: usize,
    path: MixingPath,
    x: &[f64],
    out: &mut [f64],
) -> Result<()> {
    match path {
        MixingPath::Sparse => {
            let mut num = vec![0.0; d];
            let mut den = vec![0.0; d];
            for i in 0..graph.node_count() {
                let ins = graph.in_row(i);
                num.fill(0.0);
                let mut base = 0.0;
                let mut partial = false;
                for &(j, w) in ins {
                    let xj = &x[j * d..(j + 1) * d];
                    if j == i || masks[j].is_full() {
                        base += w;
                        for (a, &b) in num.iter_mut().zip(xj) {
                            *a += w * b;
                        }
                    } else {
                        if !partial {
                            den.fill(0.0);
                            partial = true;
                        }
                        for &m in masks[j].kept() {
                            num[m] += w * xj[m];
                            den[m] += w;
                        }
                    }
                }
                let oi = &mut out[i * d..(i + 1) * d];
                if partial {
                    for m in 0..d {
                        oi[m] = num[m] / (base + den[m]);
                    }
                } else {
                    for (o, a) in oi.iter_mut().zip(&num) {
                        *o = a / base;
                    }
                }
            }
        }
        MixingPath::Dense => {
            for m in 0..d {
                let a = normalize_in(&graph.weights().w_in, masks, m)?;
                apply_dense(&a, d, m, x, out);
            }
        }
    }
    Ok(())
}

/// `out = B x` with `B` the mask-aware sender weights.
pub(crate) fn push(
    graph: &StepGraph,
    masks: &[CoordinateMask],
    d: usize,
    path: MixingPath,
    x: &[f64],
    out: &mut [f64],
) -> Result<()> {
    match path {
        MixingPath::Sparse => {
            out.fill(0.0);
            for j in 0..graph.node_count() {
                let outs = graph.out_row(j);
                let mask = &masks[j];
                let xj = &x[j * d..(j + 1) * d];
                for &(i, c) in outs {
                    let oi = &mut out[i * d..(i + 1) * d];
                    if mask.is_full() {
                        for (o, &b) in oi.iter_mut().zip(xj) {
                            *o += c * b;
                        }
                    } else {
                        for &m in mask.kept() {
                            oi[m] += c * xj[m];
                        }
                    }
                }
                if !mask.is_full() {
                    for m in (0..d).filter(|&m| !mask.keeps(m)) {
                        out[j * d + m] += xj[m];
                    }
                }
            }
        }
        MixingPath::Dense => {
            for m in 0..d {
                let b = normalize_out(&graph.weights().w_out, masks, m)?;
                apply_dense(&b, d, m, x, out);
            }
        }
    }
    Ok(())
}

fn apply_dense(mat: &DMatrix<f64>, d: usize, m: usize, x: &[f64], out: &mut [f64]) {
    let n = mat.nrows();
    for i in 0..n {
        out[i * d + m] = (0..n).map(|j| mat[(i, j)] * x[j * d + m]).sum();
    }
}

/// Entries sent this step: each node's kept coordinates times its
/// out-degree, for the state and surplus parts plus `extra_y_parts` more
/// surplus-masked vectors.
pub(crate) fn comm_entries(graph: &StepGraph, masks: &StepMasks, extra_y_parts: u64) -> u64 {
    graph
        .out_degree
        .iter()
        .enumerate()
        .map(|(j, &deg)| deg as u64 * (masks.x[j].len() as u64 + (1 + extra_y_parts) * masks.y[j].len() as u64))
        .sum()
}
