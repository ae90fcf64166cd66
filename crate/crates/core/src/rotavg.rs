//! Global rotation averaging: spanning-tree initialization, an l1-flavored
//! bootstrap, and Geman-McClure IRLS refinement in the tangent space.
//!
//! Edges carry relative rotations `R_ab` with `x_b = R_ab x_a`; consistent
//! absolute rotations satisfy `R_b = R_ab R_a`. The anchor vertex is pinned
//! to the identity, which fixes the rotational gauge.

use crate::geom::{robust_loss, so3_exp, so3_left_jacobian_inv, so3_log, RobustKernel, Rotation};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use std::collections::BTreeMap;
use thiserror::Error;

/// A measured relative rotation between two vertices, weighted by match
/// support (inlier count).
#[derive(Debug, Clone)]
pub struct RelativeRotation {
    pub a: usize,
    pub b: usize,
    pub rotation: Rotation,
    pub weight: f64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RotAvgError {
    #[error("rotation graph is disconnected ({components} components)")]
    DisconnectedGraph { components: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct RotAvgOptions {
    /// Initial Geman-McClure sigma in degrees, halved each round.
    pub sigma_init_deg: f64,
    /// Annealing floor for sigma, in degrees.
    pub sigma_min_deg: f64,
    /// Iterations of the 1/|r| reweighted bootstrap.
    pub l1_iters: usize,
    /// Gauss-Newton steps per sigma round.
    pub iters_per_round: usize,
    /// Stop when the update step norm falls below this (radians).
    pub tol: f64,
}

impl Default for RotAvgOptions {
    fn default() -> Self {
        RotAvgOptions {
            sigma_init_deg: 5.0,
            sigma_min_deg: 1.0,
            l1_iters: 10,
            iters_per_round: 15,
            tol: 1e-12,
        }
    }
}

/// Per-round diagnostics; objectives are the cost at that round's
/// weighting, one entry per accepted iterate.
#[derive(Debug, Clone)]
pub struct RotAvgTrace {
    /// NaN for the l1 bootstrap round.
    pub sigma_deg: f64,
    pub objectives: Vec<f64>,
}

fn vertices_of(edges: &[RelativeRotation]) -> Vec<usize> {
    let mut set: std::collections::BTreeSet<usize> = std::collections::BTreeSet::new();
    for e in edges {
        set.insert(e.a);
        set.insert(e.b);
    }
    set.into_iter().collect()
}

/// Maximum spanning tree (by weight, ties by lower edge index) chained from
/// the anchor: the anchor gets the identity and every other vertex the
/// product of relative rotations along its tree path.
pub fn init_rotations_mst(
    edges: &[RelativeRotation],
    anchor: usize,
) -> Result<BTreeMap<usize, Rotation>, RotAvgError> {
    let vertices = vertices_of(edges);
    let index: BTreeMap<usize, usize> =
        vertices.iter().enumerate().map(|(i, &v)| (v, i)).collect();

    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.sort_by(|&i, &j| edges[j].weight.partial_cmp(&edges[i].weight).unwrap().then(i.cmp(&j)));

    let mut uf = petgraph::unionfind::UnionFind::<usize>::new(vertices.len());
    let mut adjacency: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for &ei in &order {
        let e = &edges[ei];
        let (ia, ib) = (index[&e.a], index[&e.b]);
        if uf.union(ia, ib) {
            adjacency.entry(e.a).or_default().push((ei, e.b));
            adjacency.entry(e.b).or_default().push((ei, e.a));
        }
    }

    let roots: std::collections::BTreeSet<usize> =
        (0..vertices.len()).map(|i| uf.find(i)).collect();
    if roots.len() > 1 {
        return Err(RotAvgError::DisconnectedGraph { components: roots.len() });
    }

    let mut rotations: BTreeMap<usize, Rotation> = BTreeMap::new();
    rotations.insert(anchor, Rotation::identity());
    let mut stack = vec![anchor];
    while let Some(v) = stack.pop() {
        let r_v = rotations[&v];
        if let Some(nexts) = adjacency.get(&v) {
            for &(ei, to) in nexts {
                if rotations.contains_key(&to) {
                    continue;
                }
                let e = &edges[ei];
                let r_to = if e.a == v { e.rotation * r_v } else { e.rotation.transpose() * r_v };
                rotations.insert(to, r_to);
                stack.push(to);
            }
        }
    }
    debug_assert_eq!(rotations.len(), vertices.len());
    Ok(rotations)
}

fn edge_residual(e: &RelativeRotation, rotations: &BTreeMap<usize, Rotation>) -> Vector3<f64> {
    let r_a = &rotations[&e.a];
    let r_b = &rotations[&e.b];
    so3_log(&(e.rotation.transpose() * *r_b * r_a.transpose()))
}

/// Robust rotation-averaging objective at a given sigma (radians).
pub fn objective(
    edges: &[RelativeRotation],
    rotations: &BTreeMap<usize, Rotation>,
    sigma_rad: f64,
) -> f64 {
    let kernel = RobustKernel::geman_mcclure(sigma_rad);
    edges
        .iter()
        .map(|e| robust_loss(&kernel, edge_residual(e, rotations).norm_squared()).0)
        .sum()
}

enum Weighting {
    L1 { epsilon: f64 },
    GemanMcClure { sigma_rad: f64 },
}

impl Weighting {
    fn weight(&self, r: &Vector3<f64>) -> f64 {
        match self {
            Weighting::L1 { epsilon } => 1.0 / r.norm().max(*epsilon),
            Weighting::GemanMcClure { sigma_rad } => {
                robust_loss(&RobustKernel::geman_mcclure(*sigma_rad), r.norm_squared()).1
            }
        }
    }

    fn objective(&self, edges: &[RelativeRotation], rot: &BTreeMap<usize, Rotation>) -> f64 {
        match self {
            Weighting::L1 { .. } => edges.iter().map(|e| edge_residual(e, rot).norm()).sum(),
            Weighting::GemanMcClure { sigma_rad } => objective(edges, rot, *sigma_rad),
        }
    }
}

/// One weighted Gauss-Newton pass with backtracking; returns the accepted
/// step norm, or `None` if no step was accepted.
fn gauss_newton_step(
    edges: &[RelativeRotation],
    rotations: &mut BTreeMap<usize, Rotation>,
    anchor: usize,
    weighting: &Weighting,
) -> Option<f64> {
    let vertices: Vec<usize> = rotations.keys().copied().collect();
    let slot: BTreeMap<usize, usize> = vertices
        .iter()
        .filter(|&&v| v != anchor)
        .enumerate()
        .map(|(i, &v)| (v, i))
        .collect();
    let n = slot.len() * 3;
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut g = DVector::<f64>::zeros(n);

    for e in edges {
        let r = edge_residual(e, rotations);
        let w = weighting.weight(&r);
        // Residual linearization for right-perturbations R exp(d):
        // r(d) ~= r + Jr^-1(r) R_a (d_b - d_a), with Jr(w) = Jl(-w).
        let a_mat: Matrix3<f64> = so3_left_jacobian_inv(&-r) * rotations[&e.a].matrix();
        let blocks = [(slot.get(&e.b).copied(), 1.0f64), (slot.get(&e.a).copied(), -1.0f64)];
        for (sb, sgn_b) in blocks {
            let Some(ib) = sb else { continue };
            let jb = a_mat * sgn_b;
            let gi = jb.transpose() * r * w;
            for k in 0..3 {
                g[ib * 3 + k] += gi[k];
            }
            for (sc, sgn_c) in blocks {
                let Some(ic) = sc else { continue };
                let jc = a_mat * sgn_c;
                let hb = jb.transpose() * jc * w;
                for r0 in 0..3 {
                    for c0 in 0..3 {
                        h[(ib * 3 + r0, ic * 3 + c0)] += hb[(r0, c0)];
                    }
                }
            }
        }
    }

    // Light damping keeps the system positive definite on weak graphs.
    for d in 0..n {
        h[(d, d)] += 1e-12 + 1e-9 * h[(d, d)];
    }
    let delta = h.cholesky()?.solve(&(-g));

    let base_obj = weighting.objective(edges, rotations);
    let mut scale = 1.0;
    for _ in 0..8 {
        let mut trial = rotations.clone();
        for (&v, &i) in &slot {
            let d = Vector3::new(delta[i * 3], delta[i * 3 + 1], delta[i * 3 + 2]) * scale;
            trial.insert(v, trial[&v] * so3_exp(&d));
        }
        if weighting.objective(edges, &trial) <= base_obj {
            *rotations = trial;
            return Some(delta.norm() * scale);
        }
        scale *= 0.5;
    }
    None
}

/// Refines rotations by an l1-style bootstrap followed by Geman-McClure
/// IRLS with sigma annealing. The anchor stays at identity; the best
/// iterate is returned even when iteration stalls.
pub fn refine_rotations_irls(
    edges: &[RelativeRotation],
    init: &BTreeMap<usize, Rotation>,
    anchor: usize,
    opts: &RotAvgOptions,
) -> (BTreeMap<usize, Rotation>, Vec<RotAvgTrace>) {
    let mut rotations = init.clone();
    let mut traces = Vec::new();

    // Phase 1: reweighted least squares approximating the l1 cost.
    let l1 = Weighting::L1 { epsilon: 1e-6 };
    let mut trace =
        RotAvgTrace { sigma_deg: f64::NAN, objectives: vec![l1.objective(edges, &rotations)] };
    for _ in 0..opts.l1_iters {
        match gauss_newton_step(edges, &mut rotations, anchor, &l1) {
            Some(step) => {
                trace.objectives.push(l1.objective(edges, &rotations));
                if step < opts.tol {
                    break;
                }
            }
            None => break,
        }
    }
    traces.push(trace);

    // Phase 2: Geman-McClure IRLS with sigma annealing.
    let mut sigma_deg = opts.sigma_init_deg;
    loop {
        let weighting = Weighting::GemanMcClure { sigma_rad: sigma_deg.to_radians() };
        let mut trace =
            RotAvgTrace { sigma_deg, objectives: vec![weighting.objective(edges, &rotations)] };
        for _ in 0..opts.iters_per_round {
            match gauss_newton_step(edges, &mut rotations, anchor, &weighting) {
                Some(step) => {
                    trace.objectives.push(weighting.objective(edges, &rotations));
                    if step < opts.tol {
                        break;
                    }
                }
                None => break,
            }
        }
        traces.push(trace);
        if sigma_deg <= opts.sigma_min_deg {
            break;
        }
        sigma_deg = (sigma_deg * 0.5).max(opts.sigma_min_deg);
    }

    (rotations, traces)
}

/// Final Geman-McClure IRLS weight of each edge at the given sigma.
pub fn edge_weights(
    edges: &[RelativeRotation],
    rotations: &BTreeMap<usize, Rotation>,
    sigma_deg: f64,
) -> Vec<f64> {
    let kernel = RobustKernel::geman_mcclure(sigma_deg.to_radians());
    edges
        .iter()
        .map(|e| robust_loss(&kernel, edge_residual(e, rotations).norm_squared()).1)
        .collect()
}
