//! Block-sparse normal equations for camera/point problems.
//!
//! Observations couple one 3D point with one or more reduced-side blocks
//! (camera poses, optionally a shared intrinsic). Point blocks are
//! eliminated analytically via the Schur complement; the reduced camera
//! system is solved by dense Cholesky, switching to Jacobi-preconditioned
//! conjugate gradients beyond ~300 cameras' worth of unknowns. A dense
//! full-system route is kept as an independent reference: both routes must
//! produce the same step to solver precision.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct NormalSystem {
    block_dofs: Vec<usize>,
    offsets: Vec<usize>,
    total_dof: usize,
    n_points: usize,
    /// Direct reduced-side term `J_c^T W J_c` (dense over all blocks).
    a: DMatrix<f64>,
    g_c: DVector<f64>,
    /// Per-point 3x3 blocks `J_p^T W J_p` and gradients.
    c: Vec<Matrix3<f64>>,
    g_p: Vec<Vector3<f64>>,
    /// Per-point coupling: block id -> `J_c^T W J_p` (dof x 3).
    b: Vec<BTreeMap<usize, DMatrix<f64>>>,
}

/// Solution step for the reduced blocks and the points.
#[derive(Debug, Clone)]
pub struct Step {
    pub reduced: DVector<f64>,
    pub points: Vec<Vector3<f64>>,
}

impl NormalSystem {
    pub fn new(block_dofs: Vec<usize>, n_points: usize) -> Self {
        let mut offsets = Vec::with_capacity(block_dofs.len());
        let mut total = 0;
        for &d in &block_dofs {
            offsets.push(total);
            total += d;
        }
        NormalSystem {
            block_dofs,
            offsets,
            total_dof: total,
            n_points,
            a: DMatrix::zeros(total, total),
            g_c: DVector::zeros(total),
            c: vec![Matrix3::zeros(); n_points],
            g_p: vec![Vector3::zeros(); n_points],
            b: vec![BTreeMap::new(); n_points],
        }
    }

    pub fn total_reduced_dof(&self) -> usize {
        self.total_dof
    }

    pub fn block_offset(&self, block: usize) -> usize {
        self.offsets[block]
    }

    pub fn block_dof(&self, block: usize) -> usize {
        self.block_dofs[block]
    }

    /// Accumulates one residual block. `blocks` pairs reduced-block ids
    /// with their Jacobians (residual_dim x block_dof); `point` optionally
    /// adds a point Jacobian (residual_dim x 3).
    pub fn add_observation(
        &mut self,
        blocks: &[(usize, DMatrix<f64>)],
        point: Option<(usize, DMatrix<f64>)>,
        residual: &DVector<f64>,
        weight: f64,
    ) {
        for (bi, ji) in blocks {
            let off_i = self.offsets[*bi];
            let gi = ji.transpose() * residual * weight;
            for k in 0..self.block_dofs[*bi] {
                self.g_c[off_i + k] += gi[k];
            }
            for (bj, jj) in blocks {
                let off_j = self.offsets[*bj];
                let hij = ji.transpose() * jj * weight;
                for r in 0..self.block_dofs[*bi] {
                    for c0 in 0..self.block_dofs[*bj] {
                        self.a[(off_i + r, off_j + c0)] += hij[(r, c0)];
                    }
                }
            }
        }
        if let Some((p, jp)) = point {
            let jp_t_r = jp.transpose() * residual * weight;
            for k in 0..3 {
                self.g_p[p][k] += jp_t_r[k];
            }
            let cpp = jp.transpose() * &jp * weight;
            for r in 0..3 {
                for c0 in 0..3 {
                    self.c[p][(r, c0)] += cpp[(r, c0)];
                }
            }
            for (bi, ji) in blocks {
                let bip = ji.transpose() * &jp * weight;
                let entry = self.b[p]
                    .entry(*bi)
                    .or_insert_with(|| DMatrix::zeros(self.block_dofs[*bi], 3));
                *entry += bip;
            }
        }
    }

    /// Merges another system assembled over a disjoint chunk of
    /// observations (same layout).
    pub fn merge(&mut self, other: NormalSystem) {
        self.a += other.a;
        self.g_c += other.g_c;
        for p in 0..self.n_points {
            self.c[p] += other.c[p];
            self.g_p[p] += other.g_p[p];
        }
        for (p, blocks) in other.b.into_iter().enumerate() {
            for (bi, m) in blocks {
                let entry = self.b[p]
                    .entry(bi)
                    .or_insert_with(|| DMatrix::zeros(self.block_dofs[bi], 3));
                *entry += m;
            }
        }
    }

    fn damped_point_inverses(&self, lambda: f64) -> Option<Vec<Matrix3<f64>>> {
        let mut out = Vec::with_capacity(self.n_points);
        for p in 0..self.n_points {
            let mut cp = self.c[p];
            for d in 0..3 {
                cp[(d, d)] += lambda * self.c[p][(d, d)].max(1e-12);
            }
            out.push(cp.try_inverse()?);
        }
        Some(out)
    }

    fn damped_a(&self, lambda: f64) -> DMatrix<f64> {
        let mut a = self.a.clone();
        for d in 0..self.total_dof {
            a[(d, d)] += lambda * self.a[(d, d)].max(1e-12);
        }
        a
    }

    /// Schur-complement step: eliminates points, solves the reduced system,
    /// back-substitutes. Returns `None` when the reduced system is not
    /// positive definite (or a point block is singular).
    pub fn solve_schur(&self, lambda: f64) -> Option<Step> {
        let c_inv = self.damped_point_inverses(lambda)?;
        let mut s = self.damped_a(lambda);
        let mut rhs = -self.g_c.clone();

        for p in 0..self.n_points {
            let ci = &c_inv[p];
            let blocks: Vec<(&usize, &DMatrix<f64>)> = self.b[p].iter().collect();
            for (bi, bmat_i) in &blocks {
                let off_i = self.offsets[**bi];
                let bi_ci = *bmat_i * ci;
                // rhs_i += B_i C^-1 g_p
                let add = &bi_ci * self.g_p[p];
                for k in 0..self.block_dofs[**bi] {
                    rhs[off_i + k] += add[k];
                }
                for (bj, bmat_j) in &blocks {
                    let off_j = self.offsets[**bj];
                    let sij = &bi_ci * bmat_j.transpose();
                    for r in 0..self.block_dofs[**bi] {
                        for c0 in 0..self.block_dofs[**bj] {
                            s[(off_i + r, off_j + c0)] -= sij[(r, c0)];
                        }
                    }
                }
            }
        }

        let reduced = if self.total_dof <= 1800 {
            s.clone().cholesky()?.solve(&rhs)
        } else {
            pcg(&s, &rhs)?
        };

        let mut points = Vec::with_capacity(self.n_points);
        for p in 0..self.n_points {
            // C dp = -g_p - B^T dc
            let mut rhs_p = -self.g_p[p];
            for (bi, bmat) in &self.b[p] {
                let off = self.offsets[*bi];
                let dc = reduced.rows(off, self.block_dofs[*bi]);
                let contrib = bmat.transpose() * dc;
                for k in 0..3 {
                    rhs_p[k] -= contrib[k];
                }
            }
            points.push(c_inv[p] * rhs_p);
        }
        Some(Step { reduced, points })
    }

    /// Dense reference route: assembles the full (cameras + points) system
    /// and solves it in one factorization. Exists to cross-check the Schur
    /// route; the two must agree to solver precision.
    pub fn solve_dense(&self, lambda: f64) -> Option<Step> {
        let n = self.total_dof + 3 * self.n_points;
        let mut h = DMatrix::<f64>::zeros(n, n);
        let mut g = DVector::<f64>::zeros(n);
        h.view_mut((0, 0), (self.total_dof, self.total_dof))
            .copy_from(&self.damped_a(lambda));
        for k in 0..self.total_dof {
            g[k] = self.g_c[k];
        }
        for p in 0..self.n_points {
            let off = self.total_dof + 3 * p;
            let mut cp = self.c[p];
            for d in 0..3 {
                cp[(d, d)] += lambda * self.c[p][(d, d)].max(1e-12);
            }
            for r in 0..3 {
                g[off + r] = self.g_p[p][r];
                for c0 in 0..3 {
                    h[(off + r, off + c0)] = cp[(r, c0)];
                }
            }
            for (bi, bmat) in &self.b[p] {
                let boff = self.offsets[*bi];
                for r in 0..self.block_dofs[*bi] {
                    for c0 in 0..3 {
                        h[(boff + r, off + c0)] = bmat[(r, c0)];
                        h[(off + c0, boff + r)] = bmat[(r, c0)];
                    }
                }
            }
        }
        let delta = h.cholesky()?.solve(&(-g));
        let reduced = delta.rows(0, self.total_dof).into_owned();
        let points = (0..self.n_points)
            .map(|p| {
                let off = self.total_dof + 3 * p;
                Vector3::new(delta[off], delta[off + 1], delta[off + 2])
            })
            .collect();
        Some(Step { reduced, points })
    }
}

/// Jacobi-preconditioned conjugate gradients on an explicit SPD matrix.
fn pcg(s: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let n = rhs.len();
    let m_inv: DVector<f64> = (0..n)
        .map(|i| {
            let d = s[(i, i)];
            if d.abs() < 1e-300 {
                return 0.0;
            }
            1.0 / d
        })
        .collect::<Vec<f64>>()
        .into();
    let mut x = DVector::<f64>::zeros(n);
    let mut r = rhs.clone();
    let mut z = r.component_mul(&m_inv);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let tol = 1e-12 * rhs.norm().max(1e-300);
    for _ in 0..10 * n {
        if r.norm() < tol {
            break;
        }
        let sp = s * &p;
        let denom = p.dot(&sp);
        if denom <= 0.0 {
            return None; // not positive definite
        }
        let alpha = rz / denom;
        x += &p * alpha;
        r -= sp * alpha;
        z = r.component_mul(&m_inv);
        let rz_new = r.dot(&z);
        p = &z + &p * (rz_new / rz.max(1e-300));
        rz = rz_new;
    }
    Some(x)
}
