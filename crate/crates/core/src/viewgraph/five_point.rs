//! Minimal five-point relative pose: essential matrix candidates from five
//! normalized correspondences.
//!
//! Follows the classic reduction: the 4D null space of the epipolar
//! constraints gives `E = x E1 + y E2 + z E3 + E4`; the determinant and
//! trace constraints yield ten cubics whose Gauss-Jordan reduction produces
//! a 3x3 polynomial system in `z` with a degree-10 determinant. Real roots
//! come from the eigenvalues of the companion matrix.

use nalgebra::{DMatrix, Matrix3, Vector3};

/// Degree-1 polynomial in (x, y, z): coefficients [x, y, z, 1].
type Poly1 = [f64; 4];
/// Degree-2 monomials: [x2, xy, y2, xz, yz, z2, x, y, z, 1].
type Poly2 = [f64; 10];
/// Degree-3 monomials, ordered so the first ten have degree >= 2 in (x, y):
/// [x3, y3, x2y, xy2, x2z, x2, y2z, y2, xyz, xy,
///  xz2, xz, x, yz2, yz, y, z3, z2, z, 1].
type Poly3 = [f64; 20];

mod m2 {
    pub const X2: usize = 0;
    pub const XY: usize = 1;
    pub const Y2: usize = 2;
    pub const XZ: usize = 3;
    pub const YZ: usize = 4;
    pub const Z2: usize = 5;
    pub const X: usize = 6;
    pub const Y: usize = 7;
    pub const Z: usize = 8;
    pub const ONE: usize = 9;
}

mod m3 {
    pub const X3: usize = 0;
    pub const Y3: usize = 1;
    pub const X2Y: usize = 2;
    pub const XY2: usize = 3;
    pub const X2Z: usize = 4;
    pub const X2: usize = 5;
    pub const Y2Z: usize = 6;
    pub const Y2: usize = 7;
    pub const XYZ: usize = 8;
    pub const XY: usize = 9;
    pub const XZ2: usize = 10;
    pub const XZ: usize = 11;
    pub const X: usize = 12;
    pub const YZ2: usize = 13;
    pub const YZ: usize = 14;
    pub const Y: usize = 15;
    pub const Z3: usize = 16;
    pub const Z2: usize = 17;
    pub const Z: usize = 18;
    pub const ONE: usize = 19;
}

fn o1(a: &Poly1, b: &Poly1) -> Poly2 {
    let mut p = [0.0; 10];
    p[m2::X2] = a[0] * b[0];
    p[m2::XY] = a[0] * b[1] + a[1] * b[0];
    p[m2::Y2] = a[1] * b[1];
    p[m2::XZ] = a[0] * b[2] + a[2] * b[0];
    p[m2::YZ] = a[1] * b[2] + a[2] * b[1];
    p[m2::Z2] = a[2] * b[2];
    p[m2::X] = a[0] * b[3] + a[3] * b[0];
    p[m2::Y] = a[1] * b[3] + a[3] * b[1];
    p[m2::Z] = a[2] * b[3] + a[3] * b[2];
    p[m2::ONE] = a[3] * b[3];
    p
}

fn o2(p: &Poly2, b: &Poly1) -> Poly3 {
    let mut q = [0.0; 20];
    // (x, y, z, 1) times each degree-2 monomial.
    let add = |q: &mut Poly3, idx: usize, v: f64| q[idx] += v;
    let terms: [(usize, [usize; 4]); 10] = [
        (m2::X2, [m3::X3, m3::X2Y, m3::X2Z, m3::X2]),
        (m2::XY, [m3::X2Y, m3::XY2, m3::XYZ, m3::XY]),
        (m2::Y2, [m3::XY2, m3::Y3, m3::Y2Z, m3::Y2]),
        (m2::XZ, [m3::X2Z, m3::XYZ, m3::XZ2, m3::XZ]),
        (m2::YZ, [m3::XYZ, m3::Y2Z, m3::YZ2, m3::YZ]),
        (m2::Z2, [m3::XZ2, m3::YZ2, m3::Z3, m3::Z2]),
        (m2::X, [m3::X2, m3::XY, m3::XZ, m3::X]),
        (m2::Y, [m3::XY, m3::Y2, m3::YZ, m3::Y]),
        (m2::Z, [m3::XZ, m3::YZ, m3::Z2, m3::Z]),
        (m2::ONE, [m3::X, m3::Y, m3::Z, m3::ONE]),
    ];
    for (src, dst) in terms {
        for k in 0..4 {
            add(&mut q, dst[k], p[src] * b[k]);
        }
    }
    q
}

fn add3(a: &Poly3, b: &Poly3) -> Poly3 {
    let mut out = [0.0; 20];
    for i in 0..20 {
        out[i] = a[i] + b[i];
    }
    out
}

fn sub3(a: &Poly3, b: &Poly3) -> Poly3 {
    let mut out = [0.0; 20];
    for i in 0..20 {
        out[i] = a[i] - b[i];
    }
    out
}

fn scale3(a: &Poly3, s: f64) -> Poly3 {
    let mut out = [0.0; 20];
    for i in 0..20 {
        out[i] = a[i] * s;
    }
    out
}

/// Null space (4 columns) of the 5x9 epipolar constraint matrix, via SVD of
/// the zero-padded square matrix (keeps the full V factor).
fn epipolar_null_space(x1: &[Vector3<f64>; 5], x2: &[Vector3<f64>; 5]) -> Option<[Matrix3<f64>; 4]> {
    let mut a = DMatrix::<f64>::zeros(9, 9);
    for (r, (p1, p2)) in x1.iter().zip(x2.iter()).enumerate() {
        for i in 0..3 {
            for j in 0..3 {
                a[(r, i * 3 + j)] = p2[i] * p1[j];
            }
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let mut basis = [Matrix3::zeros(); 4];
    // Rows of V^T sorted by descending singular value; the last four span
    // the null space (singular values 5..9 are exactly zero by padding).
    for (k, e) in basis.iter_mut().enumerate() {
        let row = v_t.row(5 + k);
        *e = Matrix3::new(
            row[0], row[1], row[2], row[3], row[4], row[5], row[6], row[7], row[8],
        );
    }
    Some(basis)
}

/// The ten cubic constraints (det E = 0 and the trace constraints) as rows
/// of a 10x20 coefficient matrix.
fn constraint_matrix(basis: &[Matrix3<f64>; 4]) -> [[f64; 20]; 10] {
    // E(i, j) as a degree-1 polynomial.
    let e = |i: usize, j: usize| -> Poly1 {
        [basis[0][(i, j)], basis[1][(i, j)], basis[2][(i, j)], basis[3][(i, j)]]
    };

    let mut rows = [[0.0; 20]; 10];

    // det(E) = e00 (e11 e22 - e12 e21) - e01 (e10 e22 - e12 e20)
    //        + e02 (e10 e21 - e11 e20).
    let minor = |a: Poly1, b: Poly1, c: Poly1, d: Poly1| {
        let mut p = o1(&a, &b);
        let q = o1(&c, &d);
        for i in 0..10 {
            p[i] -= q[i];
        }
        p
    };
    let det = add3(
        &sub3(
            &o2(&minor(e(1, 1), e(2, 2), e(1, 2), e(2, 1)), &e(0, 0)),
            &o2(&minor(e(1, 0), e(2, 2), e(1, 2), e(2, 0)), &e(0, 1)),
        ),
        &o2(&minor(e(1, 0), e(2, 1), e(1, 1), e(2, 0)), &e(0, 2)),
    );
    rows[0] = det;

    // Trace constraints: 2 E E^T E - tr(E E^T) E = 0.
    // S = E E^T (symmetric, degree 2).
    let mut s = [[ [0.0f64; 10]; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = [0.0; 10];
            for k in 0..3 {
                let p = o1(&e(i, k), &e(j, k));
                for t in 0..10 {
                    acc[t] += p[t];
                }
            }
            s[i][j] = acc;
        }
    }
    let mut trace = [0.0; 10];
    for t in 0..10 {
        trace[t] = s[0][0][t] + s[1][1][t] + s[2][2][t];
    }

    for i in 0..3 {
        for j in 0..3 {
            // (2 S E)_ij - trace * E_ij
            let mut acc = [0.0f64; 20];
            for k in 0..3 {
                let p = o2(&s[i][k], &e(k, j));
                acc = add3(&acc, &scale3(&p, 2.0));
            }
            let tr_e = o2(&trace, &e(i, j));
            acc = sub3(&acc, &tr_e);
            rows[1 + i * 3 + j] = acc;
        }
    }
    rows
}

/// Gauss-Jordan elimination of the first ten columns with partial pivoting.
fn reduce(rows: &mut [[f64; 20]; 10]) -> bool {
    for col in 0..10 {
        let mut pivot = col;
        for r in col + 1..10 {
            if rows[r][col].abs() > rows[pivot][col].abs() {
                pivot = r;
            }
        }
        if rows[pivot][col].abs() < 1e-12 {
            return false;
        }
        rows.swap(col, pivot);
        let inv = 1.0 / rows[col][col];
        for c in col..20 {
            rows[col][c] *= inv;
        }
        for r in 0..10 {
            if r != col && rows[r][col] != 0.0 {
                let f = rows[r][col];
                for c in col..20 {
                    rows[r][c] -= f * rows[col][c];
                }
            }
        }
    }
    true
}

/// Polynomials in z, ascending coefficients.
fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

fn poly_sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    let mut out = vec![0.0; n];
    for (i, v) in out.iter_mut().enumerate() {
        *v = a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0);
    }
    out
}

fn poly_shift_z(a: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + 1];
    out[1..].copy_from_slice(a);
    out
}

fn poly_eval(a: &[f64], z: f64) -> f64 {
    a.iter().rev().fold(0.0, |acc, &c| acc * z + c)
}

/// Real roots via companion-matrix eigenvalues.
fn real_roots(poly: &[f64]) -> Vec<f64> {
    let mut coeffs = poly.to_vec();
    // Trim negligible leading coefficients.
    let max_c = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if max_c == 0.0 {
        return Vec::new();
    }
    while coeffs.len() > 1 && coeffs.last().unwrap().abs() < 1e-13 * max_c {
        coeffs.pop();
    }
    let n = coeffs.len() - 1;
    if n == 0 {
        return Vec::new();
    }
    let lead = coeffs[n];
    let mut companion = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        companion[(i, n - 1)] = -coeffs[i] / lead;
        if i + 1 < n {
            companion[(i + 1, i)] = 1.0;
        }
    }
    companion
        .complex_eigenvalues()
        .iter()
        .filter(|c| c.im.abs() < 1e-8 * (1.0 + c.re.abs()))
        .map(|c| c.re)
        .collect()
}

/// Essential-matrix candidates for five normalized correspondences
/// (`x2^T E x1 = 0`). Returns up to ten candidates, Frobenius-normalized.
pub fn five_point_candidates(
    x1: &[Vector3<f64>; 5],
    x2: &[Vector3<f64>; 5],
) -> Vec<Matrix3<f64>> {
    let Some(basis) = epipolar_null_space(x1, x2) else {
        return Vec::new();
    };
    let mut rows = constraint_matrix(&basis);
    if !reduce(&mut rows) {
        return Vec::new();
    }

    // Reduced row for monomial `m` expresses m = x p(z) + y q(z) + r(z).
    let parts = |row: &[f64; 20]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        // Ascending in z.
        let p = vec![-row[m3::X], -row[m3::XZ], -row[m3::XZ2]];
        let q = vec![-row[m3::Y], -row[m3::YZ], -row[m3::YZ2]];
        let r = vec![-row[m3::ONE], -row[m3::Z], -row[m3::Z2], -row[m3::Z3]];
        (p, q, r)
    };

    // Rows after reduction are identified by their leading monomial, which
    // matches the column order of the first ten monomials.
    let (p_x2, q_x2, r_x2) = parts(&rows[m3::X2]);
    let (p_x2z, q_x2z, r_x2z) = parts(&rows[m3::X2Z]);
    let (p_y2, q_y2, r_y2) = parts(&rows[m3::Y2]);
    let (p_y2z, q_y2z, r_y2z) = parts(&rows[m3::Y2Z]);
    let (p_xy, q_xy, r_xy) = parts(&rows[m3::XY]);
    let (p_xyz, q_xyz, r_xyz) = parts(&rows[m3::XYZ]);

    // z * row(m) - row(m z) eliminates the leading monomials, leaving a 3x3
    // homogeneous system in (x, y, 1) with z-polynomial entries.
    let b: [[Vec<f64>; 3]; 3] = [
        [
            poly_sub(&poly_shift_z(&p_x2), &p_x2z),
            poly_sub(&poly_shift_z(&q_x2), &q_x2z),
            poly_sub(&poly_shift_z(&r_x2), &r_x2z),
        ],
        [
            poly_sub(&poly_shift_z(&p_y2), &p_y2z),
            poly_sub(&poly_shift_z(&q_y2), &q_y2z),
            poly_sub(&poly_shift_z(&r_y2), &r_y2z),
        ],
        [
            poly_sub(&poly_shift_z(&p_xy), &p_xyz),
            poly_sub(&poly_shift_z(&q_xy), &q_xyz),
            poly_sub(&poly_shift_z(&r_xy), &r_xyz),
        ],
    ];

    // det(B), degree 10 in z.
    let minor = |r0: usize, r1: usize, c0: usize, c1: usize| {
        poly_sub(&poly_mul(&b[r0][c0], &b[r1][c1]), &poly_mul(&b[r0][c1], &b[r1][c0]))
    };
    let det = poly_sub(
        &poly_mul(&b[0][0], &minor(1, 2, 1, 2)),
        &poly_sub(&poly_mul(&b[0][1], &minor(1, 2, 0, 2)), &poly_mul(&b[0][2], &minor(1, 2, 0, 1))),
    );

    let mut out = Vec::new();
    for z in real_roots(&det) {
        // Solve B(z) [x, y, 1]^T = 0 from the two best-conditioned rows.
        let bz: Vec<[f64; 3]> = b
            .iter()
            .map(|row| {
                [poly_eval(&row[0], z), poly_eval(&row[1], z), poly_eval(&row[2], z)]
            })
            .collect();
        let mut best: Option<(f64, f64, f64)> = None;
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let det2 = bz[i][0] * bz[j][1] - bz[i][1] * bz[j][0];
            if best.as_ref().is_none_or(|(d, _, _)| det2.abs() > *d) {
                if det2.abs() > 1e-14 {
                    let x = (-bz[i][2] * bz[j][1] + bz[j][2] * bz[i][1]) / det2;
                    let y = (-bz[i][0] * bz[j][2] + bz[j][0] * bz[i][2]) / det2;
                    best = Some((det2.abs(), x, y));
                }
            }
        }
        let Some((_, x, y)) = best else { continue };
        let e = basis[0] * x + basis[1] * y + basis[2] * z + basis[3];
        let n = e.norm();
        if n > 1e-12 {
            out.push(e / n);
        }
    }
    out
}
