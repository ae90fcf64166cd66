use super::rotation::Rotation;
use nalgebra::{Matrix3, Vector3};

/// Similarity transform `x -> scale * R x + t`.
#[derive(Debug, Clone, Copy)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(x) * self.scale + self.translation
    }
}

/// Closed-form absolute orientation (Umeyama): the similarity minimizing
/// `sum |to_i - (s R from_i + t)|^2`. Returns `None` for degenerate inputs
/// (fewer than 3 points or a collinear configuration, where the rotation is
/// not determined).
pub fn umeyama_alignment(
    from: &[Vector3<f64>],
    to: &[Vector3<f64>],
    with_scale: bool,
) -> Option<Similarity> {
    assert_eq!(from.len(), to.len());
    let n = from.len();
    if n < 3 {
        return None;
    }
    let nf = n as f64;
    let mu_from = from.iter().sum::<Vector3<f64>>() / nf;
    let mu_to = to.iter().sum::<Vector3<f64>>() / nf;

    let mut sigma = Matrix3::<f64>::zeros();
    let mut var_from = 0.0;
    for (f, t) in from.iter().zip(to) {
        let df = f - mu_from;
        let dt = t - mu_to;
        sigma += dt * df.transpose() / nf;
        var_from += df.norm_squared() / nf;
    }

    let svd = sigma.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let d = svd.singular_values;
    // Collinear points: second singular value vanishes.
    if d[1] <= 1e-12 * d[0].max(1e-300) {
        return None;
    }
    let mut s_fix = Vector3::new(1.0, 1.0, 1.0);
    if (u * v_t).determinant() < 0.0 {
        s_fix[2] = -1.0;
    }
    let r = u * Matrix3::from_diagonal(&s_fix) * v_t;
    let scale = if with_scale {
        (d[0] * s_fix[0] + d[1] * s_fix[1] + d[2] * s_fix[2]) / var_from.max(1e-300)
    } else {
        1.0
    };
    let rotation = Rotation::nearest(&r);
    let translation = mu_to - rotation.apply(&mu_from) * scale;
    Some(Similarity { scale, rotation, translation })
}
