use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    Huber,
    GemanMcClure,
    Cauchy,
}

/// Robust loss applied to squared residuals.
///
/// `scale` is in the residual's units: the Huber threshold delta, the
/// Geman-McClure sigma, or the Cauchy scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustKernel {
    pub kind: KernelKind,
    pub scale: f64,
}

impl RobustKernel {
    pub fn huber(delta: f64) -> Self {
        RobustKernel { kind: KernelKind::Huber, scale: delta }
    }

    pub fn geman_mcclure(sigma: f64) -> Self {
        RobustKernel { kind: KernelKind::GemanMcClure, scale: sigma }
    }

    pub fn cauchy(scale: f64) -> Self {
        RobustKernel { kind: KernelKind::Cauchy, scale }
    }

    pub fn evaluate(&self, squared_residual: f64) -> (f64, f64) {
        robust_loss(self, squared_residual)
    }
}

/// Evaluates a robust kernel on a squared residual `s = e^2`.
///
/// Returns `(value, weight)` where `weight` is the IRLS weight
/// `drho/ds` normalized to 1 at zero residual, so it always lies in (0, 1].
///
/// * Huber(delta): `rho(s) = s` for `s <= delta^2`, else
///   `2 delta sqrt(s) - delta^2`.
/// * Geman-McClure(sigma): `rho(s) = s / (s + sigma^2)`.
/// * Cauchy(c): `rho(s) = c^2 ln(1 + s / c^2)`.
pub fn robust_loss(kernel: &RobustKernel, squared_residual: f64) -> (f64, f64) {
    debug_assert!(squared_residual >= 0.0);
    debug_assert!(kernel.scale > 0.0);
    let s = squared_residual;
    let scale_sq = kernel.scale * kernel.scale;
    match kernel.kind {
        KernelKind::Huber => {
            if s <= scale_sq {
                (s, 1.0)
            } else {
                let e = s.sqrt();
                (2.0 * kernel.scale * e - scale_sq, kernel.scale / e)
            }
        }
        KernelKind::GemanMcClure => {
            let d = s + scale_sq;
            (s / d, scale_sq * scale_sq / (d * d))
        }
        KernelKind::Cauchy => (scale_sq * (1.0 + s / scale_sq).ln(), scale_sq / (scale_sq + s)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geman_mcclure_half_at_sigma() {
        let (v, _) = robust_loss(&RobustKernel::geman_mcclure(0.7), 0.49);
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn huber_quadratic_region() {
        let (v, w) = robust_loss(&RobustKernel::huber(1.0), 0.25);
        assert_eq!(v, 0.25);
        assert_eq!(w, 1.0);
    }

    #[test]
    fn huber_linear_region() {
        // delta = 1, |r| = 2: rho = 2 * 1 * 2 - 1 = 3.
        let (v, w) = robust_loss(&RobustKernel::huber(1.0), 4.0);
        assert!((v - 3.0).abs() < 1e-15);
        assert!((w - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kernels_vanish_at_zero_and_are_monotone() {
        for kernel in [
            RobustKernel::huber(0.5),
            RobustKernel::geman_mcclure(2.0),
            RobustKernel::cauchy(1.5),
        ] {
            assert_eq!(robust_loss(&kernel, 0.0).0, 0.0);
            let mut prev = 0.0;
            for i in 1..200 {
                let s = i as f64 * 0.1;
                let (v, w) = robust_loss(&kernel, s);
                assert!(v >= prev, "{kernel:?} not monotone at {s}");
                assert!(w > 0.0 && w <= 1.0, "{kernel:?} weight {w} out of range");
                prev = v;
            }
        }
    }

    #[test]
    fn geman_mcclure_below_one_and_weights_decay() {
        let gm = RobustKernel::geman_mcclure(1.0);
        let cauchy = RobustKernel::cauchy(1.0);
        for s in [0.1, 1.0, 100.0, 1e6, 1e12] {
            assert!(robust_loss(&gm, s).0 < 1.0);
        }
        assert!(robust_loss(&gm, 1e12).1 < 1e-10);
        assert!(robust_loss(&cauchy, 1e12).1 < 1e-10);
    }
}
