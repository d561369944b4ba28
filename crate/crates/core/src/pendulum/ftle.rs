//! Finite-time Lyapunov exponent by the two-trajectory Benettin method.

use crate::error::{Error, Result};

use super::dopri::{integrate_sampled, Tolerances};
use super::{derivative, PendulumParams, PendulumState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FtleConfig {
    pub horizon: f64,
    pub delta0: f64,
    pub renorm_interval: f64,
    pub tolerances: Tolerances,
}

impl Default for FtleConfig {
    fn default() -> Self {
        Self {
            horizon: 10.0,
            delta0: 1e-8,
            renorm_interval: 0.1,
            tolerances: Tolerances::default(),
        }
    }
}

fn distance<const N: usize>(a: &[f64; N], b: &[f64; N]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Benettin renormalization loop. `advance` evolves a reference and a
/// perturbed state jointly over one interval of length `interval`. Returns
/// `(1/T) Σ ln(d_i / δ0)` with `T = n · interval`.
pub fn benettin<const N: usize, F>(
    mut advance: F,
    x0: [f64; N],
    direction: [f64; N],
    delta0: f64,
    horizon: f64,
    interval: f64,
) -> Result<f64>
where
    F: FnMut(&[f64; N], &[f64; N], f64) -> Result<([f64; N], [f64; N])>,
{
    if !(delta0 > 0.0) || !(interval > 0.0) || !(horizon >= interval) {
        return Err(Error::invalid(
            "FTLE needs delta0 > 0 and horizon >= renormalization interval > 0",
        ));
    }
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::invalid("perturbation direction must be non-zero"));
    }
    let steps = (horizon / interval).round() as usize;
    let mut x = x0;
    let mut xp = x0;
    for i in 0..N {
        xp[i] += delta0 * direction[i] / norm;
    }
    let mut sum = 0.0;
    for _ in 0..steps {
        let (nx, nxp) = advance(&x, &xp, interval)?;
        let d = distance(&nx, &nxp);
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::domain(format!(
                "trajectory separation underflow (d = {d:e})"
            )));
        }
        sum += (d / delta0).ln();
        for i in 0..N {
            xp[i] = nx[i] + (nxp[i] - nx[i]) * delta0 / d;
        }
        x = nx;
    }
    Ok(sum / (steps as f64 * interval))
}

/// FTLE (1/s) of a pendulum trajectory. The reference and perturbed states
/// share one integrator so their step sequences coincide.
pub fn ftle(params: &PendulumParams, initial: PendulumState, cfg: &FtleConfig) -> Result<f64> {
    params.validate()?;
    let advance = |x: &[f64; 4], xp: &[f64; 4], dt: f64| {
        let mut joint = [0.0; 8];
        joint[..4].copy_from_slice(x);
        joint[4..].copy_from_slice(xp);
        let (end, _) = integrate_sampled(
            |_t, y: &[f64; 8]| {
                let a = derivative(&[y[0], y[1], y[2], y[3]], params);
                let b = derivative(&[y[4], y[5], y[6], y[7]], params);
                [a[0], a[1], a[2], a[3], b[0], b[1], b[2], b[3]]
            },
            0.0,
            joint,
            dt,
            0.0,
            &cfg.tolerances,
            |_, _| {},
        )?;
        Ok((
            [end[0], end[1], end[2], end[3]],
            [end[4], end[5], end[6], end[7]],
        ))
    };
    benettin(
        advance,
        initial.to_array(),
        [1.0; 4],
        cfg.delta0,
        cfg.horizon,
        cfg.renorm_interval,
    )
}
