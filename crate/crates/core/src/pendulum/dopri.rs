//! Adaptive Dormand–Prince 5(4) integrator with dense output.
//!
//! Coefficients and the continuous extension follow Hairer & Wanner's
//! `DOPRI5`. Steps are taken with FSAL reuse; solution values at requested
//! sample times are interpolated from the 4th-order dense output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-9,
            max_step: 1e-3,
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn axpy<const N: usize>(y: &[f64; N], terms: &[(f64, &[f64; N])], h: f64) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        let ch = c * h;
        for i in 0..N {
            out[i] += ch * k[i];
        }
    }
    out
}

/// Integration statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
}

/// Integrates `dy/dt = f(t, y)` from `t0` to `t1` and calls `sample` at
/// `t0, t0 + dt, …` up to and including `t1` (within rounding). Returns the
/// state at `t1`.
pub fn integrate_sampled<const N: usize, F, S>(
    f: F,
    t0: f64,
    y0: [f64; N],
    t1: f64,
    dt: f64,
    tol: &Tolerances,
    mut sample: S,
) -> Result<([f64; N], StepStats)>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
    S: FnMut(f64, &[f64; N]),
{
    if t1 < t0 {
        return Err(Error::invalid("integration end precedes start"));
    }
    let n_samples = if dt > 0.0 {
        ((t1 - t0) / dt + 1e-9).floor() as usize + 1
    } else {
        0
    };
    let mut next_sample = 0usize;
    let sample_time = |i: usize| t0 + i as f64 * dt;

    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    let mut stats = StepStats::default();
    if n_samples > 0 {
        sample(t0, &y0);
        next_sample = 1;
    }
    let mut h = initial_step(&f, t0, &y0, &k1, tol)
        .min(tol.max_step)
        .min(t1 - t0);

    while t1 - t > 1e-14 * t1.abs().max(1.0) {
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::Integration {
                t,
                reason: format!("step size underflow (h = {h:e})"),
            });
        }
        if t + h > t1 {
            h = t1 - t;
        }
        let k2 = f(t + C2 * h, &axpy(&y, &[(A21, &k1)], h));
        let k3 = f(t + C3 * h, &axpy(&y, &[(A31, &k1), (A32, &k2)], h));
        let k4 = f(
            t + C4 * h,
            &axpy(&y, &[(A41, &k1), (A42, &k2), (A43, &k3)], h),
        );
        let k5 = f(
            t + C5 * h,
            &axpy(&y, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], h),
        );
        let k6 = f(
            t + h,
            &axpy(
                &y,
                &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
                h,
            ),
        );
        let y_new = axpy(
            &y,
            &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
            h,
        );
        let k7 = f(t + h, &y_new);

        let mut err = 0.0;
        for i in 0..N {
            let e =
                h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = tol.atol + tol.rtol * y[i].abs().max(y_new[i].abs());
            err += (e / sc).powi(2);
        }
        let err = (err / N as f64).sqrt();
        if !err.is_finite() {
            return Err(Error::Integration {
                t,
                reason: "non-finite error estimate".into(),
            });
        }

        if err <= 1.0 {
            let t_new = t + h;
            while next_sample < n_samples && sample_time(next_sample) <= t_new + 1e-12 * dt {
                let ts = sample_time(next_sample);
                let theta = ((ts - t) / h).clamp(0.0, 1.0);
                let theta1 = 1.0 - theta;
                let mut ys = [0.0; N];
                for i in 0..N {
                    let ydiff = y_new[i] - y[i];
                    let bspl = h * k1[i] - ydiff;
                    let r4 = ydiff - h * k7[i] - bspl;
                    let r5 = h
                        * (D1 * k1[i]
                            + D3 * k3[i]
                            + D4 * k4[i]
                            + D5 * k5[i]
                            + D6 * k6[i]
                            + D7 * k7[i]);
                    ys[i] = y[i] + theta * (ydiff + theta1 * (bspl + theta * (r4 + theta1 * r5)));
                }
                sample(ts, &ys);
                next_sample += 1;
            }
            t = t_new;
            y = y_new;
            k1 = k7;
            stats.accepted += 1;
        } else {
            stats.rejected += 1;
        }
        let fac = if err == 0.0 {
            10.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 10.0)
        };
        h = (h * fac).min(tol.max_step);
    }
    Ok((y, stats))
}

fn initial_step<const N: usize, F>(
    f: &F,
    t0: f64,
    y0: &[f64; N],
    k1: &[f64; N],
    tol: &Tolerances,
) -> f64
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for i in 0..N {
        let sc = tol.atol + tol.rtol * y0[i].abs();
        d0 += (y0[i] / sc).powi(2);
        d1 += (k1[i] / sc).powi(2);
    }
    let (d0, d1) = ((d0 / N as f64).sqrt(), (d1 / N as f64).sqrt());
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let y1 = axpy(y0, &[(1.0, k1)], h0);
    let k2 = f(t0 + h0, &y1);
    let mut d2 = 0.0;
    for i in 0..N {
        let sc = tol.atol + tol.rtol * y0[i].abs();
        d2 += ((k2[i] - k1[i]) / sc).powi(2);
    }
    let d2 = (d2 / N as f64).sqrt() / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_matches_closed_form() {
        let f = |_t: f64, y: &[f64; 2]| [y[1], -y[0]];
        let mut samples = Vec::new();
        let (end, stats) = integrate_sampled(
            f,
            0.0,
            [1.0, 0.0],
            2.0 * std::f64::consts::PI,
            0.01,
            &Tolerances {
                max_step: 0.1,
                ..Tolerances::default()
            },
            |t, y| samples.push((t, *y)),
        )
        .unwrap();
        assert!((end[0] - 1.0).abs() < 1e-7);
        assert!(end[1].abs() < 1e-7);
        for (t, y) in &samples {
            assert!((y[0] - t.cos()).abs() < 1e-7, "t = {t}");
        }
        assert_eq!(samples.len(), 629);
        assert!(stats.accepted > 0);
    }

    #[test]
    fn exponential_growth() {
        let f = |_t: f64, y: &[f64; 1]| [y[0]];
        let (end, _) =
            integrate_sampled(f, 0.0, [1.0], 1.0, 0.0, &Tolerances::default(), |_, _| {}).unwrap();
        assert!((end[0] - std::f64::consts::E).abs() < 1e-8);
    }

    #[test]
    fn stiff_blowup_reports_underflow() {
        let f = |_t: f64, y: &[f64; 1]| [y[0] * y[0]];
        let err = integrate_sampled(f, 0.0, [1.0], 2.0, 0.0, &Tolerances::default(), |_, _| {})
            .unwrap_err();
        assert!(matches!(err, Error::Integration { .. }));
    }
}
