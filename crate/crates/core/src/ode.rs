//! Adaptive Dormand-Prince 5(4) integrator with cubic Hermite dense output.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Integration tolerances and limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub atol: f64,
    pub rtol: f64,
    pub max_steps: usize,
    pub h_min: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            atol: 1e-12,
            rtol: 1e-10,
            max_steps: 200_000,
            h_min: 1e-14,
        }
    }
}

impl OdeOptions {
    /// Both tolerances scaled by `factor`.
    pub fn scaled(self, factor: f64) -> Self {
        Self {
            atol: self.atol * factor,
            rtol: self.rtol * factor,
            ..self
        }
    }
}

/// Accepted integration nodes with states and derivatives, enough for
/// cubic Hermite interpolation anywhere in `[t0, t1]`.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub derivs: Vec<DVector<f64>>,
}

impl DenseSolution {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("solution has at least one node")
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("solution has at least one node")
    }

    /// Interpolated state at `t` (clamped to the integration interval).
    pub fn eval(&self, t: f64) -> DVector<f64> {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return self.states[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1].clone();
        }
        let i = match self
            .times
            .binary_search_by(|x| x.partial_cmp(&t).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => return self.states[i].clone(),
            Err(i) => i - 1,
        };
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let h00 = 2.0 * s.powi(3) - 3.0 * s * s + 1.0;
        let h10 = s.powi(3) - 2.0 * s * s + s;
        let h01 = -2.0 * s.powi(3) + 3.0 * s * s;
        let h11 = s.powi(3) - s * s;
        &self.states[i] * h00
            + &self.derivs[i] * (h10 * h)
            + &self.states[i + 1] * h01
            + &self.derivs[i + 1] * (h11 * h)
    }
}

// Dormand-Prince 5(4) tableau.
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
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - b_hat
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn err_norm(err: &DVector<f64>, y0: &DVector<f64>, y1: &DVector<f64>, opts: &OdeOptions) -> f64 {
    let n = err.len().max(1) as f64;
    let sum: f64 = err
        .iter()
        .zip(y0.iter().zip(y1.iter()))
        .map(|(e, (a, b))| {
            let sc = opts.atol + opts.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

/// Integrate `y' = f(t, y)` from `t0` to `t1` (`t1 >= t0`), recording every
/// accepted node.
pub fn integrate<F>(
    f: F,
    t0: f64,
    y0: &DVector<f64>,
    t1: f64,
    opts: &OdeOptions,
) -> Result<DenseSolution>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    if !(t1 >= t0) {
        return Err(Error::InvalidInput(format!(
            "integration interval [{t0}, {t1}] is empty or reversed"
        )));
    }
    let call = |t: f64, y: &DVector<f64>| -> Result<DVector<f64>> {
        let d = f(t, y).map_err(|e| e.at_time(t))?;
        if d.iter().all(|v| v.is_finite()) {
            Ok(d)
        } else {
            Err(Error::Integration {
                time: t,
                reason: "non-finite derivative".into(),
            })
        }
    };
    let mut t = t0;
    let mut y = y0.clone();
    let mut k1 = call(t, &y)?;
    let mut sol = DenseSolution {
        times: vec![t],
        states: vec![y.clone()],
        derivs: vec![k1.clone()],
    };
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(sol);
    }

    // Initial step guess (Hairer, Norsett & Wanner, II.4).
    let mut h = {
        let sc: DVector<f64> = y.map(|v| opts.atol + opts.rtol * v.abs());
        let n = y.len().max(1) as f64;
        let d0 = (y.component_div(&sc).norm_squared() / n).sqrt();
        let d1 = (k1.component_div(&sc).norm_squared() / n).sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let h0 = h0.min(span);
        let y1 = &y + &k1 * h0;
        let f1 = call(t + h0, &y1)?;
        let d2 = ((&f1 - &k1).component_div(&sc).norm_squared() / n).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / 5.0)
        };
        (100.0 * h0).min(h1).min(span)
    };

    let mut steps = 0;
    while t < t1 {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::Integration {
                time: t,
                reason: "maximum step count exceeded".into(),
            });
        }
        let last = t + h >= t1 || (t1 - (t + h)) < 1e-12 * span;
        if last {
            h = t1 - t;
        }
        let k2 = call(t + C2 * h, &(&y + &k1 * (A21 * h)))?;
        let k3 = call(t + C3 * h, &(&y + (&k1 * A31 + &k2 * A32) * h))?;
        let k4 = call(t + C4 * h, &(&y + (&k1 * A41 + &k2 * A42 + &k3 * A43) * h))?;
        let k5 = call(
            t + C5 * h,
            &(&y + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h),
        )?;
        let k6 = call(
            t + h,
            &(&y + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h),
        )?;
        let y_new = &y + (&k1 * B1 + &k3 * B3 + &k4 * B4 + &k5 * B5 + &k6 * B6) * h;
        let k7 = call(t + h, &y_new)?;
        let err = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
        let en = err_norm(&err, &y, &y_new, opts);
        if en <= 1.0 {
            t = if last { t1 } else { t + h };
            y = y_new;
            k1 = k7;
            sol.times.push(t);
            sol.states.push(y.clone());
            sol.derivs.push(k1.clone());
            let fac = if en == 0.0 {
                5.0
            } else {
                (0.9 * en.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= fac;
        } else {
            h *= (0.9 * en.powf(-0.2)).clamp(0.1, 1.0);
            if h < opts.h_min {
                return Err(Error::Integration {
                    time: t,
                    reason: "step size underflow".into(),
                });
            }
        }
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_is_accurate() {
        let y0 = DVector::from_vec(vec![1.0]);
        let sol = integrate(|_, y| Ok(-y), 0.0, &y0, 2.0, &OdeOptions::default()).unwrap();
        assert!((sol.final_state()[0] - (-2.0f64).exp()).abs() < 1e-10);
        assert_eq!(sol.t_end(), 2.0);
    }

    #[test]
    fn harmonic_oscillator_and_dense_output() {
        let y0 = DVector::from_vec(vec![1.0, 0.0]);
        let f = |_t: f64, y: &DVector<f64>| Ok(DVector::from_vec(vec![y[1], -y[0]]));
        let sol = integrate(f, 0.0, &y0, 10.0, &OdeOptions::default()).unwrap();
        let end = sol.final_state();
        assert!((end[0] - 10f64.cos()).abs() < 1e-9);
        assert!((end[1] + 10f64.sin()).abs() < 1e-9);
        for i in 0..100 {
            let t = 0.0987 * i as f64;
            let y = sol.eval(t);
            assert!((y[0] - t.cos()).abs() < 1e-8, "t = {t}");
        }
    }

    #[test]
    fn zero_span_returns_initial_state() {
        let y0 = DVector::from_vec(vec![3.0]);
        let sol = integrate(|_, y| Ok(y.clone()), 1.0, &y0, 1.0, &OdeOptions::default()).unwrap();
        assert_eq!(sol.final_state()[0], 3.0);
    }

    #[test]
    fn rhs_failure_propagates() {
        let y0 = DVector::from_vec(vec![0.0]);
        let r = integrate(
            |t, _| {
                if t > 0.5 {
                    Err(Error::SingularDynamics {
                        rank: 1,
                        required: 2,
                        time: None,
                    })
                } else {
                    Ok(DVector::from_vec(vec![1.0]))
                }
            },
            0.0,
            &y0,
            1.0,
            &OdeOptions::default(),
        );
        match r {
            Err(Error::SingularDynamics { time: Some(t), .. }) => assert!(t > 0.5),
            other => panic!("unexpected {other:?}"),
        }
    }
}
