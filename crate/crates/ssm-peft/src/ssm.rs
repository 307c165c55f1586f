//! Numeric state-space primitives: discretization rules, diagonal recurrences,
//! convolution kernels, and the selective (input-dependent) scan.
//!
//! These are immediate-mode `f64` routines. The differentiable counterparts
//! used for training live in [`crate::model`]; tests pin the two routes to
//! each other.

use crate::tensor::{Result, TensorError};

/// Rule for turning continuous parameters `(a, b)` and a step size into the
/// discrete recurrence coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discretization {
    Zoh,
    Bilinear,
}

/// Discretizes a single diagonal entry.
///
/// Zero-order hold: `ā = exp(dt a)`, `b̄ = ((exp(dt a) - 1)/a) b`, with the
/// `a = 0` limit `b̄ = dt b`. Bilinear: `ā = (1 - dt a/2)^{-1} (1 + dt a/2)`,
/// `b̄ = (1 - dt a/2)^{-1} dt b`; `dt a = 2` is a pole and is rejected.
pub fn discretize(a: f64, b: f64, dt: f64, method: Discretization) -> Result<(f64, f64)> {
    if dt <= 0.0 {
        return Err(TensorError::Invalid(format!("step size must be positive, got {dt}")));
    }
    match method {
        Discretization::Zoh => {
            let a_bar = (dt * a).exp();
            let b_bar = if a == 0.0 {
                dt * b
            } else {
                ((dt * a).exp_m1() / a) * b
            };
            Ok((a_bar, b_bar))
        }
        Discretization::Bilinear => {
            let denom = 1.0 - dt * a / 2.0;
            if denom == 0.0 {
                return Err(TensorError::Invalid(format!(
                    "bilinear discretization singular at dt*a = 2 (a = {a}, dt = {dt})"
                )));
            }
            let a_bar = (1.0 + dt * a / 2.0) / denom;
            let b_bar = dt * b / denom;
            Ok((a_bar, b_bar))
        }
    }
}

/// One S4 channel after discretization: diagonal recurrence coefficients and
/// the output map.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteChannel {
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
    pub c: Vec<f64>,
}

impl DiscreteChannel {
    pub fn state_dim(&self) -> usize {
        self.a_bar.len()
    }
}

/// Runs the diagonal recurrence `h_t = ā ⊙ h_{t-1} + b̄ x_t`, `y_t = c·h_t`
/// over a scalar input sequence. Returns all outputs and the final state.
pub fn s4_scan(channel: &DiscreteChannel, x: &[f64], h0: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let h_dim = channel.state_dim();
    debug_assert_eq!(h0.len(), h_dim);
    let mut h = h0.to_vec();
    let mut y = Vec::with_capacity(x.len());
    for &xt in x {
        let mut out = 0.0;
        for k in 0..h_dim {
            h[k] = channel.a_bar[k] * h[k] + channel.b_bar[k] * xt;
            out += channel.c[k] * h[k];
        }
        y.push(out);
    }
    (y, h)
}

/// Convolution kernel `K̄ = (c·b̄, c·(ā⊙b̄), ..., c·(ā^{N-1}⊙b̄))`.
pub fn s4_kernel(channel: &DiscreteChannel, n: usize) -> Vec<f64> {
    let h_dim = channel.state_dim();
    let mut powers = vec![1.0; h_dim];
    let mut kernel = Vec::with_capacity(n);
    for _ in 0..n {
        let mut k = 0.0;
        for i in 0..h_dim {
            k += channel.c[i] * powers[i] * channel.b_bar[i];
            powers[i] *= channel.a_bar[i];
        }
        kernel.push(k);
    }
    kernel
}

/// Causal direct convolution `y_t = sum_{m=1..t} K̄_{t-m+1} x_m`.
pub fn s4_conv_forward(kernel: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if kernel.len() != x.len() {
        return Err(TensorError::ShapeMismatch {
            op: "s4_conv_forward",
            lhs: vec![kernel.len()],
            rhs: vec![x.len()],
        });
    }
    let n = x.len();
    let mut y = vec![0.0; n];
    for (t, yt) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for m in 0..=t {
            acc += kernel[t - m] * x[m];
        }
        *yt = acc;
    }
    Ok(y)
}

/// Scan with time-varying coefficients: `h_t = ā_t ⊙ h_{t-1} + b̄_t x_t`,
/// `y_t = c_t · h_t`. The selective scan reduces to [`s4_scan`] when all
/// three coefficient sequences are constant.
pub fn variable_scan(
    a_bars: &[Vec<f64>],
    b_bars: &[Vec<f64>],
    cs: &[Vec<f64>],
    x: &[f64],
    h0: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut h = h0.to_vec();
    let mut y = Vec::with_capacity(x.len());
    for (t, &xt) in x.iter().enumerate() {
        let mut out = 0.0;
        for k in 0..h.len() {
            h[k] = a_bars[t][k] * h[k] + b_bars[t][k] * xt;
            out += cs[t][k] * h[k];
        }
        y.push(out);
    }
    (y, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(a_bar: f64, b_bar: f64, c: f64) -> DiscreteChannel {
        DiscreteChannel { a_bar: vec![a_bar], b_bar: vec![b_bar], c: vec![c] }
    }

    #[test]
    fn zoh_closed_form() {
        let (a_bar, b_bar) = discretize(-1.0, 1.0, std::f64::consts::LN_2, Discretization::Zoh).unwrap();
        assert!((a_bar - 0.5).abs() < 1e-15);
        assert!((b_bar - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zoh_zero_a_limit() {
        let (a_bar, b_bar) = discretize(0.0, 3.0, 0.25, Discretization::Zoh).unwrap();
        assert_eq!(a_bar, 1.0);
        assert_eq!(b_bar, 0.75);
    }

    #[test]
    fn bilinear_closed_form() {
        let (a_bar, b_bar) = discretize(-2.0, 1.0, 1.0, Discretization::Bilinear).unwrap();
        assert_eq!(a_bar, 0.0);
        assert_eq!(b_bar, 0.5);
    }

    #[test]
    fn bilinear_pole_rejected() {
        assert!(discretize(2.0, 1.0, 1.0, Discretization::Bilinear).is_err());
    }

    #[test]
    fn small_dt_limit() {
        for method in [Discretization::Zoh, Discretization::Bilinear] {
            let (a_bar, b_bar) = discretize(-1.3, 0.8, 1e-12, method).unwrap();
            assert!((a_bar - 1.0).abs() < 1e-11);
            assert!(b_bar.abs() < 1e-11);
        }
    }

    #[test]
    fn stability_region() {
        // a < 0 and dt > 0 puts |ā| inside the unit circle; zoh keeps it in (0, 1).
        for i in 0..50 {
            let a = -0.05 - (i as f64) * 0.37;
            let dt = 0.001 + (i as f64) * 0.01;
            let (z, _) = discretize(a, 1.0, dt, Discretization::Zoh).unwrap();
            assert!(z > 0.0 && z < 1.0, "zoh a_bar {z}");
            let (bl, _) = discretize(a, 1.0, dt, Discretization::Bilinear).unwrap();
            assert!(bl.abs() < 1.0, "bilinear a_bar {bl}");
        }
    }

    #[test]
    fn scan_impulse_by_hand() {
        let ch = single(0.5, 1.0, 1.0);
        let (y, _) = s4_scan(&ch, &[1.0, 0.0, 0.0], &[0.0]);
        assert_eq!(y, vec![1.0, 0.5, 0.25]);
    }

    #[test]
    fn scan_pure_state_decay() {
        let ch = single(0.5, 1.0, 1.0);
        let (y, h) = s4_scan(&ch, &[0.0, 0.0, 0.0], &[1.0]);
        assert_eq!(y, vec![0.5, 0.25, 0.125]);
        assert_eq!(h, vec![0.125]);
    }

    #[test]
    fn scan_zero_everything() {
        let ch = DiscreteChannel { a_bar: vec![0.9, 0.5], b_bar: vec![1.0, 2.0], c: vec![0.3, 0.7] };
        let (y, _) = s4_scan(&ch, &[0.0; 5], &[0.0, 0.0]);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kernel_direct_formula() {
        let ch = single(0.5, 1.0, 1.0);
        assert_eq!(s4_kernel(&ch, 3), vec![1.0, 0.5, 0.25]);
    }

    #[test]
    fn kernel_zero_c() {
        let ch = single(0.5, 1.0, 0.0);
        assert!(s4_kernel(&ch, 4).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_identity_kernel() {
        let x = [3.0, -1.0, 2.0, 0.5];
        let mut kernel = vec![0.0; 4];
        kernel[0] = 1.0;
        assert_eq!(s4_conv_forward(&kernel, &x).unwrap(), x.to_vec());
    }

    #[test]
    fn conv_impulse_response_is_kernel() {
        let kernel = [0.2, -0.4, 0.8, 0.1];
        let mut x = vec![0.0; 4];
        x[0] = 1.0;
        assert_eq!(s4_conv_forward(&kernel, &x).unwrap(), kernel.to_vec());
    }

    #[test]
    fn conv_length_mismatch() {
        assert!(s4_conv_forward(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn variable_scan_with_constant_coeffs_matches_s4() {
        let ch = DiscreteChannel {
            a_bar: vec![0.9, 0.4, 0.7],
            b_bar: vec![0.5, -0.3, 1.1],
            c: vec![0.2, 0.8, -0.5],
        };
        let x = [1.0, -2.0, 0.5, 3.0, -1.0];
        let n = x.len();
        let (y1, h1) = s4_scan(&ch, &x, &[0.0; 3]);
        let (y2, h2) = variable_scan(
            &vec![ch.a_bar.clone(); n],
            &vec![ch.b_bar.clone(); n],
            &vec![ch.c.clone(); n],
            &x,
            &[0.0; 3],
        );
        assert_eq!(y1, y2);
        assert_eq!(h1, h2);
    }
}
