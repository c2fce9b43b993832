use super::ImpulseResponse;
use crate::error::{invalid, Result};

/// Relative DC gain left in the truncated filter tail.
const TAIL_TOLERANCE: f64 = 1e-13;

/// LED and photodiode bandwidth limits applied to the channel response.
///
/// Each device is a cascade of `order` identical first-order lowpass
/// sections with the given 3 dB bandwidth in Hz. `None` means ideal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemFilter {
    pub f_led: Option<f64>,
    pub f_pd: Option<f64>,
    pub order: usize,
}

impl SystemFilter {
    pub const IDEAL: SystemFilter = SystemFilter {
        f_led: None,
        f_pd: None,
        order: 1,
    };

    /// Transmitter-limited system: LED bandwidth only, ideal photodiode.
    pub fn led(f_led: f64) -> Self {
        Self {
            f_led: Some(f_led),
            f_pd: None,
            order: 1,
        }
    }

    pub fn is_ideal(&self) -> bool {
        self.f_led.is_none() && self.f_pd.is_none()
    }

    fn validate(&self) -> Result<()> {
        for (name, f) in [("f_led", self.f_led), ("f_pd", self.f_pd)] {
            if let Some(f) = f {
                if !(f > 0.0) {
                    return Err(invalid(name, format!("bandwidth must be positive, got {f}")));
                }
            }
        }
        if self.order == 0 {
            return Err(invalid("order", "filter order must be at least 1"));
        }
        Ok(())
    }
}

impl Default for SystemFilter {
    fn default() -> Self {
        Self::IDEAL
    }
}

/// One first-order section, discretized with a bin-integrated exponential
/// kernel: `y[k] = a y[k-1] + (1 - a) x[k]`, `a = exp(-2 pi f dt)`.
/// The output is extended until the remaining tail holds a negligible share
/// of the DC gain.
fn first_order(bins: &[f64], f: f64, dt: f64) -> Vec<f64> {
    if f.is_infinite() {
        return bins.to_vec();
    }
    let a = (-2.0 * std::f64::consts::PI * f * dt).exp();
    let total: f64 = bins.iter().sum();
    let mut out = Vec::with_capacity(bins.len() * 2);
    let mut y = 0.0;
    for &x in bins {
        y = a * y + (1.0 - a) * x;
        out.push(y);
    }
    if total > 0.0 && a > 0.0 {
        // Free decay: the remaining tail sums to y a / (1 - a).
        while y * a / (1.0 - a) > TAIL_TOLERANCE * total {
            y *= a;
            out.push(y);
        }
    }
    out
}

/// Convolves the channel response with the LED and photodiode lowpass kernels.
pub fn apply_system_filter(ir: &ImpulseResponse, filter: &SystemFilter) -> Result<ImpulseResponse> {
    filter.validate()?;
    let mut bins = ir.bins.clone();
    for f in [filter.f_led, filter.f_pd].into_iter().flatten() {
        for _ in 0..filter.order {
            bins = first_order(&bins, f, ir.dt);
        }
    }
    ImpulseResponse::new(ir.t0, ir.dt, bins)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_impulses(dt: f64, gap: f64) -> ImpulseResponse {
        let mut bins = vec![0.0; 200];
        bins[20] = 1.0;
        bins[20 + (gap / dt).round() as usize] = 1.0;
        ImpulseResponse::new(0.0, dt, bins).unwrap()
    }

    /// Direct convolution with the sampled kernel `(1 - a) a^k`.
    fn convolve_oracle(x: &[f64], f: f64, dt: f64, len: usize) -> Vec<f64> {
        let a = (-2.0 * std::f64::consts::PI * f * dt).exp();
        (0..len)
            .map(|n| {
                (0..=n.min(x.len() - 1))
                    .map(|j| x[j] * (1.0 - a) * a.powi((n - j) as i32))
                    .sum()
            })
            .collect()
    }

    fn local_maxima(v: &[f64]) -> usize {
        (1..v.len() - 1).filter(|&i| v[i] > v[i - 1] && v[i] >= v[i + 1]).count()
    }

    #[test]
    fn ideal_filter_is_identity() {
        let ir = two_impulses(0.2e-9, 3e-9);
        assert_eq!(apply_system_filter(&ir, &SystemFilter::IDEAL).unwrap(), ir);
    }

    #[test]
    fn dc_gain_is_preserved() {
        let ir = two_impulses(0.2e-9, 3e-9);
        for f in [20e6, 100e6, 1e9] {
            for order in [1, 2, 3] {
                let filt = SystemFilter {
                    f_led: Some(f),
                    f_pd: Some(2.0 * f),
                    order,
                };
                let out = apply_system_filter(&ir, &filt).unwrap();
                let rel = (out.total_gain() - ir.total_gain()).abs() / ir.total_gain();
                assert!(rel < 1e-6, "f={f} order={order} rel={rel}");
            }
        }
    }

    #[test]
    fn matches_direct_convolution() {
        let ir = two_impulses(0.2e-9, 1e-9);
        let out = apply_system_filter(&ir, &SystemFilter::led(100e6)).unwrap();
        let oracle = convolve_oracle(&ir.bins, 100e6, ir.dt, out.bins.len());
        for (a, b) in out.bins.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn close_impulses_merge_under_led_and_pd_limits() {
        let ir = two_impulses(0.2e-9, 1e-9);
        assert_eq!(local_maxima(&ir.bins), 2);
        let filt = SystemFilter {
            f_led: Some(100e6),
            f_pd: Some(100e6),
            order: 1,
        };
        let out = apply_system_filter(&ir, &filt).unwrap();
        assert_eq!(local_maxima(&out.bins), 1);
        // Same check against the oracle cascade.
        let once = convolve_oracle(&ir.bins, 100e6, ir.dt, out.bins.len());
        let twice = convolve_oracle(&once, 100e6, ir.dt, out.bins.len());
        assert_eq!(local_maxima(&twice), 1);
    }

    #[test]
    fn rejects_bad_parameters() {
        let ir = two_impulses(0.2e-9, 1e-9);
        assert!(apply_system_filter(&ir, &SystemFilter::led(0.0)).is_err());
        let f = SystemFilter {
            order: 0,
            ..SystemFilter::led(1e8)
        };
        assert!(apply_system_filter(&ir, &f).is_err());
    }
}
