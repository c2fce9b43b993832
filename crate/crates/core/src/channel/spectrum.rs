use rustfft::{num_complex::Complex, FftPlanner};

use super::ImpulseResponse;
use crate::error::{invalid, Error, Result};

/// One-sided magnitude spectrum, `magnitudes[k]` at frequency `k * df`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub df: f64,
    pub magnitudes: Vec<f64>,
}

impl Spectrum {
    pub fn frequency(&self, k: usize) -> f64 {
        k as f64 * self.df
    }
}

/// `|H(f)|` of the zero-padded bin sequence, for `f` in `[0, 1 / (2 dt)]`.
pub fn frequency_response(ir: &ImpulseResponse, n_points: usize) -> Result<Spectrum> {
    if n_points < ir.bins.len().max(1) {
        return Err(invalid(
            "n_points",
            format!("{n_points} is shorter than the {} bins", ir.bins.len()),
        ));
    }
    let mut buf: Vec<Complex<f64>> = ir
        .bins
        .iter()
        .map(|&b| Complex::new(b, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(n_points)
        .collect();
    FftPlanner::new().plan_fft_forward(n_points).process(&mut buf);
    Ok(Spectrum {
        df: 1.0 / (n_points as f64 * ir.dt),
        magnitudes: buf[..=n_points / 2].iter().map(|c| c.norm()).collect(),
    })
}

/// 3 dB bandwidth of the diffuse channel: the line-of-sight bin is removed
/// and the first frequency where the magnitude falls below `|H(0)| / sqrt 2`
/// is returned, linearly interpolated between spectral samples. When the
/// response never drops that far, the Nyquist frequency is returned.
pub fn diffuse_bw_3db(ir: &ImpulseResponse) -> Result<f64> {
    let los = ir.first_nonzero().ok_or(Error::EmptyResponse)?;
    let mut diffuse = ir.clone();
    diffuse.bins[los] = 0.0;
    if diffuse.bins.iter().all(|&b| b == 0.0) {
        return Err(Error::NoDiffuseEnergy);
    }
    let n = (diffuse.bins.len() * 16).next_power_of_two().max(1024);
    let spec = frequency_response(&diffuse, n)?;
    let threshold = spec.magnitudes[0] / std::f64::consts::SQRT_2;
    for k in 1..spec.magnitudes.len() {
        let (hi, lo) = (spec.magnitudes[k - 1], spec.magnitudes[k]);
        if lo < threshold {
            let frac = (hi - threshold) / (hi - lo);
            return Ok(spec.df * (k as f64 - 1.0 + frac));
        }
    }
    Ok(0.5 / ir.dt)
}
