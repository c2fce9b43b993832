//! Peak-detector feature extraction: line-of-sight power, second power peak
//! and the delay between them.

use crate::channel::ImpulseResponse;
use crate::error::{Error, Result};

/// Fingerprint triple measured by one detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    /// Line-of-sight peak power, watts.
    pub p_los: f64,
    /// Second power peak, watts. Zero when `spp_valid` is false.
    pub p_spp: f64,
    /// Delay from the LOS peak to the second peak, seconds. Zero when
    /// `spp_valid` is false.
    pub delta_tau: f64,
    pub spp_valid: bool,
}

impl FeatureVector {
    pub fn los_only(p_los: f64) -> Self {
        Self {
            p_los,
            p_spp: 0.0,
            delta_tau: 0.0,
            spp_valid: false,
        }
    }

    pub fn components(&self) -> [f64; 3] {
        [self.p_los, self.p_spp, self.delta_tau]
    }
}

/// Peak-detector settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureParams {
    /// Span after the first arrival searched for the LOS peak; diffuse
    /// peaks are only accepted after it.
    pub guard: f64,
    /// A diffuse peak must not be exceeded within this span after it, so
    /// ripples on a rising edge are skipped.
    pub peak_window: f64,
    /// A diffuse peak below `spp_floor * LOS` is treated as absent.
    pub spp_floor: f64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            guard: 2e-9,
            peak_window: 0.4e-9,
            spp_floor: 1e-6,
        }
    }
}

/// Extracts `(P_LOS, P_SPP, delta tau)` from a channel response scaled by
/// the transmit power `p_t`.
///
/// The LOS peak is the largest bin within `guard` of the first arrival,
/// followed uphill if the response is still rising there. Its lobe extends
/// while the response keeps falling. The SPP is the first diffuse peak after
/// both the lobe and the guard: a bin higher than its predecessor and not
/// exceeded within `peak_window` after it. Later, possibly larger humps from
/// higher-order reflections are ignored.
pub fn extract_features(ir: &ImpulseResponse, p_t: f64, params: &FeatureParams) -> Result<FeatureVector> {
    let bins = &ir.bins;
    let first = ir.first_nonzero().ok_or(Error::EmptyResponse)?;
    let guard_bins = (params.guard / ir.dt).round().max(0.0) as usize;
    let window_end = (first + guard_bins).min(bins.len() - 1);

    let mut los = argmax(bins, first, window_end + 1);
    while los + 1 < bins.len() && bins[los + 1] > bins[los] {
        los += 1;
    }
    let p_los = p_t * bins[los];

    let lobe_end = (los + 1..bins.len()).find(|&i| bins[i] > bins[i - 1]);
    let Some(lobe_end) = lobe_end else {
        return Ok(FeatureVector::los_only(p_los));
    };
    let start = lobe_end.max(window_end + 1);
    if start >= bins.len() {
        return Ok(FeatureVector::los_only(p_los));
    }
    let window = (params.peak_window / ir.dt).round().max(1.0) as usize;
    let floor = params.spp_floor * bins[los];
    let spp = (start..bins.len()).find(|&i| {
        let rising = i == lobe_end || bins[i] > bins[i - 1];
        let end = (i + window + 1).min(bins.len());
        rising && bins[i] > floor && bins[i + 1..end].iter().all(|&b| b <= bins[i])
    });
    let Some(spp) = spp else {
        return Ok(FeatureVector::los_only(p_los));
    };
    Ok(FeatureVector {
        p_los,
        p_spp: p_t * bins[spp],
        delta_tau: (spp - los) as f64 * ir.dt,
        spp_valid: true,
    })
}

/// First index of the maximum of `v[from..to]`.
fn argmax(v: &[f64], from: usize, to: usize) -> usize {
    let mut best = from;
    for i in from + 1..to {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Feature vectors of all detectors for one emitter position, ordered by
/// detector index.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub features: Vec<FeatureVector>,
}

impl Observation {
    pub fn detector_count(&self) -> usize {
        self.features.len()
    }

    /// `[v1(1), v2(1), v3(1), ..., v3(Q)]`, length `3Q`.
    pub fn supervector(&self) -> Vec<f64> {
        self.features.iter().flat_map(|f| f.components()).collect()
    }

    /// CSV row: the supervector followed by one validity flag per detector.
    pub fn csv_row(&self) -> String {
        let mut cols: Vec<String> = self.supervector().iter().map(|v| format!("{v:.12e}")).collect();
        cols.extend(self.features.iter().map(|f| u8::from(f.spp_valid).to_string()));
        cols.join(",")
    }
}

pub fn assemble_observation(features: Vec<FeatureVector>, detectors: usize) -> Result<Observation> {
    if features.len() != detectors {
        return Err(Error::DimensionMismatch {
            expected: detectors,
            actual: features.len(),
        });
    }
    Ok(Observation { features })
}

#[cfg(test)]
mod tests {
    use super::*;

    const DT: f64 = 0.2e-9;

    fn ir_from(points: &[(f64, f64)], len: usize) -> ImpulseResponse {
        let mut bins = vec![0.0; len];
        for &(t, g) in points {
            bins[(t / DT).round() as usize] += g;
        }
        ImpulseResponse::new(0.0, DT, bins).unwrap()
    }

    #[test]
    fn two_impulse_construction() {
        let ir = ir_from(&[(7e-9, 1.0), (15e-9, 0.1)], 120);
        let params = FeatureParams {
            guard: 3e-9,
            ..FeatureParams::default()
        };
        let f = extract_features(&ir, 10e-3, &params).unwrap();
        assert!((f.p_los - 10e-3).abs() < 1e-15);
        assert!((f.p_spp - 1e-3).abs() < 1e-15);
        assert!((f.delta_tau - 8e-9).abs() < 1e-15);
        assert!(f.spp_valid);
    }

    #[test]
    fn los_only_is_invalid() {
        let ir = ir_from(&[(7e-9, 1.0)], 60);
        let f = extract_features(&ir, 1.0, &FeatureParams::default()).unwrap();
        assert!(!f.spp_valid);
        assert_eq!((f.p_spp, f.delta_tau), (0.0, 0.0));
    }

    #[test]
    fn peak_inside_guard_is_ignored() {
        let ir = ir_from(&[(7e-9, 1.0), (7.6e-9, 0.3), (7.8e-9, 0.2), (8.0e-9, 0.1)], 60);
        let params = FeatureParams::default();
        // The only diffuse peak sits inside the guard, what follows just decays.
        let f = extract_features(&ir, 1.0, &params).unwrap();
        assert!(!f.spp_valid);
        // A shorter guard picks it up.
        let short = FeatureParams {
            guard: 0.4e-9,
            ..FeatureParams::default()
        };
        let f = extract_features(&ir, 1.0, &short).unwrap();
        assert!(f.spp_valid);
        assert!((f.delta_tau - 0.6e-9).abs() < 1e-15);
    }

    #[test]
    fn decaying_lobe_is_not_a_peak() {
        // Smeared LOS: rises then decays monotonically.
        let bins: Vec<f64> = (0..80)
            .map(|k| if k < 10 { 0.0 } else { ((k - 10) as f64 * 0.3).exp() * (-(k - 10) as f64).exp() })
            .collect();
        let ir = ImpulseResponse::new(0.0, DT, bins).unwrap();
        let f = extract_features(&ir, 1.0, &FeatureParams::default()).unwrap();
        assert!(!f.spp_valid);
        assert_eq!(f.p_los, 1.0);
    }

    #[test]
    fn first_diffuse_peak_wins_over_later_hump() {
        let mut bins = vec![0.0; 200];
        bins[10] = 1.0;
        // First reflection spike, its decay, then a broader, taller hump.
        for (k, v) in [0.1, 0.3, 0.25, 0.2, 0.15, 0.12, 0.1].iter().enumerate() {
            bins[30 + k] = *v;
        }
        for k in 0..40 {
            bins[60 + k] = 0.1 + 0.3 * (1.0 - ((k as f64 - 20.0) / 20.0).powi(2));
        }
        let f = extract_features(&ImpulseResponse::new(0.0, DT, bins.clone()).unwrap(), 1.0, &FeatureParams::default()).unwrap();
        assert!(f.spp_valid);
        assert_eq!(f.p_spp, 0.3);
        assert!((f.delta_tau - 21.0 * DT).abs() < 1e-15);
        // A ripple on the rising edge is not a peak.
        bins[31] = 0.2;
        bins[32] = 0.18;
        bins[33] = 0.35;
        let f = extract_features(&ImpulseResponse::new(0.0, DT, bins).unwrap(), 1.0, &FeatureParams::default()).unwrap();
        assert_eq!(f.p_spp, 0.35);
    }

    #[test]
    fn empty_response_errors() {
        let ir = ImpulseResponse::new(0.0, DT, vec![0.0; 5]).unwrap();
        assert_eq!(extract_features(&ir, 1.0, &FeatureParams::default()), Err(Error::EmptyResponse));
    }

    #[test]
    fn observation_layout() {
        let f = |a: f64| FeatureVector {
            p_los: a,
            p_spp: a + 1.0,
            delta_tau: a + 2.0,
            spp_valid: true,
        };
        let o = assemble_observation(vec![f(0.0)], 1).unwrap();
        assert_eq!(o.supervector(), vec![0.0, 1.0, 2.0]);
        let o = assemble_observation(vec![f(0.0), f(10.0)], 2).unwrap();
        assert_eq!(o.supervector().len(), 6);
        let o = assemble_observation(vec![f(0.0); 4], 4).unwrap();
        assert_eq!(o.supervector().len(), 12);
        assert!(assemble_observation(vec![f(0.0); 3], 4).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_ir() -> impl Strategy<Value = ImpulseResponse> {
            (5usize..40, prop::collection::vec(0.0f64..1.0, 20..120), 0.01f64..0.9).prop_map(
                |(lead, tail, los_scale)| {
                    let mut bins = vec![0.0; lead];
                    bins.push(10.0 * (1.0 + los_scale));
                    bins.extend(tail);
                    ImpulseResponse::new(0.0, DT, bins).unwrap()
                },
            )
        }

        proptest! {
            #[test]
            fn scaling_scales_powers(ir in arb_ir(), k in 0.001f64..1000.0) {
                let p = FeatureParams::default();
                let a = extract_features(&ir, 1.0, &p).unwrap();
                let b = extract_features(&ir.scaled(k), 1.0, &p).unwrap();
                prop_assert_eq!(a.spp_valid, b.spp_valid);
                prop_assert!((b.p_los - k * a.p_los).abs() <= 1e-12 * b.p_los);
                prop_assert!((b.p_spp - k * a.p_spp).abs() <= 1e-12 * b.p_spp.max(1e-300));
                prop_assert_eq!(a.delta_tau, b.delta_tau);
            }

            #[test]
            fn delay_shift_is_invisible(ir in arb_ir(), shift in 0usize..50) {
                let p = FeatureParams::default();
                let mut bins = vec![0.0; shift];
                bins.extend(&ir.bins);
                let shifted = ImpulseResponse::new(ir.t0, ir.dt, bins).unwrap();
                prop_assert_eq!(
                    extract_features(&ir, 1.0, &p).unwrap(),
                    extract_features(&shifted, 1.0, &p).unwrap()
                );
            }
        }
    }
}
