//! Time embedding and normalization statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{DeviceParams, CHANNEL_NAMES};

/// Index of the current-density channel, the only one not masked to the stack.
pub const J_CHANNEL: usize = 4;

/// `s(tau) = log10(1 + tau / 1 s)`; finite at `tau = 0`.
pub fn time_embed(tau: f64) -> Result<f64> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::Usage(format!("retention time must be finite and >= 0, got {tau}")));
    }
    Ok(tau.ln_1p() / std::f64::consts::LN_10)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarRange {
    pub min: f64,
    pub max: f64,
}

impl ScalarRange {
    fn from_values(name: &str, values: impl Iterator<Item = f64>) -> Result<Self> {
        let (min, max) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if !(max > min) {
            return Err(Error::Config(format!("degenerate {name} range [{min}, {max}] in the training split")));
        }
        Ok(Self { min, max })
    }

    /// Maps `[min, max]` onto `[-1, 1]`; values outside extend linearly.
    pub fn to_unit(&self, x: f64) -> f64 {
        2.0 * (x - self.min) / (self.max - self.min) - 1.0
    }

    pub fn from_unit(&self, u: f64) -> f64 {
        (u + 1.0) * 0.5 * (self.max - self.min) + self.min
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

/// Scalar ranges and per-channel standardization, computed on the seen split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub t_hzo: ScalarRange,
    pub temp: ScalarRange,
    pub s_tau: ScalarRange,
    /// One entry per map channel, in storage order.
    pub channels: Vec<ChannelStats>,
}

impl NormStats {
    /// Two-pass statistics over `(params, maps, stack mask)` samples, where
    /// `maps` holds the five channels back to back.
    pub fn compute(samples: &[(DeviceParams, &[f64], &[u8])]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        let counted = |c: usize, m: u8| c == J_CHANNEL || m == 1;
        let mut sums = [0.0; 5];
        let mut counts = [0usize; 5];
        for (_, maps, stack) in samples {
            let n = stack.len();
            assert_eq!(maps.len(), 5 * n, "maps must hold five planes");
            for c in 0..5 {
                for (v, &m) in maps[c * n..(c + 1) * n].iter().zip(*stack) {
                    if counted(c, m) {
                        sums[c] += v;
                        counts[c] += 1;
                    }
                }
            }
        }
        let mean: [f64; 5] = std::array::from_fn(|c| sums[c] / counts[c].max(1) as f64);
        let mut sq = [0.0; 5];
        for (_, maps, stack) in samples {
            let n = stack.len();
            for c in 0..5 {
                for (v, &m) in maps[c * n..(c + 1) * n].iter().zip(*stack) {
                    if counted(c, m) {
                        sq[c] += (v - mean[c]).powi(2);
                    }
                }
            }
        }
        let mut channels = Vec::with_capacity(5);
        for c in 0..5 {
            let std = (sq[c] / counts[c].max(1) as f64).sqrt();
            if !(std > 0.0) || !std.is_finite() {
                return Err(Error::Config(format!("channel {} has zero spread", CHANNEL_NAMES[c])));
            }
            channels.push(ChannelStats { mean: mean[c], std });
        }
        let embedded: Vec<f64> = samples.iter().map(|(p, _, _)| time_embed(p.tau)).collect::<Result<_>>()?;
        Ok(NormStats {
            t_hzo: ScalarRange::from_values("t_hzo", samples.iter().map(|(p, _, _)| p.t_hzo))?,
            temp: ScalarRange::from_values("temperature", samples.iter().map(|(p, _, _)| p.temp))?,
            s_tau: ScalarRange::from_values("s(tau)", embedded.into_iter())?,
            channels,
        })
    }

    /// Normalized `(t_hzo, temp, s(tau))`.
    pub fn embed(&self, params: &DeviceParams) -> Result<[f64; 3]> {
        Ok([
            self.t_hzo.to_unit(params.t_hzo),
            self.temp.to_unit(params.temp),
            self.s_tau.to_unit(time_embed(params.tau)?),
        ])
    }

    /// Standardizes maps in place. Stack-masked channels are zero off-stack.
    pub fn normalize(&self, maps: &mut [f64], stack: &[u8]) {
        self.apply(maps, stack, |v, s| (v - s.mean) / s.std);
    }

    /// Inverse of [`NormStats::normalize`].
    pub fn denormalize(&self, maps: &mut [f64], stack: &[u8]) {
        self.apply(maps, stack, |v, s| v * s.std + s.mean);
    }

    fn apply(&self, maps: &mut [f64], stack: &[u8], f: impl Fn(f64, &ChannelStats) -> f64) {
        let n = stack.len();
        assert_eq!(maps.len(), 5 * n, "maps must hold five planes");
        for (c, s) in self.channels.iter().enumerate() {
            for (v, &m) in maps[c * n..(c + 1) * n].iter_mut().zip(stack) {
                *v = if c == J_CHANNEL || m == 1 { f(*v, s) } else { 0.0 };
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table_stats() -> NormStats {
        NormStats {
            t_hzo: ScalarRange { min: 5.0, max: 9.0 },
            temp: ScalarRange { min: 300.0, max: 473.0 },
            s_tau: ScalarRange {
                min: 0.0,
                max: time_embed(1e4).unwrap(),
            },
            channels: vec![ChannelStats { mean: 0.5, std: 2.0 }; 5],
        }
    }

    #[test]
    fn time_embedding_values() {
        assert_eq!(time_embed(0.0).unwrap(), 0.0);
        assert!((time_embed(1e4).unwrap() - 4.000_043_427_276_863).abs() < 1e-12);
        let s: Vec<f64> = crate::oracle::TABLE_TAUS.iter().map(|&t| time_embed(t).unwrap()).collect();
        assert!(s.windows(2).all(|w| w[1] > w[0]));
        assert!(matches!(time_embed(-1.0), Err(Error::Usage(_))));
        assert!(time_embed(f64::NAN).is_err());
    }

    #[test]
    fn scalar_embedding_endpoints() {
        let s = table_stats();
        let e = s.embed(&DeviceParams::new(7.0, 386.5, 0.0)).unwrap();
        assert!(e[0].abs() < 1e-15 && e[1].abs() < 1e-12 && e[2] == -1.0);
        let e = s.embed(&DeviceParams::new(5.0, 300.0, 1e4)).unwrap();
        assert!((e[0] + 1.0).abs() < 1e-4 && (e[1] + 1.0).abs() < 1e-4 && (e[2] - 1.0).abs() < 1e-4);
        let e = s.embed(&DeviceParams::new(9.0, 473.0, 0.0)).unwrap();
        assert_eq!(e, [1.0, 1.0, -1.0]);
        // Out-of-range inputs extend linearly.
        assert!((s.t_hzo.to_unit(10.0) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_range_is_a_config_error() {
        let maps = vec![1.0; 5 * 4];
        let maps2 = vec![2.0; 5 * 4];
        let stack = vec![1u8; 4];
        let p = DeviceParams::new(7.0, 300.0, 0.0);
        let q = DeviceParams::new(7.0, 400.0, 10.0);
        let r = NormStats::compute(&[(p, &maps[..], &stack[..]), (q, &maps2[..], &stack[..])]);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn stats_use_stack_cells_except_for_current() {
        // Two cells, one on the stack.
        let stack = vec![1u8, 0];
        let a = vec![1.0, 100.0, 1.0, 100.0, 1.0, 100.0, 1.0, 100.0, 1.0, 5.0];
        let b = vec![3.0, -100.0, 3.0, -100.0, 3.0, -100.0, 3.0, -100.0, 3.0, 7.0];
        let s = NormStats::compute(&[
            (DeviceParams::new(5.0, 300.0, 0.0), &a[..], &stack[..]),
            (DeviceParams::new(9.0, 473.0, 1e4), &b[..], &stack[..]),
        ])
        .unwrap();
        for c in 0..4 {
            assert_eq!(s.channels[c], ChannelStats { mean: 2.0, std: 1.0 });
        }
        assert_eq!(s.channels[4].mean, 4.0);
        assert!((s.channels[4].std - 5f64.sqrt()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn normalize_round_trip(values in proptest::collection::vec(-1e8f64..1e8, 5 * 16),
                                 mask in proptest::collection::vec(0u8..2, 16),
                                 mean in -1e3f64..1e3, std in 1e-3f64..1e3) {
            let mut s = table_stats();
            s.channels = vec![ChannelStats { mean, std }; 5];
            let mut v = values.clone();
            s.normalize(&mut v, &mask);
            s.denormalize(&mut v, &mask);
            for c in 0..5 {
                for i in 0..16 {
                    let k = c * 16 + i;
                    if c == J_CHANNEL || mask[i] == 1 {
                        prop_assert!((v[k] - values[k]).abs() <= 1e-12 * values[k].abs().max(1.0));
                    } else {
                        prop_assert_eq!(v[k], 0.0);
                    }
                }
            }
        }
    }
}
