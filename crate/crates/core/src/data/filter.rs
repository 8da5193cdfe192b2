//! Zero-phase Butterworth high-pass filtering.
//!
//! The filter is designed as cascaded biquads (bilinear transform with
//! frequency prewarping) and applied forward then backward, so the phase
//! response cancels and the magnitude response is squared. Edges are
//! extended by odd reflection and each pass starts from the steady state of
//! the first padded sample.

use serde::{Deserialize, Serialize};

use super::EpochSet;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSpec {
    pub cutoff_hz: f64,
    pub order: usize,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            cutoff_hz: 4.0,
            order: 4,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        let nyquist = sample_rate_hz / 2.0;
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz < nyquist) {
            return Err(Error::invalid(
                "cutoff_hz",
                format!("{} Hz must lie strictly between 0 and Nyquist ({nyquist} Hz)", self.cutoff_hz),
            ));
        }
        if self.order == 0 {
            return Err(Error::invalid("order", "must be positive"));
        }
        Ok(())
    }
}

/// One second-order section, `a0` normalized to 1.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 3],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    /// Transposed direct-form II state for a unit constant input.
    fn steady_state(&self) -> [f64; 2] {
        let y = self.dc_gain();
        let z2 = self.b[2] - self.a[2] * y;
        let z1 = self.b[1] - self.a[1] * y + z2;
        [z1, z2]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Butterworth {
    sections: Vec<Biquad>,
    order: usize,
}

#[derive(Clone, Copy)]
struct C(f64, f64);

impl C {
    fn add(self, o: C) -> C {
        C(self.0 + o.0, self.1 + o.1)
    }
    fn sub(self, o: C) -> C {
        C(self.0 - o.0, self.1 - o.1)
    }
    fn div(self, o: C) -> C {
        let d = o.0 * o.0 + o.1 * o.1;
        C((self.0 * o.0 + self.1 * o.1) / d, (self.1 * o.0 - self.0 * o.1) / d)
    }
}

impl Butterworth {
    pub fn highpass(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        FilterSpec { cutoff_hz, order }.validate(sample_rate_hz)?;
        let fs2 = 2.0 * sample_rate_hz;
        let warped = fs2 * (std::f64::consts::PI * cutoff_hz / sample_rate_hz).tan();
        let n = order as f64;
        let mut sections = Vec::new();
        // upper-half-plane prototype poles; conjugates are implied
        for k in 0..order / 2 {
            let theta = std::f64::consts::PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n);
            let lp = C(theta.cos(), theta.sin());
            // s -> wc/s maps a unit-circle pole p to wc·conj(p)
            let hp = C(warped * lp.0, -warped * lp.1);
            let z = C(fs2, 0.0).add(hp).div(C(fs2, 0.0).sub(hp));
            let a = [1.0, -2.0 * z.0, z.0 * z.0 + z.1 * z.1];
            let b = [1.0, -2.0, 1.0];
            // unit gain at Nyquist (z = -1)
            let g = (a[0] - a[1] + a[2]) / (b[0] - b[1] + b[2]);
            sections.push(Biquad {
                b: b.map(|v| v * g),
                a,
            });
        }
        if order % 2 == 1 {
            let p = -warped;
            let z = (fs2 + p) / (fs2 - p);
            let a = [1.0, -z, 0.0];
            let b = [1.0, -1.0, 0.0];
            let g = (1.0 + z) / 2.0;
            sections.push(Biquad {
                b: b.map(|v| v * g),
                a,
            });
        }
        Ok(Butterworth { sections, order })
    }

    /// Samples of odd reflection added to each edge.
    pub fn pad_len(&self) -> usize {
        3 * (self.order + 1)
    }

    /// Magnitude of the single-pass digital response at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * freq_hz / sample_rate_hz;
        let eval = |c: &[f64; 3]| {
            let re = c[0] + c[1] * w.cos() + c[2] * (2.0 * w).cos();
            let im = -c[1] * w.sin() - c[2] * (2.0 * w).sin();
            (re * re + im * im).sqrt()
        };
        self.sections.iter().map(|s| eval(&s.b) / eval(&s.a)).product()
    }

    fn filter_pass(&self, x: &mut [f64]) {
        let x0 = x[0];
        let mut scale = 1.0;
        for s in &self.sections {
            let zi = s.steady_state();
            let (mut z1, mut z2) = (zi[0] * scale * x0, zi[1] * scale * x0);
            scale *= s.dc_gain();
            let [b0, b1, b2] = s.b;
            let [_, a1, a2] = s.a;
            for v in x.iter_mut() {
                let xi = *v;
                let y = b0 * xi + z1;
                z1 = b1 * xi - a1 * y + z2;
                z2 = b2 * xi - a2 * y;
                *v = y;
            }
        }
    }

    /// Forward-backward application to one signal.
    pub fn filtfilt(&self, signal: &[f64]) -> Vec<f64> {
        let n = signal.len();
        if n < 2 {
            return signal.iter().map(|_| 0.0).collect();
        }
        let pad = self.pad_len().min(n - 1);
        let (first, last) = (signal[0], signal[n - 1]);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * first - signal[i]));
        ext.extend_from_slice(signal);
        ext.extend((1..=pad).map(|i| 2.0 * last - signal[n - 1 - i]));
        self.filter_pass(&mut ext);
        ext.reverse();
        self.filter_pass(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Filter every channel of every trial independently.
pub fn highpass_filter(set: &EpochSet, spec: &FilterSpec) -> Result<EpochSet> {
    let bw = Butterworth::highpass(spec.order, spec.cutoff_hz, set.sample_rate_hz)?;
    Ok(set.map_channels(|x, _| {
        let x64: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        bw.filtfilt(&x64).into_iter().map(|v| v as f32).collect()
    }))
}
