//! IIR filters as cascaded second-order sections, applied forward and
//! backward for zero phase.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// One direct-form II transposed section with `a0` normalised to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        let num = self.b[0] + z1 * self.b[1] + z2 * self.b[2];
        let den = 1.0 + z1 * self.a[0] + z2 * self.a[1];
        num / den
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// State reached after an infinitely long unit-step input.
    fn step_state(&self) -> [f64; 2] {
        let y = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * y;
        [y - self.b[0], z2]
    }
}

/// A cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    sections: Vec<Biquad>,
}

impl Sos {
    pub fn new(sections: Vec<Biquad>) -> Self {
        Self { sections }
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Complex response at normalised angular frequency `omega` (rad/sample).
    pub fn response(&self, omega: f64) -> Complex64 {
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(omega))
    }

    /// Causal filtering with per-section initial states.
    fn run(&self, x: &[f64], init: &[[f64; 2]]) -> Vec<f64> {
        let mut y = x.to_vec();
        for (s, z0) in self.sections.iter().zip(init) {
            let [mut z1, mut z2] = *z0;
            for v in y.iter_mut() {
                let input = *v;
                let out = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[0] * out + z2;
                z2 = s.b[2] * input - s.a[1] * out;
                *v = out;
            }
        }
        y
    }

    /// Step-response states for the whole cascade, scaled by `level`.
    fn steady_states(&self, level: f64) -> Vec<[f64; 2]> {
        let mut gain = level;
        self.sections
            .iter()
            .map(|s| {
                let [a, b] = s.step_state();
                let st = [a * gain, b * gain];
                gain *= s.dc_gain();
                st
            })
            .collect()
    }

    /// Zero-phase filtering: odd-reflection padding, steady-state initial
    /// conditions, then a forward and a backward pass.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        if x.len() < 2 {
            return x.to_vec();
        }
        let n = x.len();
        let pad = n - 1;
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let fwd = self.run(&ext, &self.steady_states(ext[0]));
        let mut rev: Vec<f64> = fwd.into_iter().rev().collect();
        let init = self.steady_states(rev[0]);
        rev = self.run(&rev, &init);
        rev.reverse();
        rev[pad..pad + n].to_vec()
    }
}

/// Butterworth band-pass as `order` biquads (prototype order `order`,
/// overall order `2 * order`), designed with the prewarped bilinear transform.
pub fn butterworth_bandpass_sos(fs: f64, lo: f64, hi: f64, order: usize) -> Result<Sos> {
    if !(fs > 0.0 && lo > 0.0 && lo < hi && hi < fs / 2.0) {
        return Err(Error::contract(format!(
            "band-pass needs 0 < lo < hi < fs/2, got lo={lo} hi={hi} fs={fs}"
        )));
    }
    if order == 0 || order % 2 != 0 {
        return Err(Error::contract(format!(
            "band-pass order must be a positive even number, got {order}"
        )));
    }
    let fs2 = 2.0 * fs;
    let w1 = fs2 * (PI * lo / fs).tan();
    let w2 = fs2 * (PI * hi / fs).tan();
    let w0 = (w1 * w2).sqrt();
    let bw = w2 - w1;

    let mut analog = Vec::with_capacity(2 * order);
    for k in 0..order {
        let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
        let p = Complex64::from_polar(1.0, theta);
        let half = p * (bw / 2.0);
        let disc = (half * half - w0 * w0).sqrt();
        analog.push(half + disc);
        analog.push(half - disc);
    }
    let mut upper: Vec<Complex64> = analog
        .iter()
        .map(|&s| (fs2 + s) / (fs2 - s))
        .filter(|z| z.im > 0.0)
        .collect();
    if upper.len() != order {
        return Err(Error::Numeric(format!(
            "band-pass design produced {} complex pole pairs, expected {order}",
            upper.len()
        )));
    }
    upper.sort_by(|a, b| a.arg().total_cmp(&b.arg()));

    // Unit gain at the digital image of the analog centre frequency.
    let center = 2.0 * (w0 / fs2).atan();
    let sections = upper
        .into_iter()
        .map(|z| {
            let mut s = Biquad {
                b: [1.0, 0.0, -1.0],
                a: [-2.0 * z.re, z.norm_sqr()],
            };
            let g = s.response(center).norm();
            s.b.iter_mut().for_each(|v| *v /= g);
            s
        })
        .collect();
    Ok(Sos::new(sections))
}

/// Second-order IIR notch at `f0` with quality factor `q`.
pub fn notch_sos(fs: f64, f0: f64, q: f64) -> Result<Sos> {
    if !(fs > 0.0 && f0 > 0.0 && f0 < fs / 2.0) {
        return Err(Error::contract(format!(
            "notch frequency must satisfy 0 < f0 < fs/2, got f0={f0} fs={fs}"
        )));
    }
    if !(q > 0.0) {
        return Err(Error::contract(format!("notch q must be positive, got {q}")));
    }
    let w0 = 2.0 * PI * f0 / fs;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let c = -2.0 * w0.cos();
    Ok(Sos::new(vec![Biquad {
        b: [1.0 / a0, c / a0, 1.0 / a0],
        a: [c / a0, (1.0 - alpha) / a0],
    }]))
}

/// Zero-phase Butterworth band-pass.
pub fn butterworth_bandpass(x: &[f64], fs: f64, lo: f64, hi: f64, order: usize) -> Result<Vec<f64>> {
    Ok(butterworth_bandpass_sos(fs, lo, hi, order)?.filtfilt(x))
}

/// Zero-phase notch.
pub fn notch_filter(x: &[f64], fs: f64, f0: f64, q: f64) -> Result<Vec<f64>> {
    Ok(notch_sos(fs, f0, q)?.filtfilt(x))
}
