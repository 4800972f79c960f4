use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{DescriptorField, DescriptorKind};
use crate::error::{Error, Result};
use crate::lb::LbSpectrum;
use crate::stats;

/// Floor applied to HKS values before taking logs.
pub const HKS_FLOOR: f64 = 1e-300;

/// Heat kernel signature `sum_k exp(-lambda_k t) phi_k(s)^2` at each time.
pub fn hks(spec: &LbSpectrum, times: &[f64]) -> Result<DescriptorField> {
    if times.is_empty() {
        return Err(Error::invalid("HKS needs at least one time"));
    }
    if times.iter().any(|&t| !(t > 0.0)) || times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("HKS times must be positive and strictly ascending"));
    }
    stats::count_descriptor();
    let decay = decay_table(spec, times);
    let n = spec.vertex_count();
    let mut values = Vec::with_capacity(n * times.len());
    for s in 0..n {
        values.extend(heat_row(spec, &decay, times.len(), s));
    }
    DescriptorField::new(values, times.len(), DescriptorKind::Hks)
}

/// Log-spaced times from `4 ln 10 / lambda_max` to `4 ln 10 / lambda_2`.
pub fn default_hks_times(spec: &LbSpectrum, count: usize) -> Result<Vec<f64>> {
    let nonzero = nonzero_eigenvalues(spec);
    if nonzero.is_empty() || count == 0 {
        return Err(Error::invalid("HKS time grid needs a nonzero eigenvalue and count >= 1"));
    }
    let c = 4.0 * std::f64::consts::LN_10;
    let (lo, hi) = ((c / nonzero[nonzero.len() - 1]).ln(), (c / nonzero[0]).ln());
    if count == 1 {
        return Ok(vec![lo.exp()]);
    }
    Ok((0..count).map(|i| (lo + (hi - lo) * i as f64 / (count - 1) as f64).exp()).collect())
}

/// `exp(-lambda_k t_j)` laid out `[j * K + k]`.
fn decay_table(spec: &LbSpectrum, times: &[f64]) -> Vec<f64> {
    let mut table = Vec::with_capacity(times.len() * spec.len());
    for &t in times {
        table.extend(spec.eigenvalues.iter().map(|&l| (-l * t).exp()));
    }
    table
}

fn heat_row<'a>(spec: &'a LbSpectrum, decay: &'a [f64], count: usize, s: usize) -> impl Iterator<Item = f64> + 'a {
    let k_count = spec.len();
    let phi_sq: Vec<f64> = (0..k_count).map(|k| spec.phi_sq(s, k)).collect();
    (0..count).map(move |j| {
        let row = &decay[j * k_count..(j + 1) * k_count];
        row.iter().zip(&phi_sq).map(|(d, p)| d * p).sum()
    })
}

fn nonzero_eigenvalues(spec: &LbSpectrum) -> Vec<f64> {
    let max = spec.eigenvalues.iter().copied().fold(0.0, f64::max);
    spec.eigenvalues.iter().copied().filter(|&l| l > 1e-8 * max && l > 0.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SihksParams {
    /// Base of the logarithmic time grid `t = base^tau`.
    pub base: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub tau_step: f64,
    /// Number of leading Fourier magnitudes kept.
    pub frequencies: usize,
}

impl Default for SihksParams {
    fn default() -> Self {
        Self { base: 2.0, tau_min: 1.0, tau_max: 25.0, tau_step: 1.0 / 16.0, frequencies: 50 }
    }
}

impl SihksParams {
    pub fn taus(&self) -> Vec<f64> {
        let count = ((self.tau_max - self.tau_min) / self.tau_step).round() as usize + 1;
        (0..count).map(|i| self.tau_min + i as f64 * self.tau_step).collect()
    }
}

/// Scale-invariant HKS: HKS on a log-time grid, log, first difference in
/// `tau`, magnitude of the discrete Fourier transform, leading frequencies.
pub fn sihks(spec: &LbSpectrum, params: &SihksParams) -> Result<DescriptorField> {
    if !(params.base > 1.0) || !(params.tau_step > 0.0) || params.tau_max <= params.tau_min {
        return Err(Error::invalid("SIHKS needs base > 1 and a non-empty tau range"));
    }
    let taus = params.taus();
    let diffs = taus.len() - 1;
    if params.frequencies == 0 || params.frequencies > diffs {
        return Err(Error::invalid(format!(
            "SIHKS keeps {} frequencies but the grid yields {diffs}",
            params.frequencies
        )));
    }
    stats::count_descriptor();
    let times: Vec<f64> = taus.iter().map(|&tau| params.base.powf(tau)).collect();
    let decay = decay_table(spec, &times);
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(diffs);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::default(); diffs];
    let n = spec.vertex_count();
    let mut values = Vec::with_capacity(n * params.frequencies);
    for s in 0..n {
        let logs: Vec<f64> = heat_row(spec, &decay, times.len(), s).map(|h| h.max(HKS_FLOOR).ln()).collect();
        for (slot, w) in buf.iter_mut().zip(logs.windows(2)) {
            *slot = Complex::new(w[1] - w[0], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        values.extend(buf[..params.frequencies].iter().map(|c| c.norm()));
    }
    DescriptorField::new(values, params.frequencies, DescriptorKind::Sihks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WksParams {
    /// Number of energies, spanning `[log lambda_2, log lambda_K]`.
    pub energies: usize,
    /// Gaussian width as a multiple of the energy step.
    pub sigma_factor: f64,
    /// Explicit width; overrides `sigma_factor` when set.
    pub sigma: Option<f64>,
}

impl Default for WksParams {
    fn default() -> Self {
        Self { energies: 100, sigma_factor: 7.0, sigma: None }
    }
}

/// Wave kernel signature with per-energy weight normalization.
pub fn wks(spec: &LbSpectrum, params: &WksParams) -> Result<DescriptorField> {
    if params.energies == 0 {
        return Err(Error::invalid("WKS needs at least one energy"));
    }
    let max = spec.eigenvalues.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::invalid("WKS needs a nonzero eigenvalue (all eigenvalues are zero)"));
    }
    stats::count_descriptor();
    let active: Vec<(usize, f64)> = spec
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|&(_, &l)| l > 1e-8 * max && l > 0.0)
        .map(|(k, &l)| (k, l.ln()))
        .collect();
    let (e_min, e_max) = (active[0].1, active[active.len() - 1].1);
    let step = if params.energies > 1 { (e_max - e_min) / (params.energies - 1) as f64 } else { 0.0 };
    let sigma = match params.sigma {
        Some(s) => s,
        None if step > 0.0 => params.sigma_factor * step,
        None => 1.0,
    };
    if !(sigma > 0.0) {
        return Err(Error::invalid("WKS sigma must be positive"));
    }
    // normalized weights, laid out [i * |active| + a]
    let mut weights = Vec::with_capacity(params.energies * active.len());
    for i in 0..params.energies {
        let e = e_min + step * i as f64;
        let raw: Vec<f64> = active.iter().map(|&(_, le)| (-(e - le).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid(format!("WKS weights underflow at energy {e}")));
        }
        weights.extend(raw.iter().map(|w| w / total));
    }
    let n = spec.vertex_count();
    let mut values = Vec::with_capacity(n * params.energies);
    for s in 0..n {
        let phi_sq: Vec<f64> = active.iter().map(|&(k, _)| spec.phi_sq(s, k)).collect();
        for i in 0..params.energies {
            let w = &weights[i * active.len()..(i + 1) * active.len()];
            values.push(w.iter().zip(&phi_sq).map(|(a, b)| a * b).sum());
        }
    }
    DescriptorField::new(values, params.energies, DescriptorKind::Wks)
}
