//! Ambient-response simulation by modal superposition.
//!
//! Every top-edge node carries an independent Gaussian white-noise vertical
//! force (zero-order hold at the sampling rate). Projected onto the retained
//! modes this is a Gaussian vector with covariance `Φ_fᵀ Φ_f`, so the modal
//! forces are drawn directly through its Cholesky factor. Each modal SDOF is
//! advanced with the exact ZOH discretization, which keeps the record an
//! exact realization of a linear stochastic state-space model — precisely the
//! structure subspace identification assumes.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::fe::{BridgeModel, ModalSolution};
use crate::seeds::stream_rng;
use crate::{Error, Result};

use super::SensorLayout;

/// Sampled acceleration record at the sensor channels.
#[derive(Debug, Clone, PartialEq)]
pub struct AccelerationRecord {
    /// Sampling rate (Hz).
    pub sample_rate: f64,
    /// Record duration (s).
    pub duration: f64,
    /// One time series per sensor (m/s²).
    pub channels: Vec<Vec<f64>>,
    /// Whether measurement noise has been added.
    pub noisy: bool,
    /// Seed the record was generated from.
    pub seed: u64,
}

impl AccelerationRecord {
    pub fn n_samples(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn channel_rms(&self, ch: usize) -> f64 {
        let c = &self.channels[ch];
        (c.iter().map(|x| x * x).sum::<f64>() / c.len() as f64).sqrt()
    }

    /// Binary columnar dump: header (fs, channels, samples, duration, seed,
    /// noise flag) followed by channel-major little-endian f64 data.
    pub fn write_binary(&self, mut w: impl std::io::Write) -> Result<()> {
        w.write_all(b"SVAR")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&self.sample_rate.to_le_bytes())?;
        w.write_all(&(self.channels.len() as u32).to_le_bytes())?;
        w.write_all(&(self.n_samples() as u64).to_le_bytes())?;
        w.write_all(&self.duration.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&[u8::from(self.noisy)])?;
        for ch in &self.channels {
            for v in ch {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl std::io::Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"SVAR" {
            return Err(Error::Config("not an acceleration record file".to_string()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != 1 {
            return Err(Error::Config(format!("unsupported record version {version}")));
        }
        r.read_exact(&mut b8)?;
        let sample_rate = f64::from_le_bytes(b8);
        r.read_exact(&mut b4)?;
        let n_ch = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let n_samp = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let duration = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let mut channels = Vec::with_capacity(n_ch);
        for _ in 0..n_ch {
            let mut ch = Vec::with_capacity(n_samp);
            for _ in 0..n_samp {
                r.read_exact(&mut b8)?;
                ch.push(f64::from_le_bytes(b8));
            }
            channels.push(ch);
        }
        Ok(Self {
            sample_rate,
            duration,
            channels,
            noisy: flag[0] != 0,
            seed,
        })
    }
}

/// Reduced modal description used by the simulator: frequencies, damping,
/// output rows at the sensors and the Cholesky factor of the modal forcing
/// covariance.
#[derive(Debug, Clone)]
pub struct ModalBasis {
    /// Circular frequencies (rad/s).
    pub omegas: Vec<f64>,
    /// Modal damping ratios.
    pub dampings: Vec<f64>,
    /// Shape values at the sensors, `output[(sensor, mode)]`.
    pub output: DMatrix<f64>,
    /// Lower Cholesky factor of the modal force covariance.
    pub forcing_chol: DMatrix<f64>,
}

impl ModalBasis {
    /// Builds the basis from a bridge modal solution. Forces act on the
    /// vertical DOFs of all top-edge nodes (discretized distributed load).
    pub fn from_bridge(
        model: &BridgeModel,
        modal: &ModalSolution,
        layout: &SensorLayout,
        damping: f64,
    ) -> Result<Self> {
        let n_modes = modal.eigenvalues.len();
        let forced: Vec<usize> = model
            .top_nodes()
            .iter()
            .map(|&n| BridgeModel::vertical_dof(n))
            .collect();
        let mut phi_f = DMatrix::zeros(forced.len(), n_modes);
        for (r, &dof) in forced.iter().enumerate() {
            for m in 0..n_modes {
                phi_f[(r, m)] = modal.shapes[(dof, m)];
            }
        }
        let cov = phi_f.transpose() * &phi_f;
        let forcing_chol = robust_cholesky(cov)?;
        let dofs = layout.sensor_dofs(model);
        let mut output = DMatrix::zeros(dofs.len(), n_modes);
        for (r, &dof) in dofs.iter().enumerate() {
            for m in 0..n_modes {
                output[(r, m)] = modal.shapes[(dof, m)];
            }
        }
        Ok(Self {
            omegas: modal.eigenvalues.iter().map(|l| l.sqrt()).collect(),
            dampings: vec![damping; n_modes],
            output,
            forcing_chol,
        })
    }

    /// Arbitrary basis (used for analytic test systems).
    pub fn from_parts(
        omegas: Vec<f64>,
        dampings: Vec<f64>,
        output: DMatrix<f64>,
        forcing_shapes: DMatrix<f64>,
    ) -> Result<Self> {
        let cov = forcing_shapes.transpose() * &forcing_shapes;
        let forcing_chol = robust_cholesky(cov)?;
        Ok(Self {
            omegas,
            dampings,
            output,
            forcing_chol,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.omegas.len()
    }

    /// Drops modes at or above the given frequency (anti-aliasing band edge).
    pub fn band_limited(&self, f_max: f64) -> Self {
        let keep: Vec<usize> = self
            .omegas
            .iter()
            .enumerate()
            .filter(|(_, w)| **w / (2.0 * std::f64::consts::PI) < f_max)
            .map(|(i, _)| i)
            .collect();
        let mut output = DMatrix::zeros(self.output.nrows(), keep.len());
        let mut chol_cols = DMatrix::zeros(self.forcing_chol.nrows(), keep.len());
        for (c, &m) in keep.iter().enumerate() {
            for r in 0..self.output.nrows() {
                output[(r, c)] = self.output[(r, m)];
            }
            for r in 0..self.forcing_chol.nrows() {
                chol_cols[(r, c)] = self.forcing_chol[(r, m)];
            }
        }
        // Re-derive the forcing covariance restricted to the kept modes.
        let mut cov = DMatrix::zeros(keep.len(), keep.len());
        for (a, &ma) in keep.iter().enumerate() {
            for (b, &mb) in keep.iter().enumerate() {
                let mut s = 0.0;
                for r in 0..self.forcing_chol.ncols() {
                    s += self.forcing_chol[(ma, r)] * self.forcing_chol[(mb, r)];
                }
                cov[(a, b)] = s;
            }
        }
        let forcing_chol = robust_cholesky(cov).expect("restriction of a PSD matrix");
        Self {
            omegas: keep.iter().map(|&m| self.omegas[m]).collect(),
            dampings: keep.iter().map(|&m| self.dampings[m]).collect(),
            output,
            forcing_chol,
        }
    }
}

fn robust_cholesky(mut cov: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = cov.diagonal().amax();
    for i in 0..cov.nrows() {
        cov[(i, i)] += 1e-12 * scale.max(f64::MIN_POSITIVE);
    }
    nalgebra::Cholesky::new(cov)
        .map(|c| c.l())
        .ok_or_else(|| Error::Numerical("modal forcing covariance not PSD".to_string()))
}

/// Simulation settings for the synthetic data generator.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    /// Sampling rate (Hz).
    pub fs: f64,
    /// Record length (s).
    pub duration: f64,
    /// Modal damping ratio applied to every simulated mode.
    pub damping: f64,
    /// Simulated modes (at least twice the identified count).
    pub n_modes_sim: usize,
    /// White-noise force amplitude (arbitrary units; linear system).
    pub amplitude: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            fs: 256.0,
            duration: 600.0,
            damping: 0.02,
            n_modes_sim: 12,
            amplitude: 1.0,
        }
    }
}

/// Response of an explicit modal basis to seeded white-noise forcing.
pub fn simulate_modal_response(
    basis: &ModalBasis,
    fs: f64,
    duration: f64,
    amplitude: f64,
    seed: u64,
) -> Result<AccelerationRecord> {
    if !(fs > 0.0) || !(duration > 0.0) {
        return Err(Error::Config(format!(
            "sampling rate and duration must be positive, got fs={fs}, duration={duration}"
        )));
    }
    let n_modes = basis.n_modes();
    let n_sensors = basis.output.nrows();
    let n_steps = (duration * fs).round() as usize;
    let h = 1.0 / fs;

    // Exact ZOH discretization per modal SDOF.
    let mut ad = Vec::with_capacity(n_modes);
    let mut bd = Vec::with_capacity(n_modes);
    for m in 0..n_modes {
        let w = basis.omegas[m];
        let z = basis.dampings[m];
        let a = z * w;
        let wd = w * (1.0 - z * z).sqrt();
        let e = (-a * h).exp();
        let (sin, cos) = ((wd * h).sin(), (wd * h).cos());
        let a00 = e * (cos + a * sin / wd);
        let a01 = e * (sin / wd);
        let a10 = -w * w * a01;
        let a11 = e * (cos - a * sin / wd);
        ad.push([a00, a01, a10, a11]);
        // Bd = A⁻¹ (Ad − I) B with A = [[0,1],[−ω²,−2ζω]], B = [0,1]ᵀ.
        let b0 = -(2.0 * z / w) * a01 - (a11 - 1.0) / (w * w);
        let b1 = a01;
        bd.push([b0, b1]);
    }

    let mut rng = stream_rng(seed, 0);
    let mut q = vec![0.0; n_modes];
    let mut v = vec![0.0; n_modes];
    let mut p = vec![0.0; n_modes];
    let mut z = vec![0.0; n_modes];
    let mut channels = vec![Vec::with_capacity(n_steps); n_sensors];
    for _ in 0..n_steps {
        for zm in z.iter_mut() {
            *zm = StandardNormal.sample(&mut rng);
        }
        for m in 0..n_modes {
            let mut s = 0.0;
            for k in 0..=m {
                s += basis.forcing_chol[(m, k)] * z[k];
            }
            p[m] = amplitude * s;
        }
        for (ch, channel) in channels.iter_mut().enumerate() {
            let mut acc = 0.0;
            for m in 0..n_modes {
                let w = basis.omegas[m];
                let a_modal = p[m] - 2.0 * basis.dampings[m] * w * v[m] - w * w * q[m];
                acc += basis.output[(ch, m)] * a_modal;
            }
            channel.push(acc);
        }
        for m in 0..n_modes {
            let (qm, vm) = (q[m], v[m]);
            q[m] = ad[m][0] * qm + ad[m][1] * vm + bd[m][0] * p[m];
            v[m] = ad[m][2] * qm + ad[m][3] * vm + bd[m][1] * p[m];
        }
    }
    Ok(AccelerationRecord {
        sample_rate: fs,
        duration,
        channels,
        noisy: false,
        seed,
    })
}

/// Convenience wrapper over the full bridge path: modal analysis of the
/// (already damaged) model, Nyquist check against the identification band,
/// band-limiting of the simulated modes, and response generation.
pub fn simulate_bridge_response(
    model: &BridgeModel,
    layout: &SensorLayout,
    sim: &SimulationConfig,
    n_modes_identify: usize,
    seed: u64,
) -> Result<AccelerationRecord> {
    let modal = model.modal_analysis(sim.n_modes_sim.max(2 * n_modes_identify))?;
    let f_id = modal.frequencies[n_modes_identify - 1];
    if sim.fs <= 2.5 * f_id {
        return Err(Error::Config(format!(
            "sampling rate {} Hz violates the Nyquist margin: need fs > 2.5 × f{} = {:.1} Hz",
            sim.fs,
            n_modes_identify,
            2.5 * f_id
        )));
    }
    let f1 = modal.frequencies[0];
    if sim.duration < 1000.0 / f1 {
        return Err(Error::Config(format!(
            "duration {} s too short for correlation estimates: need >= 1000 / f1 = {:.0} s",
            sim.duration,
            1000.0 / f1
        )));
    }
    let basis = ModalBasis::from_bridge(model, &modal, layout, sim.damping)?;
    let basis = basis.band_limited(0.45 * sim.fs);
    simulate_modal_response(&basis, sim.fs, sim.duration, sim.amplitude, seed)
}

/// Adds per-channel Gaussian noise with RMS equal to `ratio` times the channel
/// signal RMS.
pub fn add_noise(record: &AccelerationRecord, ratio: f64, seed: u64) -> AccelerationRecord {
    assert!(ratio >= 0.0, "noise ratio must be non-negative");
    if ratio == 0.0 {
        return record.clone();
    }
    let mut out = record.clone();
    for (ch, channel) in out.channels.iter_mut().enumerate() {
        let rms = record.channel_rms(ch);
        let mut rng = stream_rng(seed, ch as u64);
        for x in channel.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x += ratio * rms * z;
        }
    }
    out.noisy = true;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_dof_basis() -> (ModalBasis, [f64; 2]) {
        // Fixed-free chain, m = 1, k = 400: λ = 400·(3 ∓ √5)/2, i.e. a few Hz.
        let k = DMatrix::from_row_slice(2, 2, &[800.0, -400.0, -400.0, 400.0]);
        let m = DMatrix::identity(2, 2);
        let (vals, vecs) = crate::linalg::dense_generalized_eig(&k, &m).unwrap();
        let omegas: Vec<f64> = vals.iter().map(|l| l.sqrt()).collect();
        let basis = ModalBasis::from_parts(
            omegas.clone(),
            vec![0.02; 2],
            vecs.clone(),
            vecs.clone(),
        )
        .unwrap();
        (basis, [vals[0], vals[1]])
    }

    #[test]
    fn zero_amplitude_gives_zero_record() {
        let (basis, _) = two_dof_basis();
        let rec = simulate_modal_response(&basis, 32.0, 30.0, 0.0, 1).unwrap();
        for ch in &rec.channels {
            assert!(ch.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn response_is_linear_in_amplitude() {
        let (basis, _) = two_dof_basis();
        let a = simulate_modal_response(&basis, 32.0, 60.0, 1.0, 7).unwrap();
        let b = simulate_modal_response(&basis, 32.0, 60.0, 2.0, 7).unwrap();
        for ch in 0..2 {
            assert_relative_eq!(2.0 * a.channel_rms(ch), b.channel_rms(ch), max_relative = 1e-10);
        }
    }

    #[test]
    fn spectra_peak_at_modal_frequencies() {
        let (basis, lams) = two_dof_basis();
        let fs = 32.0;
        let rec = simulate_modal_response(&basis, fs, 2000.0, 1.0, 3).unwrap();
        let f_targets = [
            lams[0].sqrt() / (2.0 * std::f64::consts::PI),
            lams[1].sqrt() / (2.0 * std::f64::consts::PI),
        ];
        let (freqs, power) = averaged_periodogram(&rec.channels[0], fs, 2048);
        let df = freqs[1] - freqs[0];
        for target in f_targets {
            let peak = peak_near(&freqs, &power, target, 0.15 * target);
            assert!(
                (peak - target).abs() <= df,
                "peak {peak} vs modal frequency {target} (bin {df})"
            );
        }
    }

    /// Plain segment-averaged periodogram oracle, independent of the SSI path.
    fn averaged_periodogram(x: &[f64], fs: f64, nseg: usize) -> (Vec<f64>, Vec<f64>) {
        let segments = x.len() / nseg;
        let mut power = vec![0.0; nseg / 2];
        for s in 0..segments {
            let seg = &x[s * nseg..(s + 1) * nseg];
            let mean = seg.iter().sum::<f64>() / nseg as f64;
            for (k, p) in power.iter_mut().enumerate().skip(1) {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, &xi) in seg.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * i) as f64 / nseg as f64;
                    re += (xi - mean) * ang.cos();
                    im += (xi - mean) * ang.sin();
                }
                *p += re * re + im * im;
            }
        }
        let freqs = (0..nseg / 2).map(|k| k as f64 * fs / nseg as f64).collect();
        (freqs, power)
    }

    fn peak_near(freqs: &[f64], power: &[f64], target: f64, tol: f64) -> f64 {
        let mut best = (0.0, f64::NEG_INFINITY);
        for (f, p) in freqs.iter().zip(power) {
            if (f - target).abs() < tol && *p > best.1 {
                best = (*f, *p);
            }
        }
        best.0
    }

    #[test]
    fn noise_ratio_is_respected() {
        let (basis, _) = two_dof_basis();
        let rec = simulate_modal_response(&basis, 32.0, 3200.0, 1.0, 9).unwrap();
        let noisy = add_noise(&rec, 0.02, 4);
        for ch in 0..2 {
            let diff_rms = {
                let d: Vec<f64> = rec.channels[ch]
                    .iter()
                    .zip(&noisy.channels[ch])
                    .map(|(a, b)| b - a)
                    .collect();
                (d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64).sqrt()
            };
            let ratio = diff_rms / rec.channel_rms(ch);
            assert!((ratio - 0.02).abs() < 0.002, "measured ratio {ratio}");
        }
        // ratio 0 returns the record unchanged
        let same = add_noise(&rec, 0.0, 4);
        assert_eq!(same, rec);
        // ratio 1: added noise RMS equals the signal RMS within 2%
        let loud = add_noise(&rec, 1.0, 4);
        for ch in 0..2 {
            let d: Vec<f64> = rec.channels[ch]
                .iter()
                .zip(&loud.channels[ch])
                .map(|(a, b)| b - a)
                .collect();
            let rms = (d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64).sqrt();
            assert!((rms / rec.channel_rms(ch) - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn record_binary_round_trip() {
        let (basis, _) = two_dof_basis();
        let rec = simulate_modal_response(&basis, 32.0, 10.0, 1.0, 5).unwrap();
        let mut buf = Vec::new();
        rec.write_binary(&mut buf).unwrap();
        let back = AccelerationRecord::read_binary(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn band_limiting_drops_high_modes() {
        let (basis, _) = two_dof_basis();
        let f1 = basis.omegas[0] / (2.0 * std::f64::consts::PI);
        let limited = basis.band_limited(f1 * 1.5);
        assert_eq!(limited.n_modes(), 1);
    }
}
