//! Synthetic capacity-fade fixtures shaped like constant-current discharge
//! data: linear fade with per-cell rate spread, decaying regeneration
//! spikes, and discharge curves whose duration tracks capacity.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{BatteryDataset, Channel, DischargeCycle};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub batteries: usize,
    pub cycles: usize,
    pub initial_capacity_ah: f64,
    pub end_capacity_floor_ah: f64,
    /// Mean capacity loss per cycle (Ah).
    pub fade_rate: f64,
    /// Relative half-width of the uniform per-cell fade-rate multiplier.
    pub fade_spread: f64,
    pub spike_probability: f64,
    pub spike_magnitude_ah: f64,
    /// Fraction of a regeneration bump that survives each following cycle.
    pub spike_decay: f64,
    /// Samples recorded for a cycle at the initial capacity.
    pub samples_at_initial: usize,
    pub discharge_current_a: f64,
    pub cutoff_voltage_v: f64,
    pub measurement_noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            batteries: 4,
            cycles: 168,
            initial_capacity_ah: 2.0,
            end_capacity_floor_ah: 1.0,
            fade_rate: 0.0045,
            fade_spread: 0.1,
            spike_probability: 0.04,
            spike_magnitude_ah: 0.03,
            spike_decay: 0.7,
            samples_at_initial: 371,
            discharge_current_a: 2.0,
            cutoff_voltage_v: 2.7,
            measurement_noise: 0.002,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.initial_capacity_ah <= self.end_capacity_floor_ah
            || self.end_capacity_floor_ah <= 0.0
        {
            return bad("initial capacity must exceed a positive end-capacity floor");
        }
        if self.batteries == 0 || self.cycles == 0 {
            return bad("need at least one battery and one cycle");
        }
        if self.fade_rate < 0.0 || !(0.0..1.0).contains(&self.fade_spread) {
            return bad("fade rate must be >= 0 and fade spread in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.spike_probability) || !(0.0..1.0).contains(&self.spike_decay)
        {
            return bad("spike probability must be in [0, 1] and decay in [0, 1)");
        }
        if self.samples_at_initial < 2 || self.discharge_current_a <= 0.0 {
            return bad("need >= 2 samples per cycle and a positive discharge current");
        }
        if self.measurement_noise < 0.0 || self.spike_magnitude_ah < 0.0 {
            return bad("noise and spike magnitude must be >= 0");
        }
        Ok(())
    }

    /// Noise-free capacity series of one cell with the given fade multiplier
    /// and spike schedule.
    pub fn capacity_curve(&self, rate_factor: f64, spikes: &[bool]) -> Vec<f64> {
        let mut regen = 0.0;
        (0..self.cycles)
            .map(|n| {
                regen *= self.spike_decay;
                if spikes.get(n).copied().unwrap_or(false) && n > 0 {
                    regen += self.spike_magnitude_ah;
                }
                let base = (self.initial_capacity_ah - self.fade_rate * rate_factor * n as f64)
                    .max(self.end_capacity_floor_ah);
                (base + regen).min(self.initial_capacity_ah)
            })
            .collect()
    }
}

/// Battery ids are `S01`, `S02`, ...
pub fn generate_cycles<R: Rng + ?Sized>(
    config: &SyntheticConfig,
    rng: &mut R,
) -> Result<Vec<DischargeCycle>> {
    config.validate()?;
    let noise = Normal::new(0.0, config.measurement_noise.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::with_capacity(config.batteries * config.cycles);
    for b in 0..config.batteries {
        let id = format!("S{:02}", b + 1);
        let rate_factor = 1.0 + config.fade_spread * rng.random_range(-1.0..=1.0);
        let spikes: Vec<bool> = (0..config.cycles)
            .map(|_| rng.random_bool(config.spike_probability))
            .collect();
        let ambient = 24.0 + rng.random_range(-0.5..=0.5);
        for (n, cap) in config
            .capacity_curve(rate_factor, &spikes)
            .into_iter()
            .enumerate()
        {
            out.push(discharge_profile(
                config, &id, n as u32, cap, ambient, &noise, rng,
            ));
        }
    }
    Ok(out)
}

pub fn generate_synthetic<R: Rng + ?Sized>(
    config: &SyntheticConfig,
    channels: &[Channel],
    rng: &mut R,
) -> Result<BatteryDataset> {
    BatteryDataset::new(generate_cycles(config, rng)?, None, channels)
}

fn discharge_profile<R: Rng + ?Sized>(
    config: &SyntheticConfig,
    id: &str,
    cycle_index: u32,
    capacity: f64,
    ambient: f64,
    noise: &Normal<f64>,
    rng: &mut R,
) -> DischargeCycle {
    let ratio = capacity / config.initial_capacity_ah;
    let samples = ((config.samples_at_initial as f64 * ratio).round() as usize).max(2);
    let duration = capacity / config.discharge_current_a * 3600.0;
    let wear = 1.0 - ratio;
    let span = 4.2 - config.cutoff_voltage_v;
    let jitter = |rng: &mut R| {
        if config.measurement_noise > 0.0 {
            noise.sample(rng)
        } else {
            0.0
        }
    };
    let mut time_s = Vec::with_capacity(samples);
    let mut voltage_v = Vec::with_capacity(samples);
    let mut temperature_c = Vec::with_capacity(samples);
    let mut current_a = Vec::with_capacity(samples);
    for i in 0..samples {
        let s = i as f64 / (samples - 1) as f64;
        time_s.push(s * duration);
        let v = 4.2 - 0.25 * wear - span * (0.35 * s + 0.65 * s.powi(8)) + 0.25 * wear * s.powi(8);
        voltage_v.push(v + jitter(rng));
        let t = ambient + (12.0 + 8.0 * wear) * s.powf(1.3) - 2.0 * s.powi(6);
        temperature_c.push(t + 20.0 * jitter(rng));
        current_a.push(-config.discharge_current_a + jitter(rng));
    }
    DischargeCycle {
        battery_id: id.to_string(),
        cycle_index,
        time_s,
        voltage_v,
        temperature_c,
        current_a: Some(current_a),
        capacity_ah: capacity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            batteries: 2,
            cycles: 30,
            samples_at_initial: 40,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn no_fade_no_spikes_is_constant() {
        let cfg = SyntheticConfig {
            fade_rate: 0.0,
            spike_probability: 0.0,
            ..small()
        };
        let cycles = generate_cycles(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(cycles.iter().all(|c| c.capacity_ah == 2.0));
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate_synthetic(
            &small(),
            &Channel::DEFAULT,
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        let b = generate_synthetic(
            &small(),
            &Channel::DEFAULT,
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn default_curve_crosses_end_of_life() {
        // Slowest cell the config can produce, no regeneration.
        let cfg = SyntheticConfig::default();
        let slow = cfg.capacity_curve(1.0 - cfg.fade_spread, &[]);
        assert_eq!(slow[0], 2.0);
        assert!(*slow.last().unwrap() < 1.4, "{}", slow.last().unwrap());

        let ds =
            generate_synthetic(&cfg, &Channel::DEFAULT, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for id in ds.battery_ids() {
            let cycles = ds.cycles(&id).unwrap();
            assert_eq!(cycles.len(), 168);
            assert_eq!(cycles[0].capacity_ah, 2.0);
            assert!(cycles.iter().any(|c| c.capacity_ah < 1.4));
        }
        assert_eq!(ds.pad_length, 371);
    }

    #[test]
    fn monotone_apart_from_spikes() {
        let cfg = SyntheticConfig {
            spike_probability: 0.2,
            ..SyntheticConfig::default()
        };
        let spikes: Vec<bool> = (0..cfg.cycles).map(|n| n % 7 == 3).collect();
        let curve = cfg.capacity_curve(1.0, &spikes);
        for n in 1..curve.len() {
            if !spikes[n] {
                assert!(curve[n] <= curve[n - 1], "cycle {n}");
            }
        }
    }

    #[test]
    fn floor_must_be_below_initial() {
        let cfg = SyntheticConfig {
            end_capacity_floor_ah: 2.0,
            ..small()
        };
        assert!(matches!(
            generate_cycles(&cfg, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::Config(_))
        ));
    }
}
