//! Discharge-cycle ingestion, padding, normalization and pair construction.

mod cycle;
mod prep;
pub mod synthetic;

pub use cycle::{load_cycles, read_cycles, write_cycles, Channel, CsvSchema, DischargeCycle};
pub use prep::{
    apply_normalization, fit_normalization, inject_noise, pad_cycle, BatteryDataset, CycleTensor,
    NormalizationParams,
};
pub use synthetic::{generate_cycles, generate_synthetic, SyntheticConfig};
