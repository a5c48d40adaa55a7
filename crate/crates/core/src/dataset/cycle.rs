use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One discharge cycle of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DischargeCycle {
    pub battery_id: String,
    pub cycle_index: u32,
    pub time_s: Vec<f64>,
    pub voltage_v: Vec<f64>,
    pub temperature_c: Vec<f64>,
    /// Present only when the source file carries a current column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_a: Option<Vec<f64>>,
    pub capacity_ah: f64,
}

impl DischargeCycle {
    pub fn len(&self) -> usize {
        self.time_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_s.is_empty()
    }

    pub fn channel(&self, channel: Channel) -> Result<&[f64]> {
        match channel {
            Channel::Voltage => Ok(&self.voltage_v),
            Channel::Temperature => Ok(&self.temperature_c),
            Channel::Time => Ok(&self.time_s),
            Channel::Current => self.current_a.as_deref().ok_or_else(|| Error::Schema {
                column: "current_a".into(),
            }),
        }
    }

    fn validate(&self, max_capacity: f64) -> Result<()> {
        let data_err = |reason: String| Error::Data {
            battery_id: self.battery_id.clone(),
            cycle_index: self.cycle_index,
            reason,
        };
        let n = self.time_s.len();
        if n < 2 {
            return Err(data_err(format!("needs at least 2 samples, got {n}")));
        }
        let lens_match = self.voltage_v.len() == n
            && self.temperature_c.len() == n
            && self.current_a.as_ref().is_none_or(|c| c.len() == n);
        if !lens_match {
            return Err(data_err("sample arrays differ in length".into()));
        }
        if let Some(w) = self.time_s.windows(2).position(|w| w[1] <= w[0]) {
            return Err(data_err(format!(
                "time is not strictly increasing at sample {} ({} -> {})",
                w + 1,
                self.time_s[w],
                self.time_s[w + 1]
            )));
        }
        if !(self.capacity_ah > 0.0 && self.capacity_ah <= max_capacity) {
            return Err(data_err(format!(
                "capacity {} Ah outside (0, {max_capacity}]",
                self.capacity_ah
            )));
        }
        Ok(())
    }
}

/// Feature channels a cycle can contribute to the network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Voltage,
    Temperature,
    Time,
    Current,
}

impl Channel {
    pub const DEFAULT: [Channel; 3] = [Channel::Voltage, Channel::Temperature, Channel::Time];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Voltage => "voltage",
            Channel::Temperature => "temperature",
            Channel::Time => "time",
            Channel::Current => "current",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "voltage" => Ok(Channel::Voltage),
            "temperature" => Ok(Channel::Temperature),
            "time" => Ok(Channel::Time),
            "current" => Ok(Channel::Current),
            other => Err(Error::Config(format!("unknown channel `{other}`"))),
        }
    }
}

/// Column names of the long-format CSV (one row per timestep).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub battery_id: String,
    pub cycle_index: String,
    pub time_s: String,
    pub voltage_v: String,
    pub temperature_c: String,
    pub capacity_ah: String,
    /// Optional; read when present in the header.
    pub current_a: String,
    pub max_capacity_ah: f64,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            battery_id: "battery_id".into(),
            cycle_index: "cycle_index".into(),
            time_s: "time_s".into(),
            voltage_v: "voltage_v".into(),
            temperature_c: "temperature_c".into(),
            capacity_ah: "capacity_ah".into(),
            current_a: "current_a".into(),
            max_capacity_ah: 2.5,
        }
    }
}

#[derive(Default)]
struct Rows {
    samples: Vec<[f64; 4]>,
    capacity: Option<f64>,
}

/// Reads a long-format CSV and reassembles it into cycles ordered by
/// `(battery_id, cycle_index)`, each sorted by time. Row order in the file
/// does not matter.
pub fn load_cycles(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Vec<DischargeCycle>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_cycles(file, schema)
}

pub fn read_cycles(reader: impl std::io::Read, schema: &CsvSchema) -> Result<Vec<DischargeCycle>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema {
                column: name.to_string(),
            })
    };
    let i_bat = col(&schema.battery_id)?;
    let i_cyc = col(&schema.cycle_index)?;
    let i_time = col(&schema.time_s)?;
    let i_volt = col(&schema.voltage_v)?;
    let i_temp = col(&schema.temperature_c)?;
    let i_cap = col(&schema.capacity_ah)?;
    let i_cur = col(&schema.current_a).ok();

    let mut groups: BTreeMap<(String, u32), Rows> = BTreeMap::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let battery = field(i_bat).to_string();
        let cycle: u32 = field(i_cyc).parse().map_err(|_| Error::Data {
            battery_id: battery.clone(),
            cycle_index: 0,
            reason: format!("row {}: bad cycle index `{}`", line + 2, field(i_cyc)),
        })?;
        let num = |i: usize, what: &str| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Data {
                    battery_id: battery.clone(),
                    cycle_index: cycle,
                    reason: format!("row {}: bad {what} `{}`", line + 2, field(i)),
                })
        };
        let sample = [
            num(i_time, "time")?,
            num(i_volt, "voltage")?,
            num(i_temp, "temperature")?,
            match i_cur {
                Some(i) => num(i, "current")?,
                None => f64::NAN,
            },
        ];
        let capacity = num(i_cap, "capacity")?;
        let rows = groups.entry((battery.clone(), cycle)).or_default();
        match rows.capacity {
            None => rows.capacity = Some(capacity),
            Some(c) if c != capacity => {
                return Err(Error::Data {
                    battery_id: battery,
                    cycle_index: cycle,
                    reason: format!("conflicting capacity labels {c} and {capacity}"),
                })
            }
            Some(_) => {}
        }
        rows.samples.push(sample);
    }

    let mut cycles = Vec::with_capacity(groups.len());
    for ((battery_id, cycle_index), mut rows) in groups {
        rows.samples.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let cycle = DischargeCycle {
            battery_id,
            cycle_index,
            time_s: rows.samples.iter().map(|s| s[0]).collect(),
            voltage_v: rows.samples.iter().map(|s| s[1]).collect(),
            temperature_c: rows.samples.iter().map(|s| s[2]).collect(),
            current_a: i_cur.map(|_| rows.samples.iter().map(|s| s[3]).collect()),
            capacity_ah: rows.capacity.unwrap_or_default(),
        };
        cycle.validate(schema.max_capacity_ah)?;
        cycles.push(cycle);
    }
    Ok(cycles)
}

/// Writes cycles in the canonical long format (default column names).
pub fn write_cycles(path: impl AsRef<Path>, cycles: &[DischargeCycle]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let with_current = cycles.iter().all(|c| c.current_a.is_some()) && !cycles.is_empty();
    let mut header = vec![
        "battery_id",
        "cycle_index",
        "time_s",
        "voltage_v",
        "temperature_c",
        "capacity_ah",
    ];
    if with_current {
        header.push("current_a");
    }
    w.write_record(&header)?;
    for c in cycles {
        for i in 0..c.len() {
            let mut row = vec![
                c.battery_id.clone(),
                c.cycle_index.to_string(),
                c.time_s[i].to_string(),
                c.voltage_v[i].to_string(),
                c.temperature_c[i].to_string(),
                c.capacity_ah.to_string(),
            ];
            if let Some(cur) = c.current_a.as_ref().filter(|_| with_current) {
                row.push(cur[i].to_string());
            }
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
