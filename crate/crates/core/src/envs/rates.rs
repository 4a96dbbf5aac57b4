//! Arrival rate tables: per day-of-week and half-hour bin, in arrivals per
//! hour. A synthetic default table (bimodal daily profile with a
//! weekday/weekend contrast) is bundled with the crate.

use std::path::Path;

use crate::error::{Error, Result};

/// Dense 7×48 table of base arrival rates `b_{d,t}` (arrivals per hour),
/// indexed by day of week `0..=6` and half-hour bin `0..=47`.
#[derive(Clone, Debug, PartialEq)]
pub struct RateTable {
    rates: Vec<f64>,
}

pub const DAYS: usize = 7;
pub const BINS_PER_DAY: usize = 48;

impl RateTable {
    pub fn rate(&self, day: usize, bin: usize) -> f64 {
        self.rates[day * BINS_PER_DAY + bin]
    }

    pub fn max_rate(&self) -> f64 {
        self.rates.iter().fold(0.0f64, |a, &b| a.max(b))
    }

    /// Builds a table from a dense `day`-major vector of 336 rates.
    pub fn from_vec(rates: Vec<f64>) -> Result<Self> {
        if rates.len() != DAYS * BINS_PER_DAY {
            return Err(Error::Config(format!(
                "rate table needs {} cells, got {}",
                DAYS * BINS_PER_DAY,
                rates.len()
            )));
        }
        if let Some(bad) = rates.iter().find(|r| **r < 0.0 || !r.is_finite()) {
            return Err(Error::Config(format!("rate table has invalid rate {bad}")));
        }
        Ok(RateTable { rates })
    }
}

/// Parses a rate-table CSV with header `day,bin,rate`. All 336 cells must be
/// present exactly once; errors name the offending 1-based data row.
pub fn load_rate_table_str(content: &str) -> Result<RateTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(content.as_bytes());
    {
        let headers = reader.headers()?;
        let expect = ["day", "bin", "rate"];
        if headers.len() != 3 || headers.iter().zip(expect).any(|(h, e)| h.trim() != e) {
            return Err(Error::RateTable {
                row: 0,
                msg: format!("expected header day,bin,rate, got {headers:?}"),
            });
        }
    }
    let mut rates = vec![f64::NAN; DAYS * BINS_PER_DAY];
    let mut seen = vec![false; DAYS * BINS_PER_DAY];
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        if record.len() != 3 {
            return Err(Error::RateTable {
                row,
                msg: format!("expected 3 fields, got {}", record.len()),
            });
        }
        let day: usize = record[0].trim().parse().map_err(|_| Error::RateTable {
            row,
            msg: format!("bad day {:?}", &record[0]),
        })?;
        let bin: usize = record[1].trim().parse().map_err(|_| Error::RateTable {
            row,
            msg: format!("bad bin {:?}", &record[1]),
        })?;
        let rate: f64 = record[2].trim().parse().map_err(|_| Error::RateTable {
            row,
            msg: format!("bad rate {:?}", &record[2]),
        })?;
        if day >= DAYS {
            return Err(Error::RateTable {
                row,
                msg: format!("day {day} out of range 0..=6"),
            });
        }
        if bin >= BINS_PER_DAY {
            return Err(Error::RateTable {
                row,
                msg: format!("bin {bin} out of range 0..=47"),
            });
        }
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::RateTable {
                row,
                msg: format!("rate {rate} must be nonnegative"),
            });
        }
        let idx = day * BINS_PER_DAY + bin;
        if seen[idx] {
            return Err(Error::RateTable {
                row,
                msg: format!("duplicate cell day={day} bin={bin}"),
            });
        }
        seen[idx] = true;
        rates[idx] = rate;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::RateTable {
            row: 0,
            msg: format!(
                "missing cell day={} bin={}",
                missing / BINS_PER_DAY,
                missing % BINS_PER_DAY
            ),
        });
    }
    Ok(RateTable { rates })
}

/// Loads a rate-table CSV from disk.
pub fn load_rate_table(path: impl AsRef<Path>) -> Result<RateTable> {
    let content = std::fs::read_to_string(path)?;
    load_rate_table_str(&content)
}

/// The bundled synthetic default: a strongly bimodal weekday profile (an
/// overnight trickle near 0.35/hour against midday and evening peaks near
/// 4.5/hour) with flatter, lower weekend days — the day/night swing of a
/// real emergency department.
pub fn default_rate_table() -> RateTable {
    load_rate_table_str(include_str!("../../data/default_rates.csv"))
        .expect("bundled rate table is well-formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table_loads() {
        let t = default_rate_table();
        // Peak must leave uniformization headroom for the four-week default
        // queue config: 7 * 1.2 * peak / 60 + 20 / 60 <= 1.
        assert!(t.max_rate() > 4.0 && t.max_rate() < 4.76);
        assert!(t.rate(0, 22) > 5.0 * t.rate(0, 6), "midday surge above night");
        assert!(t.rate(0, 22) > t.rate(5, 22), "weekday peak above weekend");
    }

    #[test]
    fn day_out_of_range_names_row() {
        let content = "day,bin,rate\n7,0,1.0\n";
        match load_rate_table_str(content) {
            Err(Error::RateTable { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected rate table error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_cell_rejected() {
        let mut content = String::from("day,bin,rate\n");
        for d in 0..7 {
            for b in 0..48 {
                content.push_str(&format!("{d},{b},1.0\n"));
            }
        }
        content.push_str("0,0,2.0\n");
        match load_rate_table_str(&content) {
            Err(Error::RateTable { row, .. }) => assert_eq!(row, 337),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn missing_cell_rejected() {
        let mut content = String::from("day,bin,rate\n");
        for d in 0..7 {
            for b in 0..48 {
                if d == 3 && b == 17 {
                    continue;
                }
                content.push_str(&format!("{d},{b},1.0\n"));
            }
        }
        match load_rate_table_str(&content) {
            Err(Error::RateTable { msg, .. }) => assert!(msg.contains("day=3 bin=17")),
            other => panic!("expected missing-cell error, got {other:?}"),
        }
    }

    #[test]
    fn negative_rate_rejected() {
        let content = "day,bin,rate\n0,0,-1.0\n";
        assert!(load_rate_table_str(content).is_err());
    }
}
