//! CSV tables and JSON summaries.
//!
//! Numbers are written in the shortest decimal form that reads back to the
//! same `f64`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::series::{CoeffTable, CountertermTable, DecayReport};
use crate::spectrum::{Mode, NuTable};

/// Version tag carried by every JSON summary.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CoeffRow {
    k: usize,
    n: i32,
    m: u32,
    value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CountertermRow {
    k: usize,
    n: i32,
    m: u32,
    h: i32,
    value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct NuRow {
    n: i32,
    m: u32,
    value: f64,
}

/// Nonzero coefficients as `k,n,m,value`.
pub fn write_coeffs_csv(table: &CoeffTable, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (k, mode, value) in table.rows() {
        if value != 0.0 {
            w.serialize(CoeffRow { k, n: mode.n, m: mode.m, value })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reloads a coefficient CSV; the invariants are re-checked.
pub fn read_coeffs_csv(input: impl Read, kmax: usize, mmax: u32, q: f64) -> Result<CoeffTable> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for row in r.deserialize() {
        let row: CoeffRow = row?;
        rows.push((row.k, Mode::new(row.n, row.m), row.value));
    }
    CoeffTable::from_rows(kmax, mmax, q, &rows)
}

/// Counterterms as `k,n,m,h,value`.
pub fn write_counterterms_csv(table: &CountertermTable, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (k, mode, h, value) in table.rows() {
        w.serialize(CountertermRow { k, n: mode.n, m: mode.m, h, value })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_counterterms_csv(input: impl Read) -> Result<CountertermTable> {
    let mut r = csv::Reader::from_reader(input);
    let mut table = CountertermTable::new();
    for row in r.deserialize() {
        let row: CountertermRow = row?;
        table.insert_raw(row.k, Mode::new(row.n, row.m), row.h, row.value);
    }
    Ok(table)
}

/// Frequency shifts as `n,m,value` (both signs of `n`).
pub fn write_nu_csv(nu: &NuTable, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (mode, value) in nu.iter() {
        w.serialize(NuRow { n: mode.n, m: mode.m, value })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_nu_csv(input: impl Read) -> Result<NuTable> {
    let mut r = csv::Reader::from_reader(input);
    let mut nu = NuTable::zero();
    for row in r.deserialize() {
        let row: NuRow = row?;
        if row.n > 0 {
            nu.set_pair(row.n, row.m, row.value);
        }
    }
    Ok(nu)
}

/// JSON summary of a coefficient computation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoeffSummary {
    pub schema_version: u32,
    pub kmax: usize,
    pub mmax: u32,
    pub eps: f64,
    pub q: f64,
    pub cubic: Option<f64>,
    /// Sup norm of each order.
    pub norms: Vec<f64>,
    pub n_rate: Option<f64>,
    pub m_powers: Vec<Option<f64>>,
    pub decay_passed: bool,
    pub tail_warning: bool,
}

impl CoeffSummary {
    pub fn new(table: &CoeffTable, eps: f64, cubic: Option<f64>, decay: &DecayReport) -> Self {
        CoeffSummary {
            schema_version: SCHEMA_VERSION,
            kmax: table.kmax,
            mmax: table.mmax,
            eps,
            q: table.q,
            cubic,
            norms: (0..=table.kmax).map(|k| table.order(k).sup_norm()).collect(),
            n_rate: decay.n_rate,
            m_powers: decay.m_powers.clone(),
            decay_passed: decay.passed,
            tail_warning: table.tail_warning(),
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, mut out: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ModelParams;
    use crate::series::compute_coeffs;

    #[test]
    fn coefficient_csv_round_trips() {
        let p = ModelParams::default();
        let nu = NuTable::zero();
        let t = compute_coeffs(&p, 0.01, &nu, &CountertermTable::new(), 3, 9, 0.7).unwrap();
        let mut buf = Vec::new();
        write_coeffs_csv(&t, &mut buf).unwrap();
        let back = read_coeffs_csv(buf.as_slice(), 3, 9, 0.7).unwrap();
        for (k, mode, v) in t.rows() {
            assert_eq!(back.get(k, mode), v);
        }
    }

    #[test]
    fn counterterm_and_shift_csv_round_trip() {
        let mut ct = CountertermTable::new();
        ct.insert(2, Mode::new(3, 2), vec![0.1, 1.0 / 3.0]);
        let mut buf = Vec::new();
        write_counterterms_csv(&ct, &mut buf).unwrap();
        assert_eq!(read_counterterms_csv(buf.as_slice()).unwrap().rows().collect::<Vec<_>>(), ct.rows().collect::<Vec<_>>());

        let mut nu = NuTable::zero();
        nu.set_pair(3, 2, 1e-3 / 7.0);
        let mut buf = Vec::new();
        write_nu_csv(&nu, &mut buf).unwrap();
        assert_eq!(read_nu_csv(buf.as_slice()).unwrap(), nu);
    }
}
