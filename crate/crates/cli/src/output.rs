//! Fixed output formats. Floats are written with 17 significant digits; a
//! value that does not apply to the run is written as `NaN`.

use std::io::Write;
use std::path::Path;

use flocklab::diagnostics::DiagnosticsSample;
use flocklab::sticky::StickyRecord;
use serde::Serialize;

use crate::CliError;

pub const BASE_COLUMNS: [&str; 13] = [
    "t", "V2", "V1", "I1", "diss_rate", "E", "K", "P", "align_diam", "flock_diam", "acc_phi", "acc_diss", "acc_I1",
];
pub const PAIR_COLUMNS: [&str; 3] = ["chi", "mod_energy", "pair_energy"];

pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:.16e}")
    }
}

fn provenance_line(config: &impl Serialize) -> Result<String, CliError> {
    Ok(format!("# flocklab {} config={}\n", flocklab::VERSION, serde_json::to_string(config)?))
}

pub fn sample_row(s: &DiagnosticsSample, with_pair: bool) -> Vec<String> {
    let (e, k, p) = s.energy.map_or((f64::NAN, f64::NAN, f64::NAN), |e| (e.total, e.kinetic, e.potential));
    let mut row = vec![
        s.t, s.v2, s.v1, s.i1, s.diss_rate, e, k, p, s.align_diam, s.flock_diam, s.acc_phi, s.acc_diss, s.acc_i1,
    ];
    if with_pair {
        let (chi, m, pe) = s.pair.map_or((f64::NAN, f64::NAN, f64::NAN), |q| (q.chi, q.modified_energy, q.pair_energy));
        row.extend([chi, m, pe]);
    }
    row.into_iter().map(fmt_f64).collect()
}

/// Time series CSV with a leading `#` provenance line.
pub fn write_series_csv<W: Write>(
    mut w: W,
    config: &impl Serialize,
    samples: &[DiagnosticsSample],
    with_pair: bool,
) -> Result<(), CliError> {
    w.write_all(provenance_line(config)?.as_bytes())?;
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = BASE_COLUMNS.to_vec();
    if with_pair {
        header.extend(PAIR_COLUMNS);
    }
    out.write_record(&header)?;
    for s in samples {
        out.write_record(sample_row(s, with_pair))?;
    }
    out.flush()?;
    Ok(())
}

/// `t,clusters` rows: the initial count, then one row per event.
pub fn write_counts_csv<W: Write>(mut w: W, config: &impl Serialize, record: &StickyRecord) -> Result<(), CliError> {
    w.write_all(provenance_line(config)?.as_bytes())?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "clusters"])?;
    for (t, k) in &record.cluster_counts {
        out.write_record([fmt_f64(*t), k.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Columns of a series CSV by header name; `#` lines are skipped.
pub fn read_series_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let mut rd = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let header: Vec<String> = rd.headers().map_err(|e| CliError::config(e.to_string()))?.iter().map(String::from).collect();
    let mut cols = vec![Vec::new(); header.len()];
    for (k, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        for (c, field) in rec.iter().enumerate() {
            let x: f64 = field
                .trim()
                .parse()
                .map_err(|_| CliError::config(format!("row {}: `{field}` is not a number", k + 1)))?;
            cols[c].push(x);
        }
    }
    Ok((header, cols))
}

pub fn write_json<W: Write>(mut w: W, value: &impl Serialize) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_keeps_17_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(f64::NAN), "NaN");
        let x = std::f64::consts::PI;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }
}
