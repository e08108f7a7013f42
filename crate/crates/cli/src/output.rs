//! `series.csv`, `events.csv` and `summary.json`.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rnpm::{Channel, EnsembleStats64, TimeSeries64};

/// Columns holding rates, rescaled to units of kappa.
const RATE_COLUMNS: &[&str] = &["rate_plus", "rate_minus"];

fn number(out: &mut String, x: f64) {
    write!(out, "{x:.16e}").expect("write to string");
}

fn scale_for(name: &str, kappa: f64) -> f64 {
    if RATE_COLUMNS.contains(&name) {
        1.0 / kappa
    } else {
        1.0
    }
}

/// One row per sample; time in units of `1/kappa`.
pub fn series_csv(series: &TimeSeries64, kappa: f64) -> String {
    let mut out = String::from("t");
    for name in &series.names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, &t) in series.times.iter().enumerate() {
        number(&mut out, t * kappa);
        for (k, name) in series.names.iter().enumerate() {
            out.push(',');
            number(&mut out, series.columns[k][i] * scale_for(name, kappa));
        }
        out.push('\n');
    }
    out
}

/// Means followed by their standard errors (`<name>_stderr`).
pub fn ensemble_csv(stats: &EnsembleStats64, kappa: f64) -> String {
    let mut out = String::from("t");
    for name in &stats.names {
        write!(out, ",{name}").expect("write to string");
    }
    for name in &stats.names {
        write!(out, ",{name}_stderr").expect("write to string");
    }
    out.push('\n');
    for (i, &t) in stats.times.iter().enumerate() {
        number(&mut out, t * kappa);
        for block in [&stats.means, &stats.stderrs] {
            for (k, name) in stats.names.iter().enumerate() {
                out.push(',');
                number(&mut out, block[k][i] * scale_for(name, kappa));
            }
        }
        out.push('\n');
    }
    out
}

pub fn events_csv(events: &[(f64, Channel)], kappa: f64) -> String {
    let mut out = String::from("t,channel\n");
    for &(t, ch) in events {
        number(&mut out, t * kappa);
        writeln!(out, ",{}", ch.as_str()).expect("write to string");
    }
    out
}

pub fn write(dir: &Path, name: &str, contents: &str) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut s = TimeSeries64::new(vec!["rate_plus".into(), "xx".into()]);
        s.push(0.5, &[2.0, -1.0]);
        let text = series_csv(&s, 2.0);
        assert_eq!(
            text,
            "t,rate_plus,xx\n1.0000000000000000e0,1.0000000000000000e0,-1.0000000000000000e0\n"
        );
        let ev = events_csv(&[(0.25, Channel::Minus)], 2.0);
        assert_eq!(ev, "t,channel\n5.0000000000000000e-1,minus\n");
    }

    #[test]
    fn ensemble_columns() {
        let mut a = TimeSeries64::new(vec!["zz".into()]);
        a.push(0.0, &[1.0]);
        let mut b = a.clone();
        b.columns[0][0] = 3.0;
        let stats = EnsembleStats64::from_runs(&[a, b], &[(0, 0), (1, 0)], vec![]).unwrap();
        let text = ensemble_csv(&stats, 1.0);
        assert!(text.starts_with("t,zz,zz_stderr\n"));
        assert!(text.contains(",2.0000000000000000e0,1.0000000000000000e0\n"));
    }
}
