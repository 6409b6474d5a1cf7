//! Text artifacts: embeddings, loss history and metric tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use dmage_core::loss::LossTerms;
use ndarray::Array2;

use crate::error::{CliError, CliResult};

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::output(path, e))
}

/// One node per line: id, then each coordinate with 9 significant digits.
pub fn format_embeddings(z: &Array2<f64>) -> String {
    let mut s = String::with_capacity(z.len() * 16);
    for (i, row) in z.rows().into_iter().enumerate() {
        write!(s, "{i}").unwrap();
        for v in row {
            write!(s, "\t{v:.8e}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn read_embeddings(path: &Path) -> CliResult<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data_io(path, e))?;
    let bad = |line: usize, msg: &str| CliError::Data(format!("{}:{line}: {msg}", path.display()));
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split('\t');
        let id: usize = it
            .next()
            .and_then(|t| t.trim().parse().ok())
            .ok_or_else(|| bad(k + 1, "bad node id"))?;
        let vals = it
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad(k + 1, "bad coordinate"))?;
        rows.push((id, vals));
    }
    rows.sort_by_key(|r| r.0);
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.1.len());
    let mut z = Array2::zeros((n, d));
    for (i, (id, vals)) in rows.into_iter().enumerate() {
        if id != i {
            return Err(CliError::Data(format!(
                "{}: node ids must be 0..{n}, found {id}",
                path.display()
            )));
        }
        if vals.len() != d {
            return Err(CliError::Data(format!("{}: ragged rows", path.display())));
        }
        z.row_mut(i).assign(&ndarray::Array1::from(vals));
    }
    Ok(z)
}

/// `epoch<TAB>feature<TAB>structure<TAB>total` per epoch.
pub fn format_loss(history: &[LossTerms]) -> String {
    let mut s = String::from("epoch\tfeature_term\tstructure_term\ttotal\n");
    for (e, t) in history.iter().enumerate() {
        writeln!(
            s,
            "{e}\t{:.8e}\t{:.8e}\t{:.8e}",
            t.feature_term, t.structure_term, t.total
        )
        .unwrap();
    }
    s
}

/// A table with one row per seed followed by `mean` and `std` rows.
pub fn format_seed_table(columns: &[&str], rows: &[(u64, Vec<f64>)]) -> String {
    let mut s = String::from("seed");
    for c in columns {
        write!(s, "\t{c}").unwrap();
    }
    s.push('\n');
    for (seed, vals) in rows {
        write!(s, "{seed}").unwrap();
        for v in vals {
            write!(s, "\t{v:.6}").unwrap();
        }
        s.push('\n');
    }
    let stats: Vec<(f64, f64)> = (0..columns.len())
        .map(|c| {
            let col: Vec<f64> = rows.iter().map(|r| r.1[c]).collect();
            dmage_core::eval::mean_std(&col)
        })
        .collect();
    for (name, pick) in [("mean", 0usize), ("std", 1)] {
        s.push_str(name);
        for st in &stats {
            let v = if pick == 0 { st.0 } else { st.1 };
            write!(s, "\t{v:.6}").unwrap();
        }
        s.push('\n');
    }
    s
}
