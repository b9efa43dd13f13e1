//! CSV readers and writers for logged and supervised data.
//!
//! Logged data: `ctx_0..ctx_{d-1},action,reward,prop_0..prop_{k-1}` with
//! optional `r_0..r_{k-1}` holding the full reward matrix.
//! Supervised data: `ctx_0..ctx_{d-1},label`.

use std::io::{Read, Write};

use ndarray::Array2;

use crate::data::LoggedDataset;
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

fn indexed_columns(headers: &csv::StringRecord, prefix: &str) -> Result<Vec<usize>> {
    let mut found: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(c, h)| h.trim().strip_prefix(prefix).and_then(|s| s.parse().ok()).map(|j: usize| (j, c)))
        .collect();
    found.sort();
    for (want, (j, _)) in found.iter().enumerate() {
        if *j != want {
            return invalid(format!("columns {prefix}* must be numbered 0..m without gaps"));
        }
    }
    Ok(found.into_iter().map(|(_, c)| c).collect())
}

fn named_column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::InvalidInput(format!("missing `{name}` column")))
}

fn parse_num<T: Scalar>(rec: &csv::StringRecord, col: usize, row: usize, what: &str) -> Result<T> {
    let raw = rec.get(col).map(str::trim).unwrap_or("");
    raw.parse::<f64>()
        .map(T::lit)
        .map_err(|_| Error::InvalidInput(format!("row {row}: cannot parse {what} value `{raw}`")))
}

fn parse_index(rec: &csv::StringRecord, col: usize, row: usize, what: &str) -> Result<usize> {
    let raw = rec.get(col).map(str::trim).unwrap_or("");
    raw.parse::<usize>()
        .map_err(|_| Error::InvalidInput(format!("row {row}: cannot parse {what} `{raw}` as a nonnegative integer")))
}

/// Reads and validates a logged dataset.
pub fn read_logged_csv<T: Scalar, R: Read>(input: R) -> Result<LoggedDataset<T>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let ctx = indexed_columns(&headers, "ctx_")?;
    let prop = indexed_columns(&headers, "prop_")?;
    let full = indexed_columns(&headers, "r_")?;
    let (ca, cr) = (named_column(&headers, "action")?, named_column(&headers, "reward")?);
    if ctx.is_empty() || prop.is_empty() {
        return invalid("logged CSV needs ctx_* and prop_* columns");
    }
    if !full.is_empty() && full.len() != prop.len() {
        return invalid(format!("{} r_* columns for {} actions", full.len(), prop.len()));
    }
    let (d, k) = (ctx.len(), prop.len());
    let (mut xs, mut ps, mut fs) = (Vec::new(), Vec::new(), Vec::new());
    let (mut actions, mut rewards) = (Vec::new(), Vec::new());
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        for &c in &ctx {
            xs.push(parse_num::<T>(&rec, c, row, "context")?);
        }
        actions.push(parse_index(&rec, ca, row, "action")?);
        rewards.push(parse_num::<T>(&rec, cr, row, "reward")?);
        for &c in &prop {
            ps.push(parse_num::<T>(&rec, c, row, "propensity")?);
        }
        for &c in &full {
            fs.push(parse_num::<T>(&rec, c, row, "full reward")?);
        }
    }
    let n = actions.len();
    let shape = |v: Vec<T>, cols: usize| Array2::from_shape_vec((n, cols), v).map_err(|e| Error::Shape(e.to_string()));
    let full = if full.is_empty() { None } else { Some(shape(fs, k)?) };
    LoggedDataset::new(shape(xs, d)?, actions, rewards, shape(ps, k)?, full)
}

pub fn write_logged_csv<T: Scalar, W: Write>(ds: &LoggedDataset<T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let (d, k) = (ds.d(), ds.k());
    let mut header: Vec<String> = (0..d).map(|j| format!("ctx_{j}")).collect();
    header.push("action".into());
    header.push("reward".into());
    header.extend((0..k).map(|a| format!("prop_{a}")));
    if ds.full_rewards.is_some() {
        header.extend((0..k).map(|a| format!("r_{a}")));
    }
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut rec: Vec<String> = ds.contexts.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(ds.actions[i].to_string());
        rec.push(ds.rewards[i].to_string());
        rec.extend(ds.propensities.row(i).iter().map(|v| v.to_string()));
        if let Some(f) = &ds.full_rewards {
            rec.extend(f.row(i).iter().map(|v| v.to_string()));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Features and integer labels.
pub fn read_supervised_csv<R: Read>(input: R) -> Result<(Array2<f64>, Vec<usize>)> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let ctx = indexed_columns(&headers, "ctx_")?;
    let cl = named_column(&headers, "label")?;
    if ctx.is_empty() {
        return invalid("supervised CSV needs ctx_* columns");
    }
    let (mut xs, mut labels) = (Vec::new(), Vec::new());
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        for &c in &ctx {
            let v: f64 = parse_num(&rec, c, row, "context")?;
            if !v.is_finite() {
                return invalid(format!("row {row}: non-finite context value"));
            }
            xs.push(v);
        }
        labels.push(parse_index(&rec, cl, row, "label")?);
    }
    if labels.is_empty() {
        return invalid("supervised CSV has no rows");
    }
    let x = Array2::from_shape_vec((labels.len(), ctx.len()), xs).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((x, labels))
}

pub fn write_supervised_csv<W: Write>(features: &Array2<f64>, labels: &[usize], out: W) -> Result<()> {
    if features.nrows() != labels.len() {
        return Err(Error::Shape(format!("{} rows vs {} labels", features.nrows(), labels.len())));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..features.ncols()).map(|j| format!("ctx_{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (row, &y) in features.rows().into_iter().zip(labels) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(y.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
