//! Shared CSV plumbing: numeric tables with a header row, and the
//! 12-significant-digit float format used by every emitted file.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct Table {
    pub headers: Vec<String>,
    /// Columns in header order.
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
    }
}

/// Parses a numeric CSV. `required` columns must be present and are
/// returned first, in the given order; remaining columns follow.
pub(crate) fn parse_table(text: &str, source_name: &str, required: &[&str]) -> Result<Table> {
    let parse_err = |line: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.iter().all(|h| h.is_empty()) {
        return Err(parse_err(1, "missing header row".into()));
    }
    for col in required {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::MissingColumn {
                source_name: source_name.to_string(),
                column: col.to_string(),
            });
        }
    }
    let mut order: Vec<usize> = required
        .iter()
        .map(|c| headers.iter().position(|h| h == c).unwrap())
        .collect();
    let rest: Vec<usize> = (0..headers.len()).filter(|i| !order.contains(i)).collect();
    order.extend(rest);

    let mut columns = vec![Vec::new(); headers.len()];
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != headers.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        for (k, &i) in order.iter().enumerate() {
            let field = &record[i];
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("not a number in column `{}`: `{field}`", headers[i])))?;
            columns[k].push(v);
        }
    }
    if columns.first().is_none_or(Vec::is_empty) {
        return Err(parse_err(2, "no data rows".into()));
    }
    let headers = order.iter().map(|&i| headers[i].clone()).collect();
    Ok(Table { headers, columns })
}

/// Formats with 12 significant digits, plain decimal where reasonable.
pub fn fmt12(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        // rounding can carry into a new digit; that only shortens precision by one
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{v:.11e}")
    }
}
