//! Two-column numeric CSV ingestion shared by the Raman and IR-curve loaders.

use std::io::Read;

/// Reads `(x, y)` rows. A single non-numeric header row is tolerated;
/// lines starting with `#` are skipped.
pub fn read_pairs_csv<R: Read>(reader: R) -> Result<Vec<(f64, f64)>, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| format!("csv: {e}"))?;
        if rec.len() < 2 {
            return Err(format!("row {}: expected two columns, found {}", row + 1, rec.len()));
        }
        let parsed = (rec[0].parse::<f64>(), rec[1].parse::<f64>());
        match parsed {
            (Ok(x), Ok(y)) => out.push((x, y)),
            _ if row == 0 => continue,
            _ => return Err(format!("row {}: non-numeric value", row + 1)),
        }
    }
    if out.is_empty() {
        return Err("csv contains no data rows".into());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_comments() {
        let text = "# comment\ndetuning_THz, C_R\n0, 0\n13.2, 0.4\n";
        let rows = read_pairs_csv(text.as_bytes()).unwrap();
        assert_eq!(rows, vec![(0.0, 0.0), (13.2, 0.4)]);
    }

    #[test]
    fn garbage_after_header_is_an_error() {
        assert!(read_pairs_csv("a,b\n1,2\nx,3\n".as_bytes()).is_err());
        assert!(read_pairs_csv("a,b\n".as_bytes()).is_err());
    }
}
