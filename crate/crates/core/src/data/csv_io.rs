//! Panel CSV reading and writing.
//!
//! Schema: `stock_id,day,slot,open,high,low,close,volume`. Columns are
//! resolved by header name so column order is free. Lines starting with
//! `#` are comments (artifact files carry a `# manifest:` line). Rows with
//! non-finite or non-positive volume or prices are dropped and counted
//! rather than failing the load; structurally malformed rows fail with a
//! line number.

use std::path::Path;

use super::{Bar, MarketPanel};
use crate::error::{Error, Result};

pub const COLUMNS: [&str; 8] =
    ["stock_id", "day", "slot", "open", "high", "low", "close", "volume"];

/// A loaded panel plus the count of value-filtered rows.
#[derive(Debug)]
pub struct LoadedPanel {
    pub panel: MarketPanel,
    pub dropped_rows: usize,
}

pub fn load_csv(path: &Path) -> Result<LoadedPanel> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<LoadedPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers = rdr
        .headers()
        .map_err(|e| Error::data(format!("cannot read header: {e}")))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    let mut col = [0usize; 8];
    for (k, want) in COLUMNS.iter().enumerate() {
        let hits: Vec<usize> =
            names.iter().enumerate().filter(|(_, n)| **n == *want).map(|(i, _)| i).collect();
        match hits.len() {
            1 => col[k] = hits[0],
            0 => {
                return Err(Error::data(format!(
                    "header is missing column {want:?} (got: {})",
                    names.join(", ")
                )))
            }
            _ => return Err(Error::data(format!("header repeats column {want:?}"))),
        }
    }
    if names.len() != COLUMNS.len() {
        let extra: Vec<&str> =
            names.iter().filter(|n| !COLUMNS.contains(n)).copied().collect();
        return Err(Error::data(format!("unexpected columns: {}", extra.join(", "))));
    }

    let mut panel = MarketPanel::new();
    let mut dropped = 0usize;
    for record in rdr.records() {
        let record = record.map_err(|e| Error::data(format!("malformed row: {e}")))?;
        let ln = record.position().map(|p| p.line()).unwrap_or(0);
        let stock = &record[col[0]];
        let day: u32 = record[col[1]]
            .parse()
            .map_err(|_| Error::data(format!("line {ln}: bad day {:?}", &record[col[1]])))?;
        let slot: u32 = record[col[2]]
            .parse()
            .map_err(|_| Error::data(format!("line {ln}: bad slot {:?}", &record[col[2]])))?;
        let mut nums = [0.0f64; 5];
        for (j, n) in nums.iter_mut().enumerate() {
            let raw = &record[col[3 + j]];
            *n = raw
                .parse()
                .map_err(|_| Error::data(format!("line {ln}: bad {} {raw:?}", COLUMNS[3 + j])))?;
        }
        let bar = Bar { open: nums[0], high: nums[1], low: nums[2], close: nums[3], volume: nums[4] };
        if !bar.is_valid() {
            dropped += 1;
            continue;
        }
        panel
            .insert(stock, day, slot, bar)
            .map_err(|e| Error::data(format!("line {ln}: {e}")))?;
    }
    Ok(LoadedPanel { panel, dropped_rows: dropped })
}

/// Canonical rendering: header, then rows sorted by `(stock, day, slot)`,
/// floats in shortest round-trip decimal form. The panel fingerprint
/// hashes exactly this text.
pub fn render_csv(panel: &MarketPanel) -> String {
    let mut out = String::new();
    out.push_str(&COLUMNS.join(","));
    out.push('\n');
    for (stock, day, slot, bar) in panel.iter() {
        out.push_str(&format!(
            "{stock},{day},{slot},{},{},{},{},{}\n",
            bar.open, bar.high, bar.low, bar.close, bar.volume
        ));
    }
    out
}

/// Writes the canonical CSV, prefixed with optional `# key: value` comment
/// lines (skipped on load, excluded from the fingerprint).
pub fn save_csv(panel: &MarketPanel, path: &Path, comments: &[(&str, &str)]) -> Result<()> {
    let mut text = String::new();
    for (k, v) in comments {
        text.push_str(&format!("# {k}: {v}\n"));
    }
    text.push_str(&render_csv(panel));
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_panel() -> MarketPanel {
        let mut p = MarketPanel::new();
        for (stock, day, slot, v) in
            [("A", 0u32, 0u32, 100.25), ("A", 0, 1, 90.5), ("B", 3, 0, 1e7)]
        {
            p.insert(
                stock,
                day,
                slot,
                Bar { open: 10.0, high: 11.0, low: 9.75, close: 10.5, volume: v },
            )
            .unwrap();
        }
        p
    }

    #[test]
    fn round_trip_preserves_panel_and_fingerprint() {
        let p = sample_panel();
        let text = render_csv(&p);
        assert!(text.starts_with("stock_id,day,slot,open,high,low,close,volume\n"));
        let back = parse_csv(&text).unwrap();
        assert_eq!(back.dropped_rows, 0);
        assert_eq!(back.panel, p);
        assert_eq!(back.panel.fingerprint(), p.fingerprint());
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let text = "# manifest: abc123\n\nstock_id,day,slot,open,high,low,close,volume\n# mid comment\nA,0,0,1,1,1,1,5\n";
        let loaded = parse_csv(text).unwrap();
        assert_eq!(loaded.panel.num_bars(), 1);
    }

    #[test]
    fn header_order_is_free_but_names_are_required() {
        let text = "day,stock_id,slot,volume,open,high,low,close\n0,A,0,5,1,1,1,1\n";
        let loaded = parse_csv(text).unwrap();
        assert_eq!(loaded.panel.bar("A", 0, 0).unwrap().volume, 5.0);

        let missing = "stock_id,day,slot,open,high,low,close\nA,0,0,1,1,1,1\n";
        let err = parse_csv(missing).unwrap_err().to_string();
        assert!(err.contains("volume"), "{err}");

        let extra = "stock_id,day,slot,open,high,low,close,volume,bogus\nA,0,0,1,1,1,1,5,9\n";
        assert!(parse_csv(extra).unwrap_err().to_string().contains("bogus"));
    }

    #[test]
    fn invalid_values_are_dropped_and_counted() {
        let text = "stock_id,day,slot,open,high,low,close,volume\n\
                    A,0,0,1,1,1,1,5\n\
                    A,0,1,1,1,1,1,-2\n\
                    A,0,2,1,1,1,1,0\n\
                    A,0,3,1,1,1,1,NaN\n\
                    A,0,4,1,1,-1,1,5\n";
        let loaded = parse_csv(text).unwrap();
        assert_eq!(loaded.panel.num_bars(), 1);
        assert_eq!(loaded.dropped_rows, 4);
    }

    #[test]
    fn malformed_rows_fail_with_diagnostics() {
        let text = "stock_id,day,slot,open,high,low,close,volume\nA,0,zz,1,1,1,1,5\n";
        let err = parse_csv(text).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let short = "stock_id,day,slot,open,high,low,close,volume\nA,0,1\n";
        assert!(parse_csv(short).unwrap_err().to_string().contains("malformed"));
        let dup = "stock_id,day,slot,open,high,low,close,volume\nA,0,0,1,1,1,1,5\nA,0,0,1,1,1,1,6\n";
        assert!(parse_csv(dup).unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn file_round_trip_with_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        let p = sample_panel();
        save_csv(&p, &path, &[("manifest", "deadbeef")]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# manifest: deadbeef\n"));
        let loaded = load_csv(&path).unwrap();
        assert_eq!(loaded.panel.fingerprint(), p.fingerprint());
    }
}
