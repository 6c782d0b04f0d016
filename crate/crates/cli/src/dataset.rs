//! Value profiles as line-delimited JSON: one `{"brands": [...], "stores": [...]}` per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use jam_core::{AuctionConfig, BidProfile};

use crate::error::{CliError, CliResult};

pub fn write_jsonl(path: &Path, profiles: &[BidProfile]) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in profiles {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads profiles, checking every line against `config` when given. Blank lines are skipped.
pub fn read_jsonl(path: &Path, config: Option<&AuctionConfig>) -> CliResult<Vec<BidProfile>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| CliError::Dataset {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let p: BidProfile = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        p.validate().map_err(|e| bad(e.to_string()))?;
        if let Some(c) = config {
            p.check_shape(c).map_err(|e| bad(e.to_string()))?;
        }
        out.push(p);
    }
    Ok(out)
}
