//! File formats for ingestion and the dataset bundle.
//!
//! Interaction logs are delimiter-separated UTF-8 with a header line
//! `user,item,value[,timestamp]`, one interaction per line. Review dumps in
//! the common JSON-lines shape (`reviewerID`, `asin`, `overall`,
//! `unixReviewTime`) are also accepted. The dataset bundle is versioned JSON.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetStats, RawInteraction};
use crate::{Error, Result};

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Bundle {
    version: u32,
    dataset: Dataset,
}

/// Parse a `user,item,value[,timestamp]` log. Lines that fail to parse are
/// returned as diagnostics alongside the good rows.
pub fn parse_interactions_csv<R: Read>(reader: R) -> Result<(Vec<RawInteraction>, Vec<String>)> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty interaction file".into()))??;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "user" || cols[1] != "item" || cols[2] != "value" {
        return Err(Error::Format(format!(
            "expected header user,item,value[,timestamp], got {header:?}"
        )));
    }
    let has_timestamp = cols.len() > 3 && cols[3] == "timestamp";

    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            diagnostics.push(format!("line {}: expected 3+ fields", lineno + 2));
            continue;
        }
        let value: f64 = match fields[2].trim().parse() {
            Ok(v) => v,
            Err(_) => {
                diagnostics.push(format!("line {}: bad value {:?}", lineno + 2, fields[2]));
                continue;
            }
        };
        let timestamp = if has_timestamp && fields.len() > 3 {
            fields[3].trim().parse::<i64>().ok()
        } else {
            None
        };
        rows.push(RawInteraction {
            user_key: fields[0].trim().to_string(),
            item_key: fields[1].trim().to_string(),
            value,
            timestamp,
        });
    }
    Ok((rows, diagnostics))
}

/// Parse a JSON-lines review dump: one object per line with `reviewerID`,
/// `asin`, `overall`, and optionally `unixReviewTime`.
pub fn parse_review_json_lines<R: Read>(reader: R) -> Result<(Vec<RawInteraction>, Vec<String>)> {
    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                diagnostics.push(format!("line {}: {e}", lineno + 1));
                continue;
            }
        };
        let user = value.get("reviewerID").and_then(|v| v.as_str());
        let item = value.get("asin").and_then(|v| v.as_str());
        let rating = value.get("overall").and_then(|v| v.as_f64());
        match (user, item, rating) {
            (Some(u), Some(i), Some(r)) => rows.push(RawInteraction {
                user_key: u.to_string(),
                item_key: i.to_string(),
                value: r,
                timestamp: value.get("unixReviewTime").and_then(|v| v.as_i64()),
            }),
            _ => diagnostics.push(format!(
                "line {}: missing reviewerID/asin/overall",
                lineno + 1
            )),
        }
    }
    Ok((rows, diagnostics))
}

/// Sniff the format from the first non-empty byte: `{` means JSON lines.
pub fn parse_interactions_path(path: &Path) -> Result<(Vec<RawInteraction>, Vec<String>)> {
    let mut file = File::open(path)?;
    let mut first = [0u8; 1];
    let format_json = match file.read(&mut first) {
        Ok(1) => first[0] == b'{',
        _ => false,
    };
    let file = File::open(path)?;
    if format_json {
        parse_review_json_lines(file)
    } else {
        parse_interactions_csv(file)
    }
}

impl Dataset {
    pub fn save(&self, path: &Path) -> Result<()> {
        let bundle = Bundle {
            version: BUNDLE_VERSION,
            dataset: self.clone(),
        };
        let mut file = File::create(path)?;
        serde_json::to_writer(&mut file, &bundle)?;
        file.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let bundle: Bundle = serde_json::from_reader(BufReader::new(file))?;
        if bundle.version != BUNDLE_VERSION {
            return Err(Error::Format(format!(
                "dataset bundle version {} unsupported (expected {BUNDLE_VERSION})",
                bundle.version
            )));
        }
        let mut ds = bundle.dataset;
        ds.rebuild_index();
        Ok(ds)
    }
}

/// Human-readable stats report.
pub fn stats_report(stats: &DatasetStats) -> String {
    format!(
        "users: {}\nitems: {}\ninteractions: {}\nsparsity: {:.2}%\n",
        stats.n_users, stats.n_items, stats.interactions, stats.sparsity_pct
    )
}
