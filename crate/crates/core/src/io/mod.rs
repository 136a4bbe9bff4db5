//! Dataset formats and incremental playback.
//!
//! g2o (`VERTEX_SE2`/`EDGE_SE2`) and TORO (`VERTEX2`/`EDGE2`) files are read
//! into a [`RawGraph`] and ordered for playback by [`playback_order`]. The
//! JSON-lines format stores an already ordered [`DatasetStream`], priors
//! included.

mod jsonl;
mod playback;
mod text;

use std::path::Path;
use std::str::FromStr;

pub use jsonl::{parse_jsonl, write_jsonl};
pub use playback::{inject_priors, playback_order, DatasetStream, MIN_PRIOR_SIGMA};
pub use text::{parse_g2o, parse_toro, write_g2o, write_toro, RawGraph};

use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    G2o,
    Toro,
    Jsonl,
}

impl Format {
    /// Guesses from the file extension: `.g2o`, `.graph`/`.toro`, `.jsonl`.
    pub fn from_path(path: &Path) -> Option<Format> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "g2o" => Some(Format::G2o),
            "graph" | "toro" => Some(Format::Toro),
            "jsonl" => Some(Format::Jsonl),
            _ => None,
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "g2o" => Ok(Format::G2o),
            "toro" => Ok(Format::Toro),
            "jsonl" => Ok(Format::Jsonl),
            _ => Err(format!("unknown format {s:?} (expected g2o, toro or jsonl)")),
        }
    }
}

fn resolve(path: &Path, format: Option<Format>) -> Result<Format, Error> {
    format
        .or_else(|| Format::from_path(path))
        .ok_or_else(|| Error::Io(format!("cannot infer the format of {}", path.display())))
}

fn dataset_name(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset").to_string()
}

/// Parses text in `format` into a playback stream.
pub fn stream_from_text(text: &str, format: Format, name: &str) -> Result<DatasetStream, Error> {
    match format {
        Format::G2o => playback_order(&parse_g2o(text)?, name),
        Format::Toro => playback_order(&parse_toro(text)?, name),
        Format::Jsonl => parse_jsonl(text),
    }
}

/// Reads and orders a dataset file; `format` defaults to the extension.
pub fn load_stream(path: &Path, format: Option<Format>) -> Result<DatasetStream, Error> {
    let format = resolve(path, format)?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    stream_from_text(&text, format, &dataset_name(path))
}

/// Serializes `stream` in `format`. Text formats hold relative edges only
/// and fail on priors.
pub fn stream_to_text(stream: &DatasetStream, format: Format) -> Result<String, Error> {
    match format {
        Format::G2o | Format::Toro if stream.num_priors() > 0 => {
            Err(Error::WrongEdgeKind("priors cannot be written to g2o or TORO"))
        }
        Format::G2o => write_g2o(&stream.to_raw()),
        Format::Toro => write_toro(&stream.to_raw()),
        Format::Jsonl => Ok(write_jsonl(stream)),
    }
}
