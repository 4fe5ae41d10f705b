use std::io::{BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::ReadError;

/// Pretty-printed JSON with a trailing newline. Field order follows the
/// struct definitions, so equal values always produce equal bytes.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    text
}

pub fn write_json<T: Serialize, W: Write>(value: &T, mut w: W) -> std::io::Result<()> {
    w.write_all(to_json_string(value).as_bytes())?;
    w.flush()
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T, ReadError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| ReadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| ReadError::Json {
        path: path.to_path_buf(),
        source,
    })
}
