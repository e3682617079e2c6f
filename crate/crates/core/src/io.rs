//! File helpers shared by the pipeline: atomic writes and onset lists.

use std::io::Write;
use std::path::Path;

use crate::error::{io_err, Error, Result};

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

/// Parses one time in seconds per line; blank lines and `#` comments are
/// skipped, and only the first column of each line is read.
pub fn parse_onset_list(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(i, l)| {
            let field = l.split_whitespace().next().unwrap_or(l);
            field
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("line {}: {e}: {l:?}", i + 1)))
        })
        .collect()
}

pub fn format_onset_list(times: &[f64]) -> String {
    let mut s = String::new();
    for t in times {
        s.push_str(&format!("{t:.6}\n"));
    }
    s
}
