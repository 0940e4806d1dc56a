use std::path::PathBuf;
use std::process::Command;
use std::str::FromStr;

use thiserror::Error;
use tracing::warn;

/// Where the advertised load number comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadSource {
    /// `static:<value>`
    Static(f64),
    /// `file:<path>`: the file holds one number.
    File(PathBuf),
    /// `command:<argv>`: the first whitespace token of stdout.
    Command(Vec<String>),
}

#[derive(Debug, Error, PartialEq)]
#[error("load source must be `static:<value>`, `file:<path>` or `command:<argv>`, got `{0}`")]
pub struct LoadSourceParseError(String);

impl FromStr for LoadSource {
    type Err = LoadSourceParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || LoadSourceParseError(s.to_owned());
        let (kind, arg) = s.split_once(':').ok_or_else(err)?;
        let arg = arg.trim();
        match kind.trim() {
            "static" => arg
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .map(LoadSource::Static)
                .ok_or_else(err),
            "file" if !arg.is_empty() => Ok(LoadSource::File(arg.into())),
            "command" => {
                let argv: Vec<String> = arg.split_whitespace().map(str::to_owned).collect();
                if argv.is_empty() {
                    Err(err())
                } else {
                    Ok(LoadSource::Command(argv))
                }
            }
            _ => Err(err()),
        }
    }
}

impl Default for LoadSource {
    fn default() -> Self {
        LoadSource::Static(0.0)
    }
}

/// Reads the load source, falling back to the last good value (or zero)
/// when the source fails.
#[derive(Debug)]
pub struct LoadCollector {
    source: LoadSource,
    last: Option<f64>,
    failures: u64,
}

impl LoadCollector {
    pub fn new(source: LoadSource) -> Self {
        Self {
            source,
            last: None,
            failures: 0,
        }
    }

    pub fn failures(&self) -> u64 {
        self.failures
    }

    /// Blocks for the duration of a `command:` source.
    pub fn collect(&mut self) -> f64 {
        match self.read() {
            Ok(v) => {
                self.last = Some(v);
                v
            }
            Err(reason) => {
                self.failures += 1;
                warn!(source = ?self.source, %reason, "load source failed; reusing last value");
                self.last.unwrap_or(0.0)
            }
        }
    }

    fn read(&self) -> Result<f64, String> {
        let text = match &self.source {
            LoadSource::Static(v) => return Ok(*v),
            LoadSource::File(path) => std::fs::read_to_string(path).map_err(|e| e.to_string())?,
            LoadSource::Command(argv) => {
                let out = Command::new(&argv[0])
                    .args(&argv[1..])
                    .output()
                    .map_err(|e| e.to_string())?;
                if !out.status.success() {
                    return Err(format!("exited with {}", out.status));
                }
                String::from_utf8_lossy(&out.stdout).into_owned()
            }
        };
        let token = text.split_whitespace().next().ok_or("empty output")?;
        match token.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
            _ => Err(format!("`{token}` is not a non-negative number")),
        }
    }
}
