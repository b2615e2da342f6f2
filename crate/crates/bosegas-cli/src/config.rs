//! Key=value run configuration: a flat text file of `key = value` lines
//! with `#` comments, merged under command-line flags (flags win). Every
//! diagnostic carries the file, line, and field it refers to.

use std::collections::HashMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use bosegas::Bc;

/// Failure with the process exit code it maps to: 2 for configuration and
/// validation problems, 1 for runtime failures.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError { code: 1, message: message.into() }
    }
}

impl From<bosegas::Error> for CliError {
    fn from(err: bosegas::Error) -> Self {
        CliError::runtime(err.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::runtime(format!("i/o failure: {err}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Parsed config file: raw values with the line they came from.
#[derive(Debug, Default)]
pub struct FileConfig {
    path: String,
    entries: HashMap<String, (String, usize)>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let display = path.display().to_string();
        let mut entries: HashMap<String, (String, usize)> = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = raw.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            let Some((key, value)) = stripped.split_once('=') else {
                return Err(CliError::config(format!(
                    "{display}:{line}: expected 'key = value', got '{stripped}'"
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() || value.is_empty() {
                return Err(CliError::config(format!(
                    "{display}:{line}: empty {} in '{stripped}'",
                    if key.is_empty() { "key" } else { "value" }
                )));
            }
            if let Some((_, first)) = entries.insert(key.to_string(), (value.to_string(), line)) {
                return Err(CliError::config(format!(
                    "{display}:{line}: duplicate key '{key}' (first set on line {first})"
                )));
            }
        }
        Ok(FileConfig { path: display, entries })
    }

    /// Rejects keys outside the subcommand's schema, naming the line.
    pub fn check_keys(&self, allowed: &[&str]) -> CliResult<()> {
        let mut offenders: Vec<(usize, &str)> = self
            .entries
            .iter()
            .filter(|(k, _)| !allowed.contains(&k.as_str()))
            .map(|(k, (_, line))| (*line, k.as_str()))
            .collect();
        offenders.sort_unstable();
        if let Some((line, key)) = offenders.first() {
            return Err(CliError::config(format!(
                "{}:{line}: unknown key '{key}' for this subcommand (expected one of: {})",
                self.path,
                allowed.join(", ")
            )));
        }
        Ok(())
    }
}

/// Flag-over-file resolution for one subcommand.
pub struct Settings {
    file: Option<FileConfig>,
}

impl Settings {
    pub fn new(config_path: Option<&Path>, allowed_keys: &[&str]) -> CliResult<Self> {
        let file = match config_path {
            Some(p) => {
                let f = FileConfig::load(p)?;
                f.check_keys(allowed_keys)?;
                Some(f)
            }
            None => None,
        };
        Ok(Settings { file })
    }

    fn file_value<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        let Some(file) = &self.file else { return Ok(None) };
        let Some((raw, line)) = file.entries.get(key) else { return Ok(None) };
        raw.parse::<T>().map(Some).map_err(|e| {
            CliError::config(format!(
                "{}:{line}: invalid value '{raw}' for '{key}': {e}",
                file.path
            ))
        })
    }

    /// Flag value if given, else the config-file value, else None.
    pub fn merge<T: FromStr>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.file_value(key),
        }
    }

    pub fn require<T>(&self, value: Option<T>, key: &str) -> CliResult<T> {
        value.ok_or_else(|| {
            CliError::config(format!(
                "missing required setting '{key}': pass --{} or set '{key}' in the config file",
                key.replace('_', "-")
            ))
        })
    }

    pub fn bc(&self, flag: Option<&str>, key: &str) -> CliResult<Option<Bc>> {
        let raw = self.merge(flag.map(str::to_string), key)?;
        match raw {
            None => Ok(None),
            Some(s) => Bc::from_str(&s).map(Some).map_err(|_| {
                CliError::config(format!(
                    "invalid value '{s}' for '{key}': expected dirichlet, neumann, periodic, or free"
                ))
            }),
        }
    }

    /// Comma-separated list value ("128,256,512").
    pub fn list<T: FromStr>(&self, flag: Option<&str>, key: &str) -> CliResult<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        let raw = self.merge(flag.map(str::to_string), key)?;
        match raw {
            None => Ok(None),
            Some(s) => s
                .split(',')
                .map(|item| {
                    item.trim().parse::<T>().map_err(|e| {
                        CliError::config(format!(
                            "invalid list entry '{}' for '{key}': {e}",
                            item.trim()
                        ))
                    })
                })
                .collect::<CliResult<Vec<T>>>()
                .map(Some),
        }
    }
}

/// Checks a strictly positive numeric setting, naming the field.
pub fn ensure_positive(value: f64, key: &str) -> CliResult<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(CliError::config(format!(
            "'{key}' must be positive and finite, got {value}"
        )))
    }
}

/// Checks a strictly increasing size sequence, naming the field.
pub fn ensure_increasing(values: &[usize], key: &str) -> CliResult<()> {
    if values.is_empty() {
        return Err(CliError::config(format!("'{key}' must not be empty")));
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::config(format!(
            "'{key}' must be strictly increasing, got {values:?}"
        )));
    }
    Ok(())
}
