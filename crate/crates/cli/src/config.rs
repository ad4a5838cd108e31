//! Flat `key = value` run configuration.
//!
//! Every setting is looked up as: command-line flag, then config file,
//! then (for `seed` only) the `GAFVIT_SEED` environment variable, then the
//! built-in default. Keys are the long flag names. Whatever was resolved is
//! recorded and written back out as `config.toml` in the run directory.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use toml::{Table, Value};

use crate::error::CliError;

pub const ECHO_FILE: &str = "config.toml";
pub const SEED_ENV: &str = "GAFVIT_SEED";

/// A setting type that can be read from text and echoed as TOML.
pub trait Setting: FromStr + Clone {
    fn to_toml(&self) -> Value;
}

macro_rules! integer_setting {
    ($($t:ty),*) => {$(
        impl Setting for $t {
            fn to_toml(&self) -> Value {
                Value::Integer(*self as i64)
            }
        }
    )*};
}
integer_setting!(u64, usize);

impl Setting for f64 {
    fn to_toml(&self) -> Value {
        Value::Float(*self)
    }
}

impl Setting for bool {
    fn to_toml(&self) -> Value {
        Value::Boolean(*self)
    }
}

impl Setting for String {
    fn to_toml(&self) -> Value {
        Value::String(self.clone())
    }
}

impl Setting for PathBuf {
    fn to_toml(&self) -> Value {
        Value::String(self.display().to_string())
    }
}

pub struct Resolver {
    command: &'static str,
    file: Table,
    source: Option<PathBuf>,
    used: BTreeSet<String>,
    echo: Table,
}

impl Resolver {
    pub fn new(command: &'static str, path: Option<&Path>) -> Result<Self, CliError> {
        let file = match path {
            Some(p) => parse_file(p)?,
            None => Table::new(),
        };
        let mut r = Self {
            command,
            file,
            source: path.map(Path::to_path_buf),
            used: BTreeSet::new(),
            echo: Table::new(),
        };
        if let Some(c) = r.raw("command") {
            if c != command {
                return Err(r.usage(format!("file is for `{c}`, not `{command}`")));
            }
        }
        r.echo.insert("command".into(), Value::String(command.into()));
        Ok(r)
    }

    fn usage(&self, msg: String) -> CliError {
        match &self.source {
            Some(p) => CliError::Usage(format!("{}: {msg}", p.display())),
            None => CliError::Usage(msg),
        }
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.file.get(key).map(|v| match v {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        })
    }

    fn from_file<T: Setting>(&mut self, key: &str) -> Result<Option<T>, CliError> {
        match self.raw(key) {
            Some(text) => T::from_str(&text)
                .map(Some)
                .map_err(|_| self.usage(format!("`{key}`: cannot parse `{text}`"))),
            None => Ok(None),
        }
    }

    fn record<T: Setting>(&mut self, key: &str, value: &T) {
        self.used.insert(key.to_string());
        self.echo.insert(key.to_string(), value.to_toml());
    }

    /// Flag, file, default.
    pub fn get<T: Setting>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError> {
        let value = match flag {
            Some(v) => v,
            None => self.from_file(key)?.unwrap_or(default),
        };
        self.record(key, &value);
        Ok(value)
    }

    /// Flag or file; not echoed when absent.
    pub fn optional<T: Setting>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError> {
        let value = match flag {
            Some(v) => Some(v),
            None => self.from_file(key)?,
        };
        self.used.insert(key.to_string());
        if let Some(v) = &value {
            self.record(key, v);
        }
        Ok(value)
    }

    pub fn required<T: Setting>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError> {
        self.optional(key, flag)?
            .ok_or_else(|| CliError::Usage(format!("`{}` needs --{key} (or `{key}` in the config file)", self.command)))
    }

    /// Boolean switch: a flag given on the command line always means true.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool, CliError> {
        self.get(key, flag.then_some(true), false)
    }

    /// Flag, file, `GAFVIT_SEED`, default.
    pub fn seed(&mut self, flag: Option<u64>, default: u64) -> Result<u64, CliError> {
        let from_env = || -> Result<Option<u64>, CliError> {
            match std::env::var(SEED_ENV) {
                Ok(s) => s
                    .trim()
                    .parse()
                    .map(Some)
                    .map_err(|_| CliError::Usage(format!("{SEED_ENV}=`{s}` is not an unsigned integer"))),
                Err(_) => Ok(None),
            }
        };
        let value = match flag {
            Some(v) => v,
            None => match self.from_file("seed")? {
                Some(v) => v,
                None => from_env()?.unwrap_or(default),
            },
        };
        self.record("seed", &value);
        Ok(value)
    }

    /// Rejects config keys this command never asked for.
    pub fn finish(&self) -> Result<(), CliError> {
        let unknown: Vec<&str> = self
            .file
            .keys()
            .filter(|k| !self.used.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(self.usage(format!("unknown key(s) for `{}`: {}", self.command, unknown.join(", "))))
        }
    }

    pub fn echo_text(&self) -> String {
        toml::to_string(&self.echo).expect("flat table serializes")
    }

    pub fn write_echo(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(ECHO_FILE);
        fs::write(&path, self.echo_text()).map_err(|e| CliError::io(&path, e))
    }
}

fn parse_file(path: &Path) -> Result<Table, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Usage(format!("{}: {}", path.display(), e.message())))?;
    for (k, v) in &table {
        if matches!(v, Value::Table(_) | Value::Array(_)) {
            return Err(CliError::Usage(format!(
                "{}: `{k}` must be a plain value; the config file is flat",
                path.display()
            )));
        }
    }
    Ok(table)
}

/// Comma-separated list setting, e.g. `counts = "250,250,250,250"`.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T> {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse().map_err(|_| format!("bad list item `{p}`")))
            .collect::<Result<_, _>>()
            .map(List)
    }
}

impl<T: FromStr + Display + Clone> Setting for List<T> {
    fn to_toml(&self) -> Value {
        Value::String(self.0.iter().map(T::to_string).collect::<Vec<_>>().join(","))
    }
}
