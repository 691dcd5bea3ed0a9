use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// A command failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_DIVERGENCE: u8 = 3;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<medseq::Error> for CliError {
    fn from(e: medseq::Error) -> Self {
        let code = match e {
            medseq::Error::Config(_) => EXIT_CONFIG,
            medseq::Error::Divergence { .. } => EXIT_DIVERGENCE,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Values from a `key = value` configuration file. Every key must be
/// consumed by the command, so typos surface as errors.
#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, (usize, String)>,
    used: RefCell<BTreeSet<String>>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Settings {
    pub fn parse(content: &str) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in content.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::config(format!(
                    "config line {}: expected `key = value`",
                    i + 1
                )));
            };
            let key = normalize(k);
            if key.is_empty() {
                return Err(CliError::config(format!("config line {}: empty key", i + 1)));
            }
            if values.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(CliError::config(format!(
                    "config line {}: duplicate key `{key}`",
                    i + 1
                )));
            }
        }
        Ok(Self {
            values,
            used: RefCell::default(),
        })
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let content =
                    std::fs::read_to_string(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
                Self::parse(&content)
            }
        }
    }

    fn raw(&self, key: &str) -> Option<&(usize, String)> {
        let key = normalize(key);
        let v = self.values.get(&key);
        if v.is_some() {
            self.used.borrow_mut().insert(key);
        }
        v
    }

    /// Flag value if given, else the file value, else `None`.
    pub fn opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>>
    where
        T::Err: fmt::Display,
    {
        let from_file = match self.raw(key) {
            Some((line, v)) => Some(
                v.parse::<T>()
                    .map_err(|e| CliError::config(format!("config line {line}: `{key}`: {e}")))?,
            ),
            None => None,
        };
        Ok(flag.or(from_file))
    }

    pub fn get<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }

    /// A switch with `--x` / `--no-x` flags.
    pub fn switch(&self, on: bool, off: bool, key: &str, default: bool) -> CliResult<bool> {
        let flag = match (on, off) {
            (true, true) => {
                return Err(CliError::config(format!(
                    "--{0} conflicts with --no-{0}",
                    key.replace('_', "-")
                )))
            }
            (true, false) => Some(true),
            (false, true) => Some(false),
            (false, false) => None,
        };
        self.get(flag, key, default)
    }

    /// Seed precedence: flag, file, `MEDSEQ_SEED`, then 1.
    pub fn seed(&self, flag: Option<u64>) -> CliResult<u64> {
        if let Some(s) = self.opt(flag, "seed")? {
            return Ok(s);
        }
        match std::env::var("MEDSEQ_SEED") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|e| CliError::config(format!("MEDSEQ_SEED `{v}`: {e}"))),
            Err(_) => Ok(1),
        }
    }

    /// Fails on keys no setting consumed.
    pub fn finish(&self) -> CliResult<()> {
        let used = self.used.borrow();
        let unknown: Vec<String> = self
            .values
            .iter()
            .filter(|(k, _)| !used.contains(*k))
            .map(|(k, (line, _))| format!("`{k}` (line {line})"))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::config(format!("unknown config keys: {}", unknown.join(", "))))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beats_default() {
        let s = Settings::parse("# run\nmax-epochs = 12\nlearning_rate = 0.01  # faster\n").unwrap();
        assert_eq!(s.get(Some(3usize), "max_epochs", 100).unwrap(), 3);
        assert_eq!(s.get(None, "max_epochs", 100usize).unwrap(), 12);
        assert_eq!(s.get(None, "learning-rate", 0.001).unwrap(), 0.01);
        assert_eq!(s.get(None, "patience", 3usize).unwrap(), 3);
        s.finish().unwrap();
    }

    #[test]
    fn unknown_and_malformed_keys_fail() {
        let s = Settings::parse("max_epoch = 3\n").unwrap();
        let _ = s.get(None, "max_epochs", 1usize).unwrap();
        assert_eq!(s.finish().unwrap_err().code, EXIT_CONFIG);
        assert!(Settings::parse("just words\n").is_err());
        assert!(Settings::parse("a = 1\na = 2\n").is_err());
        let bad = Settings::parse("patience = three\n").unwrap();
        assert!(bad.get(None, "patience", 3usize).is_err());
    }

    #[test]
    fn switches() {
        let s = Settings::parse("augment = true\n").unwrap();
        assert!(s.switch(false, false, "augment", false).unwrap());
        assert!(!s.switch(false, true, "augment", false).unwrap());
        assert!(s.switch(true, true, "augment", false).is_err());
    }

    #[test]
    fn error_codes() {
        assert_eq!(CliError::from(medseq::Error::Config("x".into())).code, EXIT_CONFIG);
        assert_eq!(
            CliError::from(medseq::Error::Divergence { epoch: 1, batch: 2 }).code,
            EXIT_DIVERGENCE
        );
        assert_eq!(CliError::from(medseq::Error::EmptyCorpus).code, EXIT_DATA);
    }
}
