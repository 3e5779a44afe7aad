//! Run-config resolution: flag > $LSNET_CONFIG > ./lsnet.toml > defaults.
//! Individual flags (`--steps`, `--seed`, ...) then override file values.

use std::fmt;
use std::path::{Path, PathBuf};

use lsnet_core::train::RunConfig;

pub const ENV_VAR: &str = "LSNET_CONFIG";
pub const DEFAULT_FILE: &str = "lsnet.toml";

/// Bad flags or missing inputs; maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Origin {
    Flag(PathBuf),
    Env(PathBuf),
    File(PathBuf),
    Default,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Flag(p) => write!(f, "--config {}", p.display()),
            Origin::Env(p) => write!(f, "${ENV_VAR} {}", p.display()),
            Origin::File(p) => write!(f, "{}", p.display()),
            Origin::Default => f.write_str("built-in defaults"),
        }
    }
}

/// Which config file applies, if any.
pub fn locate(flag: Option<&Path>, env: Option<PathBuf>, cwd: &Path) -> Origin {
    if let Some(p) = flag {
        return Origin::Flag(p.to_path_buf());
    }
    if let Some(p) = env.filter(|p| !p.as_os_str().is_empty()) {
        return Origin::Env(p);
    }
    let local = cwd.join(DEFAULT_FILE);
    if local.is_file() {
        return Origin::File(local);
    }
    Origin::Default
}

pub fn load(origin: &Origin) -> anyhow::Result<RunConfig> {
    let path = match origin {
        Origin::Flag(p) | Origin::Env(p) | Origin::File(p) => p,
        Origin::Default => return Ok(RunConfig::default()),
    };
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    Ok(RunConfig::from_toml(&text)?)
}

pub fn resolve(flag: Option<&Path>) -> anyhow::Result<(Origin, RunConfig)> {
    let cwd = std::env::current_dir().unwrap_or_else(|_| PathBuf::from("."));
    let origin = locate(flag, std::env::var_os(ENV_VAR).map(PathBuf::from), &cwd);
    let cfg = load(&origin)?;
    Ok((origin, cfg))
}

/// Prints the effective configuration to stderr so stdout stays a clean report.
pub fn announce(origin: &Origin, body: &str) {
    eprintln!("# resolved config (from {origin})");
    for line in body.lines() {
        eprintln!("#   {line}");
    }
}
