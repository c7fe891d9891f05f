use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub const RESOLVED_CONFIG: &str = "config.toml";

/// Start from the config file (or defaults), then let `apply` write the
/// flags that were given on top.
pub fn resolve<C: DeserializeOwned + Default>(path: Option<&Path>, apply: impl FnOnce(&mut C)) -> Result<C> {
    let mut config = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => C::default(),
    };
    apply(&mut config);
    Ok(config)
}

/// Create `out` and write the resolved config into it.
pub fn prepare_out<C: Serialize>(out: &Path, config: &C) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))?;
    let text = toml::to_string(config).context("serializing resolved config")?;
    std::fs::write(out.join(RESOLVED_CONFIG), text).context("writing resolved config")?;
    Ok(())
}

pub fn required(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    match path {
        Some(p) => Ok(p.clone()),
        None => bail!("missing {what}: pass --{what} or set `{what}` in the config file"),
    }
}

/// Overwrite `$target` with every flag that is `Some`.
macro_rules! set {
    ($target:expr, $($field:ident <- $value:expr),+ $(,)?) => {
        $( if let Some(v) = $value { $target.$field = v; } )+
    };
}
pub(crate) use set;
