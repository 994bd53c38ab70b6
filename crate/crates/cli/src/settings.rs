use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use attnseg::config::parse_key_values;
use attnseg::densecrf::CrfParams;
use attnseg::fusion::FusionConfig;

use crate::args::{CrfFlags, FusionFlags};

const OTHER_KEYS: [&str; 7] = ["seed", "k", "auto-k", "mode", "jobs", "ignore", "classes"];

/// Values from `--config`, keyed by flag name.
#[derive(Debug, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

pub fn load(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| attnseg::Error::Io { path: path.into(), source: e })?;
    let values = parse_key_values(&text).with_context(|| format!("config {}", path.display()))?;
    for key in values.keys() {
        let known = FusionConfig::KEYS.contains(&key.as_str())
            || CrfParams::KEYS.contains(&key.as_str())
            || OTHER_KEYS.contains(&key.as_str());
        if !known {
            bail!(attnseg::Error::Config(format!(
                "config {}: unknown key {key:?}",
                path.display()
            )));
        }
    }
    Ok(FileConfig { values })
}

impl FileConfig {
    /// Flag value if given, else the file value, else `default`.
    pub fn pick<T: FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|_| attnseg::Error::Config(format!("invalid value {raw:?} for {key}")).into()),
            None => Ok(default),
        }
    }

    pub fn pick_opt<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        self.values
            .get(key)
            .map(|raw| {
                raw.parse()
                    .map_err(|_| attnseg::Error::Config(format!("invalid value {raw:?} for {key}")).into())
            })
            .transpose()
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn fusion(&self, flags: &FusionFlags) -> Result<FusionConfig> {
        let mut config = FusionConfig::default();
        for key in FusionConfig::KEYS {
            if let Some(v) = self.values.get(key) {
                config.set(key, v)?;
            }
        }
        let layers = flags.cross_layers.as_ref().map(|l| {
            l.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
        });
        let overrides = [
            ("order", flags.order.map(|v| v.to_string())),
            ("cross-layers", layers),
            ("bg-thr", flags.bg_thr.map(|v| v.to_string())),
            ("bg-power", flags.bg_power.map(|v| v.to_string())),
            ("band", flags.band.map(|v| v.to_string())),
            ("bg-after-ensemble", flags.bg_after_ensemble.map(|v| v.to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                config.set(key, &v)?;
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn crf(&self, flags: &CrfFlags) -> Result<CrfParams> {
        let mut params = CrfParams::default();
        for key in CrfParams::KEYS {
            if let Some(v) = self.values.get(key) {
                params.set(key, v)?;
            }
        }
        let overrides = [
            ("crf.iterations", flags.iterations.map(|v| v.to_string())),
            ("crf.w1", flags.w1.map(|v| v.to_string())),
            ("crf.sxy_a", flags.sxy_a.map(|v| v.to_string())),
            ("crf.srgb", flags.srgb.map(|v| v.to_string())),
            ("crf.w2", flags.w2.map(|v| v.to_string())),
            ("crf.sxy_s", flags.sxy_s.map(|v| v.to_string())),
            ("crf.unary_epsilon", flags.unary_epsilon.map(|v| v.to_string())),
            ("crf.max_side", flags.max_side.map(|v| v.to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                params.set(key, &v)?;
            }
        }
        params.validate()?;
        Ok(params)
    }
}

/// Prints the resolved configuration of a run to stderr.
pub fn print_header(command: &str, values: &BTreeMap<String, String>) {
    let mut text = format!("# attnseg {} {command}\n", env!("CARGO_PKG_VERSION"));
    for (k, v) in values {
        text.push_str(&format!("{k} = {v}\n"));
    }
    eprint!("{text}");
}

pub fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            bail!(attnseg::Error::Config("jobs must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    Ok(builder.build()?)
}
