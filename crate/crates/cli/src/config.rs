//! Versioned TOML config. Each command reads the table named after it; keys
//! are the long flag names. A top-level or per-table `seed` sets the seed.
//!
//! ```toml
//! version = 1
//! seed = 7
//!
//! [tune-thresholds]
//! pred = "val_probs.csv"
//! truth = "val_tags.csv"
//! beta = 2.0
//! ```
//!
//! Relative paths are taken relative to the working directory.

use std::path::Path;

use anyhow::Context;
use serde::de::{DeserializeOwned, Error as _};
use serde::{Deserialize, Deserializer, Serialize};

use crate::{
    usage, CvArgs, LearnerArgs, MetricsArgs, NetArgs, PredictArgs, PreprocessArgs, SplitArgs, StackArgs, TrainArgs,
    TuneArgs, VoteArgs, DEFAULT_SEED, SEED_ENV,
};

pub const CONFIG_VERSION: u32 = 1;

/// Fills unset fields from a lower-priority source.
pub trait Merge {
    fn merge(&mut self, from: Self);
}

macro_rules! merge_impl {
    ($t:ty; opt: $($o:ident),*; vec: $($v:ident),*; flag: $($b:ident),*; nested: $($n:ident),*) => {
        impl Merge for $t {
            fn merge(&mut self, from: Self) {
                $( if self.$o.is_none() { self.$o = from.$o; } )*
                $( if self.$v.is_empty() { self.$v = from.$v; } )*
                $( self.$b |= from.$b; )*
                $( self.$n.merge(from.$n); )*
            }
        }
    };
}

merge_impl!(MetricsArgs; opt: pred, truth, thresholds, cutoff, beta, out; vec: ; flag: ; nested: );
merge_impl!(TuneArgs; opt: pred, truth, beta, mode, out; vec: ; flag: ; nested: );
merge_impl!(VoteArgs; opt: out; vec: pred, thresholds, weights; flag: ; nested: );
merge_impl!(SplitArgs; opt: truth, k, out; vec: ; flag: ; nested: );
merge_impl!(LearnerArgs; opt: learner, trees, stages, max_depth, learning_rate, lambda; vec: ; flag: ; nested: );
merge_impl!(CvArgs; opt: features, truth, k, folds, out; vec: ; flag: ; nested: learner);
merge_impl!(NetArgs; opt: epochs, batch_size, alpha, optimizer, patience, dropout, val_fraction; vec: hidden; flag: batch_norm; nested: );
merge_impl!(TrainArgs; opt: features, truth, loss, out; vec: ; flag: ; nested: learner, net);
merge_impl!(PredictArgs; opt: model, features, out, tags_out; vec: pred; flag: ; nested: );
merge_impl!(StackArgs; opt: truth, folds, beta, out; vec: pred; flag: ; nested: net);
merge_impl!(PreprocessArgs; opt: input, out, mode, backbone; vec: ; flag: augment; nested: );

/// One command table: its own optional seed plus the command's flags.
#[derive(Debug, Clone, Default)]
pub struct Section<T> {
    pub seed: Option<u64>,
    pub args: T,
}

// serde ignores `deny_unknown_fields` under `flatten`, so keys are checked
// against the serialized field names instead
impl<'de, T> Deserialize<'de> for Section<T>
where
    T: DeserializeOwned + Serialize + Default,
{
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let mut table = toml::Table::deserialize(d)?;
        let seed = match table.remove("seed") {
            Some(v) => Some(v.try_into::<u64>().map_err(|e| D::Error::custom(format!("seed: {e}")))?),
            None => None,
        };
        let known = match serde_json::to_value(T::default()) {
            Ok(serde_json::Value::Object(m)) => m,
            _ => return Err(D::Error::custom("unexpected settings layout")),
        };
        if let Some(k) = table.keys().find(|k| !known.contains_key(k.as_str())) {
            let mut names: Vec<&str> = known.keys().map(String::as_str).collect();
            names.push("seed");
            return Err(D::Error::custom(format!("unknown key `{k}`, expected one of {}", names.join(", "))));
        }
        let args = toml::Value::Table(table).try_into::<T>().map_err(D::Error::custom)?;
        Ok(Section { seed, args })
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigFile {
    pub version: Option<u32>,
    pub seed: Option<u64>,
    pub metrics: Option<Section<MetricsArgs>>,
    pub tune_thresholds: Option<Section<TuneArgs>>,
    pub vote: Option<Section<VoteArgs>>,
    pub split: Option<Section<SplitArgs>>,
    pub cv: Option<Section<CvArgs>>,
    pub train: Option<Section<TrainArgs>>,
    pub predict: Option<Section<PredictArgs>>,
    pub stack: Option<Section<StackArgs>>,
    pub preprocess: Option<Section<PreprocessArgs>>,
}

pub fn load(path: Option<&Path>) -> anyhow::Result<ConfigFile> {
    let Some(path) = path else { return Ok(ConfigFile::default()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let file: ConfigFile =
        toml::from_str(&text).map_err(|e| usage(format!("config {}: {}", path.display(), e.message())))?;
    match file.version {
        None | Some(CONFIG_VERSION) => Ok(file),
        Some(v) => Err(usage(format!(
            "config {}: version {v} is not supported (expected {CONFIG_VERSION})",
            path.display()
        ))),
    }
}

/// Flag, then command table, then top-level config, then `$CANOPY_SEED`.
pub fn resolve_seed(flag: Option<u64>, section: Option<u64>, top: Option<u64>) -> anyhow::Result<u64> {
    if let Some(s) = flag.or(section).or(top) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}
