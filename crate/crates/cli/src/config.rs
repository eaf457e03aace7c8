//! `key = value` run configuration with `[section]` headers.
//!
//! ```text
//! [model]
//! preset = tiny
//! tile_size = 64
//!
//! [train]
//! learning_rate = 1e-3
//! epochs = 20
//!
//! [paths]
//! dataset = data/dibco
//!
//! [run]
//! held_out_year = 2017
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use docbinformer::model::{AblationRow, ModelConfig};
use docbinformer::train::TrainConfig;
use docbinformer::{Error, Result};

pub const KEYS: &[&str] = &[
    "model.preset",
    "model.ablation_row",
    "model.tile_size",
    "model.patch",
    "model.subpatch",
    "model.global_dim",
    "model.local_dim",
    "model.global_heads",
    "model.local_heads",
    "model.decoder_heads",
    "model.global_layers",
    "model.local_layers",
    "model.decoder_layers",
    "model.global_mlp_dim",
    "model.local_mlp_dim",
    "model.decoder_mlp_dim",
    "model.ln_eps",
    "model.attn_residual",
    "train.learning_rate",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.weight_decay",
    "train.batch_size",
    "train.epochs",
    "train.max_steps",
    "train.checkpoint_every",
    "paths.dataset",
    "paths.checkpoint",
    "paths.output_dir",
    "run.held_out_year",
    "run.seed",
];

/// One `section.key = value` assignment and where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub origin: String,
}

/// Everything a command needs, merged from defaults, the config file and
/// command-line overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub held_out_year: Option<u32>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            dataset: None,
            checkpoint: None,
            output_dir: PathBuf::from("runs"),
            held_out_year: None,
        }
    }
}

pub fn parse_text(text: &str, origin: &str) -> Result<Vec<Entry>> {
    let mut section: Option<String> = None;
    let mut entries: Vec<Entry> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let at = format!("{origin}:{}", n + 1);
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("{at}: malformed section header `{line}`")))?
                .trim();
            if !KEYS.iter().any(|k| k.split('.').next() == Some(name)) {
                return Err(Error::Config(format!("{at}: unknown section `[{name}]`")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{at}: expected `key = value`, got `{line}`")))?;
        let key = key.trim();
        let section = section.as_deref().ok_or_else(|| {
            Error::Config(format!("{at}: key `{key}` appears before any [section]"))
        })?;
        let full = format!("{section}.{key}");
        if entries.iter().any(|e| e.key == full) {
            return Err(Error::Config(format!("{at}: duplicate key `{full}`")));
        }
        entries.push(Entry {
            key: full,
            value: value.trim().to_string(),
            origin: at,
        });
    }
    Ok(entries)
}

pub fn parse_file(path: &Path) -> Result<Vec<Entry>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_text(&text, &path.display().to_string())
}

/// `section.key=value` from the command line.
pub fn parse_override(arg: &str) -> Result<Entry> {
    let (key, value) = arg
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{arg}` is not `section.key=value`")))?;
    Ok(Entry {
        key: key.trim().to_string(),
        value: value.trim().to_string(),
        origin: "command line".into(),
    })
}

fn value<T: FromStr>(e: &Entry) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    e.value.parse().map_err(|err| {
        Error::Config(format!(
            "{}: bad value `{}` for `{}`: {err}",
            e.origin, e.value, e.key
        ))
    })
}

fn flag(e: &Entry) -> Result<bool> {
    match e.value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{}: `{}` expects a boolean, got `{}`",
            e.origin, e.key, e.value
        ))),
    }
}

impl RunConfig {
    /// Applies `entries` in order on top of the defaults. A preset or
    /// ablation row is applied first so that individual keys refine it.
    pub fn from_entries(entries: &[Entry]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(e) = entries.iter().find(|e| !KEYS.contains(&e.key.as_str())) {
            return Err(Error::Config(format!(
                "{}: unknown key `{}`",
                e.origin, e.key
            )));
        }
        let last = |key: &str| entries.iter().rev().find(|e| e.key == key);
        if let Some(e) = last("model.preset") {
            cfg.model = match e.value.as_str() {
                "default" => ModelConfig::default(),
                "tiny" => ModelConfig::tiny(),
                other => {
                    return Err(Error::Config(format!(
                        "{}: `model.preset` must be `default` or `tiny`, got `{other}`",
                        e.origin
                    )))
                }
            };
        }
        if let Some(e) = last("model.ablation_row") {
            let row = AblationRow::lookup(value(e)?)?;
            cfg.model = ModelConfig {
                height: cfg.model.height,
                width: cfg.model.width,
                ..row.config()
            };
        }
        for e in entries {
            cfg.apply(e)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, e: &Entry) -> Result<()> {
        let (m, t) = (&mut self.model, &mut self.train);
        match e.key.as_str() {
            "model.preset" | "model.ablation_row" => {}
            "model.tile_size" => *m = m.with_tile(value(e)?),
            "model.patch" => m.patch = value(e)?,
            "model.subpatch" => m.subpatch = value(e)?,
            "model.global_dim" => m.global_dim = value(e)?,
            "model.local_dim" => m.local_dim = value(e)?,
            "model.global_heads" => m.global_heads = value(e)?,
            "model.local_heads" => m.local_heads = value(e)?,
            "model.decoder_heads" => m.decoder_heads = value(e)?,
            "model.global_layers" => m.global_layers = value(e)?,
            "model.local_layers" => m.local_layers = value(e)?,
            "model.decoder_layers" => m.decoder_layers = value(e)?,
            "model.global_mlp_dim" => m.global_mlp_dim = value(e)?,
            "model.local_mlp_dim" => m.local_mlp_dim = value(e)?,
            "model.decoder_mlp_dim" => m.decoder_mlp_dim = value(e)?,
            "model.ln_eps" => m.ln_eps = value(e)?,
            "model.attn_residual" => m.attn_residual = flag(e)?,
            "train.learning_rate" => t.learning_rate = value(e)?,
            "train.beta1" => t.adam_beta1 = value(e)?,
            "train.beta2" => t.adam_beta2 = value(e)?,
            "train.eps" => t.adam_eps = value(e)?,
            "train.weight_decay" => t.weight_decay = value(e)?,
            "train.batch_size" => t.batch_size = value(e)?,
            "train.epochs" => t.epochs = value(e)?,
            "train.max_steps" => t.max_steps = Some(value(e)?),
            "train.checkpoint_every" => t.checkpoint_every = value(e)?,
            "paths.dataset" => self.dataset = Some(PathBuf::from(&e.value)),
            "paths.checkpoint" => self.checkpoint = Some(PathBuf::from(&e.value)),
            "paths.output_dir" => self.output_dir = PathBuf::from(&e.value),
            "run.held_out_year" => self.held_out_year = Some(value(e)?),
            "run.seed" => t.seed = value(e)?,
            other => {
                return Err(Error::Config(format!(
                    "{}: unknown key `{other}`",
                    e.origin
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.model.width != self.model.height {
            return Err(Error::Config("tiles must be square".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_comments_and_overrides() {
        let text = "# run\n[model]\npreset = tiny\ntile_size = 32 ; inline\n\n[train]\nepochs=3\n[run]\nseed = 9\n";
        let mut entries = parse_text(text, "a.cfg").unwrap();
        entries.push(parse_override("train.epochs=5").unwrap());
        let cfg = RunConfig::from_entries(&entries).unwrap();
        assert_eq!(cfg.model, ModelConfig::tiny().with_tile(32));
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.train.seed, 9);
    }

    #[test]
    fn unknown_key_is_named() {
        let entries = parse_text("[model]\npatchsize = 8\n", "a.cfg").unwrap();
        let err = RunConfig::from_entries(&entries).unwrap_err().to_string();
        assert!(
            err.contains("model.patchsize") && err.contains("a.cfg:2"),
            "{err}"
        );
    }

    #[test]
    fn malformed_input() {
        assert!(parse_text("[bogus]\n", "a").is_err());
        assert!(parse_text("epochs = 3\n", "a").is_err());
        assert!(parse_text("[train]\nepochs 3\n", "a").is_err());
        assert!(parse_text("[train]\nepochs = 3\nepochs = 4\n", "a").is_err());
        let bad = parse_text("[train]\nbatch_size = many\n", "a").unwrap();
        assert!(RunConfig::from_entries(&bad)
            .unwrap_err()
            .to_string()
            .contains("train.batch_size"));
    }

    #[test]
    fn invalid_values_are_rejected_at_parse_time() {
        let entries = parse_text("[model]\npreset = tiny\npatch = 5\n", "a").unwrap();
        assert!(RunConfig::from_entries(&entries).is_err());
        let entries = parse_text("[train]\nbatch_size = 0\n", "a").unwrap();
        assert!(RunConfig::from_entries(&entries).is_err());
    }

    #[test]
    fn ablation_row_then_refinement() {
        let entries = parse_text("[model]\nablation_row = 5\nglobal_layers = 2\n", "a").unwrap();
        let cfg = RunConfig::from_entries(&entries).unwrap();
        assert_eq!(cfg.model.n_patch(), 1024);
        assert_eq!(cfg.model.global_layers, 2);
        let entries = parse_text("[model]\nablation_row = 9\n", "a").unwrap();
        assert!(RunConfig::from_entries(&entries).is_err());
    }
}
