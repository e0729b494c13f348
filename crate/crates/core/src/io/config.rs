//! Flat key-value run configuration.
//!
//! Files are TOML restricted to scalar values; nested tables flatten to
//! dotted keys, so `[dropout] text = 0.3` and `dropout.text = 0.3` are the
//! same setting. Command-line overrides use the same keys. Unknown keys and
//! ill-typed values are rejected with the key named.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::audio::{DspConfig, LldConfig};
use crate::error::{Error, Result};
use crate::model::config::{MFSC_BANDS, MFSC_FRAMES};
use crate::model::{Branch, ModelConfig};
use crate::train::{Regime, TrainingPlan, DEFAULT_FOLDS};

/// Environment variable that overrides `output_dir` from a config file.
pub const OUTPUT_DIR_ENV: &str = "EMOFUSE_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dsp: DspConfig,
    pub lld: LldConfig,
    pub model: ModelConfig,
    pub plan: TrainingPlan,
    pub folds: usize,
    pub manifest: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// CSV of externally extracted LLD vectors keyed by sample id.
    pub external_lld: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Cache extracted features under `output_dir/cache`.
    pub cache: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dsp: DspConfig::default(),
            lld: LldConfig::default(),
            model: ModelConfig::default(),
            plan: TrainingPlan::default(),
            folds: DEFAULT_FOLDS,
            manifest: None,
            embeddings: None,
            external_lld: None,
            output_dir: PathBuf::from("out"),
            cache: true,
        }
    }
}

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "seed",
    "output_dir",
    "manifest",
    "embeddings",
    "external_lld",
    "cache",
    "folds",
    "sample_rate",
    "frame_ms",
    "hop_ms",
    "n_fft",
    "n_mels",
    "log_floor",
    "delta_window",
    "context",
    "shift",
    "f0_min",
    "f0_max",
    "voicing_threshold",
    "silence_rms",
    "branches",
    "scale",
    "lld_dim",
    "word_dim",
    "pos_dim",
    "fine_tune_words",
    "bn_eps",
    "bn_momentum",
    "head_init_std",
    "dropout",
    "dropout.text",
    "dropout.mfsc_conv",
    "dropout.mfsc_dense",
    "dropout.lld",
    "dropout.fusion",
    "regime",
    "epochs",
    "batch_size",
    "learning_rate",
    "beta1",
    "beta2",
    "adam_eps",
    "patience",
    "target_train_accuracy",
];

fn parse<T: FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key, format!("expected {what}, got `{value}`")))
}

fn parse_opt<T: FromStr>(key: &str, value: &str, what: &str) -> Result<Option<T>> {
    match value.trim() {
        "" | "none" => Ok(None),
        v => parse(key, v, what).map(Some),
    }
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        const INT: &str = "a non-negative integer";
        const NUM: &str = "a number";
        const BOOL: &str = "true or false";
        let d = &mut self.dsp;
        let m = &mut self.model;
        let p = &mut self.plan;
        match key {
            "seed" => p.seed = parse(key, value, INT)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "embeddings" => self.embeddings = Some(PathBuf::from(value)),
            "external_lld" => self.external_lld = Some(PathBuf::from(value)),
            "cache" => self.cache = parse(key, value, BOOL)?,
            "folds" => self.folds = parse(key, value, INT)?,
            "sample_rate" => d.sample_rate = parse(key, value, INT)?,
            "frame_ms" => d.frame_ms = parse(key, value, NUM)?,
            "hop_ms" => d.hop_ms = parse(key, value, NUM)?,
            "n_fft" => d.n_fft = parse(key, value, INT)?,
            "n_mels" => d.n_mels = parse(key, value, INT)?,
            "log_floor" => d.log_floor = parse(key, value, NUM)?,
            "delta_window" => d.delta_window = parse(key, value, INT)?,
            "context" => d.context = parse(key, value, INT)?,
            "shift" => d.shift = parse(key, value, INT)?,
            "f0_min" => self.lld.f0_min = parse(key, value, NUM)?,
            "f0_max" => self.lld.f0_max = parse(key, value, NUM)?,
            "voicing_threshold" => self.lld.voicing_threshold = parse(key, value, NUM)?,
            "silence_rms" => self.lld.silence_rms = parse(key, value, NUM)?,
            "branches" => m.branches = value.parse().map_err(|e: Error| Error::config(key, e.to_string()))?,
            "scale" => m.scale = parse_scale(key, value)?,
            "lld_dim" => m.lld_dim = parse(key, value, INT)?,
            "word_dim" => m.word_dim = parse(key, value, INT)?,
            "pos_dim" => m.pos_dim = parse(key, value, INT)?,
            "fine_tune_words" => m.fine_tune_words = parse(key, value, BOOL)?,
            "bn_eps" => m.bn_eps = parse(key, value, NUM)?,
            "bn_momentum" => m.bn_momentum = parse(key, value, NUM)?,
            "head_init_std" => m.head_init_std = parse(key, value, NUM)?,
            "dropout" => m.dropout = crate::model::DropoutConfig::uniform(parse(key, value, NUM)?),
            "dropout.text" => m.dropout.text = parse(key, value, NUM)?,
            "dropout.mfsc_conv" => m.dropout.mfsc_conv = parse(key, value, NUM)?,
            "dropout.mfsc_dense" => m.dropout.mfsc_dense = parse(key, value, NUM)?,
            "dropout.lld" => m.dropout.lld = parse(key, value, NUM)?,
            "dropout.fusion" => m.dropout.fusion = parse(key, value, NUM)?,
            "regime" => p.regime = value.parse::<Regime>()?,
            "epochs" => p.epochs = parse(key, value, INT)?,
            "batch_size" => p.batch_size = parse(key, value, INT)?,
            "learning_rate" => p.adam.learning_rate = parse(key, value, NUM)?,
            "beta1" => p.adam.beta1 = parse(key, value, NUM)?,
            "beta2" => p.adam.beta2 = parse(key, value, NUM)?,
            "adam_eps" => p.adam.eps = parse(key, value, NUM)?,
            "patience" => p.patience = parse_opt(key, value, INT)?,
            "target_train_accuracy" => p.target_train_accuracy = parse_opt(key, value, NUM)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies every key of a TOML document.
    pub fn apply_toml(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))?;
        let mut flat = Vec::new();
        flatten("", &table, &mut flat)?;
        for (k, v) in flat {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::default();
        c.apply_toml(&text)?;
        Ok(c)
    }

    /// Defaults, then the file, then the output-directory environment
    /// variable, then `overrides` in order; validated as a whole.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut c = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                c.output_dir = PathBuf::from(dir);
            }
        }
        for (k, v) in overrides {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.dsp.validate()?;
        self.model.validate()?;
        self.plan.validate()?;
        let l = &self.lld;
        if !(l.f0_min > 0.0) {
            return Err(Error::config("f0_min", "must be positive"));
        }
        if !(l.f0_max > l.f0_min) {
            return Err(Error::config("f0_max", "must exceed f0_min"));
        }
        if !(0.0..=1.0).contains(&l.voicing_threshold) {
            return Err(Error::config("voicing_threshold", "must lie in [0, 1]"));
        }
        if !(l.silence_rms >= 0.0) {
            return Err(Error::config("silence_rms", "must be non-negative"));
        }
        if self.folds < 2 {
            return Err(Error::config("folds", "need at least 2 folds"));
        }
        if self.model.branches.contains(Branch::Mfsc) {
            if self.dsp.n_mels != MFSC_BANDS {
                return Err(Error::config(
                    "n_mels",
                    format!("the MFSC branch needs {MFSC_BANDS} bands, got {}", self.dsp.n_mels),
                ));
            }
            if self.dsp.context != MFSC_FRAMES {
                return Err(Error::config(
                    "context",
                    format!(
                        "the MFSC branch needs {MFSC_FRAMES}-frame segments, got {}",
                        self.dsp.context
                    ),
                ));
            }
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::config("output_dir", "must not be empty"));
        }
        Ok(())
    }

    /// The effective configuration as a flat TOML document.
    pub fn to_toml(&self) -> String {
        let d = &self.dsp;
        let m = &self.model;
        let p = &self.plan;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        let q = |s: &str| toml::Value::String(s.to_string()).to_string();
        let path = |o: &Option<PathBuf>| o.as_ref().map(|p| q(&p.display().to_string()));
        kv("seed", p.seed.to_string());
        kv("output_dir", q(&self.output_dir.display().to_string()));
        for (k, v) in [
            ("manifest", path(&self.manifest)),
            ("embeddings", path(&self.embeddings)),
            ("external_lld", path(&self.external_lld)),
        ] {
            if let Some(v) = v {
                kv(k, v);
            }
        }
        kv("cache", self.cache.to_string());
        kv("folds", self.folds.to_string());
        kv("sample_rate", d.sample_rate.to_string());
        kv("frame_ms", fmt_f(d.frame_ms));
        kv("hop_ms", fmt_f(d.hop_ms));
        kv("n_fft", d.n_fft.to_string());
        kv("n_mels", d.n_mels.to_string());
        kv("log_floor", fmt_f(d.log_floor));
        kv("delta_window", d.delta_window.to_string());
        kv("context", d.context.to_string());
        kv("shift", d.shift.to_string());
        kv("f0_min", fmt_f(self.lld.f0_min));
        kv("f0_max", fmt_f(self.lld.f0_max));
        kv("voicing_threshold", fmt_f(self.lld.voicing_threshold));
        kv("silence_rms", fmt_f(self.lld.silence_rms));
        kv("branches", q(&m.branches.to_string()));
        kv("scale", fmt_f(m.scale));
        kv("lld_dim", m.lld_dim.to_string());
        kv("word_dim", m.word_dim.to_string());
        kv("pos_dim", m.pos_dim.to_string());
        kv("fine_tune_words", m.fine_tune_words.to_string());
        kv("bn_eps", fmt_f(m.bn_eps));
        kv("bn_momentum", fmt_f(m.bn_momentum));
        kv("head_init_std", fmt_f(m.head_init_std));
        kv("dropout.text", fmt_f(m.dropout.text));
        kv("dropout.mfsc_conv", fmt_f(m.dropout.mfsc_conv));
        kv("dropout.mfsc_dense", fmt_f(m.dropout.mfsc_dense));
        kv("dropout.lld", fmt_f(m.dropout.lld));
        kv("dropout.fusion", fmt_f(m.dropout.fusion));
        kv("regime", q(&p.regime.to_string()));
        kv("epochs", p.epochs.to_string());
        kv("batch_size", p.batch_size.to_string());
        kv("learning_rate", fmt_f(p.adam.learning_rate));
        kv("beta1", fmt_f(p.adam.beta1));
        kv("beta2", fmt_f(p.adam.beta2));
        kv("adam_eps", fmt_f(p.adam.eps));
        if let Some(v) = p.patience {
            kv("patience", v.to_string());
        }
        if let Some(v) = p.target_train_accuracy {
            kv("target_train_accuracy", fmt_f(v));
        }
        out
    }
}

/// Accepts decimals and simple fractions such as `1/8`.
fn parse_scale(key: &str, value: &str) -> Result<f64> {
    match value.split_once('/') {
        Some((n, d)) => {
            let n: f64 = parse(key, n, "a number or fraction")?;
            let d: f64 = parse(key, d, "a number or fraction")?;
            Ok(n / d)
        }
        None => parse(key, value, "a number or fraction"),
    }
}

/// TOML float literal that round-trips exactly.
fn fmt_f(v: f64) -> String {
    toml::Value::Float(v).to_string()
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, String)>) -> Result<()> {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        let s = match v {
            toml::Value::String(s) => s.clone(),
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            toml::Value::Table(t) => {
                flatten(&key, t, out)?;
                continue;
            }
            _ => return Err(Error::config(&key, "expected a scalar value")),
        };
        out.push((key, s));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_and_dotted_tables() {
        let mut c = RunConfig::default();
        c.apply_toml("seed = 7\nscale = \"1/8\"\nbranches = \"word+mfsc\"\n[dropout]\nlld = 0.25\n")
            .unwrap();
        assert_eq!(c.plan.seed, 7);
        assert_eq!(c.model.scale, 0.125);
        assert_eq!(c.model.branches.to_string(), "word+mfsc");
        assert_eq!(c.model.dropout.lld, 0.25);
        assert_eq!(c.model.dropout.text, 0.5);
    }

    #[test]
    fn errors_name_the_key() {
        let mut c = RunConfig::default();
        for (text, key) in [
            ("bogus = 1", "bogus"),
            ("epochs = \"many\"", "epochs"),
            ("[dropout]\nnope = 0.1", "dropout.nope"),
            ("regime = \"joint\"", "regime"),
            ("branches = \"word+face\"", "branches"),
            ("seed = [1, 2]", "seed"),
        ] {
            match c.apply_toml(text) {
                Err(Error::Config { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn whole_config_validation() {
        let mut c = RunConfig::default();
        c.set("batch_size", "1").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "batch_size"));
        let mut c = RunConfig::default();
        c.set("n_mels", "40").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "n_mels"));
        c.set("branches", "word+lld").unwrap();
        c.validate().unwrap();
        c.set("dropout.fusion", "1.5").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "dropout.fusion"));
    }

    #[test]
    fn overrides_win_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "epochs = 3\nseed = 1\n").unwrap();
        let c = RunConfig::resolve(
            Some(&path),
            &[("seed".into(), "9".into()), ("patience".into(), "4".into())],
        )
        .unwrap();
        assert_eq!((c.plan.epochs, c.plan.seed, c.plan.patience), (3, 9, Some(4)));
        let mut back = RunConfig::default();
        back.apply_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn every_listed_key_is_settable() {
        for k in KEYS {
            let mut c = RunConfig::default();
            let v = match *k {
                "branches" => "all",
                "regime" => "separate",
                "cache" | "fine_tune_words" => "false",
                "output_dir" | "manifest" | "embeddings" | "external_lld" => "x",
                _ => "1",
            };
            c.set(k, v).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
    }
}
