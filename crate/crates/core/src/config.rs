//! Flat `key = value` run configuration covering the model, the optimizer,
//! BCS sampling and the pipeline paths.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fgnn::ModelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub const KEYS: &[&str] = &[
    "dim",
    "layers",
    "heads",
    "readout_steps",
    "leaky_slope",
    "readout_mode",
    "head_combine",
    "edge_weight",
    "lr",
    "decay_factor",
    "decay_every",
    "schedule",
    "batch_size",
    "l2",
    "epochs",
    "seed",
    "init_std",
    "n_hops",
    "sample_cap",
    "data",
    "graph",
    "out",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl RunConfig {
    /// Sets one key. Unknown keys and unparsable values are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "dim" => m.dim = parse(key, value)?,
            "layers" => m.layers = parse(key, value)?,
            "heads" => m.heads = parse(key, value)?,
            "readout_steps" => m.readout_steps = parse(key, value)?,
            "leaky_slope" => m.leaky_slope = parse(key, value)?,
            "readout_mode" => m.readout_mode = value.parse()?,
            "head_combine" => m.head_combine = value.parse()?,
            "edge_weight" => m.edge_weight = value.parse()?,
            "lr" => t.lr = parse(key, value)?,
            "decay_factor" => t.decay_factor = parse(key, value)?,
            "decay_every" => t.decay_every = parse(key, value)?,
            "schedule" => t.schedule = value.parse()?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "l2" => t.l2 = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "init_std" => t.init_std = parse(key, value)?,
            "n_hops" => t.n_hops = parse(key, value)?,
            "sample_cap" => t.sample_cap = parse(key, value)?,
            "data" => self.data = Some(PathBuf::from(value)),
            "graph" => self.graph = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines over the current values. `#` starts a
    /// comment; blank lines are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// Canonical text form; parsing it back yields the same configuration.
    pub fn to_text(&self) -> String {
        let (m, t) = (&self.model, &self.train);
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        kv("dim", m.dim.to_string());
        kv("layers", m.layers.to_string());
        kv("heads", m.heads.to_string());
        kv("readout_steps", m.readout_steps.to_string());
        kv("leaky_slope", m.leaky_slope.to_string());
        kv("readout_mode", m.readout_mode.to_string());
        kv("head_combine", m.head_combine.to_string());
        kv("edge_weight", m.edge_weight.to_string());
        kv("lr", t.lr.to_string());
        kv("decay_factor", t.decay_factor.to_string());
        kv("decay_every", t.decay_every.to_string());
        kv("schedule", t.schedule.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("l2", t.l2.to_string());
        kv("epochs", t.epochs.to_string());
        kv("seed", t.seed.to_string());
        kv("init_std", t.init_std.to_string());
        kv("n_hops", t.n_hops.to_string());
        kv("sample_cap", t.sample_cap.to_string());
        for (k, p) in [
            ("data", &self.data),
            ("graph", &self.graph),
            ("out", &self.out),
        ] {
            if let Some(p) = p {
                kv(k, p.display().to_string());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fgnn::ReadoutMode;
    use crate::train::Schedule;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(
            (
                c.model.dim,
                c.model.layers,
                c.model.heads,
                c.model.readout_steps
            ),
            (100, 3, 8, 3)
        );
        assert_eq!(c.model.leaky_slope, 0.2);
        assert_eq!(
            (c.train.lr, c.train.batch_size, c.train.l2),
            (1e-3, 100, 1e-5)
        );
        assert_eq!(
            (c.train.n_hops, c.train.sample_cap, c.train.epochs),
            (1, 5, 10)
        );
    }

    #[test]
    fn parses_and_round_trips() {
        let text = "# model\ndim = 16\nheads=4\nreadout_mode = plain  # trailing\n\nschedule = linear\ngraph = /tmp/g.json\n";
        let c = RunConfig::from_text(text).unwrap();
        assert_eq!(c.model.dim, 16);
        assert_eq!(c.model.readout_mode, ReadoutMode::Plain);
        assert_eq!(c.train.schedule, Schedule::Linear);
        assert_eq!(c.graph.as_deref(), Some(Path::new("/tmp/g.json")));
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
        for key in KEYS {
            assert!(c.to_text().contains(key) || ["data", "out"].contains(key));
        }
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(
            RunConfig::from_text("depth = 3"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_text("dim = ten"),
            Err(Error::Config(_))
        ));
        assert!(matches!(RunConfig::from_text("dim"), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::from_text("readout_mode = max"),
            Err(Error::Config(_))
        ));
        let c = RunConfig::from_text("batch_size = 0").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn later_values_override() {
        let mut c = RunConfig::from_text("seed = 1\nepochs = 4").unwrap();
        c.set("seed", "9").unwrap();
        assert_eq!((c.train.seed, c.train.epochs), (9, 4));
    }
}
