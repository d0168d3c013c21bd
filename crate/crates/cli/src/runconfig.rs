//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use zsembed_core::dataio::{
    apply_split, gen_synthetic, Dataset, Preprocess, SplitMode, SplitSpec, SynthSpec,
};
use zsembed_core::eval::SearchSpace;
use zsembed_core::model::{Arch, HEAD_DIM};
use zsembed_core::numcore::Rng;
use zsembed_core::trainer::TrainConfig;
use zsembed_core::{Error, Result};

/// Where the data comes from; exactly one source per run.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic {
        preset: String,
    },
    Files {
        visual: PathBuf,
        attributes: PathBuf,
        labels: PathBuf,
        roles: PathBuf,
    },
}

/// Standard file names inside a data directory.
pub const DATA_FILES: [&str; 4] = ["visual.rvf", "attributes.rvf", "labels.csv", "roles.csv"];
pub const NAMES_FILE: &str = "classes.txt";

impl DataSource {
    /// A preset name, or a directory holding the [`DATA_FILES`].
    pub fn from_arg(arg: &str) -> Self {
        if SynthSpec::preset(arg, 0).is_some() {
            return DataSource::Synthetic {
                preset: arg.to_string(),
            };
        }
        let dir = Path::new(arg);
        DataSource::Files {
            visual: dir.join(DATA_FILES[0]),
            attributes: dir.join(DATA_FILES[1]),
            labels: dir.join(DATA_FILES[2]),
            roles: dir.join(DATA_FILES[3]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: Option<DataSource>,
    /// Seed of the synthetic generator; follows `seed` unless set.
    pub data_seed: Option<u64>,
    pub split: SplitSpec,
    pub search_space: SearchSpace,
    pub preprocess: Preprocess,
    pub out: PathBuf,
    pub trials: usize,
    pub write_pr_csv: bool,
    pub write_embeddings: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            data: None,
            data_seed: None,
            split: SplitSpec::default(),
            search_space: SearchSpace::TestOnly,
            preprocess: Preprocess::default(),
            out: PathBuf::from("out"),
            trials: 1,
            write_pr_csv: true,
            write_embeddings: false,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid value {v:?} for `{key}`; expected true or false"
        ))),
    }
}

impl RunConfig {
    /// Parses config text over the defaults. Later lines override earlier
    /// ones.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut files: [Option<PathBuf>; 4] = Default::default();
        let mut synthetic = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got {line:?}",
                    lineno + 1
                ))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let located = |e: Error| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", lineno + 1)),
                other => other,
            };
            match key {
                "visual" => files[0] = Some(PathBuf::from(value)),
                "attributes" => files[1] = Some(PathBuf::from(value)),
                "labels" => files[2] = Some(PathBuf::from(value)),
                "roles" => files[3] = Some(PathBuf::from(value)),
                "synthetic" => synthetic = Some(value.to_string()),
                _ => cfg.set(key, value).map_err(located)?,
            }
        }
        let any_file = files.iter().any(Option::is_some);
        cfg.data = match (synthetic, any_file) {
            (Some(_), true) => {
                return Err(Error::Config(
                    "set either `synthetic` or the data file paths, not both".into(),
                ))
            }
            (Some(preset), false) => {
                if SynthSpec::preset(&preset, 0).is_none() {
                    return Err(Error::Config(format!(
                        "unknown synthetic preset {preset:?}"
                    )));
                }
                Some(DataSource::Synthetic { preset })
            }
            (None, true) => {
                let [v, a, l, r] = files;
                let need = |p: Option<PathBuf>, k: &str| {
                    p.ok_or_else(|| Error::Config(format!("data file `{k}` is missing")))
                };
                Some(DataSource::Files {
                    visual: need(v, "visual")?,
                    attributes: need(a, "attributes")?,
                    labels: need(l, "labels")?,
                    roles: need(r, "roles")?,
                })
            }
            (None, false) => None,
        };
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one non-data key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("invalid value {value:?} for `{key}`"));
        match key {
            "split" => self.split.mode = SplitMode::parse(value).ok_or_else(bad)?,
            "fewshot_k" => self.split.fewshot_k = value.parse().map_err(|_| bad())?,
            "fraction_p" => self.split.fraction_p = value.parse().map_err(|_| bad())?,
            "search_space" => self.search_space = SearchSpace::parse(value).ok_or_else(bad)?,
            "log1p" => self.preprocess.visual_log1p = parse_bool(key, value)?,
            "attribute_l2" => self.preprocess.attribute_l2 = parse_bool(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "trials" => self.trials = value.parse().map_err(|_| bad())?,
            "data_seed" => self.data_seed = Some(value.parse().map_err(|_| bad())?),
            "write_pr_csv" => self.write_pr_csv = parse_bool(key, value)?,
            "write_embeddings" => self.write_embeddings = parse_bool(key, value)?,
            _ => self.train.set(key, value)?,
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.split.validate()?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        Ok(())
    }

    pub fn data_source(&self) -> Result<&DataSource> {
        self.data.as_ref().ok_or_else(|| {
            Error::Config(
                "no data source: set `synthetic` or the data files, or pass --data".into(),
            )
        })
    }

    pub fn effective_data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.train.seed)
    }

    /// Loads or generates the dataset with its base roles.
    pub fn load_dataset(&self) -> Result<Dataset> {
        match self.data_source()? {
            DataSource::Synthetic { preset } => {
                let spec = SynthSpec::preset(preset, self.effective_data_seed())
                    .ok_or_else(|| Error::Config(format!("unknown synthetic preset {preset:?}")))?;
                gen_synthetic(&spec)
            }
            DataSource::Files {
                visual,
                attributes,
                labels,
                roles,
            } => {
                let ds = Dataset::load(visual, attributes, labels, roles, self.preprocess)?;
                let names_path = visual.with_file_name(NAMES_FILE);
                match fs::read_to_string(&names_path) {
                    Ok(text) => ds.with_names(text.lines().map(str::to_string).collect()),
                    Err(_) => Ok(ds),
                }
            }
        }
    }

    /// The dataset with the configured working split applied.
    pub fn split_dataset(&self, ds: &Dataset) -> Result<Dataset> {
        apply_split(ds, &self.split, &Rng::new(self.train.seed))
    }

    /// Every effective value, defaults included, as config text that
    /// [`Self::parse`] accepts. Architecture values derived from the data
    /// are appended as comments.
    pub fn echo(&self, arch: Option<&Arch>) -> String {
        let mut s = String::new();
        match &self.data {
            Some(DataSource::Synthetic { preset }) => {
                writeln!(s, "synthetic = {preset}").unwrap();
            }
            Some(DataSource::Files {
                visual,
                attributes,
                labels,
                roles,
            }) => {
                for (k, p) in [
                    ("visual", visual),
                    ("attributes", attributes),
                    ("labels", labels),
                    ("roles", roles),
                ] {
                    writeln!(s, "{k} = {}", p.display()).unwrap();
                }
            }
            None => {}
        }
        if matches!(self.data, Some(DataSource::Synthetic { .. })) {
            writeln!(s, "data_seed = {}", self.effective_data_seed()).unwrap();
        }
        let pairs = [
            ("split", self.split.mode.as_str().to_string()),
            ("fewshot_k", self.split.fewshot_k.to_string()),
            ("fraction_p", self.split.fraction_p.to_string()),
            ("search_space", self.search_space.as_str().to_string()),
            ("log1p", self.preprocess.visual_log1p.to_string()),
            ("attribute_l2", self.preprocess.attribute_l2.to_string()),
            ("out", self.out.display().to_string()),
            ("trials", self.trials.to_string()),
            ("write_pr_csv", self.write_pr_csv.to_string()),
            ("write_embeddings", self.write_embeddings.to_string()),
        ];
        for (k, v) in pairs {
            writeln!(s, "{k} = {v}").unwrap();
        }
        for (k, v) in self.train.echo() {
            writeln!(s, "{k} = {v}").unwrap();
        }
        if let Some(a) = arch {
            writeln!(s, "# d_visual = {}", a.d_visual).unwrap();
            writeln!(s, "# d_hidden = {}", a.d_hidden).unwrap();
            writeln!(s, "# d_code = {}", a.d_code).unwrap();
            writeln!(s, "# d_attribute = {}", a.d_attribute).unwrap();
            writeln!(s, "# head_dim = {}", a.d_out).unwrap();
        } else {
            writeln!(s, "# head_dim = {HEAD_DIM}").unwrap();
        }
        s
    }
}
