//! Experiment configuration: desk-scale defaults, an optional TOML file
//! with `[run]`, `[dataset]`, and `[arch]` sections layered on top, and
//! command-line overrides layered on top of that.
//!
//! Every validation error names the offending field so a bad config is
//! diagnosable from the message alone.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;
use splitfed::aggregation::{StdConvention, Strategy};
use splitfed::dataset::{corrupted_ids, CorruptionSpec, BL, ICM, NUM_CLASSES, TE, ZP};
use splitfed::orchestrator::{RunSettings, Transport};
use splitfed::unet::ArchConfig;

/// A fully resolved experiment configuration.
#[derive(Clone, Debug)]
pub struct Config {
    pub strategy: Strategy,
    pub global_epochs: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub server_momentum: f64,
    pub std_convention: StdConvention,
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub transport: Transport,
    pub corrupted: usize,
    pub corrupt_ids: Option<Vec<usize>>,
    pub clients: Vec<usize>,
    pub total_samples: usize,
    pub image_size: usize,
    pub radius: u32,
    pub corrupt_classes: Vec<u8>,
    pub corrupt_precedence: Vec<u8>,
    pub encoder_filters: Vec<usize>,
    pub bottleneck_filters: usize,
    pub kernel: usize,
}

impl Default for Config {
    /// The desk-scale experiment: five non-uniform clients drawn from 160
    /// synthetic 32x32 samples, quality-aware averaging, ten global by
    /// twelve local epochs in mini-batches of two.
    fn default() -> Self {
        Config {
            strategy: Strategy::QaSplitFed,
            global_epochs: 10,
            local_epochs: 12,
            learning_rate: 0.05,
            momentum: 0.9,
            server_momentum: 0.9,
            std_convention: StdConvention::Population,
            batch_size: Some(2),
            seed: 42,
            transport: Transport::InProcess,
            corrupted: 0,
            corrupt_ids: None,
            clients: vec![42, 24, 17, 36, 24],
            total_samples: 160,
            image_size: 32,
            radius: 2,
            corrupt_classes: vec![TE, ICM],
            corrupt_precedence: vec![BL, ZP, TE, ICM],
            encoder_filters: vec![8, 16],
            bottleneck_filters: 16,
            kernel: 3,
        }
    }
}

/// `[run]` section of the config file; every field optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    strategy: Option<String>,
    global_epochs: Option<usize>,
    local_epochs: Option<usize>,
    learning_rate: Option<f64>,
    momentum: Option<f64>,
    server_momentum: Option<f64>,
    std_convention: Option<String>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    transport: Option<String>,
    corrupted: Option<usize>,
    corrupt_ids: Option<Vec<usize>>,
}

/// `[dataset]` section of the config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetSection {
    clients: Option<Vec<usize>>,
    total_samples: Option<usize>,
    image_size: Option<usize>,
    radius: Option<u32>,
    corrupt_classes: Option<Vec<u8>>,
    corrupt_precedence: Option<Vec<u8>>,
}

/// `[arch]` section of the config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchSection {
    encoder_filters: Option<Vec<usize>>,
    bottleneck_filters: Option<usize>,
    kernel: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    run: Option<RunSection>,
    dataset: Option<DatasetSection>,
    arch: Option<ArchSection>,
}

/// Command-line overrides; comma-separated lists arrive as raw strings.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub strategy: Option<String>,
    pub clients: Option<String>,
    pub global_epochs: Option<usize>,
    pub local_epochs: Option<usize>,
    pub corrupted: Option<usize>,
    pub corrupt_ids: Option<String>,
    pub radius: Option<u32>,
    pub seed: Option<u64>,
    pub transport: Option<String>,
}

fn parse_transport(s: &str) -> Result<Transport, String> {
    match s {
        "inproc" => Ok(Transport::InProcess),
        "tcp" => Ok(Transport::TcpLoopback),
        other => Err(format!("transport: expected inproc | tcp, got {other:?}")),
    }
}

fn parse_std_convention(s: &str) -> Result<StdConvention, String> {
    match s {
        "population" => Ok(StdConvention::Population),
        "sample" => Ok(StdConvention::Sample),
        other => Err(format!(
            "std_convention: expected population | sample, got {other:?}"
        )),
    }
}

fn parse_list<T: FromStr>(field: &str, s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<T>()
                .map_err(|_| format!("{field}: {p:?} is not a valid entry"))
        })
        .collect()
}

impl Config {
    /// Loads the file (when given), layers it over the defaults, then
    /// layers the command-line overrides on top, and validates the result.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Config, String> {
        let mut config = Config::default();
        if let Some(path) = path {
            let text = fs::read_to_string(path)
                .map_err(|e| format!("config: cannot read {}: {e}", path.display()))?;
            let file: FileConfig = toml::from_str(&text)
                .map_err(|e| format!("config: {}: {e}", path.display()))?;
            config.apply_file(file)?;
        }
        config.apply_overrides(overrides)?;
        config.validate()?;
        Ok(config)
    }

    fn apply_file(&mut self, file: FileConfig) -> Result<(), String> {
        if let Some(run) = file.run {
            if let Some(v) = run.strategy {
                self.strategy = v.parse().map_err(|e| format!("run.strategy: {e}"))?;
            }
            if let Some(v) = run.global_epochs {
                self.global_epochs = v;
            }
            if let Some(v) = run.local_epochs {
                self.local_epochs = v;
            }
            if let Some(v) = run.learning_rate {
                self.learning_rate = v;
            }
            if let Some(v) = run.momentum {
                self.momentum = v;
            }
            if let Some(v) = run.server_momentum {
                self.server_momentum = v;
            }
            if let Some(v) = run.std_convention {
                self.std_convention = parse_std_convention(&v).map_err(|e| format!("run.{e}"))?;
            }
            if run.batch_size.is_some() {
                self.batch_size = run.batch_size;
            }
            if let Some(v) = run.seed {
                self.seed = v;
            }
            if let Some(v) = run.transport {
                self.transport = parse_transport(&v).map_err(|e| format!("run.{e}"))?;
            }
            if let Some(v) = run.corrupted {
                self.corrupted = v;
            }
            if run.corrupt_ids.is_some() {
                self.corrupt_ids = run.corrupt_ids;
            }
        }
        if let Some(dataset) = file.dataset {
            if let Some(v) = dataset.clients {
                self.clients = v;
            }
            if let Some(v) = dataset.total_samples {
                self.total_samples = v;
            }
            if let Some(v) = dataset.image_size {
                self.image_size = v;
            }
            if let Some(v) = dataset.radius {
                self.radius = v;
            }
            if let Some(v) = dataset.corrupt_classes {
                self.corrupt_classes = v;
            }
            if let Some(v) = dataset.corrupt_precedence {
                self.corrupt_precedence = v;
            }
        }
        if let Some(arch) = file.arch {
            if let Some(v) = arch.encoder_filters {
                self.encoder_filters = v;
            }
            if let Some(v) = arch.bottleneck_filters {
                self.bottleneck_filters = v;
            }
            if let Some(v) = arch.kernel {
                self.kernel = v;
            }
        }
        Ok(())
    }

    fn apply_overrides(&mut self, ov: &Overrides) -> Result<(), String> {
        if let Some(v) = &ov.strategy {
            self.strategy = v.parse().map_err(|e| format!("--strategy: {e}"))?;
        }
        if let Some(v) = &ov.clients {
            self.clients = parse_list("--clients", v)?;
        }
        if let Some(v) = ov.global_epochs {
            self.global_epochs = v;
        }
        if let Some(v) = ov.local_epochs {
            self.local_epochs = v;
        }
        if let Some(v) = ov.corrupted {
            self.corrupted = v;
        }
        if let Some(v) = &ov.corrupt_ids {
            self.corrupt_ids = Some(parse_list("--corrupt-ids", v)?);
        }
        if let Some(v) = ov.radius {
            self.radius = v;
        }
        if let Some(v) = ov.seed {
            self.seed = v;
        }
        if let Some(v) = &ov.transport {
            self.transport = parse_transport(v).map_err(|e| format!("--{e}"))?;
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), String> {
        let n = self.clients.len();
        if n == 0 {
            return Err("dataset.clients: at least one client is required".into());
        }
        if let Some((i, &c)) = self.clients.iter().enumerate().find(|(_, &c)| c < 7) {
            return Err(format!(
                "dataset.clients: every client needs at least 7 samples so the \
                 validation split is non-empty; client {i} has {c}"
            ));
        }
        let assigned: usize = self.clients.iter().sum();
        if self.total_samples <= assigned {
            return Err(format!(
                "dataset.total_samples: must exceed the {assigned} assigned samples \
                 so a test set remains, got {}",
                self.total_samples
            ));
        }
        if self.image_size < 16 {
            return Err(format!(
                "dataset.image_size: must be at least 16, got {}",
                self.image_size
            ));
        }
        if self.radius == 0 {
            return Err("dataset.radius: must be at least 1".into());
        }
        if self.corrupted > n {
            return Err(format!(
                "run.corrupted: cannot corrupt {} of {n} clients",
                self.corrupted
            ));
        }
        if let Some(ids) = &self.corrupt_ids {
            for &id in ids {
                if id >= n {
                    return Err(format!(
                        "run.corrupt_ids: client {id} does not exist (have {n})"
                    ));
                }
            }
            let mut sorted = ids.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != ids.len() {
                return Err("run.corrupt_ids: ids must be distinct".into());
            }
        }
        if self.global_epochs == 0 {
            return Err("run.global_epochs: must be at least 1".into());
        }
        if self.local_epochs == 0 {
            return Err("run.local_epochs: must be at least 1".into());
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(format!(
                "run.learning_rate: must be finite and nonnegative, got {}",
                self.learning_rate
            ));
        }
        for (field, value) in [
            ("run.momentum", self.momentum),
            ("run.server_momentum", self.server_momentum),
        ] {
            if !(0.0..1.0).contains(&value) {
                return Err(format!("{field}: must lie in [0, 1), got {value}"));
            }
        }
        if self.batch_size == Some(0) {
            return Err("run.batch_size: must be positive".into());
        }
        if self.encoder_filters.is_empty() || self.encoder_filters.contains(&0) {
            return Err("arch.encoder_filters: need at least one nonzero filter count".into());
        }
        if self.bottleneck_filters == 0 {
            return Err("arch.bottleneck_filters: must be positive".into());
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(format!("arch.kernel: must be odd, got {}", self.kernel));
        }
        let max_pool = self.image_size >> self.encoder_filters.len();
        if max_pool < 2 || self.image_size % (1 << self.encoder_filters.len()) != 0 {
            return Err(format!(
                "arch.encoder_filters: {} encoder levels do not divide a {}px image",
                self.encoder_filters.len(),
                self.image_size
            ));
        }
        Ok(())
    }

    /// Settings for one orchestrated run under this configuration.
    pub fn run_settings(&self) -> RunSettings {
        RunSettings {
            arch: ArchConfig {
                input_size: self.image_size,
                in_channels: 1,
                num_classes: NUM_CLASSES,
                encoder_filters: self.encoder_filters.clone(),
                bottleneck_filters: self.bottleneck_filters,
                kernel: self.kernel,
            },
            strategy: self.strategy,
            global_epochs: self.global_epochs,
            local_epochs: self.local_epochs,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            server_momentum: self.server_momentum,
            std_convention: self.std_convention,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }

    /// The corruption shape this configuration asks for.
    pub fn corruption(&self) -> Result<CorruptionSpec, String> {
        let spec = CorruptionSpec {
            radius: self.radius,
            classes: self.corrupt_classes.clone(),
            precedence: self.corrupt_precedence.clone(),
        };
        spec.validate().map_err(|e| format!("dataset corruption: {e}"))?;
        Ok(spec)
    }

    /// Which clients get corrupted when `k` are: the explicit override if
    /// present, otherwise the `k` clients with the most data (worst case),
    /// ties to the lower id.
    pub fn corrupted_clients(&self, k: usize) -> Result<Vec<usize>, String> {
        match &self.corrupt_ids {
            Some(ids) => Ok(ids.clone()),
            None => corrupted_ids(&self.clients, k).map_err(|e| format!("run.corrupted: {e}")),
        }
    }
}
