//! Flat `key = value` config files and resolution of the effective settings
//! (flags override config keys, which override built-in defaults).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cdsm::ingest::{Scheme, SchemeConfig};
use cdsm::pipeline::CdsmParams;
use cdsm::stats::{Correction, CorrectionScope};
use cdsm::synth::{PlantSpec, SynthConfig};

use crate::{Failure, Options, SynthArgs};

const KEYS: &[&str] = &[
    "events",
    "labels",
    "out",
    "scheme",
    "min-support",
    "max-gap",
    "max-length",
    "alpha",
    "rounds",
    "seed",
    "trial",
    "top-fraction",
    "threads",
    "correction",
    "correction-scope",
    "yates",
    "n-high",
    "n-low",
    "assignments",
    "length-mean",
    "length-spread",
    "plant",
];

pub const DEFAULT_OUT: &str = "cdsm-out";
pub const DEFAULT_TOP_FRACTION: f64 = 0.15;

#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, Vec<String>>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        Self::parse(&text).map_err(|m| Failure::Usage(format!("{}: {m}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut values: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
            let key = key.trim().replace('_', "-");
            if !KEYS.contains(&key.as_str()) && !key.starts_with("column.") {
                return Err(format!("line {}: unknown key `{key}`", i + 1));
            }
            values
                .entry(key)
                .or_default()
                .push(value.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    fn last(&self, key: &str) -> Option<&str> {
        self.values
            .get(key)
            .and_then(|v| v.last())
            .map(String::as_str)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, Failure>
    where
        T::Err: std::fmt::Display,
    {
        self.last(key)
            .map(|v| {
                v.parse().map_err(|e| {
                    Failure::Usage(format!("config key `{key}`: invalid value `{v}`: {e}"))
                })
            })
            .transpose()
    }

    fn all(&self, key: &str) -> &[String] {
        self.values.get(key).map_or(&[], Vec::as_slice)
    }

    fn columns(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values
            .iter()
            .filter_map(|(k, v)| Some((k.strip_prefix("column.")?, v.last()?.as_str())))
    }
}

/// Effective settings for one invocation.
#[derive(Debug, Clone)]
pub struct Settings {
    pub events: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out: PathBuf,
    pub scheme: Scheme,
    pub mapping: SchemeConfig,
    pub params: CdsmParams,
    pub seed: u64,
    pub trial: Option<usize>,
    pub top_fraction: f64,
    pub threads: Option<usize>,
}

fn pick<T>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}

impl Settings {
    pub fn resolve(opts: &Options, config: &ConfigFile) -> Result<Self, Failure> {
        let mut mapping = SchemeConfig::default();
        for (field, value) in config.columns() {
            if !mapping.set(field, value) {
                return Err(Failure::Usage(format!(
                    "unknown config key `column.{field}`"
                )));
            }
        }

        let mut params = CdsmParams::default();
        let m = &mut params.mining;
        m.min_percentile_support = pick(
            opts.min_support,
            config.get("min-support")?,
            m.min_percentile_support,
        );
        m.max_gap = pick(opts.max_gap, config.get("max-gap")?, m.max_gap);
        m.max_length = pick(opts.max_length, config.get("max-length")?, m.max_length);
        let c = &mut params.classify;
        c.alpha = pick(opts.alpha, config.get("alpha")?, c.alpha);
        c.correction = pick(
            opts.correction,
            config.get::<Correction>("correction")?,
            c.correction,
        );
        c.correction_scope = pick(
            opts.correction_scope,
            config.get::<CorrectionScope>("correction-scope")?,
            c.correction_scope,
        );
        c.yates = opts.yates || config.get("yates")?.unwrap_or(false);
        params.rounds = pick(opts.rounds, config.get("rounds")?, params.rounds);

        let settings = Settings {
            events: opts.events.clone().or(config.get("events")?),
            labels: opts.labels.clone().or(config.get("labels")?),
            out: pick(
                opts.out.clone(),
                config.get("out")?,
                PathBuf::from(DEFAULT_OUT),
            ),
            scheme: pick(opts.scheme, config.get("scheme")?, Scheme::General),
            mapping,
            params,
            seed: pick(opts.seed, config.get("seed")?, 0),
            trial: opts.trial.or(config.get("trial")?),
            top_fraction: pick(
                opts.top_fraction,
                config.get("top-fraction")?,
                DEFAULT_TOP_FRACTION,
            ),
            threads: opts.threads.or(config.get("threads")?),
        };
        if settings.threads == Some(0) {
            return Err(Failure::Usage(
                "invalid parameter `threads`: must be at least 1".into(),
            ));
        }
        Ok(settings)
    }

    pub fn events(&self) -> Result<&Path, Failure> {
        self.events
            .as_deref()
            .ok_or_else(|| Failure::Usage("missing required parameter `events`".into()))
    }

    pub fn labels(&self) -> Result<&Path, Failure> {
        self.labels
            .as_deref()
            .ok_or_else(|| Failure::Usage("missing required parameter `labels`".into()))
    }
}

/// Parses `CLASS@p1,p2[,p3]:PATTERN`. FH/FL take the per-group containment
/// probabilities; DH/DL take the shared containment followed by the two
/// per-group extra-copy rates.
pub fn parse_plant(spec: &str) -> Result<PlantSpec, Failure> {
    let bad = |m: &str| Failure::Usage(format!("invalid parameter `plant`: {m} in `{spec}`"));
    let (head, pattern) = spec
        .split_once(':')
        .ok_or_else(|| bad("expected CLASS@numbers:PATTERN"))?;
    let (class, numbers) = head
        .split_once('@')
        .ok_or_else(|| bad("expected CLASS@numbers"))?;
    let class = class.trim().parse().map_err(|_| bad("unknown class"))?;
    let numbers = numbers
        .split(',')
        .map(|n| n.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| bad("non-numeric parameter"))?;
    let pattern = pattern
        .trim()
        .parse()
        .map_err(|e: cdsm::Error| bad(&e.to_string()))?;
    use cdsm::stats::PatternClass::*;
    match (class, numbers.as_slice()) {
        (FH | FL, &[high, low]) => Ok(PlantSpec::frequent(pattern, class, high, low)),
        (DH | DL, &[containment, high, low]) => {
            Ok(PlantSpec::dependent(pattern, class, containment, high, low))
        }
        (FH | FL, _) => Err(bad("FH/FL plants take two probabilities")),
        (DH | DL, _) => Err(bad("DH/DL plants take a containment and two rates")),
        _ => Err(bad("plants must be FH, FL, DH or DL")),
    }
}

pub fn synth_config(
    args: &SynthArgs,
    settings: &Settings,
    config: &ConfigFile,
) -> Result<SynthConfig, Failure> {
    let d = SynthConfig::default();
    let assignments = match args
        .assignments
        .clone()
        .or(config.get::<String>("assignments")?)
    {
        Some(list) => list
            .split(',')
            .map(|a| a.trim().to_string())
            .filter(|a| !a.is_empty())
            .collect(),
        None => d.assignments.clone(),
    };
    let plant_specs: Vec<String> = if args.plant.is_empty() {
        config.all("plant").to_vec()
    } else {
        args.plant.clone()
    };
    Ok(SynthConfig {
        n_high: pick(args.n_high, config.get("n-high")?, d.n_high),
        n_low: pick(args.n_low, config.get("n-low")?, d.n_low),
        assignments,
        length_mean: pick(args.length_mean, config.get("length-mean")?, d.length_mean),
        length_spread: pick(
            args.length_spread,
            config.get("length-spread")?,
            d.length_spread,
        ),
        plants: plant_specs
            .iter()
            .map(|p| parse_plant(p))
            .collect::<Result<_, _>>()?,
        seed: settings.seed,
        ..d
    })
}
