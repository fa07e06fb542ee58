//! Layered settings: flags over preset over config file over defaults.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use simulmt::backend::{RemoteConfig, WireDialect};
use simulmt::policy::DEFAULT_MAX_NEW_TOKENS;
use simulmt::{
    Backend, JoiningConvention, PolicyConfig, PromptTemplate, RemoteBackend, ScriptedBackend,
    WriteMode,
};

use crate::Failure;

/// Environment variable holding the bearer token for HTTP backends.
pub const TOKEN_ENV: &str = "SIMULMT_API_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    LowLatency,
    HighQuality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dialect {
    Native,
    Openai,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    ForcedRead,
    UntilEmpty,
}

/// Every knob shared by the commands. All optional so layers can be merged.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// TOML file with default settings
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// `script:<fixture.jsonl>` or an http(s) endpoint
    #[arg(long)]
    pub backend: Option<String>,
    /// Wire protocol for http backends
    #[arg(long, value_enum)]
    pub dialect: Option<Dialect>,
    /// Model name sent to http backends
    #[arg(long)]
    pub model: Option<String>,
    /// How target pieces join: continuation:@@, space-marker:▁, byte-level[:Ġ]
    #[arg(long)]
    pub joining: Option<String>,
    #[arg(long, value_name = "MS")]
    pub timeout_ms: Option<u64>,
    /// Concurrent requests per http backend
    #[arg(long)]
    pub max_in_flight: Option<usize>,

    /// Instruction pattern file containing `{source}`
    #[arg(long, value_name = "FILE")]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub src_lang: Option<String>,
    #[arg(long)]
    pub tgt_lang: Option<String>,
    #[arg(long)]
    pub open_marker: Option<String>,
    #[arg(long)]
    pub close_marker: Option<String>,
    /// Demonstration source sentence prepended to every prompt
    #[arg(long, requires = "one_shot_target")]
    pub one_shot_source: Option<String>,
    #[arg(long, requires = "one_shot_source")]
    pub one_shot_target: Option<String>,

    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
    #[arg(long)]
    pub max_target_tokens: Option<usize>,
    #[arg(long, value_enum)]
    pub write_mode: Option<Mode>,
    /// Let candidates that disagreed earlier keep voting
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unfiltered: Option<bool>,
    #[arg(long, value_enum)]
    #[serde(skip)]
    pub preset: Option<Preset>,

    /// Worker threads over sentences; never changes results
    #[arg(long)]
    pub parallelism: Option<usize>,
}

macro_rules! layer {
    ($top:expr, $bottom:expr, $($field:ident),*) => {
        Settings { $($field: $top.$field.or($bottom.$field),)* }
    };
}

impl Settings {
    /// Fields of `self` win over those of `below`.
    fn over(self, below: Settings) -> Settings {
        layer!(
            self,
            below,
            config,
            backend,
            dialect,
            model,
            joining,
            timeout_ms,
            max_in_flight,
            template,
            src_lang,
            tgt_lang,
            open_marker,
            close_marker,
            one_shot_source,
            one_shot_target,
            k,
            n,
            beam,
            gamma,
            max_new_tokens,
            max_target_tokens,
            write_mode,
            unfiltered,
            preset,
            parallelism
        )
    }

    fn preset_layer(preset: Preset) -> Settings {
        let p = match preset {
            Preset::LowLatency => PolicyConfig::low_latency(),
            Preset::HighQuality => PolicyConfig::high_quality(),
        };
        Settings {
            k: Some(p.k),
            n: Some(p.n),
            beam: Some(p.beam),
            gamma: Some(p.gamma),
            ..Settings::default()
        }
    }

    /// Merges flags with preset and config file, then fills defaults.
    pub fn resolve(self) -> Result<Resolved, Failure> {
        let file = match &self.config {
            Some(path) => {
                let text = read(path)?;
                toml::from_str::<Settings>(&text)
                    .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
            }
            None => Settings::default(),
        };
        let preset = self.preset.map(Settings::preset_layer).unwrap_or_default();
        let s = self.over(preset).over(file);
        let defaults = PolicyConfig::low_latency();
        let policy = PolicyConfig {
            k: s.k.unwrap_or(defaults.k),
            n: s.n.unwrap_or(defaults.n),
            beam: s.beam.unwrap_or(defaults.beam),
            gamma: s.gamma.unwrap_or(defaults.gamma),
            max_new_tokens: s.max_new_tokens.unwrap_or(DEFAULT_MAX_NEW_TOKENS),
            max_target_tokens: s.max_target_tokens,
            write_mode: match s.write_mode.unwrap_or(Mode::ForcedRead) {
                Mode::ForcedRead => WriteMode::ForcedRead,
                Mode::UntilEmpty => WriteMode::UntilEmpty,
            },
            filter_disagreeing: !s.unfiltered.unwrap_or(false),
        };
        policy.validate()?;
        let joining = s
            .joining
            .as_deref()
            .map(str::parse::<JoiningConvention>)
            .transpose()?;
        let parallelism = s.parallelism.unwrap_or(1);
        if parallelism == 0 {
            return Err(Failure::usage("parallelism must be at least 1"));
        }
        Ok(Resolved {
            backend: s.backend,
            dialect: s.dialect.unwrap_or(Dialect::Native),
            model: s.model,
            joining,
            timeout_ms: s
                .timeout_ms
                .unwrap_or(simulmt::backend::DEFAULT_TIMEOUT.as_millis() as u64),
            max_in_flight: s.max_in_flight.unwrap_or(4),
            template: s.template,
            src_lang: language_name(s.src_lang.as_deref().unwrap_or("en")),
            tgt_lang: language_name(s.tgt_lang.as_deref().unwrap_or("de")),
            open_marker: s.open_marker,
            close_marker: s.close_marker,
            one_shot: s.one_shot_source.zip(s.one_shot_target),
            policy,
            parallelism,
        })
    }
}

/// Fully resolved settings. Serializes to a file `--config` accepts.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub backend: Option<String>,
    pub dialect: Dialect,
    pub model: Option<String>,
    pub joining: Option<JoiningConvention>,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    pub template: Option<PathBuf>,
    pub src_lang: String,
    pub tgt_lang: String,
    pub open_marker: Option<String>,
    pub close_marker: Option<String>,
    pub one_shot: Option<(String, String)>,
    pub policy: PolicyConfig,
    pub parallelism: usize,
}

impl Resolved {
    pub fn to_toml(&self) -> String {
        let p = &self.policy;
        let flat = Settings {
            config: None,
            backend: self.backend.clone(),
            dialect: Some(self.dialect),
            model: self.model.clone(),
            joining: self.joining.as_ref().map(ToString::to_string),
            timeout_ms: Some(self.timeout_ms),
            max_in_flight: Some(self.max_in_flight),
            template: self.template.clone(),
            src_lang: Some(self.src_lang.clone()),
            tgt_lang: Some(self.tgt_lang.clone()),
            open_marker: self.open_marker.clone(),
            close_marker: self.close_marker.clone(),
            one_shot_source: self.one_shot.as_ref().map(|o| o.0.clone()),
            one_shot_target: self.one_shot.as_ref().map(|o| o.1.clone()),
            k: Some(p.k),
            n: Some(p.n),
            beam: Some(p.beam),
            gamma: Some(p.gamma),
            max_new_tokens: Some(p.max_new_tokens),
            max_target_tokens: p.max_target_tokens,
            write_mode: Some(match p.write_mode {
                WriteMode::ForcedRead => Mode::ForcedRead,
                WriteMode::UntilEmpty => Mode::UntilEmpty,
            }),
            unfiltered: Some(!p.filter_disagreeing),
            preset: None,
            parallelism: Some(self.parallelism),
        };
        toml::to_string(&flat).expect("settings serialize")
    }

    pub fn template(&self) -> Result<PromptTemplate, Failure> {
        let mut tpl = match &self.template {
            Some(path) => {
                let text = read(path)?;
                PromptTemplate::new(
                    text.trim_end_matches(['\n', '\r']),
                    &self.src_lang,
                    &self.tgt_lang,
                )?
            }
            None => PromptTemplate::default().with_languages(&self.src_lang, &self.tgt_lang),
        };
        let open = self
            .open_marker
            .clone()
            .unwrap_or_else(|| tpl.open_marker.clone());
        let close = self
            .close_marker
            .clone()
            .unwrap_or_else(|| tpl.close_marker.clone());
        tpl = tpl.with_markers(&open, &close);
        if let Some((src, tgt)) = &self.one_shot {
            tpl = tpl.with_one_shot(src, tgt);
        }
        Ok(tpl)
    }

    pub fn backend(&self) -> Result<Box<dyn Backend>, Failure> {
        let Some(descriptor) = self.backend.as_deref() else {
            return Err(Failure::usage(
                "no backend given; use --backend script:<file> or --backend <url>",
            ));
        };
        if let Some(path) = descriptor.strip_prefix("script:") {
            let mut backend =
                ScriptedBackend::load(Path::new(path)).map_err(simulmt::Error::BackendSetup)?;
            if let Some(j) = &self.joining {
                backend = backend.with_joining(j.clone());
            }
            return Ok(Box::new(backend));
        }
        if descriptor.starts_with("http://") || descriptor.starts_with("https://") {
            let mut cfg = RemoteConfig::new(descriptor);
            cfg.dialect = match self.dialect {
                Dialect::Native => WireDialect::Native,
                Dialect::Openai => WireDialect::OpenAiCompletions,
            };
            cfg.model = self.model.clone();
            cfg.auth_token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
            cfg.timeout = Duration::from_millis(self.timeout_ms);
            cfg.max_in_flight = self.max_in_flight;
            if let Some(j) = &self.joining {
                cfg.joining = j.clone();
            }
            let backend = RemoteBackend::new(cfg).map_err(simulmt::Error::BackendSetup)?;
            return Ok(Box::new(backend));
        }
        Err(Failure::usage(format!(
            "unrecognised backend {descriptor:?}; expected script:<file> or an http(s) URL"
        )))
    }
}

/// Expands common ISO 639-1 codes to the language names used in prompts.
/// Anything else is taken as already being a name.
pub fn language_name(code: &str) -> String {
    let name = match code.to_ascii_lowercase().as_str() {
        "en" => "English",
        "de" => "German",
        "es" => "Spanish",
        "fr" => "French",
        "it" => "Italian",
        "nl" => "Dutch",
        "pt" => "Portuguese",
        "ro" => "Romanian",
        "ru" => "Russian",
        "zh" => "Chinese",
        "ja" => "Japanese",
        "cs" => "Czech",
        _ => return code.to_owned(),
    };
    name.to_owned()
}

pub fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

pub fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure::io(path, e))
}
