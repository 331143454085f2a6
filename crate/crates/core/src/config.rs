//! Runtime configuration file (JSON, `"version": 1`).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::ClustererKind;
use crate::error::{Error, Result};
use crate::extraction::{resolve_location, validate_chain, ExtractionPlan, RecordErrorPolicy};
use crate::matching::MatcherConfig;
use crate::model::{validate_source_id, SourceDescriptor, SourceKind};
use crate::profile::AssemblyKind;
use crate::space::{SpaceStrategy, TokenFilter};
use crate::store::StoreBackend;

pub const CONFIG_VERSION: u32 = 1;

/// Extraction key applying to every source without its own entry.
pub const DEFAULT_PLAN_KEY: &str = "*";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Batch,
    Incremental,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuntimeConfig {
    pub version: u32,
    #[serde(default)]
    pub mode: Mode,
    pub sources: Vec<SourceDescriptor>,
    #[serde(default)]
    pub on_record_error: RecordErrorPolicy,
    /// Per-source plans keyed by source_id, with `"*"` as fallback.
    #[serde(default)]
    pub extraction: BTreeMap<String, ExtractionPlan>,
    pub comparison: SpaceStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<TokenFilter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matcher: Option<MatcherConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusterer: Option<ClustererKind>,
    pub assembly: AssemblyKind,
    /// No store means batch runs keep nothing beyond their outputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store: Option<StoreBackend>,
    /// Matcher worker threads; rayon's default when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl RuntimeConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RuntimeConfig = serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative source and store paths
    /// are resolved against the file's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RuntimeConfig =
            serde_json::from_str(&text).map_err(|e| Error::config("config", e.to_string()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for s in &mut self.sources {
            resolve_location(s, base);
        }
        if let Some(StoreBackend::File { path }) = &mut self.store {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn plan_for(&self, source_id: &str) -> Option<&ExtractionPlan> {
        self.extraction
            .get(source_id)
            .or_else(|| self.extraction.get(DEFAULT_PLAN_KEY))
    }

    pub fn source(&self, source_id: &str) -> Option<&SourceDescriptor> {
        self.sources.iter().find(|s| s.source_id == source_id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config("version", format!("expected {CONFIG_VERSION}, found {}", self.version)));
        }
        self.validate_sources()?;
        let produced = self.validate_extraction()?;
        let any_passthrough = self.sources.iter().any(|s| s.kind == SourceKind::ReferencePassthrough);
        let require_attr = |field: &str, attr: &str| -> Result<()> {
            if !any_passthrough && !produced.contains(attr) {
                return Err(Error::config(
                    field,
                    format!("attribute `{attr}` is not produced by any extractor"),
                ));
            }
            Ok(())
        };

        self.comparison.validate()?;
        match &self.comparison {
            SpaceStrategy::Full => {}
            SpaceStrategy::BlockKey { key_attribute, .. } | SpaceStrategy::SortedNeighborhood { key_attribute, .. } => {
                require_attr("comparison.key_attribute", key_attribute)?;
            }
        }
        if let Some(f) = &self.filter {
            f.validate()?;
            require_attr("filter.attribute", &f.attribute)?;
        }
        if let Some(m) = &self.matcher {
            m.validate()?;
            for (i, rule) in m.rules.iter().enumerate() {
                require_attr(&format!("matcher.rules[{i}].attribute"), &rule.attribute)?;
            }
        }

        match (&self.matcher, &self.clusterer) {
            (None, None) => {
                return Err(Error::config("matcher", "at least one of matcher and clusterer is required"));
            }
            (None, Some(_)) if self.assembly == AssemblyKind::Pair => {
                return Err(Error::config("assembly", "pair assembly needs a matcher"));
            }
            (_, None) if self.assembly != AssemblyKind::Pair => {
                return Err(Error::config("assembly", "partition and merged assembly need a clusterer"));
            }
            _ => {}
        }
        if self.clusterer == Some(ClustererKind::UniqueMapping) && self.sources.len() != 2 {
            return Err(Error::config("clusterer", "unique_mapping links exactly two sources"));
        }
        if self.threads == Some(0) {
            return Err(Error::config("threads", "must be at least 1"));
        }
        if self.mode == Mode::Incremental {
            if self.matcher.is_none() {
                return Err(Error::config("matcher", "incremental mode needs a matcher"));
            }
            if self.clusterer != Some(ClustererKind::ConnectedComponents) {
                return Err(Error::config("clusterer", "incremental mode clusters with connected_components"));
            }
            if matches!(self.comparison, SpaceStrategy::SortedNeighborhood { .. }) {
                return Err(Error::config(
                    "comparison.strategy",
                    "sorted_neighborhood windows shift as records arrive; use block_key or full in incremental mode",
                ));
            }
        }
        Ok(())
    }

    fn validate_sources(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::config("sources", "at least one source is required"));
        }
        let mut ids = BTreeSet::new();
        for (i, s) in self.sources.iter().enumerate() {
            validate_source_id(&s.source_id)
                .map_err(|e| Error::config(format!("sources[{i}].source_id"), e.to_string()))?;
            if !ids.insert(s.source_id.as_str()) {
                return Err(Error::config(
                    format!("sources[{i}].source_id"),
                    format!("duplicate source_id `{}`", s.source_id),
                ));
            }
            if s.location.is_empty() && self.mode == Mode::Batch {
                return Err(Error::config(format!("sources[{i}].location"), "must not be empty"));
            }
        }
        Ok(())
    }

    /// Returns every attribute name the chains can produce.
    fn validate_extraction(&self) -> Result<BTreeSet<String>> {
        for key in self.extraction.keys() {
            if key != DEFAULT_PLAN_KEY && self.source(key).is_none() {
                return Err(Error::config(format!("extraction.{key}"), "no source with this id"));
            }
        }
        let mut produced = BTreeSet::new();
        for s in &self.sources {
            if s.kind == SourceKind::ReferencePassthrough {
                continue;
            }
            let key = if self.extraction.contains_key(&s.source_id) {
                s.source_id.as_str()
            } else {
                DEFAULT_PLAN_KEY
            };
            let plan = self
                .plan_for(&s.source_id)
                .ok_or_else(|| Error::config(format!("extraction.{}", s.source_id), "no extraction plan for source"))?;
            if plan.extractors.is_empty() {
                return Err(Error::config(format!("extraction.{key}.extractors"), "extractor chain is empty"));
            }
            validate_chain(&plan.extractors, &format!("extraction.{key}.extractors"))?;
            for e in &plan.extractors {
                produced.extend(e.outputs().into_iter().map(str::to_owned));
            }
        }
        Ok(produced)
    }
}
