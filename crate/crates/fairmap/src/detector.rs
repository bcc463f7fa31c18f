//! Inference-time router: matches a user prompt to the nearest training
//! prompt and decides whether the embedding passes through the mapping
//! network.
//!
//! A match below the threshold adopts the matched training prompt's text;
//! the mapping applies only when that prompt is neutral, since attributed
//! prompts already carry their demographic explicitly and mapping them
//! would fight the user's stated intent. `literal_pseudocode` flips exactly
//! the neutral-match branch (skip instead of map, keeping the user's
//! wording) for reproducibility studies.

use crate::embedding::{EmbeddingVector, EncoderHandle};
use crate::error::{Error, Result};
use crate::lexicon::PromptInstance;
use crate::network::MappingNetwork;

/// Precomputed embeddings of the training prompts plus the match threshold.
/// Entries must be embedded with the same encoder used at query time.
#[derive(Debug, Clone)]
pub struct TrainingPromptIndex {
    entries: Vec<(PromptInstance, EmbeddingVector)>,
    threshold: f64,
}

impl TrainingPromptIndex {
    /// Builds the index with the default threshold: half the minimum
    /// pairwise distance among entries, which is scale-free in the encoder's
    /// geometry. Needs at least two entries; use [`with_threshold`] to pin
    /// one explicitly.
    ///
    /// [`with_threshold`]: TrainingPromptIndex::with_threshold
    pub fn build(prompts: &[PromptInstance], encoder: &EncoderHandle) -> Result<Self> {
        let entries = Self::embed(prompts, encoder)?;
        let threshold = Self::default_threshold(&entries)?;
        Ok(TrainingPromptIndex { entries, threshold })
    }

    pub fn with_threshold(
        prompts: &[PromptInstance],
        encoder: &EncoderHandle,
        threshold: f64,
    ) -> Result<Self> {
        validate_threshold(threshold)?;
        let entries = Self::embed(prompts, encoder)?;
        Ok(TrainingPromptIndex { entries, threshold })
    }

    fn embed(
        prompts: &[PromptInstance],
        encoder: &EncoderHandle,
    ) -> Result<Vec<(PromptInstance, EmbeddingVector)>> {
        if prompts.is_empty() {
            return Err(Error::Invalid("prompt index needs at least one entry".into()));
        }
        prompts
            .iter()
            .map(|p| Ok((p.clone(), encoder.encode(&p.text)?)))
            .collect()
    }

    fn default_threshold(entries: &[(PromptInstance, EmbeddingVector)]) -> Result<f64> {
        if entries.len() < 2 {
            return Err(Error::Invalid(
                "default threshold needs at least two index entries; set one explicitly".into(),
            ));
        }
        let mut min = f64::INFINITY;
        for (i, (_, a)) in entries.iter().enumerate() {
            for (_, b) in &entries[i + 1..] {
                let d = a.distance(b)?;
                if d < min {
                    min = d;
                }
            }
        }
        Ok(0.5 * min)
    }

    pub fn entries(&self) -> &[(PromptInstance, EmbeddingVector)] {
        &self.entries
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn set_threshold(&mut self, threshold: f64) -> Result<()> {
        validate_threshold(threshold)?;
        self.threshold = threshold;
        Ok(())
    }
}

fn validate_threshold(threshold: f64) -> Result<()> {
    if !threshold.is_finite() || threshold < 0.0 {
        return Err(Error::Invalid(format!(
            "threshold must be finite and nonnegative, got {threshold}"
        )));
    }
    Ok(())
}

/// Euclidean distance between two embeddings.
pub fn similarity_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    a.distance(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    ThroughMapping,
    SkipMapping,
}

/// Outcome of routing one prompt. `matched_prompt` is present exactly when
/// the nearest-entry distance fell below the threshold; `encoded_text` is
/// what goes to the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingDecision {
    pub route: Route,
    pub matched_prompt: Option<PromptInstance>,
    pub distance: f64,
    pub encoded_text: String,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RouteOptions {
    /// Restore the neutral-match branch to its literal pseudocode form:
    /// keep the user's wording and skip the mapping. Attributed and
    /// out-of-range branches are unaffected.
    pub literal_pseudocode: bool,
}

/// Routes `prompt` against the index: nearest entry by Euclidean distance
/// (ties break to the lowest entry index). Out-of-range prompts pass
/// through unchanged and skip the mapping.
pub fn route(
    prompt: &str,
    index: &TrainingPromptIndex,
    encoder: &EncoderHandle,
) -> Result<RoutingDecision> {
    route_with_options(prompt, index, encoder, RouteOptions::default())
}

pub fn route_with_options(
    prompt: &str,
    index: &TrainingPromptIndex,
    encoder: &EncoderHandle,
    options: RouteOptions,
) -> Result<RoutingDecision> {
    let query = encoder.encode(prompt)?;
    let mut best_idx = 0usize;
    let mut best_distance = f64::INFINITY;
    for (i, (_, embedding)) in index.entries().iter().enumerate() {
        let d = similarity_distance(&query, embedding)?;
        if d < best_distance {
            best_distance = d;
            best_idx = i;
        }
    }

    if best_distance >= index.threshold() {
        return Ok(RoutingDecision {
            route: Route::SkipMapping,
            matched_prompt: None,
            distance: best_distance,
            encoded_text: prompt.to_string(),
        });
    }

    let matched = index.entries()[best_idx].0.clone();
    let decision = if matched.attribute.is_some() {
        // Explicit attribute in the matched prompt: honor it, no mapping.
        RoutingDecision {
            route: Route::SkipMapping,
            encoded_text: matched.text.clone(),
            matched_prompt: Some(matched),
            distance: best_distance,
        }
    } else if options.literal_pseudocode {
        RoutingDecision {
            route: Route::SkipMapping,
            encoded_text: prompt.to_string(),
            matched_prompt: Some(matched),
            distance: best_distance,
        }
    } else {
        RoutingDecision {
            route: Route::ThroughMapping,
            encoded_text: matched.text.clone(),
            matched_prompt: Some(matched),
            distance: best_distance,
        }
    };
    Ok(decision)
}

/// Encodes the routed text and applies the mapping when the decision says
/// so. This is the final conditioning embedding.
pub fn apply_route(
    decision: &RoutingDecision,
    encoder: &EncoderHandle,
    net: &MappingNetwork,
) -> Result<EmbeddingVector> {
    let embedding = encoder.encode(&decision.encoded_text)?;
    match decision.route {
        Route::ThroughMapping => net.forward(&embedding),
        Route::SkipMapping => Ok(embedding),
    }
}

/// Full inference path: route, encode, map when routed through.
pub fn apply_pipeline(
    prompt: &str,
    index: &TrainingPromptIndex,
    encoder: &EncoderHandle,
    net: &MappingNetwork,
) -> Result<EmbeddingVector> {
    let decision = route(prompt, index, encoder)?;
    apply_route(&decision, encoder, net)
}
