//! Embedding-similarity search over overlay designs.
//!
//! For each candidate [`OverlayConfig`], every probe image is rendered with
//! its probe number and embedded. Number accuracy is the fraction of probes
//! whose most similar number text (`"0"` to `"99"`) is the rendered number;
//! caption accuracy is the fraction whose most similar caption, out of the
//! whole probe caption pool, is the probe's own caption. Candidates are ranked
//! by the harmonic mean of the two.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::overlay::{FrameImage, OverlayConfig, OverlayError};

/// Number texts cover `0..NUMBER_CANDIDATES`.
pub const NUMBER_CANDIDATES: u32 = 100;
const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DesignError {
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("embedding is empty, zero or non-finite")]
    Degenerate,
    #[error("embedding norm {0} is not within 1e-6 of 1")]
    NotUnit(f64),
    #[error("no probes to score")]
    EmptyProbes,
    #[error("no candidate texts to compare against")]
    EmptyCandidates,
    #[error("{images} image embeddings but {truths} ground-truth labels")]
    LengthMismatch { images: usize, truths: usize },
    #[error("ground-truth index {index} outside {candidates} candidates")]
    TruthOutOfRange { index: usize, candidates: usize },
    #[error("probe {image_id:?}: {reason}")]
    InvalidProbe { image_id: String, reason: &'static str },
}

/// Unit-length embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Scales `values` to unit length.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self, DesignError> {
        let norm = l2(&values);
        if values.is_empty() || !norm.is_finite() || norm == 0.0 {
            return Err(DesignError::Degenerate);
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(Self(values))
    }

    /// Accepts `values` that are already unit length (within 1e-6).
    pub fn from_unit(values: Vec<f64>) -> Result<Self, DesignError> {
        let norm = l2(&values);
        if values.is_empty() || !norm.is_finite() {
            return Err(DesignError::Degenerate);
        }
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(DesignError::NotUnit(norm));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

fn l2(values: &[f64]) -> f64 {
    libm::sqrt(values.iter().map(|v| v * v).sum())
}

pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, DesignError> {
    if a.dim() != b.dim() {
        return Err(DesignError::DimensionMismatch(a.dim(), b.dim()));
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (l2(&a.0) * l2(&b.0))).clamp(-1.0, 1.0))
}

/// Index of the most similar candidate; the lowest index wins ties.
pub fn most_similar(query: &Embedding, candidates: &[Embedding]) -> Result<usize, DesignError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let s = cosine_similarity(query, c)?;
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i).ok_or(DesignError::EmptyCandidates)
}

/// Fraction of `queries` whose most similar candidate is their truth index.
pub fn top1_accuracy(
    queries: &[Embedding],
    candidates: &[Embedding],
    truths: &[usize],
) -> Result<f64, DesignError> {
    if queries.is_empty() {
        return Err(DesignError::EmptyProbes);
    }
    if queries.len() != truths.len() {
        return Err(DesignError::LengthMismatch {
            images: queries.len(),
            truths: truths.len(),
        });
    }
    if let Some(&index) = truths.iter().find(|&&t| t >= candidates.len()) {
        return Err(DesignError::TruthOutOfRange {
            index,
            candidates: candidates.len(),
        });
    }
    let mut correct = 0usize;
    for (q, &t) in queries.iter().zip(truths) {
        correct += (most_similar(q, candidates)? == t) as usize;
    }
    Ok(correct as f64 / queries.len() as f64)
}

/// `number_text_embs[k]` embeds the text of number `k`.
pub fn number_accuracy(
    image_embs: &[Embedding],
    number_text_embs: &[Embedding],
    truths: &[u32],
) -> Result<f64, DesignError> {
    let truths: Vec<usize> = truths.iter().map(|&t| t as usize).collect();
    top1_accuracy(image_embs, number_text_embs, &truths)
}

pub fn caption_accuracy(
    image_embs: &[Embedding],
    caption_pool_embs: &[Embedding],
    truth_indices: &[usize],
) -> Result<f64, DesignError> {
    top1_accuracy(image_embs, caption_pool_embs, truth_indices)
}

/// The texts embedded as number candidates: bare decimals `"0"` to `"99"`.
pub fn number_texts() -> Vec<String> {
    (0..NUMBER_CANDIDATES).map(|n| alloc::format!("{n}")).collect()
}

/// An image-caption pair with the number to overlay on it.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProbePair {
    pub image_id: String,
    pub caption: String,
    pub true_number: u32,
}

impl ProbePair {
    pub fn new(image_id: String, caption: String, true_number: u32) -> Result<Self, DesignError> {
        let probe = Self {
            image_id,
            caption,
            true_number,
        };
        probe.validate()?;
        Ok(probe)
    }

    pub fn validate(&self) -> Result<(), DesignError> {
        let reason = if self.caption.trim().is_empty() {
            "caption is empty"
        } else if self.true_number >= NUMBER_CANDIDATES {
            "number outside 0..=99"
        } else {
            return Ok(());
        };
        Err(DesignError::InvalidProbe {
            image_id: self.image_id.clone(),
            reason,
        })
    }
}

/// Harmonic mean of two accuracies, 0 if either is 0.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScoredCandidate {
    pub config: OverlayConfig,
    pub number_accuracy: f64,
    pub caption_accuracy: f64,
    pub combined: f64,
}

impl ScoredCandidate {
    pub fn new(config: OverlayConfig, number_accuracy: f64, caption_accuracy: f64) -> Self {
        Self {
            config,
            number_accuracy,
            caption_accuracy,
            combined: harmonic_mean(number_accuracy, caption_accuracy),
        }
    }

    fn dominates(&self, other: &ScoredCandidate) -> bool {
        self.number_accuracy >= other.number_accuracy
            && self.caption_accuracy >= other.caption_accuracy
            && (self.number_accuracy > other.number_accuracy
                || self.caption_accuracy > other.caption_accuracy)
    }
}

/// A scored candidate together with its position in the input list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedCandidate {
    pub candidate_index: usize,
    pub scored: ScoredCandidate,
}

/// Sorts by combined score, then number accuracy (both descending), then
/// input order.
pub fn rank(mut rows: Vec<RankedCandidate>) -> Vec<RankedCandidate> {
    rows.sort_by(|a, b| {
        b.scored
            .combined
            .total_cmp(&a.scored.combined)
            .then(b.scored.number_accuracy.total_cmp(&a.scored.number_accuracy))
            .then(a.candidate_index.cmp(&b.candidate_index))
    });
    rows
}

/// Positions in `rows` of the candidates no other candidate dominates on
/// both accuracies.
pub fn pareto_front(rows: &[ScoredCandidate]) -> Vec<usize> {
    (0..rows.len())
        .filter(|&i| !rows.iter().any(|o| o.dominates(&rows[i])))
        .collect()
}

/// Source of embeddings for rendered probe images and texts.
pub trait EmbeddingProvider {
    type Error;

    fn embed_text(&mut self, text: &str) -> Result<Embedding, Self::Error>;
    fn embed_image(&mut self, image: &FrameImage) -> Result<Embedding, Self::Error>;
}

#[derive(Debug)]
pub enum CandidateFailure<E> {
    Render(OverlayError),
    Provider(E),
    Score(DesignError),
}

impl<E: fmt::Display> fmt::Display for CandidateFailure<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CandidateFailure::Render(e) => write!(f, "render failed: {e}"),
            CandidateFailure::Provider(e) => write!(f, "embedding failed: {e}"),
            CandidateFailure::Score(e) => write!(f, "scoring failed: {e}"),
        }
    }
}

#[derive(Debug)]
pub enum SearchError<E> {
    Invalid(DesignError),
    /// Text embeddings could not be built, so nothing was scored.
    Text(E),
    /// Some candidates could not be scored; the rest are ranked.
    Partial {
        ranked: Vec<RankedCandidate>,
        failures: Vec<(usize, CandidateFailure<E>)>,
    },
}

impl<E> SearchError<E> {
    pub fn unscored(&self) -> Vec<usize> {
        match self {
            SearchError::Partial { failures, .. } => failures.iter().map(|(i, _)| *i).collect(),
            _ => Vec::new(),
        }
    }
}

impl<E: fmt::Display> fmt::Display for SearchError<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SearchError::Invalid(e) => write!(f, "{e}"),
            SearchError::Text(e) => write!(f, "text embedding failed: {e}"),
            SearchError::Partial { failures, .. } => {
                write!(f, "{} candidate(s) unscored:", failures.len())?;
                for (i, cause) in failures {
                    write!(f, " [{i}] {cause};")?;
                }
                Ok(())
            }
        }
    }
}

impl<E: fmt::Debug + fmt::Display> core::error::Error for SearchError<E> {}

/// Deduplicated caption pool and each probe's index into it.
pub fn caption_pool(probes: &[ProbePair]) -> (Vec<&str>, Vec<usize>) {
    let mut pool: Vec<&str> = Vec::new();
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    let truths = probes
        .iter()
        .map(|p| {
            *seen.entry(p.caption.as_str()).or_insert_with(|| {
                pool.push(p.caption.as_str());
                pool.len() - 1
            })
        })
        .collect();
    (pool, truths)
}

/// Scores every candidate on the same probe set and ranks them.
///
/// `render` produces the annotated probe image for a config. Candidates whose
/// rendering or embedding fails are reported in [`SearchError::Partial`]
/// alongside the ranking of the others.
pub fn grid_search<P, R>(
    candidates: &[OverlayConfig],
    probes: &[ProbePair],
    provider: &mut P,
    mut render: R,
) -> Result<Vec<RankedCandidate>, SearchError<P::Error>>
where
    P: EmbeddingProvider,
    R: FnMut(&ProbePair, &OverlayConfig) -> Result<FrameImage, OverlayError>,
{
    if candidates.is_empty() {
        return Err(SearchError::Invalid(DesignError::EmptyCandidates));
    }
    if probes.is_empty() {
        return Err(SearchError::Invalid(DesignError::EmptyProbes));
    }
    for p in probes {
        p.validate().map_err(SearchError::Invalid)?;
    }

    let number_embs = number_texts()
        .iter()
        .map(|t| provider.embed_text(t))
        .collect::<Result<Vec<_>, _>>()
        .map_err(SearchError::Text)?;
    let (pool, caption_truths) = caption_pool(probes);
    let caption_embs = pool
        .iter()
        .map(|t| provider.embed_text(t))
        .collect::<Result<Vec<_>, _>>()
        .map_err(SearchError::Text)?;
    let number_truths: Vec<u32> = probes.iter().map(|p| p.true_number).collect();

    let mut ranked = Vec::with_capacity(candidates.len());
    let mut failures = Vec::new();
    'candidates: for (index, config) in candidates.iter().enumerate() {
        let mut image_embs = Vec::with_capacity(probes.len());
        for probe in probes {
            let emb = render(probe, config)
                .map_err(CandidateFailure::Render)
                .and_then(|img| provider.embed_image(&img).map_err(CandidateFailure::Provider));
            match emb {
                Ok(e) => image_embs.push(e),
                Err(cause) => {
                    failures.push((index, cause));
                    continue 'candidates;
                }
            }
        }
        let scores = number_accuracy(&image_embs, &number_embs, &number_truths).and_then(|n| {
            caption_accuracy(&image_embs, &caption_embs, &caption_truths).map(|c| (n, c))
        });
        match scores {
            Ok((n, c)) => ranked.push(RankedCandidate {
                candidate_index: index,
                scored: ScoredCandidate::new(*config, n, c),
            }),
            Err(e) => failures.push((index, CandidateFailure::Score(e))),
        }
    }

    let ranked = rank(ranked);
    if failures.is_empty() {
        Ok(ranked)
    } else {
        Err(SearchError::Partial { ranked, failures })
    }
}
