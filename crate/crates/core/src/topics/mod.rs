//! Topic model: clusters of call drivers with labels, centroids,
//! representatives and keywords, plus the outlier pool the stream module
//! grows.

mod eval;
mod label;
mod store;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::cluster::{grid_search, ClusterParams, GridResult, ValidityScore};
use crate::error::{Error, Result};
use crate::gateway::{EmbeddingVector, Gateway};
use crate::text::{content_form, normalize};
use crate::transcript::CallDriver;

pub use eval::{e2e_from_parts, e2e_score, ClusterCoherence, E2eScore, E2eWeights};
pub use label::{label_cluster, label_model, label_prompt, LabelOutcome, LABEL_PROMPT};
pub use store::{from_json, load, persist, SCHEMA_VERSION};

pub const UNLABELED: &str = "(unlabeled)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicCluster {
    pub id: usize,
    pub label: String,
    /// The backend label ran past the word cap and was cut.
    #[serde(default)]
    pub label_flagged: bool,
    pub member_driver_ids: Vec<String>,
    /// Re-normalized mean of member embeddings.
    pub centroid: Vec<f64>,
    /// Unnormalized running mean; `centroid` is derived from it.
    pub mean: Vec<f64>,
    pub representatives: Vec<String>,
    pub keywords: Vec<String>,
    pub size: usize,
}

impl TopicCluster {
    pub fn is_labeled(&self) -> bool {
        self.label != UNLABELED
    }

    /// Folds one more member embedding into the running mean.
    pub fn absorb(&mut self, driver_id: &str, embedding: &[f64]) {
        self.member_driver_ids.push(driver_id.to_string());
        self.size += 1;
        let n = self.size as f64;
        for (m, x) in self.mean.iter_mut().zip(embedding) {
            *m += (x - *m) / n;
        }
        self.centroid = EmbeddingVector::normalized(self.mean.clone()).values;
    }
}

/// A group inside the outlier pool. Its medoid is the driver compared against
/// when new outliers arrive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubCluster {
    pub id: usize,
    pub member_driver_ids: Vec<String>,
    pub medoid: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicModel {
    pub schema_version: u32,
    pub version: u64,
    pub created_at: DateTime<Utc>,
    pub params: ClusterParams,
    pub embed_dim: usize,
    #[serde(default)]
    pub validity: Option<ValidityScore>,
    pub clusters: Vec<TopicCluster>,
    pub outlier_pool: Vec<String>,
    #[serde(default)]
    pub outlier_subclusters: Vec<SubCluster>,
    /// Embeddings of outlier drivers, kept so the pool can be regrouped
    /// without calling the embedder again.
    #[serde(default)]
    pub outlier_embeddings: BTreeMap<String, Vec<f64>>,
    /// Text of every driver in the model, by driver id.
    pub drivers: BTreeMap<String, String>,
}

impl TopicModel {
    pub fn cluster(&self, id: usize) -> Option<&TopicCluster> {
        self.clusters.iter().find(|c| c.id == id)
    }

    pub fn member_texts(&self, c: &TopicCluster) -> Vec<String> {
        c.member_driver_ids
            .iter()
            .map(|id| self.drivers.get(id).cloned().unwrap_or_default())
            .collect()
    }

    /// Checks the structural invariants. Used on load and in tests.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::CorruptModel(m));
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        let mut ids = BTreeSet::new();
        for c in &self.clusters {
            if !ids.insert(c.id) {
                return bad(format!("duplicate cluster id {}", c.id));
            }
            if c.size == 0 || c.size != c.member_driver_ids.len() {
                return bad(format!("cluster {}: size {} vs {} members", c.id, c.size, c.member_driver_ids.len()));
            }
            if c.centroid.len() != self.embed_dim || c.mean.len() != self.embed_dim {
                return bad(format!("cluster {}: centroid dimension", c.id));
            }
            let norm = c.centroid.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm != 0.0 && (norm - 1.0).abs() > 1e-6 {
                return bad(format!("cluster {}: centroid not normalized ({norm})", c.id));
            }
            for m in &c.member_driver_ids {
                if !seen.insert(m) {
                    return bad(format!("driver {m:?} appears twice"));
                }
            }
            let texts: BTreeSet<String> = self.member_texts(c).into_iter().collect();
            if let Some(r) = c.representatives.iter().find(|r| !texts.contains(*r)) {
                return bad(format!("cluster {}: representative {r:?} is not a member", c.id));
            }
        }
        for o in &self.outlier_pool {
            if !seen.insert(o) {
                return bad(format!("driver {o:?} appears twice"));
            }
        }
        let all: BTreeSet<&str> = self.drivers.keys().map(String::as_str).collect();
        if seen != all {
            return bad("clusters and outlier pool do not partition the drivers".into());
        }
        let pool: BTreeSet<&str> = self.outlier_pool.iter().map(String::as_str).collect();
        let mut in_sub = BTreeSet::new();
        for s in &self.outlier_subclusters {
            for m in &s.member_driver_ids {
                if !pool.contains(m.as_str()) || !in_sub.insert(m.as_str()) {
                    return bad(format!("sub-cluster {}: bad member {m:?}", s.id));
                }
            }
            if !s.member_driver_ids.contains(&s.medoid) {
                return bad(format!("sub-cluster {}: medoid is not a member", s.id));
            }
        }
        for (id, e) in &self.outlier_embeddings {
            if !pool.contains(id.as_str()) || e.len() != self.embed_dim {
                return bad(format!("outlier embedding {id:?} is stale"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelingConfig {
    pub n_representatives: usize,
    pub k_keywords: usize,
    pub prompt_template: String,
    pub max_label_words: usize,
    pub max_tokens: u32,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        LabelingConfig {
            n_representatives: 25,
            k_keywords: 3,
            prompt_template: LABEL_PROMPT.into(),
            max_label_words: 8,
            max_tokens: 32,
        }
    }
}

impl LabelingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_representatives < 1 || self.k_keywords < 1 {
            return Err(Error::Config("n_representatives and k_keywords must be >= 1".into()));
        }
        if self.prompt_template.matches("{}").count() != 2 {
            return Err(Error::Config("label prompt needs two {} slots".into()));
        }
        Ok(())
    }
}

/// Top-n most frequent normalized drivers (first original of each group) and
/// top-k most frequent normalized unigrams, each shown in its most common
/// spelling. Ties break lexicographically.
pub fn select_representatives<S: AsRef<str>>(
    texts: &[S],
    n: usize,
    k: usize,
) -> (Vec<String>, Vec<String>) {
    let mut groups: HashMap<Vec<String>, (usize, usize)> = HashMap::new();
    let mut unigrams: HashMap<String, usize> = HashMap::new();
    // surface spellings per normalized token, so keywords read as words
    let mut surfaces: HashMap<String, BTreeMap<String, usize>> = HashMap::new();
    for (i, t) in texts.iter().enumerate() {
        for raw in t.as_ref().split_whitespace() {
            if let Some(tok) = content_form(raw) {
                let surface: String = raw.to_lowercase().chars().filter(|c| c.is_alphanumeric()).collect();
                *surfaces.entry(tok).or_default().entry(surface).or_insert(0) += 1;
            }
        }
        let tokens = normalize(t.as_ref()).tokens;
        for tok in &tokens {
            *unigrams.entry(tok.clone()).or_insert(0) += 1;
        }
        groups.entry(tokens).or_insert((0, i)).0 += 1;
    }
    let mut groups: Vec<(Vec<String>, (usize, usize))> = groups.into_iter().collect();
    groups.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then_with(|| a.0.cmp(&b.0)));
    let reps = groups
        .into_iter()
        .take(n)
        .map(|(_, (_, first))| texts[first].as_ref().to_string())
        .collect();
    let mut unigrams: Vec<(String, usize)> = unigrams.into_iter().collect();
    unigrams.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let keywords = unigrams
        .into_iter()
        .take(k)
        .map(|(w, _)| {
            surfaces
                .get(&w)
                .and_then(|m| m.iter().max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0))))
                .map_or(w, |(s, _)| s.clone())
        })
        .collect();
    (reps, keywords)
}

pub(crate) fn mean_of(vectors: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut mean = vec![0.0; dim];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += x;
        }
    }
    let n = vectors.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Embeds the drivers, grid-searches clustering parameters, and assembles an
/// unlabeled model. `created_at` is passed in so rebuilds are reproducible.
pub fn build_topic_model(
    drivers: &[CallDriver],
    gw: &Gateway,
    grid: &[ClusterParams],
    cfg: &LabelingConfig,
    created_at: DateTime<Utc>,
) -> Result<(TopicModel, GridResult)> {
    cfg.validate()?;
    if drivers.is_empty() {
        return Err(Error::Validation("topic model needs at least one driver".into()));
    }
    let mut texts = BTreeMap::new();
    for d in drivers {
        if texts.insert(d.transcript_id.clone(), d.text.clone()).is_some() {
            return Err(Error::DuplicateId(d.transcript_id.clone()));
        }
    }
    let inputs: Vec<String> = drivers.iter().map(|d| d.text.clone()).collect();
    let embeddings: Vec<Vec<f64>> = gw.embed(&inputs)?.into_iter().map(|e| e.values).collect();
    let embed_dim = embeddings[0].len();
    let result = grid_search(&embeddings, grid)?;
    let a = &result.assignment;

    let clusters = (0..a.num_clusters())
        .map(|c| {
            let members = a.members(c);
            let vecs: Vec<&[f64]> = members.iter().map(|&i| embeddings[i].as_slice()).collect();
            let mean = mean_of(&vecs, embed_dim);
            let member_texts: Vec<&str> = members.iter().map(|&i| drivers[i].text.as_str()).collect();
            let (representatives, keywords) =
                select_representatives(&member_texts, cfg.n_representatives, cfg.k_keywords);
            TopicCluster {
                id: c,
                label: UNLABELED.into(),
                label_flagged: false,
                member_driver_ids: members.iter().map(|&i| drivers[i].transcript_id.clone()).collect(),
                centroid: EmbeddingVector::normalized(mean.clone()).values,
                mean,
                representatives,
                keywords,
                size: members.len(),
            }
        })
        .collect();
    let noise = a.noise();
    let model = TopicModel {
        schema_version: SCHEMA_VERSION,
        version: 1,
        created_at,
        params: result.params,
        embed_dim,
        validity: Some(result.score),
        clusters,
        outlier_pool: noise.iter().map(|&i| drivers[i].transcript_id.clone()).collect(),
        outlier_subclusters: Vec::new(),
        outlier_embeddings: noise
            .iter()
            .map(|&i| (drivers[i].transcript_id.clone(), embeddings[i].clone()))
            .collect(),
        drivers: texts,
    };
    model.validate()?;
    Ok((model, result))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn epoch() -> DateTime<Utc> {
        DateTime::<Utc>::UNIX_EPOCH
    }

    /// Three well separated driver themes, `per` copies each with light
    /// variation.
    pub fn themed_drivers(per: usize) -> Vec<CallDriver> {
        let themes = [
            ["request loaner laptop", "loaner laptop request", "need loaner laptop"],
            ["reset account password", "password reset account", "account password reset"],
            ["refund damaged parcel", "damaged parcel refund", "parcel refund damaged"],
        ];
        let mut out = Vec::new();
        for (t, variants) in themes.iter().enumerate() {
            for i in 0..per {
                out.push(CallDriver::new(format!("d{t}-{i:02}"), variants[i % 3]));
            }
        }
        out
    }

    #[test]
    fn identical_drivers_give_one_representative() {
        let (reps, _) = select_representatives(&["Reset password!", "reset the password", "RESET PASSWORD"], 25, 3);
        assert_eq!(reps, vec!["Reset password!"]);
    }

    #[test]
    fn small_cluster_returns_all_groups() {
        let (reps, _) = select_representatives(&["a laptop", "a phone", "a desk"], 25, 3);
        assert_eq!(reps.len(), 3);
    }

    #[test]
    fn keywords_use_most_common_spelling() {
        // "damaged" x2, "damage" x1 share one normalized token
        let (_, kw) = select_representatives(&["Damaged box", "damaged item", "damage claim"], 3, 1);
        assert_eq!(kw, vec!["damaged"]);
    }

    #[test]
    fn keyword_hand_count() {
        // reset:2 password:2 help:1 unlock:1 account:1; the tie goes to "password"
        let (reps, kw) = select_representatives(&["reset password", "password reset help", "unlock account"], 2, 1);
        assert_eq!(kw, vec!["password"]);
        assert_eq!(reps.len(), 2);
        let (_, kw) = select_representatives(&["reset password", "password reset help", "unlock account"], 2, 3);
        assert_eq!(kw, vec!["password", "reset", "account"]);
    }

    #[test]
    fn representative_tie_break_is_lexicographic() {
        let (reps, _) = select_representatives(&["zebra call", "apple call", "zebra call"], 2, 1);
        assert_eq!(reps, vec!["zebra call", "apple call"]);
        let (reps, _) = select_representatives(&["zebra call", "apple call"], 1, 1);
        assert_eq!(reps, vec!["apple call"]);
    }

    #[test]
    fn running_mean_tracks_batch_mean() {
        let mut c = TopicCluster {
            id: 0,
            label: UNLABELED.into(),
            label_flagged: false,
            member_driver_ids: vec!["a".into()],
            centroid: vec![1.0, 0.0],
            mean: vec![1.0, 0.0],
            representatives: vec![],
            keywords: vec![],
            size: 1,
        };
        c.absorb("b", &[0.0, 1.0]);
        c.absorb("c", &[0.0, 1.0]);
        assert!((c.mean[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((c.mean[1] - 2.0 / 3.0).abs() < 1e-15);
        let norm = c.centroid.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn build_finds_themes_and_partitions_drivers() {
        let drivers = themed_drivers(12);
        let gw = Gateway::mock();
        let grid = crate::cluster::parse_grid("5,10;1,5").unwrap();
        let (model, result) = build_topic_model(&drivers, &gw, &grid, &LabelingConfig::default(), epoch()).unwrap();
        assert_eq!(model.clusters.len(), 3, "{:?}", result.evaluated);
        for c in &model.clusters {
            let theme = &c.member_driver_ids[0][..2];
            assert!(c.member_driver_ids.iter().all(|m| m.starts_with(theme)));
            assert!(!c.is_labeled());
            assert_eq!(c.keywords.len(), 3);
        }
        model.validate().unwrap();
        assert_eq!(model.drivers.len(), 36);
    }

    #[test]
    fn build_rejects_duplicate_ids() {
        let drivers = vec![CallDriver::new("a", "x"), CallDriver::new("a", "y")];
        let err = build_topic_model(&drivers, &Gateway::mock(), &[ClusterParams::new(2, 1)], &LabelingConfig::default(), epoch());
        assert!(matches!(err, Err(Error::DuplicateId(_))));
    }

    #[test]
    fn validate_catches_broken_partition() {
        let (mut model, _) = build_topic_model(
            &themed_drivers(6),
            &Gateway::mock(),
            &[ClusterParams::new(5, 1)],
            &LabelingConfig::default(),
            epoch(),
        )
        .unwrap();
        model.drivers.insert("ghost".into(), "boo".into());
        assert!(matches!(model.validate(), Err(Error::CorruptModel(_))));
    }
}
