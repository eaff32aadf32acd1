//! Online handling of new call drivers against a built topic model.
//!
//! Embedding is the expensive part and can run on many threads
//! ([`embed_driver`]); [`commit`] then applies one driver at a time to the
//! model and trend counters, re-reading the current centroids so the outcome
//! depends only on arrival order.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::community::{greedy_communities, medoid, similarity_matrix};
use crate::error::{Error, Result};
use crate::gateway::{cosine, Gateway};
use crate::io::write_atomic;
use crate::topics::{SubCluster, TopicModel};
use crate::transcript::CallDriver;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub tau_assign: f64,
    pub tau_sub: f64,
    pub greedy_threshold: f64,
    pub min_community: usize,
    pub emerge_min_count: u64,
    pub emerge_growth: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            tau_assign: 0.6,
            tau_sub: 0.75,
            greedy_threshold: 0.75,
            min_community: 2,
            emerge_min_count: 10,
            emerge_growth: 2.0,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau_assign", self.tau_assign),
            ("tau_sub", self.tau_sub),
            ("greedy_threshold", self.greedy_threshold),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1), got {v}")));
            }
        }
        if !(self.emerge_growth > 1.0) {
            return Err(Error::Config("emerge_growth must be > 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Target {
    Cluster { id: usize },
    OutlierSubcluster { id: usize },
    /// Started a new sub-cluster of its own.
    OutlierSingleton { id: usize },
}

impl Target {
    fn key(self) -> String {
        match self {
            Target::Cluster { id } => format!("cluster:{id}"),
            Target::OutlierSubcluster { id } | Target::OutlierSingleton { id } => format!("sub:{id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignResult {
    pub driver_id: String,
    pub target: Target,
    pub similarity: f64,
    /// Cluster label at commit time, when assigned to a topic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// A driver with its embedding, ready to commit.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedded {
    pub driver: CallDriver,
    pub embedding: Vec<f64>,
}

pub fn embed_driver(driver: &CallDriver, gw: &Gateway) -> Result<Embedded> {
    let embedding = gw.embed_one(&driver.text)?.values;
    Ok(Embedded {
        driver: driver.clone(),
        embedding,
    })
}

/// Closest centroid and its similarity; ties go to the smaller cluster id.
pub fn nearest_cluster(model: &TopicModel, embedding: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for c in &model.clusters {
        let s = cosine(&c.centroid, embedding);
        best = match best {
            Some((id, b)) if b > s || (b == s && id < c.id) => Some((id, b)),
            _ => Some((c.id, s)),
        };
    }
    best
}

/// Applies one embedded driver to the model and counters.
pub fn commit(
    e: Embedded,
    model: &mut TopicModel,
    state: &mut TrendState,
    cfg: &StreamConfig,
) -> Result<AssignResult> {
    let id = e.driver.transcript_id.clone();
    if model.drivers.contains_key(&id) {
        return Err(Error::DuplicateId(id));
    }
    if e.embedding.len() != model.embed_dim {
        return Err(Error::DimensionMismatch {
            expected: model.embed_dim,
            got: e.embedding.len(),
        });
    }
    let result = match nearest_cluster(model, &e.embedding) {
        Some((cid, sim)) if sim >= cfg.tau_assign => {
            let c = model.clusters.iter_mut().find(|c| c.id == cid).expect("cluster exists");
            c.absorb(&id, &e.embedding);
            model.drivers.insert(id.clone(), e.driver.text);
            AssignResult {
                driver_id: id,
                target: Target::Cluster { id: cid },
                similarity: sim,
                label: Some(c.label.clone()),
            }
        }
        _ => {
            model.drivers.insert(id.clone(), e.driver.text);
            model.outlier_pool.push(id.clone());
            model.outlier_embeddings.insert(id.clone(), e.embedding);
            match_subcluster(&id, model, cfg)
        }
    };
    model.version += 1;
    state.observe(result.target);
    Ok(result)
}

/// Embeds and commits one driver.
pub fn classify(
    driver: &CallDriver,
    model: &mut TopicModel,
    state: &mut TrendState,
    gw: &Gateway,
    cfg: &StreamConfig,
) -> Result<AssignResult> {
    cfg.validate()?;
    if model.clusters.is_empty() {
        return Err(Error::Validation("model has no clusters to classify against".into()));
    }
    let e = embed_driver(driver, gw)?;
    commit(e, model, state, cfg)
}

fn subcluster_medoid(members: &[String], embeddings: &BTreeMap<String, Vec<f64>>) -> String {
    let vecs: Vec<&Vec<f64>> = members.iter().filter_map(|m| embeddings.get(m)).collect();
    if vecs.len() != members.len() {
        return members[0].clone();
    }
    let sims = similarity_matrix(&vecs);
    let idx: Vec<usize> = (0..members.len()).collect();
    members[medoid(&idx, &sims)].clone()
}

/// Places a driver already in the outlier pool into the closest sub-cluster,
/// or a new singleton one.
pub fn match_subcluster(driver_id: &str, model: &mut TopicModel, cfg: &StreamConfig) -> AssignResult {
    let emb = model.outlier_embeddings.get(driver_id).cloned().unwrap_or_default();
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in model.outlier_subclusters.iter().enumerate() {
        let Some(m) = model.outlier_embeddings.get(&s.medoid) else { continue };
        let sim = cosine(m, &emb);
        if best.map_or(true, |(_, b)| sim > b) {
            best = Some((i, sim));
        }
    }
    match best {
        Some((i, sim)) if sim >= cfg.tau_sub => {
            let s = &mut model.outlier_subclusters[i];
            s.member_driver_ids.push(driver_id.to_string());
            s.medoid = subcluster_medoid(&s.member_driver_ids, &model.outlier_embeddings);
            AssignResult {
                driver_id: driver_id.to_string(),
                target: Target::OutlierSubcluster { id: s.id },
                similarity: sim,
                label: None,
            }
        }
        _ => {
            let id = next_subcluster_id(model);
            model.outlier_subclusters.push(SubCluster {
                id,
                member_driver_ids: vec![driver_id.to_string()],
                medoid: driver_id.to_string(),
            });
            AssignResult {
                driver_id: driver_id.to_string(),
                target: Target::OutlierSingleton { id },
                similarity: best.map_or(0.0, |(_, s)| s),
                label: None,
            }
        }
    }
}

fn next_subcluster_id(model: &TopicModel) -> usize {
    model.outlier_subclusters.iter().map(|s| s.id + 1).max().unwrap_or(0)
}

/// Groups pool drivers that are not yet in a sub-cluster. Existing
/// sub-clusters are left untouched; free drivers that form no community
/// become singletons. Returns the sub-clusters created.
pub fn recluster_outliers(model: &mut TopicModel, gw: &Gateway, cfg: &StreamConfig) -> Result<Vec<SubCluster>> {
    cfg.validate()?;
    if model.outlier_pool.is_empty() {
        return Ok(Vec::new());
    }
    let missing: Vec<String> = model
        .outlier_pool
        .iter()
        .filter(|id| !model.outlier_embeddings.contains_key(*id))
        .cloned()
        .collect();
    if !missing.is_empty() {
        let texts: Vec<String> = missing.iter().map(|id| model.drivers[id].clone()).collect();
        for (id, e) in missing.into_iter().zip(gw.embed(&texts)?) {
            model.outlier_embeddings.insert(id, e.values);
        }
    }
    let pool = model.outlier_pool.clone();
    let placed: BTreeSet<&String> = model
        .outlier_subclusters
        .iter()
        .flat_map(|s| &s.member_driver_ids)
        .collect();
    let mut taken: Vec<bool> = pool.iter().map(|id| placed.contains(id)).collect();
    let vecs: Vec<&Vec<f64>> = pool.iter().map(|id| &model.outlier_embeddings[id]).collect();
    let sims = similarity_matrix(&vecs);
    let mut groups = greedy_communities(&sims, cfg.greedy_threshold, cfg.min_community, &mut taken);
    groups.extend((0..pool.len()).filter(|&i| !taken[i]).map(|i| vec![i]));

    let mut created = Vec::new();
    let mut next = next_subcluster_id(model);
    for g in groups {
        created.push(SubCluster {
            id: next,
            member_driver_ids: g.iter().map(|&i| pool[i].clone()).collect(),
            medoid: pool[medoid(&g, &sims)].clone(),
        });
        next += 1;
    }
    if !created.is_empty() {
        model.outlier_subclusters.extend(created.iter().cloned());
        model.version += 1;
    }
    Ok(created)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendKind {
    Emerging,
    PromotionCandidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendEvent {
    pub kind: TrendKind,
    /// `cluster:<id>` or `sub:<id>`.
    pub target: String,
    pub window_start: DateTime<Utc>,
    pub window_count: u64,
    pub previous_count: u64,
}

/// Windowed counts per assignment target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrendState {
    pub window_secs: u64,
    pub window_start: DateTime<Utc>,
    pub ring_len: usize,
    pub current: BTreeMap<String, u64>,
    /// Closed windows per target, oldest first, at most `ring_len`.
    pub history: BTreeMap<String, VecDeque<u64>>,
    pub processed_in_window: u64,
    /// Sub-clusters already reported as promotion candidates.
    pub promoted: BTreeSet<String>,
    pub events: Vec<TrendEvent>,
}

pub fn is_emerging(prev: u64, now: u64, cfg: &StreamConfig) -> bool {
    now >= cfg.emerge_min_count && (prev == 0 || now as f64 >= cfg.emerge_growth * prev as f64)
}

impl TrendState {
    pub fn new(window: Duration, start: DateTime<Utc>) -> Self {
        TrendState {
            window_secs: window.as_secs().max(1),
            window_start: start,
            ring_len: 8,
            current: BTreeMap::new(),
            history: BTreeMap::new(),
            processed_in_window: 0,
            promoted: BTreeSet::new(),
            events: Vec::new(),
        }
    }

    pub fn observe(&mut self, target: Target) {
        *self.current.entry(target.key()).or_insert(0) += 1;
        self.processed_in_window += 1;
    }

    fn window_end(&self) -> DateTime<Utc> {
        self.window_start + chrono::Duration::seconds(self.window_secs as i64)
    }

    fn previous(&self, key: &str) -> u64 {
        self.history.get(key).and_then(|h| h.back().copied()).unwrap_or(0)
    }

    fn close_window(&mut self, model: &TopicModel, cfg: &StreamConfig) -> Vec<TrendEvent> {
        let small = small_cluster_cutoff(model);
        let mut events = Vec::new();
        for (key, &count) in &self.current {
            let is_small = match key.strip_prefix("cluster:") {
                Some(id) => id
                    .parse::<usize>()
                    .ok()
                    .and_then(|id| model.cluster(id))
                    .is_some_and(|c| c.size <= small),
                None => true,
            };
            let prev = self.previous(key);
            if is_small && is_emerging(prev, count, cfg) {
                events.push(TrendEvent {
                    kind: TrendKind::Emerging,
                    target: key.clone(),
                    window_start: self.window_start,
                    window_count: count,
                    previous_count: prev,
                });
            }
        }
        for s in &model.outlier_subclusters {
            let key = Target::OutlierSubcluster { id: s.id }.key();
            if s.member_driver_ids.len() >= model.params.min_cluster_size && !self.promoted.contains(&key) {
                self.promoted.insert(key.clone());
                events.push(TrendEvent {
                    kind: TrendKind::PromotionCandidate,
                    target: key.clone(),
                    window_start: self.window_start,
                    window_count: self.current.get(&key).copied().unwrap_or(0),
                    previous_count: self.previous(&key),
                });
            }
        }
        let keys: BTreeSet<String> = self.history.keys().chain(self.current.keys()).cloned().collect();
        for key in keys {
            let count = self.current.get(&key).copied().unwrap_or(0);
            let ring = self.history.entry(key).or_default();
            ring.push_back(count);
            while ring.len() > self.ring_len {
                ring.pop_front();
            }
        }
        self.current.clear();
        self.processed_in_window = 0;
        self.window_start = self.window_end();
        events
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("state serializes");
        bytes.push(b'\n');
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&content).map_err(|e| Error::Validation(format!("trend state {}: {e}", path.display())))
    }
}

/// Clusters at or below the median cluster size count as small.
fn small_cluster_cutoff(model: &TopicModel) -> usize {
    let mut sizes: Vec<usize> = model.clusters.iter().map(|c| c.size).collect();
    if sizes.is_empty() {
        return 0;
    }
    sizes.sort_unstable();
    sizes[(sizes.len() - 1) / 2]
}

/// Closes every window that ended at or before `now` and returns the events
/// raised. Long idle gaps are skipped once the ring is full of zeros.
pub fn detect_trends(
    state: &mut TrendState,
    model: &TopicModel,
    cfg: &StreamConfig,
    now: DateTime<Utc>,
) -> Vec<TrendEvent> {
    let mut events = Vec::new();
    let mut closed = 0;
    while state.window_end() <= now {
        if closed > state.ring_len {
            let secs = (now - state.window_start).num_seconds().max(0) as u64;
            let skip = secs / state.window_secs;
            state.window_start += chrono::Duration::seconds((skip * state.window_secs) as i64);
            break;
        }
        events.extend(state.close_window(model, cfg));
        closed += 1;
    }
    state.events.extend(events.iter().cloned());
    events
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::ClusterParams;
    use crate::topics::{build_topic_model, LabelingConfig};

    fn epoch() -> DateTime<Utc> {
        DateTime::<Utc>::UNIX_EPOCH
    }

    fn themed(per: usize) -> Vec<CallDriver> {
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

    fn model() -> TopicModel {
        build_topic_model(&themed(9), &Gateway::mock(), &[ClusterParams::new(5, 1)], &LabelingConfig::default(), epoch())
            .unwrap()
            .0
    }

    fn state() -> TrendState {
        TrendState::new(Duration::from_secs(3600), epoch())
    }

    #[test]
    fn member_text_classifies_to_its_cluster() {
        let mut m = model();
        let mut st = state();
        let gw = Gateway::mock();
        for c in m.clusters.clone() {
            for (j, id) in c.member_driver_ids.iter().enumerate().take(3) {
                let text = m.drivers[id].clone();
                let d = CallDriver::new(format!("new-{}-{j}", c.id), text);
                let r = classify(&d, &mut m, &mut st, &gw, &StreamConfig::default()).unwrap();
                assert_eq!(r.target, Target::Cluster { id: c.id });
            }
        }
        m.validate().unwrap();
    }

    #[test]
    fn homogeneous_cluster_member_scores_one() {
        let drivers: Vec<CallDriver> = (0..6)
            .map(|i| CallDriver::new(format!("a{i}"), "loaner laptop request"))
            .chain((0..6).map(|i| CallDriver::new(format!("b{i}"), "password reset")))
            .collect();
        let (mut m, _) =
            build_topic_model(&drivers, &Gateway::mock(), &[ClusterParams::new(5, 1)], &LabelingConfig::default(), epoch())
                .unwrap();
        assert_eq!(m.clusters.len(), 2);
        let r = classify(&CallDriver::new("n", "Loaner laptop request!"), &mut m, &mut state(), &Gateway::mock(), &StreamConfig::default())
            .unwrap();
        assert_eq!(r.target, Target::Cluster { id: 0 });
        assert!((r.similarity - 1.0).abs() < 1e-12, "{}", r.similarity);
    }

    #[test]
    fn orthogonal_driver_goes_to_outliers() {
        let mut m = model();
        let mut st = state();
        let gw = Gateway::mock();
        let cfg = StreamConfig::default();
        let r = classify(&CallDriver::new("o1", "volcano insurance quote"), &mut m, &mut st, &gw, &cfg).unwrap();
        let Target::OutlierSingleton { id } = r.target else { panic!("{r:?}") };
        let r2 = classify(&CallDriver::new("o2", "volcano insurance quote"), &mut m, &mut st, &gw, &cfg).unwrap();
        assert_eq!(r2.target, Target::OutlierSubcluster { id });
        assert_eq!(m.outlier_subclusters.last().unwrap().member_driver_ids.len(), 2);
        let r3 = classify(&CallDriver::new("o3", "zoning permit hearing"), &mut m, &mut st, &gw, &cfg).unwrap();
        assert!(matches!(r3.target, Target::OutlierSingleton { .. }));
        assert_eq!(st.processed_in_window, 3);
        assert_eq!(st.current.values().sum::<u64>(), 3);
        m.validate().unwrap();
    }

    #[test]
    fn duplicate_driver_is_refused() {
        let mut m = model();
        let id = m.clusters[0].member_driver_ids[0].clone();
        let err = classify(&CallDriver::new(id, "x"), &mut m, &mut state(), &Gateway::mock(), &StreamConfig::default());
        assert!(matches!(err, Err(Error::DuplicateId(_))));
    }

    #[test]
    fn trend_rule_boundaries() {
        let cfg = StreamConfig::default();
        assert!(is_emerging(5, 10, &cfg));
        assert!(is_emerging(0, 10, &cfg));
        assert!(!is_emerging(10, 12, &cfg));
        assert!(!is_emerging(0, 9, &cfg));
    }

    #[test]
    fn windows_close_and_flag_small_targets() {
        let m = model();
        let cfg = StreamConfig::default();
        let mut st = state();
        for _ in 0..5 {
            st.observe(Target::OutlierSubcluster { id: 0 });
        }
        let t1 = epoch() + chrono::Duration::hours(1);
        assert!(detect_trends(&mut st, &m, &cfg, t1).is_empty());
        for _ in 0..10 {
            st.observe(Target::OutlierSubcluster { id: 0 });
        }
        let ev = detect_trends(&mut st, &m, &cfg, t1 + chrono::Duration::hours(1));
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, TrendKind::Emerging);
        assert_eq!((ev[0].previous_count, ev[0].window_count), (5, 10));
        // nothing open yet
        assert!(detect_trends(&mut st, &m, &cfg, t1 + chrono::Duration::minutes(90)).is_empty());
        // a long gap does not loop forever
        detect_trends(&mut st, &m, &cfg, epoch() + chrono::Duration::days(3650));
        assert!(st.window_end() > epoch() + chrono::Duration::days(3650));
    }

    fn pool_model(texts: &[&str]) -> TopicModel {
        let mut m = model();
        let gw = Gateway::mock();
        for (i, t) in texts.iter().enumerate() {
            let id = format!("p{i:02}");
            m.drivers.insert(id.clone(), t.to_string());
            m.outlier_embeddings.insert(id.clone(), gw.embed_one(t).unwrap().values);
            m.outlier_pool.push(id);
        }
        m
    }

    #[test]
    fn recluster_three_tight_groups() {
        let groups = [
            ["printer jam", "printer jam", "printer jam tray", "jam printer"],
            ["invoice copy", "invoice copy", "copy invoice", "invoice copy"],
            ["badge access", "access badge", "badge access", "badge access"],
        ];
        let texts: Vec<&str> = groups.iter().flatten().copied().collect();
        let mut m = pool_model(&texts);
        let subs = recluster_outliers(&mut m, &Gateway::mock(), &StreamConfig::default()).unwrap();
        let mut got: Vec<Vec<String>> = subs.iter().map(|s| s.member_driver_ids.clone()).collect();
        got.sort();
        let want: Vec<Vec<String>> = (0..3)
            .map(|g| (0..4).map(|j| format!("p{:02}", g * 4 + j)).collect())
            .collect();
        assert_eq!(got, want);
        m.validate().unwrap();
    }

    #[test]
    fn recluster_keeps_existing_subclusters() {
        let mut m = pool_model(&["printer jam", "printer jam", "printer jam", "badge access"]);
        m.outlier_subclusters.push(SubCluster {
            id: 0,
            member_driver_ids: vec!["p00".into()],
            medoid: "p00".into(),
        });
        let subs = recluster_outliers(&mut m, &Gateway::mock(), &StreamConfig::default()).unwrap();
        assert_eq!(subs[0].member_driver_ids, vec!["p01", "p02"]);
        assert_eq!(subs[1].member_driver_ids, vec!["p03"]);
        assert_eq!(m.outlier_subclusters[0].member_driver_ids, vec!["p00"]);
        m.validate().unwrap();
        // empty pool is a no-op
        let mut empty = model();
        empty.outlier_pool.clear();
        empty.outlier_embeddings.clear();
        assert!(recluster_outliers(&mut empty, &Gateway::mock(), &StreamConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn state_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("state.json");
        let mut st = state();
        st.observe(Target::Cluster { id: 1 });
        st.save(&p).unwrap();
        assert_eq!(TrendState::load(&p).unwrap(), st);
    }
}
