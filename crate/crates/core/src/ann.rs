//! Inverted-file approximate nearest neighbor index over cosine similarity.
//!
//! A k-means coarse quantizer splits the (L2-normalized) points into
//! partitions; a query scans only the `probes` partitions whose centroids
//! are closest. With `probes == num_partitions` the search is exhaustive and
//! agrees exactly with [`brute_force_topk`].

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aux_embed::{AuxEmbedding, Space};
use crate::error::{Error, Result};
use crate::kmeans::{self, KMeansOptions};
use crate::util::{dot, normalized, squared_distance};

const FORMAT: &str = "docembed-ivf";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub num_partitions: usize,
    pub probes: usize,
    pub metric: Metric,
    pub seed: u64,
    /// Lloyd iterations for the coarse quantizer.
    pub iterations: usize,
    /// Each point is stored in its `spill` nearest partitions (capped at the partition count).
    pub spill: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            num_partitions: 16,
            probes: 4,
            metric: Metric::Cosine,
            seed: 0,
            iterations: 20,
            spill: 3,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_partitions == 0 || self.probes == 0 {
            return Err(Error::Config("num_partitions and probes must be positive".into()));
        }
        if self.spill == 0 {
            return Err(Error::Config("spill must be at least 1".into()));
        }
        if self.probes > self.num_partitions {
            return Err(Error::Config(format!(
                "probes ({}) exceeds num_partitions ({})",
                self.probes, self.num_partitions
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub doc_id: String,
    pub score: f64,
}

/// Descending score, then ascending id.
fn rank_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

fn top_k(mut candidates: Vec<Neighbor>, k: usize) -> Vec<Neighbor> {
    candidates.sort_by(rank_order);
    candidates.truncate(k);
    candidates
}

/// Exact top-k by cosine similarity. Zero vectors are skipped.
pub fn brute_force_topk<'a>(
    points: impl IntoIterator<Item = (&'a str, &'a [f64])>,
    query: &[f64],
    k: usize,
    exclude_id: Option<&str>,
) -> Vec<Neighbor> {
    let Some(q) = normalized(query) else {
        return Vec::new();
    };
    let candidates = points
        .into_iter()
        .filter(|(id, _)| Some(*id) != exclude_id)
        .filter_map(|(id, v)| {
            normalized(v).map(|v| Neighbor {
                doc_id: id.to_string(),
                score: dot(&q, &v),
            })
        })
        .collect();
    top_k(candidates, k)
}

#[derive(Debug, Clone)]
pub struct Index {
    config: IndexConfig,
    space: Option<Space>,
    dim: usize,
    centroids: Vec<Vec<f64>>,
    partitions: Vec<Vec<usize>>,
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl Index {
    /// Builds the index. All embeddings must share one space and dimension.
    pub fn build(embeddings: &[AuxEmbedding], config: IndexConfig) -> Result<Index> {
        let space = embeddings.first().map(|e| e.space);
        if embeddings.iter().any(|e| Some(e.space) != space) {
            return Err(Error::invalid("index embeddings come from more than one space"));
        }
        let points: Vec<(String, Vec<f64>)> = embeddings
            .iter()
            .map(|e| (e.doc_id.clone(), e.vector.clone()))
            .collect();
        let mut index = Index::build_points(points, config)?;
        index.space = space;
        Ok(index)
    }

    pub fn build_points(points: Vec<(String, Vec<f64>)>, config: IndexConfig) -> Result<Index> {
        config.validate()?;
        let mut ids = Vec::with_capacity(points.len());
        let mut vectors = Vec::with_capacity(points.len());
        for (id, v) in points {
            match normalized(&v) {
                Some(v) => {
                    ids.push(id);
                    vectors.push(v);
                }
                None => log::debug!("skipping zero vector for {id}"),
            }
        }
        if vectors.len() < config.num_partitions {
            return Err(Error::invalid(format!(
                "{} points cannot fill {} partitions; use a smaller num_partitions",
                vectors.len(),
                config.num_partitions
            )));
        }
        let dim = vectors[0].len();
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::invalid("index embeddings differ in dimension"));
        }
        let fit = kmeans::fit(
            &vectors,
            config.num_partitions,
            &KMeansOptions {
                max_iter: config.iterations,
                restarts: 1,
                seed: config.seed,
                stop_on_convergence: true,
            },
        )?;
        let mut index = Index {
            partitions: vec![Vec::new(); config.num_partitions],
            config,
            space: None,
            dim,
            centroids: fit.centroids,
            ids,
            vectors,
        };
        for i in 0..index.vectors.len() {
            for p in index.probed_partitions(&index.vectors[i], index.config.spill.min(index.config.num_partitions)) {
                index.partitions[p].push(i);
            }
        }
        Ok(index)
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn space(&self) -> Option<Space> {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn partitions(&self) -> &[Vec<usize>] {
        &self.partitions
    }

    /// Stored (normalized) points in insertion order.
    pub fn points(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.vectors.iter().map(Vec::as_slice))
    }

    pub fn vector_of(&self, id: &str) -> Option<&[f64]> {
        self.ids
            .iter()
            .position(|x| x == id)
            .map(|i| self.vectors[i].as_slice())
    }

    /// Partitions ordered by centroid proximity, truncated to `probes`.
    pub fn probed_partitions(&self, query: &[f64], probes: usize) -> Vec<usize> {
        let mut order: Vec<(usize, f64)> = self
            .centroids
            .iter()
            .enumerate()
            .map(|(i, c)| (i, squared_distance(query, c)))
            .collect();
        order.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
        order.into_iter().take(probes).map(|(i, _)| i).collect()
    }

    pub fn query_topk(&self, query: &[f64], k: usize, exclude_id: Option<&str>) -> Result<Vec<Neighbor>> {
        self.query_with_probes(query, k, self.config.probes, exclude_id)
    }

    pub fn query_with_probes(
        &self,
        query: &[f64],
        k: usize,
        probes: usize,
        exclude_id: Option<&str>,
    ) -> Result<Vec<Neighbor>> {
        if self.is_empty() {
            return Ok(Vec::new());
        }
        if query.len() != self.dim {
            return Err(Error::invalid(format!(
                "query dimension {} does not match index dimension {}",
                query.len(),
                self.dim
            )));
        }
        let Some(q) = normalized(query) else {
            return Ok(Vec::new());
        };
        let mut candidates = Vec::new();
        let mut seen = vec![false; self.ids.len()];
        for p in self.probed_partitions(&q, probes.min(self.partitions.len())) {
            for &i in &self.partitions[p] {
                if std::mem::replace(&mut seen[i], true) || Some(self.ids[i].as_str()) == exclude_id {
                    continue;
                }
                candidates.push(Neighbor {
                    doc_id: self.ids[i].clone(),
                    score: dot(&q, &self.vectors[i]),
                });
            }
        }
        Ok(top_k(candidates, k))
    }

    /// Header line followed by one JSON record per centroid and per point.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            dimension: self.dim,
            num_partitions: self.config.num_partitions,
            seed: self.config.seed,
            probes: self.config.probes,
            iterations: self.config.iterations,
            spill: self.config.spill,
            space: self.space,
            points: self.ids.len(),
        };
        write_record(&mut w, path, &header)?;
        for c in &self.centroids {
            write_record(&mut w, path, &CentroidRecord { centroid: c.clone() })?;
        }
        let mut member_of = vec![Vec::new(); self.ids.len()];
        for (p, members) in self.partitions.iter().enumerate() {
            for &i in members {
                member_of[i].push(p);
            }
        }
        for (i, partitions) in member_of.into_iter().enumerate() {
            let record = PointRecord {
                id: self.ids[i].clone(),
                partitions,
                vector: self.vectors[i].clone(),
            };
            write_record(&mut w, path, &record)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Index> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let ctx = || path.display().to_string();
        let mut next_line = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::parse(ctx(), "truncated index file"))?
                .map_err(|e| Error::io(path, e))
        };
        let header: Header = serde_json::from_str(&next_line()?).map_err(|e| Error::parse(ctx(), e))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(Error::parse(ctx(), "not a docembed-ivf v1 index"));
        }
        let mut centroids = Vec::with_capacity(header.num_partitions);
        for _ in 0..header.num_partitions {
            let c: CentroidRecord = serde_json::from_str(&next_line()?).map_err(|e| Error::parse(ctx(), e))?;
            centroids.push(c.centroid);
        }
        let mut partitions = vec![Vec::new(); header.num_partitions];
        let mut ids = Vec::with_capacity(header.points);
        let mut vectors = Vec::with_capacity(header.points);
        for _ in 0..header.points {
            let p: PointRecord = serde_json::from_str(&next_line()?).map_err(|e| Error::parse(ctx(), e))?;
            if p.partitions.iter().any(|&q| q >= header.num_partitions) || p.vector.len() != header.dimension {
                return Err(Error::parse(ctx(), format!("bad point record {}", p.id)));
            }
            for &q in &p.partitions {
                partitions[q].push(ids.len());
            }
            ids.push(p.id);
            vectors.push(p.vector);
        }
        Ok(Index {
            config: IndexConfig {
                num_partitions: header.num_partitions,
                probes: header.probes,
                metric: Metric::Cosine,
                seed: header.seed,
                iterations: header.iterations,
                spill: header.spill,
            },
            space: header.space,
            dim: header.dimension,
            centroids,
            partitions,
            ids,
            vectors,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dimension: usize,
    num_partitions: usize,
    seed: u64,
    probes: usize,
    iterations: usize,
    spill: usize,
    space: Option<Space>,
    points: usize,
}

#[derive(Serialize, Deserialize)]
struct CentroidRecord {
    centroid: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PointRecord {
    id: String,
    partitions: Vec<usize>,
    vector: Vec<f64>,
}

fn write_record<T: Serialize>(w: &mut impl Write, path: &Path, record: &T) -> Result<()> {
    let line = serde_json::to_string(record).map_err(|e| Error::parse("index record", e))?;
    writeln!(w, "{line}").map_err(|e| Error::io(path, e))
}
