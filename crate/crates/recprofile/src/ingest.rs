//! File ingestion: interaction/attribute/metadata parsers, embedding-table
//! I/O, a deterministic stand-in text embedder, and a planted-cluster
//! synthetic dataset generator.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::data::{Dataset, DatasetBuilder};
use crate::error::{Error, Result};
use crate::math::{l2_norm, scale, Mat};
use crate::seed::SeedPolicy;

/// Interaction file layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InteractionFormat {
    /// One interaction per line, fields split on a single-character delimiter.
    Delimited(char),
    /// MovieLens .dat style: fields split on "::".
    MovieLensDat,
}

fn read_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(f).lines().enumerate().map(|(i, l)| (i + 1, l)))
}

/// Parses interaction rows `user, item[, weight[, timestamp]]` into the
/// builder. Duplicate (user, item) pairs collapse keeping the max weight.
/// Returns the number of rows read.
pub fn parse_interactions(
    path: &Path,
    format: InteractionFormat,
    builder: &mut DatasetBuilder,
) -> Result<usize> {
    let mut rows = 0;
    for (lineno, line) in read_lines(path)? {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = match format {
            InteractionFormat::Delimited(sep) => line.split(sep).collect(),
            InteractionFormat::MovieLensDat => line.split("::").collect(),
        };
        if fields.len() < 2 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected at least user and item fields, got {:?}", line),
            ));
        }
        let weight = match fields.get(2) {
            Some(w) => w
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::parse(path, lineno, format!("bad weight {:?}", w)))?,
            None => 1.0,
        };
        let timestamp = match fields.get(3) {
            Some(t) => t
                .trim()
                .parse::<i64>()
                .map_err(|_| Error::parse(path, lineno, format!("bad timestamp {:?}", t)))?,
            None => 0,
        };
        builder
            .add_interaction(fields[0].trim(), fields[1].trim(), weight, timestamp)
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        rows += 1;
    }
    Ok(rows)
}

/// Parses tab-delimited `user, attribute_name, value` rows. Conflicting
/// duplicate labels for the same (user, attribute) are an error.
pub fn parse_attributes(path: &Path, builder: &mut DatasetBuilder) -> Result<usize> {
    let mut rows = 0;
    for (lineno, line) in read_lines(path)? {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 3 tab-separated fields, got {}", fields.len()),
            ));
        }
        builder
            .set_attribute(fields[0].trim(), fields[1].trim(), fields[2].trim())
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        rows += 1;
    }
    Ok(rows)
}

/// Parses tab-delimited `item, title, category` rows; the last row for an
/// item wins.
pub fn parse_item_meta(path: &Path, builder: &mut DatasetBuilder) -> Result<usize> {
    let mut rows = 0;
    for (lineno, line) in read_lines(path)? {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 3 tab-separated fields, got {}", fields.len()),
            ));
        }
        builder.set_item_meta(fields[0].trim(), fields[1], fields[2]);
        rows += 1;
    }
    Ok(rows)
}

/// Drops items whose total interaction count is `<= min_count`, along with
/// their interactions; users, attributes, and remaining metadata carry over.
pub fn filter_rare_items(dataset: &Dataset, min_count: usize) -> Dataset {
    let mut counts = vec![0usize; dataset.n_items()];
    for it in dataset.interactions() {
        counts[it.item as usize] += 1;
    }
    let mut b = DatasetBuilder::new();
    for u in 0..dataset.n_users() as u32 {
        b.intern_user(dataset.user_id(u));
    }
    for it in dataset.interactions() {
        if counts[it.item as usize] > min_count {
            b.add_interaction(
                dataset.user_id(it.user),
                dataset.item_id(it.item),
                it.weight,
                it.timestamp,
            )
            .expect("weights already validated");
        }
    }
    for i in 0..dataset.n_items() as u32 {
        if counts[i as usize] > min_count {
            if let Some(m) = dataset.item_meta(i) {
                b.set_item_meta(dataset.item_id(i), &m.title, &m.category);
            }
        }
    }
    for col in dataset.attributes() {
        for u in 0..dataset.n_users() as u32 {
            if let Some(code) = col.value(u) {
                b.set_attribute(dataset.user_id(u), col.name(), col.label_of(code))
                    .expect("labels already consistent");
            }
        }
    }
    b.build()
}

/// Persists a dataset as a directory of the same tab-delimited files the
/// parsers accept (interactions.tsv, attributes.tsv, items.tsv) plus the
/// user and item vocabularies in index order, so reloading reproduces the
/// same internal numbering even for ids that never interact.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let open = |name: &str| -> Result<(std::path::PathBuf, BufWriter<File>)> {
        let path = dir.join(name);
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok((path, BufWriter::new(f)))
    };
    let (path, mut w) = open("users.txt")?;
    for u in 0..dataset.n_users() as u32 {
        writeln!(w, "{}", dataset.user_id(u)).map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let (path, mut w) = open("catalog.txt")?;
    for i in 0..dataset.n_items() as u32 {
        writeln!(w, "{}", dataset.item_id(i)).map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let (path, mut w) = open("interactions.tsv")?;
    for it in dataset.interactions() {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            dataset.user_id(it.user),
            dataset.item_id(it.item),
            it.weight,
            it.timestamp
        )
        .map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let (path, mut w) = open("attributes.tsv")?;
    for col in dataset.attributes() {
        for u in 0..dataset.n_users() as u32 {
            if let Some(code) = col.value(u) {
                writeln!(
                    w,
                    "{}\t{}\t{}",
                    dataset.user_id(u),
                    col.name(),
                    col.label_of(code)
                )
                .map_err(|e| Error::io(&path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let (path, mut w) = open("items.tsv")?;
    for i in 0..dataset.n_items() as u32 {
        if let Some(m) = dataset.item_meta(i) {
            writeln!(w, "{}\t{}\t{}", dataset.item_id(i), m.title, m.category)
                .map_err(|e| Error::io(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Loads a dataset directory written by [`save_dataset`]. The vocabulary,
/// attribute, and item files are optional; the interaction file is not.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mut builder = DatasetBuilder::new();
    for (vocab, intern) in [
        ("users.txt", true),
        ("catalog.txt", false),
    ] {
        let path = dir.join(vocab);
        if !path.is_file() {
            continue;
        }
        for (_, line) in read_lines(&path)? {
            let line = line.map_err(|e| Error::io(&path, e))?;
            let id = line.trim_end_matches(['\r', '\n']);
            if id.is_empty() {
                continue;
            }
            if intern {
                builder.intern_user(id);
            } else {
                builder.intern_item(id);
            }
        }
    }
    parse_interactions(
        &dir.join("interactions.tsv"),
        InteractionFormat::Delimited('\t'),
        &mut builder,
    )?;
    let attrs = dir.join("attributes.tsv");
    if attrs.is_file() {
        parse_attributes(&attrs, &mut builder)?;
    }
    let items = dir.join("items.tsv");
    if items.is_file() {
        parse_item_meta(&items, &mut builder)?;
    }
    Ok(builder.build())
}

/// Fixed-dimension vectors keyed by external item id, with insertion order
/// preserved for serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    rows: Mat,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            ids: Vec::new(),
            index: HashMap::new(),
            rows: Mat::zeros(0, dim),
        }
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

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn insert(&mut self, id: &str, vec: Vec<f64>) -> Result<()> {
        if vec.len() != self.dim {
            return Err(Error::invalid(format!(
                "vector for {id} has {} components, table dimension is {}",
                vec.len(),
                self.dim
            )));
        }
        if let Some(bad) = vec.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value {bad} for {id}")));
        }
        if self.index.contains_key(id) {
            return Err(Error::invalid(format!("duplicate embedding id {id}")));
        }
        self.index.insert(id.to_string(), self.ids.len());
        self.ids.push(id.to_string());
        let mut grown = Mat::zeros(self.ids.len(), self.dim);
        grown.data_mut()[..self.rows.data().len()].copy_from_slice(self.rows.data());
        grown.row_mut(self.ids.len() - 1).copy_from_slice(&vec);
        self.rows = grown;
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&r| self.rows.row(r))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .enumerate()
            .map(|(r, id)| (id.as_str(), self.rows.row(r)))
    }

    /// Builds a table from rows already in final order, avoiding the per-insert
    /// reallocation of [`insert`].
    pub fn from_rows(dim: usize, entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut rows = Mat::zeros(entries.len(), dim);
        let mut ids = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        for (r, (id, v)) in entries.into_iter().enumerate() {
            if v.len() != dim {
                return Err(Error::invalid(format!(
                    "vector for {id} has {} components, table dimension is {dim}",
                    v.len()
                )));
            }
            if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("non-finite value {bad} for {id}")));
            }
            if index.insert(id.clone(), r).is_some() {
                return Err(Error::invalid(format!("duplicate embedding id {id}")));
            }
            rows.row_mut(r).copy_from_slice(&v);
            ids.push(id);
        }
        Ok(EmbeddingTable {
            dim,
            ids,
            index,
            rows,
        })
    }
}

/// Loads the text format: header `count dim`, then `count` rows
/// `item_id v1 ... v_dim`, space-delimited decimal.
pub fn load_embedding_table(path: &Path) -> Result<EmbeddingTable> {
    let mut lines = read_lines(path)?;
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing header"))?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 2 {
        return Err(Error::parse(path, 1, "header must be \"count dim\""));
    }
    let count: usize = parts[0]
        .parse()
        .map_err(|_| Error::parse(path, 1, format!("bad count {:?}", parts[0])))?;
    let dim: usize = parts[1]
        .parse()
        .map_err(|_| Error::parse(path, 1, format!("bad dim {:?}", parts[1])))?;
    let mut entries = Vec::with_capacity(count);
    for (lineno, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let id = fields
            .next()
            .ok_or_else(|| Error::parse(path, lineno, "empty row"))?;
        let vals: Vec<f64> = fields
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::parse(path, lineno, format!("bad value {v:?}")))
            })
            .collect::<Result<_>>()?;
        if vals.len() != dim {
            return Err(Error::parse(
                path,
                lineno,
                format!("row for {id} has {} values, expected {dim}", vals.len()),
            ));
        }
        if let Some(bad) = vals.iter().find(|v| !v.is_finite()) {
            return Err(Error::parse(path, lineno, format!("non-finite value {bad}")));
        }
        entries.push((id.to_string(), vals));
    }
    if entries.len() != count {
        return Err(Error::parse(
            path,
            1,
            format!("header declares {count} rows, file has {}", entries.len()),
        ));
    }
    EmbeddingTable::from_rows(dim, entries)
}

/// Writes the same text format [`load_embedding_table`] reads. Values use
/// shortest round-tripping decimal, so load ∘ write is the identity.
pub fn write_embedding_table(path: &Path, table: &EmbeddingTable) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "{} {}", table.len(), table.dim())?;
        for (id, vec) in table.iter() {
            write!(w, "{id}")?;
            for v in vec {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

/// Deterministic stand-in for a pre-trained text encoder: each item title is
/// lowercased, decomposed into character 3-grams (whole title when shorter),
/// each gram hashed to a coordinate, and the bag-of-grams count vector is
/// L2-normalized. Empty titles produce a zero vector.
pub fn hash_embed_titles(dataset: &Dataset, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    if dim < 8 {
        return Err(Error::invalid(format!("embedding dim must be >= 8, got {dim}")));
    }
    let policy = SeedPolicy::new(seed);
    let mut entries = Vec::new();
    for i in 0..dataset.n_items() as u32 {
        let title = dataset.item_meta(i).map(|m| m.title.as_str()).unwrap_or("");
        entries.push((
            dataset.item_id(i).to_string(),
            hash_embed_one(title, dim, &policy),
        ));
        if title.is_empty() {
            eprintln!(
                "warning: item {} has an empty title; using a zero vector",
                dataset.item_id(i)
            );
        }
    }
    EmbeddingTable::from_rows(dim, entries)
}

fn hash_embed_one(title: &str, dim: usize, policy: &SeedPolicy) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    let lower = title.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    if chars.is_empty() {
        return v;
    }
    let mut bump = |gram: &str| {
        let slot = (policy.derive(gram) % dim as u64) as usize;
        v[slot] += 1.0;
    };
    if chars.len() < 3 {
        bump(&lower);
    } else {
        for w in chars.windows(3) {
            bump(&w.iter().collect::<String>());
        }
    }
    let norm = l2_norm(&v);
    if norm > 0.0 {
        scale(&mut v, 1.0 / norm);
    }
    v
}

/// Parameters for the planted-cluster generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub attribute_name: String,
    /// Probability that an interaction stays inside the user's own cluster.
    pub cluster_affinity: f64,
    pub interactions_per_user: usize,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_items == 0 || self.n_clusters == 0 {
            return Err(Error::invalid("synthetic sizes must be positive"));
        }
        if self.n_items < self.n_clusters {
            return Err(Error::invalid(format!(
                "need at least one item per cluster: {} items, {} clusters",
                self.n_items, self.n_clusters
            )));
        }
        if self.interactions_per_user > self.n_items {
            return Err(Error::invalid(
                "interactions_per_user cannot exceed n_items (interactions are distinct)",
            ));
        }
        let floor = 1.0 / self.n_clusters as f64;
        if !(self.cluster_affinity > 0.5 && self.cluster_affinity <= 1.0)
            || self.cluster_affinity <= floor
        {
            return Err(Error::invalid(format!(
                "cluster_affinity must lie in (0.5, 1] and exceed 1/n_clusters, got {}",
                self.cluster_affinity
            )));
        }
        Ok(())
    }
}

/// A generated dataset with its planted ground truth.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    /// Cluster of each user index; equals the planted attribute label.
    pub user_cluster: Vec<u32>,
    /// Cluster of each item index.
    pub item_cluster: Vec<u32>,
}

/// Generates a dataset where user u belongs to cluster `u mod k`, draws each
/// of its interactions from its own cluster's items with probability
/// `cluster_affinity` (uniformly elsewhere otherwise), and declares the
/// cluster id as its attribute label. Item titles and categories carry a
/// cluster tag so content embeddings encode the same signal.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Synthetic> {
    spec.validate()?;
    let policy = SeedPolicy::new(seed);
    let k = spec.n_clusters;
    let item_cluster: Vec<u32> = (0..spec.n_items).map(|i| (i % k) as u32).collect();
    let mut cluster_items: Vec<Vec<u32>> = vec![Vec::new(); k];
    for (i, &c) in item_cluster.iter().enumerate() {
        cluster_items[c as usize].push(i as u32);
    }

    let mut b = DatasetBuilder::new();
    for i in 0..spec.n_items {
        let c = item_cluster[i];
        b.set_item_meta(
            &format!("i{i}"),
            &format!("item{i} tag{c} group{c}"),
            &format!("cat{c}"),
        );
    }

    let user_cluster: Vec<u32> = (0..spec.n_users).map(|u| (u % k) as u32).collect();
    let mut rng = policy.rng("synthetic.interactions");
    for u in 0..spec.n_users {
        let c = user_cluster[u] as usize;
        let uid = format!("u{u}");
        b.set_attribute(&uid, &spec.attribute_name, &user_cluster[u].to_string())?;
        let mut picked: Vec<u32> = Vec::with_capacity(spec.interactions_per_user);
        while picked.len() < spec.interactions_per_user {
            let in_cluster = rng.random::<f64>() < spec.cluster_affinity;
            let pool: &[u32] = if in_cluster || k == 1 {
                &cluster_items[c]
            } else {
                // uniform over all items outside the user's cluster, realized
                // by redrawing until the cluster differs
                let mut other = rng.random_range(0..spec.n_items as u32);
                while item_cluster[other as usize] as usize == c {
                    other = rng.random_range(0..spec.n_items as u32);
                }
                if picked.contains(&other) {
                    continue;
                }
                picked.push(other);
                continue;
            };
            let cand = pool[rng.random_range(0..pool.len())];
            if !picked.contains(&cand) {
                picked.push(cand);
            }
        }
        for (t, item) in picked.iter().enumerate() {
            b.add_interaction(&uid, &format!("i{item}"), 1.0, t as i64)?;
        }
    }
    Ok(Synthetic {
        dataset: b.build(),
        user_cluster,
        item_cluster,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_movielens_dat_row() {
        let f = write_tmp("1::1193::5::978300760\n");
        let mut b = DatasetBuilder::new();
        let n = parse_interactions(f.path(), InteractionFormat::MovieLensDat, &mut b).unwrap();
        assert_eq!(n, 1);
        let d = b.build();
        assert_eq!(d.interactions().len(), 1);
        let it = d.interactions()[0];
        assert_eq!(d.user_id(it.user), "1");
        assert_eq!(d.item_id(it.item), "1193");
        assert_eq!(it.weight, 5.0);
        assert_eq!(it.timestamp, 978300760);
    }

    #[test]
    fn empty_file_yields_empty_fragment() {
        let f = write_tmp("");
        let mut b = DatasetBuilder::new();
        assert_eq!(
            parse_interactions(f.path(), InteractionFormat::Delimited('\t'), &mut b).unwrap(),
            0
        );
        assert_eq!(b.build().interactions().len(), 0);
    }

    #[test]
    fn duplicate_rows_keep_max_weight() {
        let f = write_tmp("9\t4\t3\n9\t4\t5\n");
        let mut b = DatasetBuilder::new();
        parse_interactions(f.path(), InteractionFormat::Delimited('\t'), &mut b).unwrap();
        let d = b.build();
        assert_eq!(d.interactions().len(), 1);
        assert_eq!(d.interactions()[0].weight, 5.0);
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let f = write_tmp("1\t2\nonly_one_field\n");
        let mut b = DatasetBuilder::new();
        let err =
            parse_interactions(f.path(), InteractionFormat::Delimited('\t'), &mut b).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn attribute_rows_and_label_sets() {
        let f = write_tmp("7\tgender\tF\n8\tgender\tM\n7\tage\t25\n");
        let mut b = DatasetBuilder::new();
        parse_attributes(f.path(), &mut b).unwrap();
        let d = b.build();
        let col = d.attribute("gender").unwrap();
        let u7 = d.user_idx("7").unwrap();
        assert_eq!(col.label_of(col.value(u7).unwrap()), "F");
        assert_eq!(d.attribute("age").unwrap().label_count(), 1);
    }

    #[test]
    fn twenty_one_occupations_make_label_set_21() {
        let mut text = String::new();
        for u in 0..30 {
            text.push_str(&format!("{u}\toccupation\tocc{}\n", u % 21));
        }
        let f = write_tmp(&text);
        let mut b = DatasetBuilder::new();
        parse_attributes(f.path(), &mut b).unwrap();
        assert_eq!(b.build().attribute("occupation").unwrap().label_count(), 21);
    }

    #[test]
    fn conflicting_attribute_rows_error_with_user() {
        let f = write_tmp("7\tgender\tF\n7\tgender\tM\n");
        let mut b = DatasetBuilder::new();
        let err = parse_attributes(f.path(), &mut b).unwrap_err();
        assert!(err.to_string().contains('7'), "{err}");
    }

    #[test]
    fn embedding_table_round_trips() {
        let f = write_tmp("2 3\n5 0.25 -1.5 3\n9 0.1 0.2 0.30000000000000004\n");
        let t = load_embedding_table(f.path()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.dim(), 3);
        assert_eq!(t.get("5").unwrap(), &[0.25, -1.5, 3.0]);

        let out = tempfile::NamedTempFile::new().unwrap();
        write_embedding_table(out.path(), &t).unwrap();
        let back = load_embedding_table(out.path()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn embedding_table_preserves_768_dims() {
        let mut entries = Vec::new();
        entries.push(("a".to_string(), vec![0.5; 768]));
        let t = EmbeddingTable::from_rows(768, entries).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_embedding_table(out.path(), &t).unwrap();
        assert_eq!(load_embedding_table(out.path()).unwrap().dim(), 768);
    }

    #[test]
    fn embedding_row_arity_is_checked() {
        let f = write_tmp("1 3\n5 0.25 -1.5\n");
        let err = load_embedding_table(f.path()).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
        assert!(err.to_string().contains('5'), "{err}");
    }

    #[test]
    fn embedding_duplicate_id_rejected() {
        let f = write_tmp("2 2\n5 1 2\n5 3 4\n");
        assert!(load_embedding_table(f.path()).is_err());
    }

    fn meta_only(titles: &[(&str, &str)]) -> Dataset {
        let mut b = DatasetBuilder::new();
        for (id, title) in titles {
            b.set_item_meta(id, title, "cat");
        }
        b.build()
    }

    #[test]
    fn same_title_hashes_identically() {
        let d = meta_only(&[("a", "The Matrix"), ("b", "the matrix")]);
        let t = hash_embed_titles(&d, 64, 9).unwrap();
        assert_eq!(t.get("a").unwrap(), t.get("b").unwrap());
    }

    #[test]
    fn hashed_vectors_are_unit_norm() {
        let d = meta_only(&[("a", "abc"), ("b", "x")]);
        let t = hash_embed_titles(&d, 32, 0).unwrap();
        assert_abs_diff_eq!(l2_norm(t.get("a").unwrap()), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(l2_norm(t.get("b").unwrap()), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn hundred_random_titles_do_not_collide_at_dim_256() {
        let mut rng = SeedPolicy::new(11).rng("titles");
        let titles: Vec<String> = (0..100)
            .map(|i| {
                let body: String = (0..10)
                    .map(|_| (b'a' + rng.random_range(0..26u8)) as char)
                    .collect();
                format!("{body}{i}")
            })
            .collect();
        let rows: Vec<(&str, &str)> = titles
            .iter()
            .enumerate()
            .map(|(i, t)| (Box::leak(format!("id{i}").into_boxed_str()) as &str, t.as_str()))
            .collect();
        let d = meta_only(&rows);
        let t = hash_embed_titles(&d, 256, 5).unwrap();
        let vecs: Vec<&[f64]> = (0..100).map(|i| t.get(&format!("id{i}")).unwrap()).collect();
        for i in 0..vecs.len() {
            for j in i + 1..vecs.len() {
                assert_ne!(vecs[i], vecs[j], "titles {i} and {j} collided");
            }
        }
    }

    #[test]
    fn empty_title_yields_zero_vector() {
        let d = meta_only(&[("a", "")]);
        let t = hash_embed_titles(&d, 16, 0).unwrap();
        assert!(t.get("a").unwrap().iter().all(|&v| v == 0.0));
    }

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            n_users: 40,
            n_items: 30,
            n_clusters: 2,
            attribute_name: "cluster".into(),
            cluster_affinity: 0.9,
            interactions_per_user: 8,
        }
    }

    #[test]
    fn affinity_one_stays_in_cluster() {
        let spec = SyntheticSpec {
            cluster_affinity: 1.0,
            ..small_spec()
        };
        let s = generate_synthetic(&spec, 3).unwrap();
        for it in s.dataset.interactions() {
            assert_eq!(
                s.user_cluster[it.user as usize],
                s.item_cluster[it.item as usize]
            );
        }
    }

    #[test]
    fn planted_in_cluster_rate_matches_affinity() {
        let spec = SyntheticSpec {
            n_users: 500,
            n_items: 200,
            n_clusters: 2,
            attribute_name: "cluster".into(),
            cluster_affinity: 0.9,
            interactions_per_user: 30,
        };
        let s = generate_synthetic(&spec, 1).unwrap();
        let total = s.dataset.interactions().len() as f64;
        let in_cluster = s
            .dataset
            .interactions()
            .iter()
            .filter(|it| s.user_cluster[it.user as usize] == s.item_cluster[it.item as usize])
            .count() as f64;
        let rate = in_cluster / total;
        assert!((0.87..=0.93).contains(&rate), "in-cluster rate {rate}");
        assert_eq!(total as usize, 500 * 30);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic(&small_spec(), 17).unwrap();
        let b = generate_synthetic(&small_spec(), 17).unwrap();
        assert_eq!(a.dataset.interactions(), b.dataset.interactions());
        assert_eq!(a.user_cluster, b.user_cluster);
    }

    #[test]
    fn synthetic_attribute_matches_cluster() {
        let s = generate_synthetic(&small_spec(), 2).unwrap();
        let col = s.dataset.attribute("cluster").unwrap();
        for u in 0..s.dataset.n_users() as u32 {
            let label = col.label_of(col.value(u).unwrap());
            assert_eq!(label, s.user_cluster[u as usize].to_string());
        }
    }

    #[test]
    fn rare_item_filter_drops_singletons() {
        let mut b = DatasetBuilder::new();
        b.add_interaction("u1", "a", 1.0, 0).unwrap();
        b.add_interaction("u2", "a", 1.0, 0).unwrap();
        b.add_interaction("u1", "b", 1.0, 0).unwrap();
        let d = b.build();
        let f = filter_rare_items(&d, 1);
        assert_eq!(f.interactions().len(), 2);
        assert!(f.item_idx("b").is_none());
        assert_eq!(f.n_users(), 2);
    }

    #[test]
    fn dataset_directory_round_trips() {
        let synth = generate_synthetic(&small_spec(), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &synth.dataset).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.n_users(), synth.dataset.n_users());
        assert_eq!(back.n_items(), synth.dataset.n_items());
        assert_eq!(back.interactions(), synth.dataset.interactions());
        let a = synth.dataset.attributes();
        let b = back.attributes();
        assert_eq!(a.len(), b.len());
        for (ca, cb) in a.iter().zip(b) {
            assert_eq!(ca.name(), cb.name());
            assert_eq!(ca.labels(), cb.labels());
            for u in 0..back.n_users() as u32 {
                assert_eq!(ca.value(u), cb.value(u));
            }
        }
        for i in 0..back.n_items() as u32 {
            assert_eq!(back.item_meta(i), synth.dataset.item_meta(i));
        }
    }

    #[test]
    fn loading_a_missing_dataset_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("interactions.tsv"), "{err}");
    }
}
