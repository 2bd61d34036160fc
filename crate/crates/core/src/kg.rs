//! Quadruple storage and dataset loading.
//!
//! A [`TemporalKg`] is an immutable, deduplicated list of timestamped edges
//! together with the indices the miner and the retriever need. All splits of a
//! [`Dataset`] share one [`Vocabulary`].
//!
//! Timestamps are stored as integer steps: raw values are shifted so the
//! earliest timestamp of the dataset becomes step 0, then divided by the
//! declared time gap.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

pub type EntityId = u32;
pub type RelationId = u32;
/// Time step in units of the dataset's time gap.
pub type Time = u32;

/// Prefix of the synthetic names given to inverse relations.
pub const INVERSE_PREFIX: &str = "inv_";

/// One timestamped event edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Quadruple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
    pub t: Time,
}

impl Quadruple {
    pub const fn new(subject: EntityId, relation: RelationId, object: EntityId, t: Time) -> Self {
        Self { subject, relation, object, t }
    }

    /// Canonical edge order: time first, then subject, relation, object.
    pub fn sort_key(&self) -> (Time, EntityId, RelationId, EntityId) {
        (self.t, self.subject, self.relation, self.object)
    }
}

impl fmt::Display for Quadruple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.subject, self.relation, self.object, self.t)
    }
}

/// Bidirectional name table with dense ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Interner {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Interner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id of `name`, assigning the next free id on first sight.
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }
}

/// Entity and relation tables shared by every split of a dataset.
///
/// When inverse augmentation is on, relation `r + n` (with `n` the number of
/// original relations) is the inverse of relation `r` and is named
/// `inv_<name>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pub entities: Interner,
    pub relations: Interner,
    base_relations: u32,
    inverse: bool,
}

impl Vocabulary {
    /// Builds a vocabulary from original relation names, appending inverse
    /// relations when `inverse` is set.
    pub fn new(entities: Interner, base_relations: Interner, inverse: bool) -> Self {
        let n = base_relations.len() as u32;
        let mut relations = base_relations;
        if inverse {
            for r in 0..n {
                let name = format!("{INVERSE_PREFIX}{}", relations.name(r).unwrap_or_default());
                relations.intern(&name);
            }
            // A base name already starting with the prefix would collide.
            debug_assert_eq!(relations.len() as u32, 2 * n);
        }
        Self { entities, relations, base_relations: n, inverse }
    }

    /// Convenience constructor from name lists; used heavily in tests.
    pub fn from_names<E, R>(entities: E, relations: R, inverse: bool) -> Self
    where
        E: IntoIterator,
        E::Item: AsRef<str>,
        R: IntoIterator,
        R::Item: AsRef<str>,
    {
        let mut ents = Interner::new();
        for e in entities {
            ents.intern(e.as_ref());
        }
        let mut rels = Interner::new();
        for r in relations {
            rels.intern(r.as_ref());
        }
        Self::new(ents, rels, inverse)
    }

    pub fn has_inverse(&self) -> bool {
        self.inverse
    }

    /// Number of relations in the input data, excluding inverses.
    pub fn base_relation_count(&self) -> u32 {
        self.base_relations
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    /// Size of the relation table including inverse relations.
    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn is_inverse(&self, r: RelationId) -> bool {
        self.inverse && r >= self.base_relations && r < 2 * self.base_relations
    }

    /// The inverse partner of `r`, if augmentation is enabled.
    pub fn inverse_of(&self, r: RelationId) -> Option<RelationId> {
        if !self.inverse || r >= 2 * self.base_relations {
            None
        } else if r >= self.base_relations {
            Some(r - self.base_relations)
        } else {
            Some(r + self.base_relations)
        }
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        self.entities.name(id).unwrap_or("?")
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        self.relations.name(id).unwrap_or("?")
    }
}

/// Immutable, temporally indexed edge store.
#[derive(Debug, Clone)]
pub struct TemporalKg {
    vocab: Arc<Vocabulary>,
    edges: Vec<Quadruple>,
    index_sr: FxHashMap<(EntityId, RelationId), Vec<u32>>,
    index_so: FxHashMap<(EntityId, EntityId), Vec<u32>>,
    index_r: Vec<Vec<u32>>,
    t_max: Time,
    duplicates_dropped: usize,
}

impl TemporalKg {
    /// Builds a graph from original (non-inverse) edges. Inverse edges are
    /// added when the vocabulary has augmentation enabled. Duplicates are
    /// dropped and counted.
    pub fn from_edges(vocab: Arc<Vocabulary>, edges: impl IntoIterator<Item = Quadruple>) -> Self {
        let mut all: Vec<Quadruple> = Vec::new();
        for q in edges {
            all.push(q);
            if let Some(inv) = vocab.inverse_of(q.relation) {
                all.push(Quadruple::new(q.object, inv, q.subject, q.t));
            }
        }
        Self::from_augmented(vocab, all)
    }

    /// Builds a graph from edges that already contain any inverse edges.
    pub(crate) fn from_augmented(vocab: Arc<Vocabulary>, mut edges: Vec<Quadruple>) -> Self {
        edges.sort_unstable_by_key(Quadruple::sort_key);
        let before = edges.len();
        edges.dedup();
        let duplicates_dropped = before - edges.len();

        let mut index_sr: FxHashMap<(EntityId, RelationId), Vec<u32>> = FxHashMap::default();
        let mut index_so: FxHashMap<(EntityId, EntityId), Vec<u32>> = FxHashMap::default();
        let mut index_r = vec![Vec::new(); vocab.relation_count()];
        let mut t_max = 0;
        for (pos, q) in edges.iter().enumerate() {
            let pos = pos as u32;
            index_sr.entry((q.subject, q.relation)).or_default().push(pos);
            index_so.entry((q.subject, q.object)).or_default().push(pos);
            if let Some(slot) = index_r.get_mut(q.relation as usize) {
                slot.push(pos);
            }
            t_max = t_max.max(q.t);
        }
        Self { vocab, edges, index_sr, index_so, index_r, t_max, duplicates_dropped }
    }

    /// Graph with no edges.
    pub fn empty(vocab: Arc<Vocabulary>) -> Self {
        Self::from_augmented(vocab, Vec::new())
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    /// All edges in canonical order.
    pub fn edges(&self) -> &[Quadruple] {
        &self.edges
    }

    /// Edges whose relation is an original relation.
    pub fn base_edges(&self) -> impl Iterator<Item = &Quadruple> {
        let vocab = &self.vocab;
        self.edges.iter().filter(move |q| !vocab.is_inverse(q.relation))
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn t_max(&self) -> Time {
        self.t_max
    }

    pub fn duplicates_dropped(&self) -> usize {
        self.duplicates_dropped
    }

    pub fn contains(&self, q: &Quadruple) -> bool {
        self.positions_sr(q.subject, q.relation)
            .binary_search_by_key(&(q.t, q.object), |&p| {
                let e = &self.edges[p as usize];
                (e.t, e.object)
            })
            .is_ok()
    }

    /// Edges with this subject and relation and `window.start <= t < window.end`,
    /// ascending by time, ties by object id.
    pub fn edges_for(&self, subject: EntityId, relation: RelationId, window: Range<Time>) -> Vec<Quadruple> {
        self.edges_for_iter(subject, relation, window).copied().collect()
    }

    pub(crate) fn edges_for_iter(
        &self,
        subject: EntityId,
        relation: RelationId,
        window: Range<Time>,
    ) -> impl DoubleEndedIterator<Item = &Quadruple> + '_ {
        let positions = self.positions_sr(subject, relation);
        let slice = self.time_slice(positions, window);
        slice.iter().map(move |&p| &self.edges[p as usize])
    }

    /// Edges from `subject` to `object` with `t < before`, ascending by time.
    pub fn edges_between(&self, subject: EntityId, object: EntityId, before: Time) -> &[u32] {
        let positions = self.index_so.get(&(subject, object)).map(Vec::as_slice).unwrap_or(&[]);
        self.time_slice(positions, 0..before)
    }

    /// Edge positions carrying `relation`, ascending by time.
    pub fn positions_for_relation(&self, relation: RelationId) -> &[u32] {
        self.index_r.get(relation as usize).map(Vec::as_slice).unwrap_or(&[])
    }

    pub(crate) fn positions_sr(&self, subject: EntityId, relation: RelationId) -> &[u32] {
        self.index_sr.get(&(subject, relation)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn edge(&self, position: u32) -> &Quadruple {
        &self.edges[position as usize]
    }

    fn time_slice<'a>(&self, positions: &'a [u32], window: Range<Time>) -> &'a [u32] {
        if window.start >= window.end {
            return &[];
        }
        let lo = positions.partition_point(|&p| self.edges[p as usize].t < window.start);
        let hi = positions.partition_point(|&p| self.edges[p as usize].t < window.end);
        &positions[lo..hi.max(lo)]
    }

    /// Union of several graphs over the same vocabulary.
    pub fn union<'a>(parts: impl IntoIterator<Item = &'a TemporalKg>) -> Option<TemporalKg> {
        let mut parts = parts.into_iter().peekable();
        let vocab = parts.peek()?.vocab.clone();
        let edges = parts.flat_map(|kg| kg.edges.iter().copied()).collect();
        Some(Self::from_augmented(vocab, edges))
    }
}

/// How the first three columns of a quadruple file are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdFormat {
    /// Numeric ids when `entity2id.txt` and `relation2id.txt` exist, else names.
    #[default]
    Auto,
    /// Numeric ids resolved through the id-map files.
    Ids,
    /// Names; checked against the id maps when present, else interned in
    /// first-appearance order.
    Names,
}

/// Load-time options of a dataset directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// Declared raw-timestamp unit.
    pub time_gap: u64,
    #[serde(default)]
    pub format: IdFormat,
    /// Add an inverse edge `(o, inv_r, s, t)` for each edge.
    #[serde(default = "default_inverse")]
    pub inverse: bool,
}

fn default_inverse() -> bool {
    true
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self { time_gap: 1, format: IdFormat::Auto, inverse: true }
    }
}

/// The four public event benchmarks, in the layout their common
/// distributions use: integer timestamps in the raw unit below.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Icews14,
    Icews18,
    Gdelt,
    Yago,
}

impl Benchmark {
    pub const ALL: [Benchmark; 4] = [Benchmark::Icews14, Benchmark::Icews18, Benchmark::Gdelt, Benchmark::Yago];

    /// Directory name, e.g. `icews14`.
    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Icews14 => "icews14",
            Benchmark::Icews18 => "icews18",
            Benchmark::Gdelt => "gdelt",
            Benchmark::Yago => "yago",
        }
    }

    /// Hours per day for ICEWS, minutes per quarter hour for GDELT, years for YAGO.
    pub fn time_gap(self) -> u64 {
        match self {
            Benchmark::Icews14 | Benchmark::Icews18 => 24,
            Benchmark::Gdelt => 15,
            Benchmark::Yago => 1,
        }
    }

    pub fn spec(self) -> DatasetSpec {
        DatasetSpec { time_gap: self.time_gap(), ..DatasetSpec::default() }
    }
}

impl std::str::FromStr for Benchmark {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|b| b.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown benchmark `{s}` (expected icews14, icews18, gdelt or yago)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Valid => "valid.txt",
            Split::Test => "test.txt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub n_entities: usize,
    pub n_relations: usize,
    pub time_gap: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: expected 4 tab-separated columns, found {found}", path.display())]
    Columns { path: PathBuf, line: usize, found: usize },
    #[error("{}:{line}: unknown {kind} `{value}`", path.display())]
    UnknownId { path: PathBuf, line: usize, kind: &'static str, value: String },
    #[error("{}:{line}: invalid timestamp `{value}`", path.display())]
    BadTimestamp { path: PathBuf, line: usize, value: String },
    #[error("{}:{line}: timestamp {raw} is not a multiple of the time gap {gap} from origin {origin}", path.display())]
    NotDivisible { path: PathBuf, line: usize, raw: i64, gap: u64, origin: i64 },
    #[error("{}:{line}: malformed id map entry", path.display())]
    BadIdMap { path: PathBuf, line: usize },
    #[error("{}: ids must be dense 0..{len}", path.display())]
    SparseIdMap { path: PathBuf, len: usize },
    #[error("{}: id-form data requires entity2id.txt and relation2id.txt", dir.display())]
    MissingIdMaps { dir: PathBuf },
    #[error("time gap must be positive")]
    ZeroGap,
    #[error("time span exceeds the supported range")]
    TimeOverflow,
    #[error("train split is empty")]
    EmptyTrain,
}

/// Train/valid/test views over one shared vocabulary.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Arc<Vocabulary>,
    pub train: TemporalKg,
    pub valid: TemporalKg,
    pub test: TemporalKg,
    pub spec: DatasetSpec,
    /// Raw timestamp mapped to step 0.
    pub origin: i64,
}

impl Dataset {
    /// Assembles a dataset from in-memory splits of original edges.
    pub fn from_splits(
        vocab: Arc<Vocabulary>,
        spec: DatasetSpec,
        origin: i64,
        train: Vec<Quadruple>,
        valid: Vec<Quadruple>,
        test: Vec<Quadruple>,
    ) -> Result<Self, LoadError> {
        let train = TemporalKg::from_edges(vocab.clone(), train);
        if train.is_empty() {
            return Err(LoadError::EmptyTrain);
        }
        let valid = TemporalKg::from_edges(vocab.clone(), valid);
        let test = TemporalKg::from_edges(vocab.clone(), test);
        Ok(Self { vocab, train, valid, test, spec, origin })
    }

    pub fn split(&self, split: Split) -> &TemporalKg {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Union of the given splits.
    pub fn merged(&self, splits: &[Split]) -> TemporalKg {
        TemporalKg::union(splits.iter().map(|s| self.split(*s)))
            .unwrap_or_else(|| TemporalKg::empty(self.vocab.clone()))
    }

    pub fn stats(&self) -> DatasetStats {
        stats(self)
    }

    pub fn duplicates_dropped(&self) -> usize {
        Split::ALL.iter().map(|s| self.split(*s).duplicates_dropped()).sum()
    }
}

/// Split sizes (original edges only) and vocabulary sizes.
pub fn stats(ds: &Dataset) -> DatasetStats {
    DatasetStats {
        n_train: ds.train.base_edges().count(),
        n_valid: ds.valid.base_edges().count(),
        n_test: ds.test.base_edges().count(),
        n_entities: ds.vocab.entity_count(),
        n_relations: ds.vocab.base_relation_count() as usize,
        time_gap: ds.spec.time_gap,
    }
}

struct RawLine {
    split: Split,
    line: usize,
    cols: [String; 3],
    raw_t: i64,
}

/// Reads `train.txt`, `valid.txt` and `test.txt` (plus optional id maps) from
/// `dir`.
pub fn load_dataset(dir: &Path, spec: &DatasetSpec) -> Result<Dataset, LoadError> {
    if spec.time_gap == 0 {
        return Err(LoadError::ZeroGap);
    }
    let ent_map = dir.join("entity2id.txt");
    let rel_map = dir.join("relation2id.txt");
    let have_maps = ent_map.is_file() && rel_map.is_file();
    let format = match spec.format {
        IdFormat::Auto if have_maps => IdFormat::Ids,
        IdFormat::Auto => IdFormat::Names,
        IdFormat::Ids if !have_maps => return Err(LoadError::MissingIdMaps { dir: dir.to_owned() }),
        f => f,
    };
    let maps = if have_maps { Some((read_id_map(&ent_map)?, read_id_map(&rel_map)?)) } else { None };

    let mut raw = Vec::new();
    for split in Split::ALL {
        let path = dir.join(split.file_name());
        let text = fs::read_to_string(&path).map_err(|source| LoadError::Io { path: path.clone(), source })?;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(LoadError::Columns { path, line: line_no, found: cols.len() });
            }
            let raw_t: i64 = cols[3].trim().parse().map_err(|_| LoadError::BadTimestamp {
                path: path.clone(),
                line: line_no,
                value: cols[3].to_owned(),
            })?;
            raw.push(RawLine {
                split,
                line: line_no,
                cols: [cols[0].to_owned(), cols[1].to_owned(), cols[2].to_owned()],
                raw_t,
            });
        }
    }

    let origin = raw.iter().map(|l| l.raw_t).min().unwrap_or(0);
    let gap = spec.time_gap as i64;

    let (mut entities, mut relations, fixed) = match maps {
        Some((e, r)) => (e, r, true),
        None => (Interner::new(), Interner::new(), false),
    };

    let mut splits: [Vec<Quadruple>; 3] = Default::default();
    for l in &raw {
        let path = || dir.join(l.split.file_name());
        let shifted = l.raw_t - origin;
        if shifted % gap != 0 {
            return Err(LoadError::NotDivisible {
                path: path(),
                line: l.line,
                raw: l.raw_t,
                gap: spec.time_gap,
                origin,
            });
        }
        let t = Time::try_from(shifted / gap).map_err(|_| LoadError::TimeOverflow)?;
        let resolve = |table: &mut Interner, value: &str, kind: &'static str| -> Result<u32, LoadError> {
            let unknown = || LoadError::UnknownId { path: path(), line: l.line, kind, value: value.to_owned() };
            match format {
                IdFormat::Ids => {
                    let id: u32 = value.trim().parse().map_err(|_| unknown())?;
                    if (id as usize) < table.len() {
                        Ok(id)
                    } else {
                        Err(unknown())
                    }
                }
                _ if fixed => table.id(value).ok_or_else(unknown),
                _ => Ok(table.intern(value)),
            }
        };
        let s = resolve(&mut entities, &l.cols[0], "entity")?;
        let r = resolve(&mut relations, &l.cols[1], "relation")?;
        let o = resolve(&mut entities, &l.cols[2], "entity")?;
        let slot = match l.split {
            Split::Train => 0,
            Split::Valid => 1,
            Split::Test => 2,
        };
        splits[slot].push(Quadruple::new(s, r, o, t));
    }

    let vocab = Arc::new(Vocabulary::new(entities, relations, spec.inverse));
    let [train, valid, test] = splits;
    Dataset::from_splits(vocab, spec.clone(), origin, train, valid, test)
}

fn read_id_map(path: &Path) -> Result<Interner, LoadError> {
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io { path: path.to_owned(), source })?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let (name, id) = line
            .rsplit_once('\t')
            .ok_or(LoadError::BadIdMap { path: path.to_owned(), line: i + 1 })?;
        let id: u32 = id.trim().parse().map_err(|_| LoadError::BadIdMap { path: path.to_owned(), line: i + 1 })?;
        pairs.push((id, name.to_owned()));
    }
    pairs.sort();
    let mut table = Interner::new();
    for (expected, (id, name)) in pairs.iter().enumerate() {
        if *id as usize != expected || table.intern(name) != *id {
            return Err(LoadError::SparseIdMap { path: path.to_owned(), len: pairs.len() });
        }
    }
    Ok(table)
}

/// Writes the dataset in id form: id maps plus one file per split with
/// original edges in canonical order and raw timestamps restored.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut ent = BufWriter::new(fs::File::create(dir.join("entity2id.txt"))?);
    for (id, name) in ds.vocab.entities.names().enumerate() {
        writeln!(ent, "{name}\t{id}")?;
    }
    ent.flush()?;
    let mut rel = BufWriter::new(fs::File::create(dir.join("relation2id.txt"))?);
    for id in 0..ds.vocab.base_relation_count() {
        writeln!(rel, "{}\t{id}", ds.vocab.relation_name(id))?;
    }
    rel.flush()?;
    for split in Split::ALL {
        let mut out = BufWriter::new(fs::File::create(dir.join(split.file_name()))?);
        for q in ds.split(split).base_edges() {
            let raw = ds.origin + q.t as i64 * ds.spec.time_gap as i64;
            writeln!(out, "{}\t{}\t{}\t{raw}", q.subject, q.relation, q.object)?;
        }
        out.flush()?;
    }
    Ok(())
}
