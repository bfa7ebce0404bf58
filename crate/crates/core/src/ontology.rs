//! Label ontology: a DAG of parent (hyponymy / part-of) edges plus authored
//! mutual-exclusion pairs.
//!
//! Exclusion is inherited downwards: when `a` and `b` are exclusive, every
//! label in `{a} ∪ descendants(a)` is exclusive with every label in
//! `{b} ∪ descendants(b)`. The closure is computed once at construction and an
//! ontology whose closure pairs a label with itself or with one of its own
//! ancestors is rejected.
//!
//! Ancestor and descendant sets are precomputed as bitsets so that
//! [`LabelOntology::expand`] and [`LabelOntology::reliable_negatives`] run in
//! `O(C)` word operations per label.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::labelset::LabelSet;

/// Semantic group of a label. Metadata only; used for per-category reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    BodyPart,
    Type,
    Attribute,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::BodyPart, Category::Type, Category::Attribute];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::BodyPart => "body-part",
            Category::Type => "type",
            Category::Attribute => "attribute",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "body-part" | "bodypart" | "body_part" => Ok(Category::BodyPart),
            "type" => Ok(Category::Type),
            "attribute" => Ok(Category::Attribute),
            other => Err(format!("unknown category `{other}`")),
        }
    }
}

/// Lowercases and collapses internal whitespace. Used for label names and
/// synonym phrases.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace().map(|w| w.to_lowercase()).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelDef {
    pub name: String,
    pub category: Category,
    pub synonyms: Vec<String>,
}

/// Raw, unvalidated ontology content: what an ontology file says before any
/// invariant has been checked.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OntologySpec {
    pub labels: Vec<LabelDef>,
    /// `(child, parent)` pairs.
    pub parent_edges: Vec<(usize, usize)>,
    /// Authored unordered exclusive pairs.
    pub exclusive_pairs: Vec<(usize, usize)>,
}

impl OntologySpec {
    pub fn add_label(&mut self, name: &str, category: Category, synonyms: &[&str]) -> usize {
        self.labels.push(LabelDef {
            name: normalize_name(name),
            category,
            synonyms: synonyms.iter().map(|s| normalize_name(s)).collect(),
        });
        self.labels.len() - 1
    }

    pub fn add_parent(&mut self, child: usize, parent: usize) {
        self.parent_edges.push((child, parent));
    }

    pub fn add_exclusive(&mut self, a: usize, b: usize) {
        self.exclusive_pairs.push((a, b));
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        let key = normalize_name(name);
        self.labels.iter().position(|l| l.name == key)
    }
}

/// One broken ontology invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Label ids that lie on a common parent-edge cycle.
    Cycle(Vec<usize>),
    SelfExclusion(usize),
    /// An authored exclusive pair where one label is an ancestor of the other.
    AncestorExclusion {
        ancestor: usize,
        descendant: usize,
    },
    /// Exclusion inheritance produced `(x, x)` or an ancestor/descendant pair.
    ClosureConflict {
        a: usize,
        b: usize,
    },
    DuplicateSynonym {
        phrase: String,
        ids: Vec<usize>,
    },
    DuplicateName {
        name: String,
        ids: Vec<usize>,
    },
    UnknownId {
        id: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Cycle(ids) => write!(f, "cycle through labels {ids:?}"),
            Violation::SelfExclusion(id) => write!(f, "label {id} is exclusive with itself"),
            Violation::AncestorExclusion { ancestor, descendant } => {
                write!(f, "label {ancestor} is exclusive with its descendant {descendant}")
            }
            Violation::ClosureConflict { a, b } => {
                write!(f, "inherited exclusion pairs {a} and {b}, which are identical or related by ancestry")
            }
            Violation::DuplicateSynonym { phrase, ids } => {
                write!(f, "synonym `{phrase}` maps to several labels {ids:?}")
            }
            Violation::DuplicateName { name, ids } => {
                write!(f, "label name `{name}` used by several ids {ids:?}")
            }
            Violation::UnknownId { id } => write!(f, "reference to unknown label id {id}"),
        }
    }
}

/// Diagnostics from [`validate`]. Empty iff every invariant holds.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    /// Renders the report with label names where available.
    pub fn render(&self, spec: &OntologySpec) -> String {
        let name =
            |id: usize| spec.labels.get(id).map(|l| format!("{id}:{}", l.name)).unwrap_or_else(|| id.to_string());
        let mut out = String::new();
        for v in &self.violations {
            let line = match v {
                Violation::Cycle(ids) => {
                    format!("cycle: {}", ids.iter().map(|&i| name(i)).collect::<Vec<_>>().join(", "))
                }
                Violation::SelfExclusion(id) => format!("self-exclusion: {}", name(*id)),
                Violation::AncestorExclusion { ancestor, descendant } => {
                    format!("ancestor-exclusion: {} is an ancestor of {}", name(*ancestor), name(*descendant))
                }
                Violation::ClosureConflict { a, b } => {
                    format!("closure-conflict: {} <-> {}", name(*a), name(*b))
                }
                Violation::DuplicateSynonym { phrase, ids } => format!(
                    "duplicate-synonym: `{phrase}` -> {}",
                    ids.iter().map(|&i| name(i)).collect::<Vec<_>>().join(", ")
                ),
                Violation::DuplicateName { name: n, ids } => {
                    format!("duplicate-name: `{n}` -> {}", ids.iter().map(|&i| name(i)).collect::<Vec<_>>().join(", "))
                }
                Violation::UnknownId { id } => format!("unknown-id: {id}"),
            };
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("invalid ontology ({} violation(s)): {}", .0.violations.len(), first_violation(.0))]
    Invalid(ValidationReport),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("label id {id} out of range (ontology has {count} labels)")]
    IdOutOfRange { id: usize, count: usize },
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
}

fn first_violation(report: &ValidationReport) -> String {
    report.violations.first().map(ToString::to_string).unwrap_or_default()
}

/// Reachability over parent edges, computed by DFS from every node. Works on
/// cyclic input, which is what lets [`validate`] report cycles.
fn reachability(n: usize, edges: &[(usize, usize)]) -> Vec<LabelSet> {
    let mut parents = vec![Vec::new(); n];
    for &(c, p) in edges {
        if c < n && p < n {
            parents[c].push(p);
        }
    }
    (0..n)
        .map(|start| {
            let mut seen = LabelSet::empty(n);
            let mut stack: Vec<usize> = parents[start].clone();
            while let Some(v) = stack.pop() {
                if seen.insert(v) {
                    stack.extend(parents[v].iter().copied());
                }
            }
            seen
        })
        .collect()
}

fn transpose(sets: &[LabelSet]) -> Vec<LabelSet> {
    let n = sets.len();
    let mut out = vec![LabelSet::empty(n); n];
    for (i, s) in sets.iter().enumerate() {
        for j in s.iter() {
            out[j].insert(i);
        }
    }
    out
}

/// Per-label sets of exclusive partners after downward inheritance, plus the
/// conflicting pairs found while building them.
fn close_exclusions(
    n: usize,
    pairs: &[(usize, usize)],
    ancestors: &[LabelSet],
    descendants: &[LabelSet],
) -> (Vec<LabelSet>, Vec<(usize, usize)>) {
    let mut partners = vec![LabelSet::empty(n); n];
    for &(a, b) in pairs {
        let mut side_a = descendants[a].clone();
        side_a.insert(a);
        let mut side_b = descendants[b].clone();
        side_b.insert(b);
        for x in side_a.iter() {
            partners[x].union_with(&side_b);
        }
        for y in side_b.iter() {
            partners[y].union_with(&side_a);
        }
    }
    let mut conflicts = Vec::new();
    for x in 0..n {
        for y in partners[x].iter().filter(|&y| y >= x) {
            if y == x || ancestors[x].contains(y) || ancestors[y].contains(x) {
                conflicts.push((x, y));
            }
        }
    }
    (partners, conflicts)
}

/// Checks every ontology invariant and reports all violations at once.
pub fn validate(spec: &OntologySpec) -> ValidationReport {
    let n = spec.labels.len();
    let mut violations = Vec::new();

    for &(a, b) in spec.parent_edges.iter().chain(&spec.exclusive_pairs) {
        for id in [a, b] {
            if id >= n {
                violations.push(Violation::UnknownId { id });
            }
        }
    }
    if !violations.is_empty() {
        violations.dedup();
        return ValidationReport { violations };
    }

    let mut names: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (id, l) in spec.labels.iter().enumerate() {
        names.entry(l.name.as_str()).or_default().push(id);
    }
    for (name, ids) in names {
        if ids.len() > 1 {
            violations.push(Violation::DuplicateName { name: name.to_string(), ids });
        }
    }

    let mut phrases: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (id, l) in spec.labels.iter().enumerate() {
        let mut own: Vec<String> =
            std::iter::once(l.name.clone()).chain(l.synonyms.iter().map(|s| normalize_name(s))).collect();
        own.sort();
        own.dedup();
        for p in own {
            phrases.entry(p).or_default().push(id);
        }
    }
    for (phrase, ids) in phrases {
        // Name clashes are already reported above.
        if ids.len() > 1 && spec.labels.iter().filter(|l| l.name == phrase).count() < 2 {
            violations.push(Violation::DuplicateSynonym { phrase, ids });
        }
    }

    let reach = reachability(n, &spec.parent_edges);
    let mut on_cycle = LabelSet::empty(n);
    for v in 0..n {
        if reach[v].contains(v) && !on_cycle.contains(v) {
            let component: Vec<usize> =
                (0..n).filter(|&u| u == v || (reach[v].contains(u) && reach[u].contains(v))).collect();
            for &u in &component {
                on_cycle.insert(u);
            }
            violations.push(Violation::Cycle(component));
        }
    }

    let mut authored_ok = true;
    for &(a, b) in &spec.exclusive_pairs {
        if a == b {
            violations.push(Violation::SelfExclusion(a));
            authored_ok = false;
        } else if reach[a].contains(b) {
            violations.push(Violation::AncestorExclusion { ancestor: b, descendant: a });
            authored_ok = false;
        } else if reach[b].contains(a) {
            violations.push(Violation::AncestorExclusion { ancestor: a, descendant: b });
            authored_ok = false;
        }
    }

    // Closure conflicts are only meaningful once the authored pairs and the
    // DAG are themselves sound.
    if authored_ok && on_cycle.is_empty() {
        let desc = transpose(&reach);
        let (_, conflicts) = close_exclusions(n, &spec.exclusive_pairs, &reach, &desc);
        for (a, b) in conflicts {
            violations.push(Violation::ClosureConflict { a, b });
        }
    }

    violations.dedup();
    ValidationReport { violations }
}

/// Immutable, validated label graph.
#[derive(Debug, Clone)]
pub struct LabelOntology {
    labels: Vec<LabelDef>,
    lexicon: BTreeMap<String, usize>,
    parent_edges: Vec<(usize, usize)>,
    exclusive_pairs: Vec<(usize, usize)>,
    parents: Vec<Vec<usize>>,
    ancestors: Vec<LabelSet>,
    descendants: Vec<LabelSet>,
    exclusive_partners: Vec<LabelSet>,
}

impl LabelOntology {
    /// Validates `spec` and builds the ontology. Any violation is an error.
    pub fn new(spec: OntologySpec) -> Result<Self, OntologyError> {
        let report = validate(&spec);
        if !report.is_ok() {
            return Err(OntologyError::Invalid(report));
        }
        let n = spec.labels.len();
        let ancestors = reachability(n, &spec.parent_edges);
        let descendants = transpose(&ancestors);
        let (exclusive_partners, conflicts) = close_exclusions(n, &spec.exclusive_pairs, &ancestors, &descendants);
        debug_assert!(conflicts.is_empty());

        let mut parents = vec![Vec::new(); n];
        for &(c, p) in &spec.parent_edges {
            if !parents[c].contains(&p) {
                parents[c].push(p);
            }
        }
        let mut lexicon = BTreeMap::new();
        for (id, l) in spec.labels.iter().enumerate() {
            lexicon.insert(l.name.clone(), id);
            for s in &l.synonyms {
                lexicon.insert(normalize_name(s), id);
            }
        }
        let mut parent_edges = spec.parent_edges;
        parent_edges.sort_unstable();
        parent_edges.dedup();
        let mut exclusive_pairs: Vec<(usize, usize)> =
            spec.exclusive_pairs.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect();
        exclusive_pairs.sort_unstable();
        exclusive_pairs.dedup();

        Ok(Self {
            labels: spec.labels,
            lexicon,
            parent_edges,
            exclusive_pairs,
            parents,
            ancestors,
            descendants,
            exclusive_partners,
        })
    }

    /// Number of labels, `C`.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[LabelDef] {
        &self.labels
    }

    pub fn name(&self, id: usize) -> &str {
        &self.labels[id].name
    }

    pub fn category(&self, id: usize) -> Category {
        self.labels[id].category
    }

    /// Case-insensitive lookup by name or synonym.
    pub fn id_of(&self, phrase: &str) -> Option<usize> {
        self.lexicon.get(&normalize_name(phrase)).copied()
    }

    /// Normalized phrase → label id, including every label's own name.
    pub fn lexicon(&self) -> &BTreeMap<String, usize> {
        &self.lexicon
    }

    pub fn parent_edges(&self) -> &[(usize, usize)] {
        &self.parent_edges
    }

    /// Authored exclusive pairs, normalized to `(min, max)`.
    pub fn exclusive_pairs(&self) -> &[(usize, usize)] {
        &self.exclusive_pairs
    }

    pub fn parents(&self, id: usize) -> &[usize] {
        &self.parents[id]
    }

    pub fn empty_set(&self) -> LabelSet {
        LabelSet::empty(self.len())
    }

    fn check(&self, id: usize) -> Result<(), OntologyError> {
        if id < self.len() {
            Ok(())
        } else {
            Err(OntologyError::IdOutOfRange { id, count: self.len() })
        }
    }

    /// All labels reachable from `id` over parent edges, excluding `id`.
    pub fn ancestors(&self, id: usize) -> Result<&LabelSet, OntologyError> {
        self.check(id)?;
        Ok(&self.ancestors[id])
    }

    pub fn descendants(&self, id: usize) -> Result<&LabelSet, OntologyError> {
        self.check(id)?;
        Ok(&self.descendants[id])
    }

    /// Labels with no children.
    pub fn is_leaf(&self, id: usize) -> bool {
        self.descendants[id].is_empty()
    }

    /// Adds every ancestor of every member.
    pub fn expand(&self, labels: &LabelSet) -> LabelSet {
        let mut out = labels.clone();
        for id in labels.iter() {
            out.union_with(&self.ancestors[id]);
        }
        out
    }

    /// Labels exclusive with `id` once exclusion is inherited by descendants.
    pub fn exclusive_with(&self, id: usize) -> &LabelSet {
        &self.exclusive_partners[id]
    }

    pub fn are_exclusive(&self, a: usize, b: usize) -> bool {
        a < self.len() && self.exclusive_partners[a].contains(b)
    }

    /// Every inherited exclusive pair as `(min, max)`, sorted.
    pub fn exclusivity_closure(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (x, partners) in self.exclusive_partners.iter().enumerate() {
            out.extend(partners.iter().filter(|&y| y > x).map(|y| (x, y)));
        }
        out
    }

    /// Labels that must be negative given (already expanded) `positives`.
    pub fn reliable_negatives(&self, positives: &LabelSet) -> LabelSet {
        let mut out = self.empty_set();
        for id in positives.iter() {
            out.union_with(&self.exclusive_partners[id]);
        }
        // Contradictory inputs (both sides of a pair present) are not negatives.
        out.difference_with(positives);
        out
    }

    /// The raw content, suitable for re-serialization.
    pub fn to_spec(&self) -> OntologySpec {
        OntologySpec {
            labels: self.labels.clone(),
            parent_edges: self.parent_edges.clone(),
            exclusive_pairs: self.exclusive_pairs.clone(),
        }
    }

    /// Restricts the ontology to `keep`, assigning dense ids in the original
    /// order. Ancestry between surviving labels is preserved through removed
    /// intermediates, so `expand` on the restriction equals the original
    /// expansion intersected with `keep`. Exclusions are carried over as the
    /// restricted closure. Returns the new ontology and `old id → new id`.
    pub fn restrict(&self, keep: &LabelSet) -> Result<(LabelOntology, Vec<Option<usize>>), OntologyError> {
        let mut remap = vec![None; self.len()];
        let mut spec = OntologySpec::default();
        for id in keep.iter().filter(|&id| id < self.len()) {
            remap[id] = Some(spec.labels.len());
            spec.labels.push(self.labels[id].clone());
        }
        for old in keep.iter().filter(|&id| id < self.len()) {
            let anc = self.ancestors[old].intersection(keep);
            // Minimal surviving ancestors: those not above another surviving ancestor.
            for a in anc.iter() {
                let covered = anc.iter().any(|b| b != a && self.ancestors[b].contains(a));
                if !covered {
                    spec.parent_edges.push((remap[old].unwrap(), remap[a].unwrap()));
                }
            }
        }
        for (x, y) in self.exclusivity_closure() {
            if let (Some(nx), Some(ny)) = (remap[x], remap[y]) {
                spec.exclusive_pairs.push((nx, ny));
            }
        }
        Ok((LabelOntology::new(spec)?, remap))
    }
}

// ---------------------------------------------------------------------------
// Text format
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Labels,
    Parents,
    Exclusive,
}

/// Parses the ontology text format:
///
/// ```text
/// [labels]
/// # name | category | synonym, synonym, ...
/// lung | body-part | lungs, pulmonary
/// [parents]
/// left lung -> lung
/// [exclusive]
/// left lung <-> right lung
/// ```
///
/// Names are case-insensitive; ids are assigned in file order. The result is
/// not validated.
pub fn parse_spec(text: &str) -> Result<OntologySpec, OntologyError> {
    let mut spec = OntologySpec::default();
    let mut section = Section::None;
    let mut by_name: BTreeMap<String, usize> = BTreeMap::new();
    let mut pending_parents = Vec::new();
    let mut pending_exclusive = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| OntologyError::Parse { line: line_no, message };
        if line.starts_with('[') {
            section = match line.to_ascii_lowercase().as_str() {
                "[labels]" => Section::Labels,
                "[parents]" => Section::Parents,
                "[exclusive]" => Section::Exclusive,
                other => return Err(err(format!("unknown section `{other}`"))),
            };
            continue;
        }
        match section {
            Section::None => return Err(err("content before the first section".into())),
            Section::Labels => {
                let mut fields = line.split('|');
                let name = normalize_name(fields.next().unwrap_or(""));
                if name.is_empty() {
                    return Err(err("empty label name".into()));
                }
                let category: Category = fields
                    .next()
                    .ok_or_else(|| err(format!("label `{name}` has no category")))?
                    .parse()
                    .map_err(err)?;
                let synonyms: Vec<String> = fields
                    .next()
                    .map(|s| s.split(',').map(normalize_name).filter(|s| !s.is_empty()).collect())
                    .unwrap_or_default();
                if fields.next().is_some() {
                    return Err(err("too many `|` fields".into()));
                }
                if by_name.contains_key(&name) {
                    return Err(err(format!("duplicate label `{name}`")));
                }
                by_name.insert(name.clone(), spec.labels.len());
                spec.labels.push(LabelDef { name, category, synonyms });
            }
            Section::Parents => {
                let (child, parent) = line.split_once("->").ok_or_else(|| err("expected `child -> parent`".into()))?;
                pending_parents.push((line_no, normalize_name(child), normalize_name(parent)));
            }
            Section::Exclusive => {
                let (a, b) = line.split_once("<->").ok_or_else(|| err("expected `a <-> b`".into()))?;
                pending_exclusive.push((line_no, normalize_name(a), normalize_name(b)));
            }
        }
    }

    let resolve = |line: usize, name: &str| {
        by_name
            .get(name)
            .copied()
            .ok_or_else(|| OntologyError::Parse { line, message: format!("unknown label `{name}`") })
    };
    for (line, c, p) in pending_parents {
        spec.parent_edges.push((resolve(line, &c)?, resolve(line, &p)?));
    }
    for (line, a, b) in pending_exclusive {
        spec.exclusive_pairs.push((resolve(line, &a)?, resolve(line, &b)?));
    }
    Ok(spec)
}

/// Serializes to the format read by [`parse_spec`].
pub fn write_spec(spec: &OntologySpec) -> String {
    let mut out = String::from("[labels]\n");
    for l in &spec.labels {
        out.push_str(&format!("{} | {}", l.name, l.category));
        if !l.synonyms.is_empty() {
            out.push_str(" | ");
            out.push_str(&l.synonyms.join(", "));
        }
        out.push('\n');
    }
    out.push_str("\n[parents]\n");
    for &(c, p) in &spec.parent_edges {
        out.push_str(&format!("{} -> {}\n", spec.labels[c].name, spec.labels[p].name));
    }
    out.push_str("\n[exclusive]\n");
    for &(a, b) in &spec.exclusive_pairs {
        out.push_str(&format!("{} <-> {}\n", spec.labels[a].name, spec.labels[b].name));
    }
    out
}

impl FromStr for LabelOntology {
    type Err = OntologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LabelOntology::new(parse_spec(s)?)
    }
}
