//! Random ontologies and brute-force oracles shared by the integration tests.

#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;

use std::collections::BTreeSet;

use ontolabel::{Category, LabelOntology, OntologySpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random DAG with up to `max_nodes` labels and `max_edges` parent edges
/// (always pointing to a lower id), plus up to `max_exclusive` authored
/// exclusions that keep the ontology valid.
pub fn random_ontology(seed: u64, max_nodes: usize, max_edges: usize, max_exclusive: usize) -> LabelOntology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_nodes);
    let mut spec = OntologySpec::default();
    for i in 0..n {
        let cat = Category::ALL[rng.random_range(0..3)];
        spec.add_label(&format!("label {i}"), cat, &[]);
    }
    let mut edges = BTreeSet::new();
    if n > 1 {
        for _ in 0..rng.random_range(0..=max_edges) {
            let child = rng.random_range(1..n);
            let parent = rng.random_range(0..child);
            edges.insert((child, parent));
        }
    }
    for &(c, p) in &edges {
        spec.add_parent(c, p);
    }
    let mut onto = LabelOntology::new(spec.clone()).expect("acyclic by construction");
    for _ in 0..max_exclusive {
        if n < 2 {
            break;
        }
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        let mut trial = spec.clone();
        trial.add_exclusive(a, b);
        if let Ok(o) = LabelOntology::new(trial.clone()) {
            spec = trial;
            onto = o;
        }
    }
    onto
}

/// Ancestors of `id` by breadth-first search over parent edges.
pub fn reach_oracle(edges: &[(usize, usize)], id: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::new();
    let mut frontier = vec![id];
    while let Some(x) = frontier.pop() {
        for &(c, p) in edges {
            if c == x && seen.insert(p) {
                frontier.push(p);
            }
        }
    }
    seen
}

/// Exclusivity closure by a double loop over every authored pair and every
/// pair of labels below its two ends.
pub fn closure_oracle(onto: &LabelOntology) -> BTreeSet<(usize, usize)> {
    let n = onto.len();
    let edges = onto.parent_edges();
    let below = |a: usize, x: usize| x == a || reach_oracle(edges, x).contains(&a);
    let mut out = BTreeSet::new();
    for &(a, b) in onto.exclusive_pairs() {
        for x in 0..n {
            for y in 0..n {
                if below(a, x) && below(b, y) {
                    out.insert((x.min(y), x.max(y)));
                }
            }
        }
    }
    out
}
