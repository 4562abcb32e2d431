//! Parameter groups and per-term gradient sets.
//!
//! Learned parameters are an ordered list of named groups of flat `f64`
//! values. A "layer" for gradient-magnitude purposes is one group; by
//! default each tensor of the network (a weight matrix, a bias vector)
//! is its own group. Per-term gradients mirror the group structure
//! exactly, one gradient set per loss term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape signature of a [`ParameterGroups`]: ordered (name, len) pairs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLayout {
    entries: Vec<(String, usize)>,
}

impl GroupLayout {
    pub fn from_entries(entries: Vec<(String, usize)>) -> Self {
        GroupLayout { entries }
    }

    pub fn num_groups(&self) -> usize {
        self.entries.len()
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|(_, l)| l).sum()
    }

    pub fn name(&self, group: usize) -> &str {
        &self.entries[group].0
    }

    pub fn len_of(&self, group: usize) -> usize {
        self.entries[group].1
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }
}

/// The learned parameters: L named, ordered, non-empty groups.
///
/// Group order, names, and sizes are fixed at construction. Every mutable
/// access bumps an internal version counter so forward caches can detect
/// staleness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterGroups {
    names: Vec<String>,
    values: Vec<Vec<f64>>,
    version: u64,
}

impl ParameterGroups {
    pub fn new(groups: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidConfig("at least one parameter group".into()));
        }
        let mut names = Vec::with_capacity(groups.len());
        let mut values = Vec::with_capacity(groups.len());
        for (name, vals) in groups {
            if vals.is_empty() {
                return Err(Error::InvalidConfig(format!("group '{name}' is empty")));
            }
            if names.contains(&name) {
                return Err(Error::InvalidConfig(format!("duplicate group name '{name}'")));
            }
            if let Some(bad) = vals.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("group '{name}' contains {bad}")));
            }
            names.push(name);
            values.push(vals);
        }
        Ok(ParameterGroups {
            names,
            values,
            version: 0,
        })
    }

    pub fn num_groups(&self) -> usize {
        self.values.len()
    }

    pub fn total_len(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn name(&self, group: usize) -> &str {
        &self.names[group]
    }

    pub fn group(&self, group: usize) -> &[f64] {
        &self.values[group]
    }

    pub fn group_mut(&mut self, group: usize) -> &mut [f64] {
        self.version += 1;
        &mut self.values[group]
    }

    /// Mutable view of all groups at once (single version bump).
    pub fn groups_mut(&mut self) -> &mut [Vec<f64>] {
        self.version += 1;
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.values.iter().map(|v| v.as_slice()))
    }

    pub fn layout(&self) -> GroupLayout {
        GroupLayout {
            entries: self
                .names
                .iter()
                .cloned()
                .zip(self.values.iter().map(|v| v.len()))
                .collect(),
        }
    }

    /// Monotone counter identifying the current parameter contents.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn all_finite(&self) -> bool {
        self.values
            .iter()
            .all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// One gradient set per loss term, each mirroring the parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermGradients {
    terms: Vec<Vec<Vec<f64>>>,
}

impl TermGradients {
    /// Wraps raw per-term gradients, checking each term against the layout.
    pub fn new(terms: Vec<Vec<Vec<f64>>>, layout: &GroupLayout) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidConfig("at least one gradient term".into()));
        }
        for (i, term) in terms.iter().enumerate() {
            check_groups_match(term, layout, &format!("gradient term {i}"))?;
        }
        Ok(TermGradients { terms })
    }

    /// Single-term wrapper for degenerate multi-term use.
    pub fn single(grad: Vec<Vec<f64>>, layout: &GroupLayout) -> Result<Self> {
        TermGradients::new(vec![grad], layout)
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn term(&self, i: usize) -> &[Vec<f64>] {
        &self.terms[i]
    }

    pub fn term_mut(&mut self, i: usize) -> &mut [Vec<f64>] {
        &mut self.terms[i]
    }

    pub fn terms(&self) -> &[Vec<Vec<f64>>] {
        &self.terms
    }

    /// Euclidean norm of term `i` restricted to group `g`.
    pub fn group_norm(&self, i: usize, g: usize) -> f64 {
        norm2(&self.terms[i][g])
    }

    /// Rejects NaN/Inf entries, naming the offending term and group.
    pub fn check_finite(&self) -> Result<()> {
        for (i, term) in self.terms.iter().enumerate() {
            for (g, group) in term.iter().enumerate() {
                if let Some(bad) = group.iter().find(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "gradient term {i}, group {g} contains {bad}"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn check_groups_match(
    groups: &[Vec<f64>],
    layout: &GroupLayout,
    what: &str,
) -> Result<()> {
    if groups.len() != layout.num_groups() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {} groups, parameters have {}",
            groups.len(),
            layout.num_groups()
        )));
    }
    for (g, vals) in groups.iter().enumerate() {
        if vals.len() != layout.len_of(g) {
            return Err(Error::ShapeMismatch(format!(
                "{what}: group {g} ('{}') has {} values, expected {}",
                layout.name(g),
                vals.len(),
                layout.len_of(g)
            )));
        }
    }
    Ok(())
}

pub(crate) fn norm2(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Zero-filled group arrays matching a layout.
pub(crate) fn zeros_like(layout: &GroupLayout) -> Vec<Vec<f64>> {
    (0..layout.num_groups())
        .map(|g| vec![0.0; layout.len_of(g)])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_params() -> ParameterGroups {
        ParameterGroups::new(vec![
            ("w".into(), vec![1.0, 2.0, 3.0]),
            ("b".into(), vec![0.5]),
        ])
        .unwrap()
    }

    #[test]
    fn rejects_empty_and_duplicate_groups() {
        assert!(ParameterGroups::new(vec![]).is_err());
        assert!(ParameterGroups::new(vec![("w".into(), vec![])]).is_err());
        assert!(ParameterGroups::new(vec![
            ("w".into(), vec![1.0]),
            ("w".into(), vec![2.0]),
        ])
        .is_err());
        assert!(ParameterGroups::new(vec![("w".into(), vec![f64::NAN])]).is_err());
    }

    #[test]
    fn version_bumps_on_mutation_only() {
        let mut p = sample_params();
        let v0 = p.version();
        let _ = p.group(0);
        assert_eq!(p.version(), v0);
        p.group_mut(0)[0] = 9.0;
        assert!(p.version() > v0);
    }

    #[test]
    fn term_gradients_validate_layout() {
        let p = sample_params();
        let layout = p.layout();
        assert!(TermGradients::new(vec![vec![vec![0.0; 3], vec![0.0]]], &layout).is_ok());
        // wrong group count
        assert!(TermGradients::new(vec![vec![vec![0.0; 3]]], &layout).is_err());
        // wrong group len
        assert!(TermGradients::new(vec![vec![vec![0.0; 2], vec![0.0]]], &layout).is_err());
    }

    #[test]
    fn finite_check_names_term_and_group() {
        let p = sample_params();
        let g = TermGradients::new(
            vec![
                vec![vec![0.0; 3], vec![0.0]],
                vec![vec![0.0; 3], vec![f64::INFINITY]],
            ],
            &p.layout(),
        )
        .unwrap();
        let err = g.check_finite().unwrap_err().to_string();
        assert!(err.contains("term 1"), "{err}");
        assert!(err.contains("group 1"), "{err}");
    }

    #[test]
    fn group_norm_is_euclidean() {
        let p = sample_params();
        let g = TermGradients::new(vec![vec![vec![3.0, 4.0, 0.0], vec![2.0]]], &p.layout()).unwrap();
        assert_eq!(g.group_norm(0, 0), 5.0);
        assert_eq!(g.group_norm(0, 1), 2.0);
    }
}
