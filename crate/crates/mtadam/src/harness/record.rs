//! Run records: per-step and per-epoch rows with a fixed, versioned CSV
//! schema. Column layout depends only on the number of terms, the group
//! names, and whether the optimizer tracks magnitude moments; for a given
//! configuration the header is fixed.

use std::fmt::Write as _;

use crate::optim::GroupLayout;

pub const CSV_SCHEMA_VERSION: u32 = 1;

/// One row of a run record.
#[derive(Clone, Debug, PartialEq)]
pub enum RecordRow {
    Step {
        step: u64,
        epoch: usize,
        term_losses: Vec<f64>,
        /// Per-term, per-group norms before normalization (MTAdam only).
        pre_norms: Option<Vec<Vec<f64>>>,
        /// Per-term, per-group norms after normalization (MTAdam only).
        post_norms: Option<Vec<Vec<f64>>>,
        denom_min: Option<f64>,
        denom_max: Option<f64>,
        denom_mean: Option<f64>,
    },
    Epoch {
        step: u64,
        epoch: usize,
        test_metric: f64,
    },
}

/// Accumulates rows and renders the versioned CSV.
#[derive(Clone, Debug)]
pub struct RunRecord {
    num_terms: usize,
    group_names: Vec<String>,
    with_norms: bool,
    rows: Vec<RecordRow>,
}

impl RunRecord {
    pub fn new(num_terms: usize, layout: &GroupLayout, with_norms: bool) -> Self {
        RunRecord {
            num_terms,
            group_names: layout.names().map(str::to_owned).collect(),
            with_norms,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: RecordRow) {
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[RecordRow] {
        &self.rows
    }

    pub fn step_row_count(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| matches!(r, RecordRow::Step { .. }))
            .count()
    }

    /// The two header lines: a version comment and the column names.
    pub fn csv_header(&self) -> String {
        let mut cols = vec![
            "row_kind".to_string(),
            "step".to_string(),
            "epoch".to_string(),
        ];
        for i in 0..self.num_terms {
            cols.push(format!("loss_t{i}"));
        }
        if self.with_norms {
            for i in 0..self.num_terms {
                for g in &self.group_names {
                    cols.push(format!("pre_norm_t{i}_{g}"));
                }
            }
            for i in 0..self.num_terms {
                for g in &self.group_names {
                    cols.push(format!("post_norm_t{i}_{g}"));
                }
            }
            cols.push("denom_min".into());
            cols.push("denom_max".into());
            cols.push("denom_mean".into());
        }
        cols.push("test_metric".into());
        format!("# mtadam run record v{CSV_SCHEMA_VERSION}\n{}\n", cols.join(","))
    }

    pub fn csv_row(&self, row: &RecordRow) -> String {
        let mut out = String::new();
        match row {
            RecordRow::Step {
                step,
                epoch,
                term_losses,
                pre_norms,
                post_norms,
                denom_min,
                denom_max,
                denom_mean,
            } => {
                let _ = write!(out, "step,{step},{epoch}");
                for l in term_losses {
                    let _ = write!(out, ",{l}");
                }
                if self.with_norms {
                    for norms in [pre_norms, post_norms] {
                        match norms {
                            Some(per_term) => {
                                for term in per_term {
                                    for n in term {
                                        let _ = write!(out, ",{n}");
                                    }
                                }
                            }
                            None => {
                                let cells = self.num_terms * self.group_names.len();
                                for _ in 0..cells {
                                    out.push(',');
                                }
                            }
                        }
                    }
                    for d in [denom_min, denom_max, denom_mean] {
                        match d {
                            Some(v) => {
                                let _ = write!(out, ",{v}");
                            }
                            None => out.push(','),
                        }
                    }
                }
                out.push(','); // empty test_metric
            }
            RecordRow::Epoch {
                step,
                epoch,
                test_metric,
            } => {
                let _ = write!(out, "epoch,{step},{epoch}");
                let blank = self.num_terms
                    + if self.with_norms {
                        2 * self.num_terms * self.group_names.len() + 3
                    } else {
                        0
                    };
                for _ in 0..blank {
                    out.push(',');
                }
                let _ = write!(out, ",{test_metric}");
            }
        }
        out.push('\n');
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        for row in &self.rows {
            out.push_str(&self.csv_row(row));
        }
        out
    }
}
