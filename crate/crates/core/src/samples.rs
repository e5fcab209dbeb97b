//! Scored sample sets, train/eval splitting, and the CSV ingestion format.
//!
//! The CSV layout is one row per sample with header
//! `x_1,...,x_d,score_1,...,score_d,f`; the `f` column is optional when
//! loading states that will be paired with an integrand later.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// States `x_i`, their scores `∇log π(x_i)`, and optionally `f(x_i)`.
///
/// Matrices are stored row-major with `n` rows of width `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSampleSet {
    d: usize,
    states: Vec<f64>,
    scores: Vec<f64>,
    f_values: Option<Vec<f64>>,
}

impl ScoredSampleSet {
    pub fn new(d: usize, states: Vec<f64>, scores: Vec<f64>, f_values: Option<Vec<f64>>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        if states.is_empty() {
            return Err(Error::Empty("sample states"));
        }
        if states.len() % d != 0 {
            return Err(Error::InvalidArgument(format!(
                "state buffer of length {} is not a multiple of d = {d}",
                states.len()
            )));
        }
        if scores.len() != states.len() {
            return Err(Error::LengthMismatch {
                what: "states and scores",
                left: states.len(),
                right: scores.len(),
            });
        }
        let n = states.len() / d;
        if let Some(f) = &f_values {
            if f.len() != n {
                return Err(Error::LengthMismatch {
                    what: "sample count and f values",
                    left: n,
                    right: f.len(),
                });
            }
            ensure_finite(f, "f values")?;
        }
        ensure_finite(&states, "states")?;
        ensure_finite(&scores, "scores")?;
        Ok(Self {
            d,
            states,
            scores,
            f_values,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.d..(i + 1) * self.d]
    }

    pub fn score(&self, i: usize) -> &[f64] {
        &self.scores[i * self.d..(i + 1) * self.d]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn has_f_values(&self) -> bool {
        self.f_values.is_some()
    }

    pub fn f_values(&self) -> Result<&[f64]> {
        self.f_values.as_deref().ok_or(Error::Empty("f values (sample set carries states only)"))
    }

    /// Attaches `f(x_i)` computed from each state.
    pub fn with_f<F: Fn(&[f64]) -> f64>(mut self, f: F) -> Result<Self> {
        let values: Vec<f64> = (0..self.len()).map(|i| f(self.state(i))).collect();
        ensure_finite(&values, "f values")?;
        self.f_values = Some(values);
        Ok(self)
    }

    pub fn with_f_values(mut self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::LengthMismatch {
                what: "sample count and f values",
                left: self.len(),
                right: values.len(),
            });
        }
        ensure_finite(&values, "f values")?;
        self.f_values = Some(values);
        Ok(self)
    }

    /// Rows selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Empty("subset indices"));
        }
        let n = self.len();
        let mut states = Vec::with_capacity(indices.len() * self.d);
        let mut scores = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            if i >= n {
                return Err(Error::InvalidArgument(format!("row index {i} out of range for {n} samples")));
            }
            states.extend_from_slice(self.state(i));
            scores.extend_from_slice(self.score(i));
        }
        let f_values = self
            .f_values
            .as_ref()
            .map(|f| indices.iter().map(|&i| f[i]).collect());
        Ok(Self {
            d: self.d,
            states,
            scores,
            f_values,
        })
    }

    /// Writes the set in the ingestion CSV format.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        let mut header: Vec<String> = (1..=self.d).map(|l| format!("x_{l}")).collect();
        header.extend((1..=self.d).map(|l| format!("score_{l}")));
        if self.f_values.is_some() {
            header.push("f".into());
        }
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.state(i).iter().map(|v| v.to_string()).collect();
            row.extend(self.score(i).iter().map(|v| v.to_string()));
            if let Some(f) = &self.f_values {
                row.push(f[i].to_string());
            }
            writeln!(out, "{}", row.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Loads a scored sample file.
///
/// With `f_column` the file must have `2d + 1` columns, otherwise `2d`.
/// Errors name the offending line (1-based, header is line 1).
pub fn load_scored_samples<P: AsRef<Path>>(path: P, f_column: bool) -> Result<ScoredSampleSet> {
    let path = path.as_ref();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(File::open(path)?));
    let width = reader.headers()?.len();
    let extra = usize::from(f_column);
    if width < 2 + extra || (width - extra) % 2 != 0 {
        return Err(parse_err(
            1,
            format!(
                "header has {width} columns; expected 2d{} for some d >= 1",
                if f_column { "+1" } else { "" }
            ),
        ));
    }
    let d = (width - extra) / 2;

    let mut states = Vec::new();
    let mut scores = Vec::new();
    let mut f_values = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let line = row_idx + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() != width {
            return Err(parse_err(line, format!("expected {width} columns, found {}", record.len())));
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("column {}: cannot parse {field:?} as a number", col + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column {}: non-finite value", col + 1)));
            }
            if col < d {
                states.push(v);
            } else if col < 2 * d {
                scores.push(v);
            } else {
                f_values.push(v);
            }
        }
    }
    if states.is_empty() {
        return Err(parse_err(2, "file contains no samples".into()));
    }
    ScoredSampleSet::new(d, states, scores, f_column.then_some(f_values))
}

/// How to divide samples between fitting the control variate and estimating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    /// First `m` rows train, the rest evaluate.
    #[default]
    FirstM,
    /// Seeded permutation, then first `m` train.
    Random { seed: u64 },
    /// Train and evaluate on all `n` rows (biased, but common practice).
    SameSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndex {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
    /// Set when train and eval coincide; estimates then carry fitting bias.
    pub same_set: bool,
}

pub fn split_samples(n: usize, m: usize, policy: SplitPolicy) -> Result<SplitIndex> {
    if m == 0 {
        return Err(Error::InvalidArgument("training size m must be at least 1".into()));
    }
    if m > n {
        return Err(Error::InvalidArgument(format!("training size m = {m} exceeds sample count n = {n}")));
    }
    Ok(match policy {
        SplitPolicy::FirstM => SplitIndex {
            train: (0..m).collect(),
            eval: (m..n).collect(),
            same_set: false,
        },
        SplitPolicy::Random { seed } => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let eval = order.split_off(m);
            SplitIndex {
                train: order,
                eval,
                same_set: false,
            }
        }
        SplitPolicy::SameSet => SplitIndex {
            train: (0..n).collect(),
            eval: (0..n).collect(),
            same_set: true,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, d: usize) -> ScoredSampleSet {
        let states: Vec<f64> = (0..n * d).map(|i| i as f64 * 0.5 - 1.0).collect();
        let scores = states.iter().map(|x| -x).collect();
        ScoredSampleSet::new(d, states, scores, Some((0..n).map(|i| i as f64).collect())).unwrap()
    }

    #[test]
    fn first_m_split() {
        let s = split_samples(4, 2, SplitPolicy::FirstM).unwrap();
        assert_eq!(s.train, vec![0, 1]);
        assert_eq!(s.eval, vec![2, 3]);
        assert!(!s.same_set);
    }

    #[test]
    fn same_set_split() {
        let s = split_samples(4, 4, SplitPolicy::SameSet).unwrap();
        assert_eq!(s.train, vec![0, 1, 2, 3]);
        assert_eq!(s.eval, vec![0, 1, 2, 3]);
        assert!(s.same_set);
    }

    #[test]
    fn random_split_is_deterministic_and_partitions() {
        let a = split_samples(1000, 500, SplitPolicy::Random { seed: 7 }).unwrap();
        let b = split_samples(1000, 500, SplitPolicy::Random { seed: 7 }).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.train.iter().chain(&a.eval).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert_ne!(a.train, (0..500).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_oversized_m() {
        assert!(split_samples(3, 4, SplitPolicy::FirstM).is_err());
        assert!(split_samples(3, 0, SplitPolicy::FirstM).is_err());
    }

    #[test]
    fn rejects_shape_mismatch_and_non_finite() {
        assert!(ScoredSampleSet::new(2, vec![0.0; 4], vec![0.0; 2], None).is_err());
        assert!(ScoredSampleSet::new(2, vec![0.0, f64::NAN], vec![0.0; 2], None).is_err());
        assert!(ScoredSampleSet::new(2, vec![0.0; 4], vec![0.0; 4], Some(vec![1.0])).is_err());
    }

    #[test]
    fn csv_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let mut set = toy(3, 2);
        set = set.with_f(|x| (x[0] * 1.0e-3).exp() / 3.0).unwrap();
        set.write_csv(&path).unwrap();
        let back = load_scored_samples(&path, true).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.dim(), 2);
        for (a, b) in set.states().iter().zip(back.states()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in set.f_values().unwrap().iter().zip(back.f_values().unwrap()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn csv_short_row_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "x_1,x_2,score_1,score_2,f\n1,2,3,4,5\n1,2,5\n").unwrap();
        match load_scored_samples(&path, true) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_rejects_non_finite_and_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.csv");
        std::fs::write(&path, "x_1,score_1,f\n1,NaN,2\n").unwrap();
        assert!(matches!(load_scored_samples(&path, true), Err(Error::Parse { line: 2, .. })));
        std::fs::write(&path, "x_1,x_2,score_1,f\n1,2,3,4\n").unwrap();
        assert!(matches!(load_scored_samples(&path, true), Err(Error::Parse { line: 1, .. })));
    }
}
