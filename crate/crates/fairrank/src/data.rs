//! Dataset ingestion: delimited files plus a declarative TOML schema that
//! names the id/score columns and assigns each row to a group via ordered
//! attribute predicates (first match wins). Also ships seeded synthetic
//! credit-scoring and recidivism datasets for experiments and benchmarks.

use std::collections::HashSet;
use std::path::Path;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Item, Rational, TrueRanking};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("column {0:?} not found in header")]
    MissingColumn(String),
    #[error("row {row} (id {id:?}): score {value:?} is not numeric")]
    NonNumericScore { row: usize, id: String, value: String },
    #[error("row {row} (id {id:?}) matched no group rule")]
    UnmatchedRow { row: usize, id: String },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("dataset is empty")]
    Empty,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreDirection {
    /// Higher score is better (rank 1 = highest score).
    #[default]
    Descending,
    /// Lower score is better (rank 1 = lowest score).
    Ascending,
}

impl ScoreDirection {
    pub fn flipped(self) -> Self {
        match self {
            ScoreDirection::Descending => ScoreDirection::Ascending,
            ScoreDirection::Ascending => ScoreDirection::Descending,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "in")]
    In,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PredicateValue {
    Number(f64),
    Text(String),
    Set(Vec<String>),
}

/// One conjunct of a group rule: `column op value`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Predicate {
    pub column: String,
    pub op: Op,
    pub value: PredicateValue,
}

impl Predicate {
    fn matches(&self, cell: &str) -> bool {
        let cell = cell.trim();
        match (&self.op, &self.value) {
            (Op::In, PredicateValue::Set(set)) => set.iter().any(|v| v == cell),
            (Op::Eq, PredicateValue::Text(t)) => t == cell,
            (Op::Eq, PredicateValue::Number(v)) => {
                cell.parse::<f64>().map(|c| c == *v).unwrap_or(false)
            }
            (op, PredicateValue::Number(v)) => match cell.parse::<f64>() {
                Err(_) => false,
                Ok(c) => match op {
                    Op::Lt => c < *v,
                    Op::Le => c <= *v,
                    Op::Gt => c > *v,
                    Op::Ge => c >= *v,
                    _ => false,
                },
            },
            _ => false,
        }
    }
}

/// A named group with its predicate conjunction. An empty `when` list is a
/// catch-all that matches every row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroupRule {
    pub name: String,
    #[serde(default)]
    pub when: Vec<Predicate>,
}

fn default_delimiter() -> String {
    ",".into()
}

fn default_true() -> bool {
    true
}

/// Declarative description of a delimited dataset: which columns hold the id
/// and the score, which way the score ranks, and the ordered group rules.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub id_column: String,
    pub score_column: String,
    #[serde(default)]
    pub score_direction: ScoreDirection,
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    /// Min-max normalize scores into [0, 1] on load (exponential-gain nDCG
    /// needs bounded scores). Raw scores are kept alongside either way.
    #[serde(default = "default_true")]
    pub normalize_scores: bool,
    #[serde(rename = "group")]
    pub groups: Vec<GroupRule>,
}

impl DatasetSchema {
    pub fn from_toml(text: &str) -> Result<Self, DataError> {
        let schema: DatasetSchema =
            toml::from_str(text).map_err(|e| DataError::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_file(path: &Path) -> Result<Self, DataError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("schema serializes")
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.groups.is_empty() {
            return Err(DataError::Schema("at least one group rule is required".into()));
        }
        if self.delimiter.chars().count() != 1 {
            return Err(DataError::Schema(format!(
                "delimiter must be a single character, got {:?}",
                self.delimiter
            )));
        }
        let mut seen = HashSet::new();
        for g in &self.groups {
            if !seen.insert(g.name.as_str()) {
                return Err(DataError::Schema(format!("duplicate group name {:?}", g.name)));
            }
        }
        Ok(())
    }

    fn delimiter_byte(&self) -> u8 {
        self.delimiter.as_bytes()[0]
    }
}

/// A loaded dataset: the merit-ordered ranking (rank 1 first), the raw score
/// of each ranked item (same order), and per-group bookkeeping.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub ranking: TrueRanking,
    /// Raw file scores aligned with `ranking` (before normalization/negation).
    pub raw_scores: Vec<f64>,
    pub group_names: Vec<String>,
    pub group_sizes: Vec<usize>,
    /// Exact dataset proportion of each group.
    pub p_star: Vec<Rational>,
}

impl LoadedDataset {
    pub fn p_star_of(&self, group: usize) -> Rational {
        self.p_star[group]
    }
}

pub fn load_dataset(path: &Path, schema: &DatasetSchema) -> Result<LoadedDataset, DataError> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter_byte())
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let id_col = col(&schema.id_column)?;
    let score_col = col(&schema.score_column)?;
    let mut rule_cols = Vec::new();
    for g in &schema.groups {
        let mut cols = Vec::new();
        for p in &g.when {
            cols.push(col(&p.column)?);
        }
        rule_cols.push(cols);
    }

    struct Row {
        id: String,
        raw: f64,
        group: usize,
    }
    let mut rows: Vec<Row> = Vec::new();
    let mut ids = HashSet::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_idx + 2; // 1-based file line, after the header
        let id = record.get(id_col).unwrap_or("").trim().to_string();
        if !ids.insert(id.clone()) {
            return Err(DataError::DuplicateId(id));
        }
        let score_text = record.get(score_col).unwrap_or("").trim();
        let raw: f64 = score_text.parse().map_err(|_| DataError::NonNumericScore {
            row,
            id: id.clone(),
            value: score_text.to_string(),
        })?;
        let mut group = None;
        for (g, (rule, cols)) in schema.groups.iter().zip(&rule_cols).enumerate() {
            let hit = rule
                .when
                .iter()
                .zip(cols)
                .all(|(p, &c)| p.matches(record.get(c).unwrap_or("")));
            if hit {
                group = Some(g);
                break;
            }
        }
        let group = group.ok_or(DataError::UnmatchedRow { row, id: id.clone() })?;
        rows.push(Row { id, raw, group });
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }

    // stable sort: ties keep file order
    match schema.score_direction {
        ScoreDirection::Descending => rows.sort_by(|a, b| b.raw.total_cmp(&a.raw)),
        ScoreDirection::Ascending => rows.sort_by(|a, b| a.raw.total_cmp(&b.raw)),
    }

    let (min, max) = rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.raw), hi.max(r.raw)));
    let span = max - min;
    let normalized = |raw: f64| -> f64 {
        if span == 0.0 {
            return 1.0;
        }
        match schema.score_direction {
            ScoreDirection::Descending => (raw - min) / span,
            ScoreDirection::Ascending => (max - raw) / span,
        }
    };
    let stored = |raw: f64| -> f64 {
        if schema.normalize_scores {
            normalized(raw)
        } else {
            match schema.score_direction {
                ScoreDirection::Descending => raw,
                ScoreDirection::Ascending => -raw,
            }
        }
    };

    let n = rows.len();
    let mut group_sizes = vec![0usize; schema.groups.len()];
    let mut items = Vec::with_capacity(n);
    let mut raw_scores = Vec::with_capacity(n);
    for row in &rows {
        group_sizes[row.group] += 1;
        items.push(Item { id: row.id.clone(), score: stored(row.raw), group: row.group });
        raw_scores.push(row.raw);
    }
    let ranking = TrueRanking::new(items, schema.groups.len())
        .map_err(|e| DataError::Schema(e.to_string()))?;
    let p_star =
        group_sizes.iter().map(|&s| Ratio::new(s as i64, n as i64)).collect();
    Ok(LoadedDataset {
        ranking,
        raw_scores,
        group_names: schema.groups.iter().map(|g| g.name.clone()).collect(),
        group_sizes,
        p_star,
    })
}

/// Seeded synthetic datasets shaped like the classic credit-scoring and
/// recidivism benchmarks: same sizes, protected-group proportions, and bias
/// direction (protected groups score lower on average, so they are
/// underrepresented at the top of the merit ranking).
pub mod synthetic {
    use std::io::Write as _;
    use std::path::Path;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::{DataError, DatasetSchema, GroupRule, Op, Predicate, PredicateValue};

    /// Rough normal via the mean of 8 uniforms, clamped to [lo, hi].
    fn noisy(rng: &mut ChaCha8Rng, center: f64, spread: f64, lo: f64, hi: f64) -> f64 {
        let mean: f64 = (0..8).map(|_| rng.gen::<f64>()).sum::<f64>() / 8.0;
        (center + (mean - 0.5) * 2.0 * spread).clamp(lo, hi)
    }

    /// Credit dataset: 1000 rows with columns `id,score,age,gender`;
    /// 150 rows have age < 25 and their scores are biased downward.
    pub fn write_german_credit(path: &Path, seed: u64) -> Result<(), DataError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // (age band, gender, count): age bands <25 / 25..=35 / >35
        let cells: [(std::ops::Range<u32>, &str, usize); 6] = [
            (36..70, "male", 100),
            (36..70, "female", 360),
            (25..36, "male", 130),
            (25..36, "female", 260),
            (19..25, "male", 80),
            (19..25, "female", 70),
        ];
        let mut rows = Vec::new();
        for (band, gender, count) in cells {
            for _ in 0..count {
                let age = rng.gen_range(band.clone());
                let young = age < 25;
                let center = if young { 0.42 } else { 0.62 };
                let score = noisy(&mut rng, center, 0.3, 0.01, 0.99);
                rows.push((score, age, gender));
            }
        }
        // shuffle so the file is not pre-sorted by group
        for i in (1..rows.len()).rev() {
            rows.swap(i, rng.gen_range(0..=i));
        }
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "id,score,age,gender")?;
        for (idx, (score, age, gender)) in rows.iter().enumerate() {
            writeln!(file, "g{:04},{:.6},{},{}", idx + 1, score, age, gender)?;
        }
        Ok(())
    }

    /// Two-group credit schema: protected = age < 25 (group 0).
    pub fn german_schema() -> DatasetSchema {
        DatasetSchema {
            id_column: "id".into(),
            score_column: "score".into(),
            score_direction: Default::default(),
            delimiter: ",".into(),
            normalize_scores: true,
            groups: vec![
                GroupRule {
                    name: "age_lt_25".into(),
                    when: vec![Predicate {
                        column: "age".into(),
                        op: Op::Lt,
                        value: PredicateValue::Number(25.0),
                    }],
                },
                GroupRule { name: "age_ge_25".into(), when: vec![] },
            ],
        }
    }

    /// Intersectional age-band x gender schema (six groups).
    pub fn german_six_group_schema() -> DatasetSchema {
        let mut groups = Vec::new();
        let bands: [(&str, Op, f64, Option<(Op, f64)>); 3] = [
            ("gt_35", Op::Gt, 35.0, None),
            ("25_35", Op::Ge, 25.0, Some((Op::Le, 35.0))),
            ("lt_25", Op::Lt, 25.0, None),
        ];
        for (band_name, op, bound, extra) in bands {
            for gender in ["male", "female"] {
                let mut when = vec![Predicate {
                    column: "age".into(),
                    op: op.clone(),
                    value: PredicateValue::Number(bound),
                }];
                if let Some((op2, bound2)) = &extra {
                    when.push(Predicate {
                        column: "age".into(),
                        op: op2.clone(),
                        value: PredicateValue::Number(*bound2),
                    });
                }
                when.push(Predicate {
                    column: "gender".into(),
                    op: Op::Eq,
                    value: PredicateValue::Text(gender.into()),
                });
                groups.push(GroupRule { name: format!("{gender}_{band_name}"), when });
            }
        }
        DatasetSchema { groups, ..german_schema() }
    }

    /// Recidivism dataset: 6907 rows with columns `id,score,sex,race`;
    /// 19% female, 55% African-American, both biased downward in score.
    pub fn write_compas(path: &Path, seed: u64) -> Result<(), DataError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 6907usize;
        let females = (n as f64 * 0.19).round() as usize; // 1312
        let african_american = (n as f64 * 0.55).round() as usize; // 3799
        let mut rows = Vec::with_capacity(n);
        for idx in 0..n {
            let sex = if idx < females { "Female" } else { "Male" };
            let race = if (idx + females / 2) % n < african_american {
                "African-American"
            } else {
                "Caucasian"
            };
            let mut center = 0.6;
            if sex == "Female" {
                center -= 0.18;
            }
            if race == "African-American" {
                center -= 0.1;
            }
            let score = noisy(&mut rng, center, 0.28, 0.01, 0.99);
            rows.push((score, sex, race));
        }
        for i in (1..rows.len()).rev() {
            rows.swap(i, rng.gen_range(0..=i));
        }
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "id,score,sex,race")?;
        for (idx, (score, sex, race)) in rows.iter().enumerate() {
            writeln!(file, "c{:05},{:.6},{},{}", idx + 1, score, sex, race)?;
        }
        Ok(())
    }

    /// Two-group recidivism schema: protected = female (group 0).
    pub fn compas_schema() -> DatasetSchema {
        DatasetSchema {
            id_column: "id".into(),
            score_column: "score".into(),
            score_direction: Default::default(),
            delimiter: ",".into(),
            normalize_scores: true,
            groups: vec![
                GroupRule {
                    name: "female".into(),
                    when: vec![Predicate {
                        column: "sex".into(),
                        op: Op::Eq,
                        value: PredicateValue::Text("Female".into()),
                    }],
                },
                GroupRule { name: "male".into(), when: vec![] },
            ],
        }
    }

    /// Recidivism schema keyed on race instead of sex.
    pub fn compas_race_schema() -> DatasetSchema {
        DatasetSchema {
            groups: vec![
                GroupRule {
                    name: "african_american".into(),
                    when: vec![Predicate {
                        column: "race".into(),
                        op: Op::Eq,
                        value: PredicateValue::Text("African-American".into()),
                    }],
                },
                GroupRule { name: "other".into(), when: vec![] },
            ],
            ..compas_schema()
        }
    }
}
