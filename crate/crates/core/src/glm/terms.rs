use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, Dataset, FeatureSchema};
use crate::error::{Error, Result};

/// Parametric form of a pairwise interaction.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum InteractionForm {
    /// `x_a^power_a · x_b^power_b`
    NumNum {
        a: String,
        power_a: u32,
        b: String,
        power_b: u32,
    },
    /// `x_num · 1{x_cat = j}` for every non-reference level `j`
    NumCat { num: String, cat: String },
    /// `1{x_a = r}·1{x_b = s}` over non-reference levels
    CatCat { a: String, b: String },
}

impl InteractionForm {
    pub fn features(&self) -> (&str, &str) {
        match self {
            InteractionForm::NumNum { a, b, .. } => (a, b),
            InteractionForm::NumCat { num, cat } => (num, cat),
            InteractionForm::CatCat { a, b } => (a, b),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TermSpec {
    Intercept,
    Numeric { name: String, power: u32 },
    LogNumeric { name: String },
    Categorical { name: String },
    Interaction { interaction: InteractionForm },
}

fn power_suffix(name: &str, power: u32) -> String {
    if power == 1 {
        name.to_string()
    } else {
        format!("{name}^{power}")
    }
}

impl fmt::Display for InteractionForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InteractionForm::NumNum {
                a,
                power_a,
                b,
                power_b,
            } => write!(
                f,
                "{}*{}",
                power_suffix(a, *power_a),
                power_suffix(b, *power_b)
            ),
            InteractionForm::NumCat { num, cat } => write!(f, "{num}*{cat}"),
            InteractionForm::CatCat { a, b } => write!(f, "{a}*{b}"),
        }
    }
}

impl fmt::Display for TermSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TermSpec::Intercept => write!(f, "intercept"),
            TermSpec::Numeric { name, power } => write!(f, "{}", power_suffix(name, *power)),
            TermSpec::LogNumeric { name } => write!(f, "log({name})"),
            TermSpec::Categorical { name } => write!(f, "{name}"),
            TermSpec::Interaction { interaction } => write!(f, "{interaction}"),
        }
    }
}

fn parse_factor(s: &str) -> Result<(String, u32)> {
    let s = s.trim();
    match s.split_once('^') {
        Some((name, p)) => {
            let power: u32 = p
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad power in '{s}'")))?;
            if power == 0 {
                return Err(Error::InvalidArgument(format!(
                    "power must be positive in '{s}'"
                )));
            }
            Ok((name.trim().to_string(), power))
        }
        None => Ok((s.to_string(), 1)),
    }
}

impl TermSpec {
    pub fn numeric(name: impl Into<String>, power: u32) -> Self {
        TermSpec::Numeric {
            name: name.into(),
            power,
        }
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        TermSpec::Categorical { name: name.into() }
    }

    pub fn interaction(form: InteractionForm) -> Self {
        TermSpec::Interaction { interaction: form }
    }

    /// Parses `intercept`, `x`, `x^2`, `log(x)`, `a*b`, `a^2*b`; feature kinds come
    /// from the schema.
    pub fn parse(text: &str, schema: &FeatureSchema) -> Result<Self> {
        let t = text.trim();
        if t == "intercept" || t == "1" {
            return Ok(TermSpec::Intercept);
        }
        if let Some(inner) = t.strip_prefix("log(").and_then(|r| r.strip_suffix(')')) {
            let name = inner.trim();
            expect_kind(schema, name, true)?;
            return Ok(TermSpec::LogNumeric {
                name: name.to_string(),
            });
        }
        if let Some((l, r)) = t.split_once('*') {
            let (a, pa) = parse_factor(l)?;
            let (b, pb) = parse_factor(r)?;
            let a_num = is_numeric(schema, &a)?;
            let b_num = is_numeric(schema, &b)?;
            let form = match (a_num, b_num) {
                (true, true) => InteractionForm::NumNum {
                    a,
                    power_a: pa,
                    b,
                    power_b: pb,
                },
                (true, false) | (false, true) => {
                    let (num, pn, cat, pc) = if a_num {
                        (a, pa, b, pb)
                    } else {
                        (b, pb, a, pa)
                    };
                    if pn != 1 || pc != 1 {
                        return Err(Error::InvalidArgument(format!(
                            "numeric-by-categorical interaction '{t}' takes no powers"
                        )));
                    }
                    InteractionForm::NumCat { num, cat }
                }
                (false, false) => {
                    if pa != 1 || pb != 1 {
                        return Err(Error::InvalidArgument(format!(
                            "categorical interaction '{t}' takes no powers"
                        )));
                    }
                    InteractionForm::CatCat { a, b }
                }
            };
            if form.features().0 == form.features().1 {
                return Err(Error::InvalidArgument(format!(
                    "interaction '{t}' pairs a feature with itself"
                )));
            }
            return Ok(TermSpec::interaction(form));
        }
        let (name, power) = parse_factor(t)?;
        if is_numeric(schema, &name)? {
            Ok(TermSpec::Numeric { name, power })
        } else if power == 1 {
            Ok(TermSpec::Categorical { name })
        } else {
            Err(Error::InvalidArgument(format!(
                "categorical '{name}' cannot take a power"
            )))
        }
    }

    pub fn parse_list<S: AsRef<str>>(items: &[S], schema: &FeatureSchema) -> Result<Vec<Self>> {
        items
            .iter()
            .map(|s| TermSpec::parse(s.as_ref(), schema))
            .collect()
    }

    /// Features referenced by the term.
    pub fn features(&self) -> Vec<&str> {
        match self {
            TermSpec::Intercept => vec![],
            TermSpec::Numeric { name, .. }
            | TermSpec::LogNumeric { name }
            | TermSpec::Categorical { name } => vec![name],
            TermSpec::Interaction { interaction } => {
                let (a, b) = interaction.features();
                vec![a, b]
            }
        }
    }
}

fn is_numeric(schema: &FeatureSchema, name: &str) -> Result<bool> {
    Ok(matches!(schema.column(name)?.kind, ColumnKind::Numeric))
}

fn expect_kind(schema: &FeatureSchema, name: &str, numeric: bool) -> Result<()> {
    let kind = &schema.column(name)?.kind;
    if matches!(kind, ColumnKind::Numeric) != numeric {
        return Err(Error::KindMismatch {
            name: name.to_string(),
            expected: if numeric { "numeric" } else { "categorical" },
            found: kind.name(),
        });
    }
    Ok(())
}

/// Row-major design matrix with one label per column.
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    pub n_rows: usize,
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

impl Design {
    pub fn width(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| self.values[i * self.width() + j])
            .collect()
    }
}

fn non_reference_levels(categories: &[String], reference: usize) -> Vec<usize> {
    (0..categories.len()).filter(|&l| l != reference).collect()
}

fn indicator(codes: &[u32], level: usize) -> Vec<f64> {
    codes
        .iter()
        .map(|&c| if c as usize == level { 1.0 } else { 0.0 })
        .collect()
}

fn term_columns(data: &Dataset, term: &TermSpec) -> Result<Vec<(String, Vec<f64>)>> {
    let n = data.len();
    Ok(match term {
        TermSpec::Intercept => vec![("(Intercept)".to_string(), vec![1.0; n])],
        TermSpec::Numeric { name, power } => {
            let v = data.numeric(name)?;
            vec![(
                power_suffix(name, *power),
                v.iter().map(|x| x.powi(*power as i32)).collect(),
            )]
        }
        TermSpec::LogNumeric { name } => {
            let v = data.numeric(name)?;
            if let Some(i) = v.iter().position(|&x| x <= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "log({name}) needs positive values; row {i} has {}",
                    v[i]
                )));
            }
            vec![(format!("log({name})"), v.iter().map(|x| x.ln()).collect())]
        }
        TermSpec::Categorical { name } => {
            let (codes, cats, reference) = data.categorical(name)?;
            non_reference_levels(cats, reference)
                .into_iter()
                .map(|l| (format!("{name}={}", cats[l]), indicator(codes, l)))
                .collect()
        }
        TermSpec::Interaction { interaction } => match interaction {
            InteractionForm::NumNum {
                a,
                power_a,
                b,
                power_b,
            } => {
                let va = data.numeric(a)?;
                let vb = data.numeric(b)?;
                vec![(
                    interaction.to_string(),
                    va.iter()
                        .zip(vb)
                        .map(|(x, y)| x.powi(*power_a as i32) * y.powi(*power_b as i32))
                        .collect(),
                )]
            }
            InteractionForm::NumCat { num, cat } => {
                let v = data.numeric(num)?;
                let (codes, cats, reference) = data.categorical(cat)?;
                non_reference_levels(cats, reference)
                    .into_iter()
                    .map(|l| {
                        let col = v
                            .iter()
                            .zip(codes)
                            .map(|(x, &c)| if c as usize == l { *x } else { 0.0 })
                            .collect();
                        (format!("{num}:{cat}={}", cats[l]), col)
                    })
                    .collect()
            }
            InteractionForm::CatCat { a, b } => {
                let (ca, la, ra) = data.categorical(a)?;
                let (cb, lb, rb) = data.categorical(b)?;
                let mut cols = Vec::new();
                for r in non_reference_levels(la, ra) {
                    for s in non_reference_levels(lb, rb) {
                        let col = ca
                            .iter()
                            .zip(cb)
                            .map(|(&x, &y)| {
                                if x as usize == r && y as usize == s {
                                    1.0
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                        cols.push((format!("{a}={}:{b}={}", la[r], lb[s]), col));
                    }
                }
                cols
            }
        },
    })
}

/// Expands `terms` into a design matrix, columns in term order.
pub fn build_design(data: &Dataset, terms: &[TermSpec]) -> Result<Design> {
    let mut labels = Vec::new();
    let mut cols = Vec::new();
    for term in terms {
        for (label, col) in term_columns(data, term)? {
            labels.push(label);
            cols.push(col);
        }
    }
    let n = data.len();
    let w = cols.len();
    let mut values = vec![0.0; n * w];
    for (j, col) in cols.iter().enumerate() {
        for (i, x) in col.iter().enumerate() {
            values[i * w + j] = *x;
        }
    }
    Ok(Design {
        n_rows: n,
        labels,
        values,
    })
}
