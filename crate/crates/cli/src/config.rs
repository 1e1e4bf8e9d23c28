//! Experiment configuration: TOML in, validated plan out.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use oblique::metrics::ZetaPolicy;
use oblique::sketching::PlanKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Ols,
    Cur,
    Projection,
    Lowerbound,
    OracleCheck,
    InversionCheck,
}

impl ExperimentKind {
    pub fn tag(self) -> &'static str {
        match self {
            ExperimentKind::Ols => "ols",
            ExperimentKind::Cur => "cur",
            ExperimentKind::Projection => "projection",
            ExperimentKind::Lowerbound => "lowerbound",
            ExperimentKind::OracleCheck => "oracle-check",
            ExperimentKind::InversionCheck => "inversion-check",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Experiment id written to every result row; defaults to the kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub data: DataSpec,
    #[serde(default)]
    pub sketches: Vec<SketchSpec>,
    #[serde(default)]
    pub m_grid: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub m_c_grid: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub m_r_grid: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub zeta: ZetaSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_trials() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSpec {
    Csv {
        path: PathBuf,
        #[serde(default = "yes")]
        header: bool,
        /// Column index or header name of the response.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        response: Option<ResponseSpec>,
        #[serde(default)]
        standardize: StandardizeSpec,
    },
    Synthetic {
        kind: SynthKind,
        n: usize,
        p: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spike: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        exponent: Option<f64>,
        /// Seed for the fixture; defaults to the experiment seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// The hard instance with `p = 4k` columns.
    Lowerbound { k: usize, n: usize },
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ResponseSpec {
    Index(usize),
    Name(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StandardizeSpec {
    #[default]
    None,
    Columns,
    Response,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Gaussian,
    Coherent,
    Powerlaw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SketchSpec {
    /// `uniform | rownorm | lev | shrinkage(λ) | srht | dsrht | gaussian |
    /// sparse_sign(s)`.
    pub family: String,
    #[serde(default)]
    pub debiased: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZetaSpec {
    #[serde(default)]
    pub enabled: bool,
    /// A positive number, `"auto"` or `"full_rank"`; `"auto"` when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<EpsSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsSpec {
    Value(f64),
    Named(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
    /// Record wall-clock times in the file (breaks byte-identical reruns).
    #[serde(default)]
    pub timing: bool,
}

/// A sketch family after validation.
#[derive(Clone, Debug, PartialEq)]
pub enum FamilySpec {
    Rows(PlanKind),
    Srht,
    Gaussian,
    SparseSign(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedSketch {
    pub family: FamilySpec,
    pub debiased: bool,
    pub tag: String,
}

impl ResolvedSketch {
    pub fn is_row_sampling(&self) -> bool {
        matches!(self.family, FamilySpec::Rows(_))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("{} violation(s):\n  - {}", .0.len(), .0.join("\n  - "))]
    Invalid(Vec<String>),
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
}

/// Splits `name(arg)` into `("name", Some("arg"))`.
fn split_call(s: &str) -> (&str, Option<&str>) {
    match (s.find('('), s.strip_suffix(')')) {
        (Some(i), Some(body)) => (&s[..i], Some(&body[i + 1..])),
        _ => (s, None),
    }
}

fn resolve_sketch(spec: &SketchSpec, violations: &mut Vec<String>) -> Option<ResolvedSketch> {
    let family = spec.family.trim();
    let (name, arg) = split_call(family);
    let fam = match name {
        "uniform" => FamilySpec::Rows(PlanKind::Uniform),
        "rownorm" => FamilySpec::Rows(PlanKind::RowNorm),
        "lev" => FamilySpec::Rows(PlanKind::ExactLeverage),
        "shrinkage" => {
            let lambda = match (arg.map(str::parse::<f64>), spec.lambda) {
                (Some(Ok(l)), _) => Some(l),
                (Some(Err(_)), _) => {
                    violations.push(format!("sketch {family:?}: lambda is not a number"));
                    return None;
                }
                (None, l) => l,
            };
            match lambda {
                None => {
                    violations.push(format!("sketch {family:?}: shrinkage requires lambda"));
                    return None;
                }
                Some(l) if !(0.0..=1.0).contains(&l) => {
                    violations.push(format!("sketch {family:?}: lambda must lie in [0, 1]"));
                    return None;
                }
                Some(l) => FamilySpec::Rows(PlanKind::Shrinkage(l)),
            }
        }
        "srht" | "dsrht" => FamilySpec::Srht,
        "gaussian" => FamilySpec::Gaussian,
        "sparse_sign" => {
            let s = match (arg.map(str::parse::<usize>), spec.s) {
                (Some(Ok(s)), _) => Some(s),
                (Some(Err(_)), _) => None,
                (None, s) => s,
            };
            match s {
                Some(s) if s >= 1 => FamilySpec::SparseSign(s),
                _ => {
                    violations.push(format!(
                        "sketch {family:?}: sparse_sign requires a positive sparsity s"
                    ));
                    return None;
                }
            }
        }
        _ => {
            violations.push(format!("unknown sketch family {family:?}"));
            return None;
        }
    };
    let debiased = spec.debiased || name == "dsrht";
    match (&fam, name) {
        (FamilySpec::Srht, "srht") if spec.debiased => {
            violations.push(
                "debiased srht is not supported: plain SRHT needs no matrix debiasing; \
                 use family \"dsrht\" to debias the uniform sampling stage with leverage \
                 scores of the Hadamard-rotated design"
                    .into(),
            );
            return None;
        }
        (FamilySpec::Gaussian | FamilySpec::SparseSign(_), _) if debiased => {
            violations.push(format!(
                "sketch {family:?}: debiasing is only defined for row sampling and dsrht"
            ));
            return None;
        }
        _ => {}
    }
    let tag = match &fam {
        FamilySpec::Rows(kind) => kind.tag(),
        FamilySpec::Srht if debiased => "dsrht".into(),
        FamilySpec::Srht => "srht".into(),
        FamilySpec::Gaussian => "gaussian".into(),
        FamilySpec::SparseSign(s) => format!("sparse_sign({s})"),
    };
    Some(ResolvedSketch { family: fam, debiased, tag })
}

fn check_grid(name: &str, grid: &[usize], violations: &mut Vec<String>) {
    if grid.is_empty() {
        violations.push(format!("{name} empty"));
        return;
    }
    if grid.contains(&0) {
        violations.push(format!("{name} contains 0"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        violations.push(format!("{name} not strictly increasing"));
    }
}

/// A config that passed every static check.
#[derive(Clone, Debug)]
pub struct ValidatedConfig {
    pub raw: ExperimentConfig,
    pub sketches: Vec<ResolvedSketch>,
    /// `(m, m_c, m_r)` cells in config order.
    pub cells: Vec<Cell>,
    pub zeta: ZetaPolicy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Single(usize),
    Pair(usize, usize),
}

impl ValidatedConfig {
    pub fn id(&self) -> String {
        self.raw.id.clone().unwrap_or_else(|| self.raw.experiment.tag().to_string())
    }
}

/// CUR without `sketches` compares classical and debiased row-norm plans.
fn default_cur_sketches() -> Vec<SketchSpec> {
    [false, true]
        .into_iter()
        .map(|debiased| SketchSpec { family: "rownorm".into(), debiased, lambda: None, s: None })
        .collect()
}

pub fn validate(cfg: &ExperimentConfig) -> Result<ValidatedConfig, ConfigError> {
    let mut v = Vec::new();
    let kind = cfg.experiment;
    let mut cfg = cfg.clone();
    if kind == ExperimentKind::Cur && cfg.sketches.is_empty() {
        cfg.sketches = default_cur_sketches();
    }
    if cfg.trials == 0 {
        v.push("trials must be >= 1".into());
    }

    let sketches: Vec<ResolvedSketch> =
        cfg.sketches.iter().filter_map(|s| resolve_sketch(s, &mut v)).collect();
    match kind {
        ExperimentKind::Lowerbound if !cfg.sketches.is_empty() => {
            v.push("lowerbound uses its own sampling plan; remove `sketches`".into())
        }
        ExperimentKind::Lowerbound => {}
        _ if cfg.sketches.is_empty() => v.push("sketches empty".into()),
        ExperimentKind::OracleCheck if sketches.iter().any(|s| !s.is_row_sampling()) => {
            v.push("oracle-check supports row-sampling sketches only".into())
        }
        ExperimentKind::InversionCheck
            if sketches
                .iter()
                .any(|s| !(s.is_row_sampling() || s.family == FamilySpec::Gaussian) || s.debiased) =>
        {
            v.push("inversion-check supports classical row sampling and gaussian only".into())
        }
        _ => {}
    }

    let cells = if kind == ExperimentKind::Cur {
        match (cfg.c, cfg.r) {
            (Some(c), Some(r)) if c >= 1 && r >= 1 => {}
            _ => v.push("cur requires positive c and r".into()),
        }
        let mc = if cfg.m_c_grid.is_empty() { &cfg.m_grid } else { &cfg.m_c_grid };
        let mr = if cfg.m_r_grid.is_empty() { &cfg.m_grid } else { &cfg.m_r_grid };
        let name_c = if cfg.m_c_grid.is_empty() { "m_grid" } else { "m_c_grid" };
        let name_r = if cfg.m_r_grid.is_empty() { "m_grid" } else { "m_r_grid" };
        check_grid(name_c, mc, &mut v);
        if name_r != name_c {
            check_grid(name_r, mr, &mut v);
        }
        if mc.len() != mr.len() {
            v.push("m_c_grid and m_r_grid must have the same length".into());
        }
        mc.iter().zip(mr).map(|(&a, &b)| Cell::Pair(a, b)).collect()
    } else {
        check_grid("m_grid", &cfg.m_grid, &mut v);
        if !cfg.m_c_grid.is_empty() || !cfg.m_r_grid.is_empty() {
            v.push("m_c_grid / m_r_grid only apply to cur".into());
        }
        cfg.m_grid.iter().map(|&m| Cell::Single(m)).collect()
    };

    match &cfg.data {
        DataSpec::Synthetic { kind: sk, n, p, spike, exponent, .. } => {
            if *p == 0 || n < p {
                v.push(format!("synthetic data needs n >= p >= 1 (n = {n}, p = {p})"));
            }
            match sk {
                SynthKind::Coherent if spike.is_none() => {
                    v.push("coherent data requires spike".into())
                }
                SynthKind::Powerlaw if exponent.is_none() => {
                    v.push("powerlaw data requires exponent".into())
                }
                _ => {}
            }
        }
        DataSpec::Lowerbound { k, n } => {
            if kind != ExperimentKind::Lowerbound {
                v.push("lowerbound data is only used by the lowerbound experiment".into());
            }
            if *k == 0 || *n < 8 * k {
                v.push(format!("lowerbound data needs k >= 1 and n >= 8k (k = {k}, n = {n})"));
            }
        }
        DataSpec::Csv { response, header, .. } => {
            if matches!(response, Some(ResponseSpec::Name(_))) && !header {
                v.push("a named response column needs header = true".into());
            }
        }
    }
    if kind == ExperimentKind::Lowerbound && !matches!(cfg.data, DataSpec::Lowerbound { .. }) {
        v.push("lowerbound requires data.source = \"lowerbound\"".into());
    }
    let needs_response = matches!(
        kind,
        ExperimentKind::Ols | ExperimentKind::OracleCheck
    );
    if needs_response {
        if let DataSpec::Csv { response: None, .. } = &cfg.data {
            v.push(format!("{} requires a response column", kind.tag()));
        }
    }

    let zeta = if cfg.zeta.enabled {
        match &cfg.zeta.eps {
            None => ZetaPolicy::auto(),
            Some(EpsSpec::Named(s)) if s == "auto" => ZetaPolicy::auto(),
            Some(EpsSpec::Named(s)) if s == "full_rank" => ZetaPolicy::FullRank,
            Some(EpsSpec::Named(s)) => {
                v.push(format!("zeta eps must be a number, \"auto\" or \"full_rank\", got {s:?}"));
                ZetaPolicy::Disabled
            }
            Some(EpsSpec::Value(e)) if *e > 0.0 && e.is_finite() => {
                ZetaPolicy::Embedding { eps: Some(*e) }
            }
            Some(EpsSpec::Value(e)) => {
                v.push(format!("zeta eps must be positive, got {e}"));
                ZetaPolicy::Disabled
            }
        }
    } else {
        ZetaPolicy::Disabled
    };

    if v.is_empty() {
        Ok(ValidatedConfig { raw: cfg, sketches, cells, zeta })
    } else {
        Err(ConfigError::Invalid(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
experiment = "ols"
m_grid = [16, 32]
[data]
source = "synthetic"
kind = "gaussian"
n = 64
p = 4
[[sketches]]
family = "uniform"
"#;

    fn violations(text: &str) -> Vec<String> {
        match validate(&parse_config(text).unwrap()) {
            Err(ConfigError::Invalid(v)) => v,
            other => panic!("expected violations, got {other:?}"),
        }
    }

    #[test]
    fn base_config_is_valid() {
        let cfg = validate(&parse_config(BASE).unwrap()).unwrap();
        assert_eq!(cfg.cells, vec![Cell::Single(16), Cell::Single(32)]);
        assert_eq!(cfg.raw.trials, 1000);
        assert_eq!(cfg.zeta, ZetaPolicy::Disabled);
        assert_eq!(cfg.id(), "ols");
    }

    #[test]
    fn empty_grid_is_reported() {
        let v = violations(&BASE.replace("m_grid = [16, 32]", "m_grid = []"));
        assert_eq!(v, vec!["m_grid empty".to_string()]);
        let v = violations(&BASE.replace("[16, 32]", "[32, 16]"));
        assert_eq!(v, vec!["m_grid not strictly increasing".to_string()]);
    }

    #[test]
    fn shrinkage_needs_lambda() {
        let v = violations(&BASE.replace("\"uniform\"", "\"shrinkage\""));
        assert!(v[0].contains("requires lambda"), "{v:?}");
        let ok = validate(&parse_config(&BASE.replace("\"uniform\"", "\"shrinkage(0.5)\"")).unwrap())
            .unwrap();
        assert_eq!(ok.sketches[0].family, FamilySpec::Rows(PlanKind::Shrinkage(0.5)));
        let ok = validate(
            &parse_config(&BASE.replace("\"uniform\"", "\"shrinkage\"\nlambda = 0.25")).unwrap(),
        )
        .unwrap();
        assert_eq!(ok.sketches[0].tag, PlanKind::Shrinkage(0.25).tag());
    }

    #[test]
    fn debiased_srht_points_to_dsrht() {
        let v = violations(&BASE.replace("\"uniform\"", "\"srht\"\ndebiased = true"));
        assert!(v[0].contains("dsrht"), "{v:?}");
        let ok = validate(&parse_config(&BASE.replace("\"uniform\"", "\"dsrht\"")).unwrap()).unwrap();
        assert!(ok.sketches[0].debiased);
        assert_eq!(ok.sketches[0].tag, "dsrht");
        let v = violations(&BASE.replace("\"uniform\"", "\"gaussian\"\ndebiased = true"));
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn zeta_forms() {
        let with = |z: &str| BASE.to_string() + "[zeta]\nenabled = true\n" + z;
        let pol = |t: &str| validate(&parse_config(t).unwrap()).unwrap().zeta;
        assert_eq!(pol(&with("")), ZetaPolicy::auto());
        assert_eq!(pol(&with("eps = \"auto\"")), ZetaPolicy::auto());
        assert_eq!(pol(&with("eps = 0.5")), ZetaPolicy::Embedding { eps: Some(0.5) });
        assert_eq!(pol(&with("eps = \"full_rank\"")), ZetaPolicy::FullRank);
        assert_eq!(violations(&with("eps = -1.0")).len(), 1);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(matches!(parse_config(&(BASE.to_string() + "bogus = 1\n")), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn cur_grids() {
        let text = BASE.replace("experiment = \"ols\"", "experiment = \"cur\"\nc = 2\nr = 3");
        let cfg = validate(&parse_config(&text).unwrap()).unwrap();
        assert_eq!(cfg.cells, vec![Cell::Pair(16, 16), Cell::Pair(32, 32)]);
        let text = text.replace("m_grid = [16, 32]", "m_c_grid = [8, 16]\nm_r_grid = [4]");
        let v = violations(&text);
        assert!(v.iter().any(|s| s.contains("same length")), "{v:?}");
        let v = violations(&BASE.replace("experiment = \"ols\"", "experiment = \"cur\""));
        assert!(v.iter().any(|s| s.contains("c and r")), "{v:?}");
    }

    #[test]
    fn cur_defaults_to_row_norm_pair() {
        let text = BASE[..BASE.find("[[sketches]]").unwrap()].replace("experiment = \"ols\"", "experiment = \"cur\"\nc = 2\nr = 3");
        let cfg = validate(&parse_config(&text).unwrap()).unwrap();
        let tags: Vec<(&str, bool)> = cfg.sketches.iter().map(|s| (s.tag.as_str(), s.debiased)).collect();
        assert_eq!(tags, vec![("rownorm", false), ("rownorm", true)]);
        assert_eq!(cfg.raw.sketches.len(), 2);
        let v = violations(&BASE[..BASE.find("[[sketches]]").unwrap()]);
        assert_eq!(v, vec!["sketches empty".to_string()]);
    }

    #[test]
    fn split_call_forms() {
        assert_eq!(split_call("sparse_sign(4)"), ("sparse_sign", Some("4")));
        assert_eq!(split_call("lev"), ("lev", None));
    }
}
