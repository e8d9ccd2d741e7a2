use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::{KernelKind, KernelSpec};
use super::smo::SmoParams;
use super::{svm_train_with, LabeledSet, SvmModel};
use crate::error::{Error, Result};
use crate::features::mean_column_variance;
use crate::label::{require_both_classes, Label};
use crate::metrics::balanced_accuracy;

pub const DEFAULT_C: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

/// How gamma is derived from the training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaMode {
    /// `1 / N`
    Uniform,
    /// `1 / (N σ²)` with σ² the mean column variance of the training matrix.
    Scaled,
}

impl GammaMode {
    pub const ALL: [GammaMode; 2] = [GammaMode::Uniform, GammaMode::Scaled];

    pub fn gamma(self, dim: usize, sigma2: f64) -> Result<f64> {
        let g = match self {
            GammaMode::Uniform => 1.0 / dim as f64,
            GammaMode::Scaled => 1.0 / (dim as f64 * sigma2),
        };
        if g.is_finite() && g > 0.0 {
            Ok(g)
        } else {
            Err(Error::Training(format!(
                "{self:?} gamma undefined for dim {dim}, variance {sigma2}"
            )))
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GammaMode::Uniform => "uniform",
            GammaMode::Scaled => "scaled",
        }
    }
}

impl std::str::FromStr for GammaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(GammaMode::Uniform),
            "scaled" => Ok(GammaMode::Scaled),
            other => Err(Error::invalid(format!("unknown gamma mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub c: f64,
    pub gamma_mode: GammaMode,
    pub kernel: KernelKind,
}

/// Ordered list of configurations. Earlier entries win ties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub configs: Vec<GridConfig>,
}

impl Grid {
    /// 5 C values × 2 gamma modes × 3 kernels, C outermost.
    pub fn default_grid() -> Self {
        Self::product(&DEFAULT_C, &GammaMode::ALL, &KernelKind::ALL)
    }

    pub fn product(cs: &[f64], gammas: &[GammaMode], kernels: &[KernelKind]) -> Self {
        let mut configs = Vec::with_capacity(cs.len() * gammas.len() * kernels.len());
        for &c in cs {
            for &gamma_mode in gammas {
                for &kernel in kernels {
                    configs.push(GridConfig { c, gamma_mode, kernel });
                }
            }
        }
        Self { configs }
    }

    pub fn single(config: GridConfig) -> Self {
        Self { configs: vec![config] }
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    /// `default`, or comma-separated `key=value` pairs over `C`, `gamma` and
    /// `kernel`, where a value may list alternatives separated by `|` or `;`.
    /// Omitted keys keep their full default range.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if spec.is_empty() || spec.eq_ignore_ascii_case("default") {
            return Ok(Self::default_grid());
        }
        let mut cs = DEFAULT_C.to_vec();
        let mut gammas = GammaMode::ALL.to_vec();
        let mut kernels = KernelKind::ALL.to_vec();
        for part in spec.split(',') {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("grid entry `{part}` is not key=value")))?;
            let values = value.split(['|', ';']).map(str::trim);
            match key.trim().to_ascii_lowercase().as_str() {
                "c" => {
                    cs = values
                        .map(|v| {
                            v.parse::<f64>()
                                .ok()
                                .filter(|c| c.is_finite() && *c > 0.0)
                                .ok_or_else(|| Error::invalid(format!("bad C value `{v}`")))
                        })
                        .collect::<Result<_>>()?
                }
                "gamma" => gammas = values.map(str::parse).collect::<Result<_>>()?,
                "kernel" => kernels = values.map(str::parse).collect::<Result<_>>()?,
                other => return Err(Error::invalid(format!("unknown grid key `{other}`"))),
            }
        }
        let grid = Self::product(&cs, &gammas, &kernels);
        if grid.is_empty() {
            return Err(Error::invalid("grid is empty"));
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub config: GridConfig,
    pub gamma: Option<f64>,
    pub dev_balanced_accuracy: Option<f64>,
    pub support_vectors: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub entries: Vec<GridEntry>,
    pub best_index: usize,
    /// Mean column variance of the standardized training matrix.
    pub sigma2_f: f64,
    pub model: SvmModel,
}

impl GridSearchResult {
    pub fn best(&self) -> &GridEntry {
        &self.entries[self.best_index]
    }
}

/// Trains one model per configuration and keeps the one with the highest
/// dev balanced accuracy at threshold 0. Configurations that fail to train
/// are recorded with their error and skipped.
pub fn grid_search(train: &LabeledSet, dev: &LabeledSet, grid: &Grid, params: &SmoParams) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(Error::invalid("grid is empty"));
    }
    if dev.is_empty() {
        return Err(Error::Training("dev set is empty".into()));
    }
    require_both_classes(dev.labels(), "dev set").map_err(|e| Error::Training(e.to_string()))?;
    require_both_classes(train.labels(), "training set").map_err(|e| Error::Training(e.to_string()))?;
    if dev.standardizer() != train.standardizer() {
        return Err(Error::Training(
            "dev set must be standardized with the training standardizer".into(),
        ));
    }
    let dim = train.dim();
    let sigma2_f = mean_column_variance(train.x());

    let runs: Vec<(GridEntry, Option<SvmModel>)> = grid
        .configs
        .par_iter()
        .map(|&config| {
            let outcome = config.gamma_mode.gamma(dim, sigma2_f).and_then(|gamma| {
                let model = svm_train_with(train, config.c, KernelSpec::new(config.kernel, gamma), params)?;
                let pred: Vec<Label> = model
                    .decision_matrix(dev.x())?
                    .into_iter()
                    .map(Label::from_score)
                    .collect();
                let ba = balanced_accuracy(&pred, dev.labels())?;
                Ok((gamma, ba, model))
            });
            match outcome {
                Ok((gamma, ba, model)) => (
                    GridEntry {
                        config,
                        gamma: Some(gamma),
                        dev_balanced_accuracy: Some(ba),
                        support_vectors: Some(model.support_vectors.len()),
                        error: None,
                    },
                    Some(model),
                ),
                Err(e) => {
                    log::warn!("grid configuration {config:?} failed: {e}");
                    (
                        GridEntry {
                            config,
                            gamma: config.gamma_mode.gamma(dim, sigma2_f).ok(),
                            dev_balanced_accuracy: None,
                            support_vectors: None,
                            error: Some(e.to_string()),
                        },
                        None,
                    )
                }
            }
        })
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (i, (entry, _)) in runs.iter().enumerate() {
        if let Some(ba) = entry.dev_balanced_accuracy {
            if best.is_none_or(|(_, b)| ba > b) {
                best = Some((i, ba));
            }
        }
    }
    let (best_index, _) = best.ok_or_else(|| Error::Training("every grid configuration failed to train".into()))?;
    let mut entries = Vec::with_capacity(runs.len());
    let mut model = None;
    for (i, (entry, m)) in runs.into_iter().enumerate() {
        if i == best_index {
            model = m;
        }
        entries.push(entry);
    }
    Ok(GridSearchResult {
        entries,
        best_index,
        sigma2_f,
        model: model.expect("best entry has a model"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    fn toy() -> (LabeledSet, LabeledSet) {
        let rows: Vec<Vec<f64>> = (0..24)
            .map(|i| {
                let t = i as f64;
                let shift = if i % 2 == 0 { -1.0 } else { 1.0 };
                vec![shift + 0.3 * (t * 0.9).sin(), 0.5 * (t * 1.7).cos()]
            })
            .collect();
        let labels: Vec<Label> = (0..24)
            .map(|i| if i % 2 == 0 { Label::Real } else { Label::Df })
            .collect();
        let tr = Matrix::from_rows(&rows[..16]).unwrap();
        let dv = Matrix::from_rows(&rows[16..]).unwrap();
        let train = LabeledSet::fit(&tr, labels[..16].to_vec()).unwrap();
        let dev = LabeledSet::with_standardizer(&dv, labels[16..].to_vec(), train.standardizer().clone()).unwrap();
        (train, dev)
    }

    #[test]
    fn default_grid_order() {
        let g = Grid::default_grid();
        assert_eq!(g.len(), 30);
        assert_eq!(
            g.configs[0],
            GridConfig {
                c: 0.01,
                gamma_mode: GammaMode::Uniform,
                kernel: KernelKind::Rbf
            }
        );
        assert_eq!(g.configs[1].kernel, KernelKind::Polynomial);
        assert_eq!(g.configs[3].gamma_mode, GammaMode::Scaled);
        assert_eq!(g.configs[6].c, 0.1);
        assert_eq!(g.configs[29].c, 100.0);
    }

    #[test]
    fn parse_overrides() {
        let g = Grid::parse("C=1,kernel=rbf,gamma=scaled").unwrap();
        assert_eq!(
            g.configs,
            vec![GridConfig {
                c: 1.0,
                gamma_mode: GammaMode::Scaled,
                kernel: KernelKind::Rbf
            }]
        );
        assert_eq!(Grid::parse("default").unwrap().len(), 30);
        assert_eq!(Grid::parse("kernel=rbf|sigmoid").unwrap().len(), 20);
        assert!(Grid::parse("C=0").is_err());
        assert!(Grid::parse("depth=3").is_err());
        assert!(Grid::parse("kernel=linear").is_err());
    }

    #[test]
    fn singleton_grid_returns_its_config() {
        let (train, dev) = toy();
        let cfg = GridConfig {
            c: 10.0,
            gamma_mode: GammaMode::Scaled,
            kernel: KernelKind::Sigmoid,
        };
        let r = grid_search(&train, &dev, &Grid::single(cfg), &SmoParams::default()).unwrap();
        assert_eq!(r.best_index, 0);
        assert_eq!(r.best().config, cfg);
    }

    #[test]
    fn best_is_first_argmax() {
        let (train, dev) = toy();
        let r = grid_search(&train, &dev, &Grid::default_grid(), &SmoParams::default()).unwrap();
        assert_eq!(r.entries.len(), 30);
        let max = r
            .entries
            .iter()
            .filter_map(|e| e.dev_balanced_accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.best().dev_balanced_accuracy, Some(max));
        let first = r
            .entries
            .iter()
            .position(|e| e.dev_balanced_accuracy == Some(max))
            .unwrap();
        assert_eq!(r.best_index, first);
        assert!((r.sigma2_f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dev_preconditions() {
        let (train, dev) = toy();
        let one_class = LabeledSet::with_standardizer(
            &Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap(),
            vec![Label::Df, Label::Df],
            train.standardizer().clone(),
        )
        .unwrap();
        let g = Grid::default_grid();
        let p = SmoParams::default();
        assert!(grid_search(&train, &one_class, &g, &p).is_err());
        let refit = LabeledSet::fit(dev.x(), dev.labels().to_vec()).unwrap();
        assert!(grid_search(&train, &refit, &g, &p).is_err());
        assert!(grid_search(&train, &dev, &Grid { configs: vec![] }, &p).is_err());
    }
}
