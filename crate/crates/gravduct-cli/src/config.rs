//! Run configuration: TOML with sections, every key optional except the
//! background block. Unknown keys are rejected and validation failures
//! name the offending key.
//!
//! ```text
//!   [background]                  # required
//!   gamma = 2.0                   # adiabatic exponent, > 1
//!   m0 = 2.3316439815971242       # axial mass flux, > 0
//!   s0 = 1.0                      # inlet entropy level
//!   rho0 = 2.0                    # inlet density, > 0
//!   g0 = -1.0                     # inlet gravity slope
//!   length = 0.5                  # duct length, > 0
//!
//!   [grid]                        # defaults: 64 x 64
//!   n1 = 64
//!   n2 = 64
//!
//!   [perturbation]                # defaults: sigma 1e-3, cosine family
//!   sigma = 1e-3
//!   g_en = { amplitude = 1.0, wavenumber = 1 }
//!   s_en = { amplitude = 0.25, wavenumber = 1 }
//!   p_ex = { amplitude = 1.0, wavenumber = 1 }
//!   phi_bd = { amplitude = 0.25, wavenumber = 1 }
//!   # b_en = { amplitude = -0.25, wavenumber = 1 }   # must negate phi_bd
//!
//!   [iteration]                   # defaults shown
//!   max_iters = 50
//!   tol = 1e-10
//!   under_relaxation = 1.0
//!   box_factor = 8.0
//!
//!   [uniqueness]
//!   n_starts = 3
//!   seed = 42
//!
//!   [phase]                       # ranges default from the parameters
//!   rho_min = 0.2
//!   rho_max = 2.6
//!   g_max = 3.5
//!   n_rho = 121
//!   n_g = 121
//! ```

use gravduct::boundary::{BoundaryData, CosineShape};
use gravduct::driver::IterationConfig;
use gravduct::BackgroundParams;

use serde::Deserialize;

use std::fmt;
use std::path::Path;

/// Configuration-stage failure; always maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    background: RawBackground,
    grid: Option<RawGrid>,
    perturbation: Option<RawPerturbation>,
    iteration: Option<RawIteration>,
    uniqueness: Option<RawUniqueness>,
    phase: Option<RawPhase>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBackground {
    gamma: f64,
    m0: f64,
    s0: f64,
    rho0: f64,
    g0: f64,
    length: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    n1: Option<usize>,
    n2: Option<usize>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawShape {
    amplitude: f64,
    wavenumber: u32,
}

impl From<RawShape> for CosineShape {
    fn from(s: RawShape) -> Self {
        CosineShape::new(s.amplitude, s.wavenumber)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPerturbation {
    sigma: Option<f64>,
    g_en: Option<RawShape>,
    s_en: Option<RawShape>,
    p_ex: Option<RawShape>,
    phi_bd: Option<RawShape>,
    b_en: Option<RawShape>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIteration {
    max_iters: Option<usize>,
    tol: Option<f64>,
    under_relaxation: Option<f64>,
    box_factor: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUniqueness {
    n_starts: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhase {
    rho_min: Option<f64>,
    rho_max: Option<f64>,
    g_max: Option<f64>,
    n_rho: Option<usize>,
    n_g: Option<usize>,
}

/// Phase-portrait sampling window.
#[derive(Debug, Clone, Copy)]
pub struct PhaseSettings {
    pub rho_min: f64,
    pub rho_max: f64,
    pub g_max: f64,
    pub n_rho: usize,
    pub n_g: usize,
}

/// Multi-start settings.
#[derive(Debug, Clone, Copy)]
pub struct UniquenessSettings {
    pub n_starts: usize,
    pub seed: u64,
}

/// Fully validated run configuration with defaults applied.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub params: BackgroundParams,
    pub n1: usize,
    pub n2: usize,
    pub data: BoundaryData,
    pub iteration: IterationConfig,
    pub uniqueness: UniquenessSettings,
    pub phase: PhaseSettings,
    /// Raw bytes of the config file, hashed into the run summary.
    pub source: Vec<u8>,
}

pub const DEFAULT_N1: usize = 64;
pub const DEFAULT_N2: usize = 64;
pub const DEFAULT_SIGMA: f64 = 1e-3;

/// Parse and validate a config file, then apply command-line overrides.
pub fn parse_config(
    path: &Path,
    grid_override: Option<(usize, usize)>,
    sigma_override: Option<f64>,
) -> Result<RunConfig, ConfigError> {
    let source = std::fs::read(path)
        .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&source)
        .map_err(|_| ConfigError(format!("config {} is not UTF-8", path.display())))?;
    let raw: RawConfig = toml::from_str(text)
        .map_err(|e| ConfigError(format!("config {}: {e}", path.display())))?;

    let params = BackgroundParams {
        gamma: raw.background.gamma,
        m0: raw.background.m0,
        s0: raw.background.s0,
        rho0: raw.background.rho0,
        g0: raw.background.g0,
        length: raw.background.length,
    };
    params
        .validate()
        .map_err(|e| ConfigError(format!("background: {e}")))?;

    let grid = raw.grid.unwrap_or(RawGrid { n1: None, n2: None });
    let (mut n1, mut n2) = (
        grid.n1.unwrap_or(DEFAULT_N1),
        grid.n2.unwrap_or(DEFAULT_N2),
    );
    if let Some((o1, o2)) = grid_override {
        n1 = o1;
        n2 = o2;
    }
    for (key, n) in [("grid.n1", n1), ("grid.n2", n2)] {
        if !(4..=4096).contains(&n) {
            return Err(ConfigError(format!(
                "{key}: cell count {n} outside the supported range 4..=4096"
            )));
        }
    }

    let pert = raw.perturbation.unwrap_or(RawPerturbation {
        sigma: None,
        g_en: None,
        s_en: None,
        p_ex: None,
        phi_bd: None,
        b_en: None,
    });
    let mut sigma = pert.sigma.unwrap_or(DEFAULT_SIGMA);
    if let Some(s) = sigma_override {
        sigma = s;
    }
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(ConfigError(format!(
            "perturbation.sigma: must be finite and nonnegative, got {sigma}"
        )));
    }
    let defaults = BoundaryData::default_family(sigma);
    let data = BoundaryData {
        sigma,
        g_en: pert.g_en.map(Into::into).unwrap_or(defaults.g_en),
        s_en: pert.s_en.map(Into::into).unwrap_or(defaults.s_en),
        p_ex: pert.p_ex.map(Into::into).unwrap_or(defaults.p_ex),
        phi_bd: pert.phi_bd.map(Into::into).unwrap_or(defaults.phi_bd),
        b_en: pert.b_en.map(Into::into),
    };
    // Shape-level validation that does not need the integrated background;
    // the pressure-positivity check runs again with the real exit value.
    data.validate(1.0)
        .map_err(|e| ConfigError(format!("perturbation: {e}")))?;

    let iter = raw.iteration.unwrap_or(RawIteration {
        max_iters: None,
        tol: None,
        under_relaxation: None,
        box_factor: None,
    });
    let mut iteration = IterationConfig::for_sigma(sigma);
    if let Some(v) = iter.max_iters {
        iteration.max_iters = v;
    }
    if let Some(v) = iter.tol {
        iteration.tol_fixpoint = v;
    }
    if let Some(v) = iter.under_relaxation {
        iteration.under_relaxation = v;
    }
    if let Some(v) = iter.box_factor {
        iteration.box_factor = v;
    }
    iteration
        .validate(&params)
        .map_err(|e| ConfigError(format!("iteration: {e}")))?;

    let uraw = raw.uniqueness.unwrap_or(RawUniqueness {
        n_starts: None,
        seed: None,
    });
    let uniqueness = UniquenessSettings {
        n_starts: uraw.n_starts.unwrap_or(3),
        seed: uraw.seed.unwrap_or(42),
    };
    if !(2..=16).contains(&uniqueness.n_starts) {
        return Err(ConfigError(format!(
            "uniqueness.n_starts: {} outside the supported range 2..=16",
            uniqueness.n_starts
        )));
    }

    let rho_s = params.critical_density();
    let praw = raw.phase.unwrap_or(RawPhase {
        rho_min: None,
        rho_max: None,
        g_max: None,
        n_rho: None,
        n_g: None,
    });
    let phase = PhaseSettings {
        rho_min: praw.rho_min.unwrap_or(0.2 * rho_s),
        rho_max: praw
            .rho_max
            .unwrap_or(1.2 * params.rho0.max(params.turning_density())),
        g_max: praw
            .g_max
            .unwrap_or(1.2 * params.g0.abs().max(params.terminal_g())),
        n_rho: praw.n_rho.unwrap_or(121),
        n_g: praw.n_g.unwrap_or(121),
    };
    if !(phase.rho_min > 0.0) || !(phase.rho_max > phase.rho_min) {
        return Err(ConfigError(format!(
            "phase.rho_min/rho_max: need 0 < {} < {}",
            phase.rho_min, phase.rho_max
        )));
    }
    if !(phase.g_max > 0.0) {
        return Err(ConfigError(format!(
            "phase.g_max: must be positive, got {}",
            phase.g_max
        )));
    }
    for (key, n) in [("phase.n_rho", phase.n_rho), ("phase.n_g", phase.n_g)] {
        if !(2..=2001).contains(&n) {
            return Err(ConfigError(format!(
                "{key}: sample count {n} outside the supported range 2..=2001"
            )));
        }
    }

    Ok(RunConfig {
        params,
        n1,
        n2,
        data,
        iteration,
        uniqueness,
        phase,
        source,
    })
}

/// Reject parameter sets whose inlet sits on the supersonic branch; the
/// nonlinear pipeline is built around a subsonic background.
pub fn require_subsonic_inlet(params: &BackgroundParams) -> Result<(), ConfigError> {
    if params.rho0 <= params.critical_density() {
        return Err(ConfigError(format!(
            "background.rho0: supersonic inlet not supported (rho0 = {} at or below \
             the sonic density {})",
            params.rho0,
            params.critical_density()
        )));
    }
    Ok(())
}

/// Parse a `N1xN2` grid override.
pub fn parse_grid_flag(s: &str) -> Result<(usize, usize), ConfigError> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| ConfigError(format!("--grid: expected N1xN2, got {s}")))?;
    let n1 = a
        .parse::<usize>()
        .map_err(|_| ConfigError(format!("--grid: bad cell count {a}")))?;
    let n2 = b
        .parse::<usize>()
        .map_err(|_| ConfigError(format!("--grid: bad cell count {b}")))?;
    Ok((n1, n2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    const MINIMAL: &str = "[background]\n\
        gamma = 2.0\n\
        m0 = 2.3316439815971242\n\
        s0 = 1.0\n\
        rho0 = 2.0\n\
        g0 = -1.0\n\
        length = 0.5\n";

    #[test]
    fn minimal_config_applies_documented_defaults() {
        let f = write_config(MINIMAL);
        let cfg = parse_config(f.path(), None, None).unwrap();
        assert_eq!(cfg.n1, 64);
        assert_eq!(cfg.n2, 64);
        assert_eq!(cfg.data.sigma, 1e-3);
        assert_eq!(cfg.iteration.tol_fixpoint, 1e-10);
        assert_eq!(cfg.iteration.max_iters, 50);
        assert_eq!(cfg.uniqueness.n_starts, 3);
        assert_eq!(cfg.uniqueness.seed, 42);
    }

    #[test]
    fn unknown_keys_are_named_in_the_error() {
        let f = write_config(&format!("{MINIMAL}[grid]\nn_one = 32\n"));
        let err = parse_config(f.path(), None, None).unwrap_err();
        assert!(err.0.contains("n_one"), "{err}");
    }

    #[test]
    fn invalid_values_are_attributed_to_their_key() {
        let f = write_config(&format!("{MINIMAL}[perturbation]\nsigma = -1.0\n"));
        let err = parse_config(f.path(), None, None).unwrap_err();
        assert!(err.0.contains("perturbation.sigma"), "{err}");

        let f = write_config(&format!("{MINIMAL}[grid]\nn1 = 2\n"));
        let err = parse_config(f.path(), None, None).unwrap_err();
        assert!(err.0.contains("grid.n1"), "{err}");
    }

    #[test]
    fn overrides_replace_config_values() {
        let f = write_config(MINIMAL);
        let cfg = parse_config(f.path(), Some((32, 16)), Some(5e-4)).unwrap();
        assert_eq!((cfg.n1, cfg.n2), (32, 16));
        assert_eq!(cfg.data.sigma, 5e-4);
        assert_eq!(cfg.iteration.sigma, 5e-4);
    }

    #[test]
    fn nonconforming_bernoulli_override_is_rejected() {
        let f = write_config(&format!(
            "{MINIMAL}[perturbation]\nb_en = {{ amplitude = 0.3, wavenumber = 1 }}\n"
        ));
        let err = parse_config(f.path(), None, None).unwrap_err();
        assert!(err.0.contains("Bernoulli"), "{err}");
    }

    #[test]
    fn supersonic_inlet_guard_names_the_condition() {
        let f = write_config(
            "[background]\n\
             gamma = 2.0\n\
             m0 = 2.3316439815971242\n\
             s0 = 1.0\n\
             rho0 = 0.5\n\
             g0 = 1.0\n\
             length = 0.02\n",
        );
        let cfg = parse_config(f.path(), None, None).unwrap();
        let err = require_subsonic_inlet(&cfg.params).unwrap_err();
        assert!(err.0.contains("supersonic inlet not supported"), "{err}");
    }

    #[test]
    fn grid_flag_parses_both_cases() {
        assert_eq!(parse_grid_flag("64x32").unwrap(), (64, 32));
        assert_eq!(parse_grid_flag("16X16").unwrap(), (16, 16));
        assert!(parse_grid_flag("64").is_err());
        assert!(parse_grid_flag("axb").is_err());
    }
}
