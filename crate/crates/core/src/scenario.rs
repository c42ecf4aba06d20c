//! Run configurations and TOML scenario files.
//!
//! A [`RunConfig`] names a command and leaves any field it does not care
//! about unset.  [`RunConfig::resolve`] fills every field the command reads
//! with its default so that the resolved form, stored in each run manifest,
//! reruns the computation exactly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::catastrophe::{D4Grid, D4Kind};
use crate::error::{Error, Result};
use crate::export::Format;
use crate::georattle::{RayGrid, DEFAULT_H};
use crate::integrate::Method;
use crate::systems::{
    apply_linear_transform, cyclic_transform_matrix, hypersurface_catalog, HamiltonianSystem, Model, SeparatedBvp,
    CATALOG_NAMES,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    BratuFold,
    Sweep,
    Continue,
    LocateUmbilic,
    LevelSet,
    ConjugateLocus,
    Pitchfork,
    CatastropheD4,
    Swallowtail,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::BratuFold,
        Command::Sweep,
        Command::Continue,
        Command::LocateUmbilic,
        Command::LevelSet,
        Command::ConjugateLocus,
        Command::Pitchfork,
        Command::CatastropheD4,
        Command::Swallowtail,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::BratuFold => "bratu-fold",
            Command::Sweep => "sweep",
            Command::Continue => "continue",
            Command::LocateUmbilic => "locate-umbilic",
            Command::LevelSet => "level-set",
            Command::ConjugateLocus => "conjugate-locus",
            Command::Pitchfork => "pitchfork",
            Command::CatastropheD4 => "catastrophe-d4",
            Command::Swallowtail => "swallowtail",
        }
    }

    fn uses_flow(self) -> bool {
        !matches!(self, Command::ConjugateLocus | Command::CatastropheD4 | Command::Swallowtail)
    }
}

/// Everything a run needs.  Unset fields take command defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    /// Catalog name of the system (flow commands).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// Catalog parameter overrides (`C`, `mu`, `eps`, `kappa`, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,

    /// Swept parameter component.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_range: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_points: Option<usize>,
    /// Box of shooting unknowns; starts are drawn from it and roots outside
    /// it are discarded.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_box: Option<Vec<(f64, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub starts_per_axis: Option<usize>,
    /// Second step count for `pitchfork`; the report then carries the ratio
    /// of the two breaks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare_steps: Option<usize>,

    /// Continuation seed: parameter vector and initial guess.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed_mu: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed_y: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction: Option<f64>,

    /// Gauss–Newton seed in family coordinates.  When unset the seed is the
    /// best node of `seed_box`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed_box: Option<Vec<(f64, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed_points: Option<usize>,
    /// Level-set box: centre (defaults to the located umbilic), half-width
    /// and nodes per axis.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub centre: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    /// Radius, in cell diameters, of the ring used to count ridges.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hub_cells: Option<f64>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub surface: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_star: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_arc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rays: Option<RayGrid>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<D4Kind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu4: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu4_values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d4_grid: Option<D4Grid>,

    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub formats: Vec<Format>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            command,
            scenario: None,
            method: None,
            steps: None,
            tau: None,
            params: BTreeMap::new(),
            mu_index: None,
            mu_range: None,
            mu_points: None,
            y_box: None,
            starts_per_axis: None,
            compare_steps: None,
            seed_mu: None,
            seed_y: None,
            ds: None,
            max_steps: None,
            direction: None,
            seed: None,
            seed_box: None,
            seed_points: None,
            centre: None,
            half_width: None,
            grid_points: None,
            hub_cells: None,
            surface: None,
            q_star: None,
            h: None,
            max_arc: None,
            rays: None,
            kind: None,
            mu4: None,
            mu4_values: None,
            d4_grid: None,
            formats: Vec::new(),
            out_dir: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Read a TOML scenario, or the `config` entry of a JSON run manifest.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
            let cfg = v
                .get("data")
                .and_then(|d| d.get("config"))
                .or_else(|| v.get("config"))
                .ok_or_else(|| Error::Parse(format!("{} has no config entry", path.display())))?;
            serde_json::from_value(cfg.clone()).map_err(|e| Error::Parse(e.to_string()))
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Copy every set field of `other` over `self`.
    pub fn overlay(&mut self, other: &RunConfig) {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f.clone(); } )* };
        }
        take!(
            scenario, method, steps, tau, mu_index, mu_range, mu_points, y_box, starts_per_axis, compare_steps,
            seed_mu, seed_y, ds, max_steps, direction, seed, seed_box, seed_points, centre, half_width,
            grid_points, hub_cells, surface, q_star, h, max_arc, rays, kind, mu4, mu4_values, d4_grid, out_dir
        );
        for (k, v) in &other.params {
            self.params.insert(k.clone(), *v);
        }
        if !other.formats.is_empty() {
            self.formats = other.formats.clone();
        }
    }

    pub fn scenario_name(&self) -> &str {
        self.scenario.as_deref().unwrap_or("")
    }

    /// Fill in command defaults and check the result.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = self.clone();
        let cmd = c.command;
        if c.formats.is_empty() {
            c.formats = vec![Format::Csv, Format::Json, Format::Svg];
        }
        c.out_dir.get_or_insert_with(|| PathBuf::from("out").join(cmd.name()));
        let default_scenario = match cmd {
            Command::BratuFold => Some("bratu"),
            Command::Sweep | Command::Continue => Some("example5_fold"),
            Command::LocateUmbilic | Command::LevelSet => Some("henon_heiles"),
            Command::Pitchfork => Some("planar_pitchfork"),
            _ => None,
        };
        if let Some(d) = default_scenario {
            c.scenario.get_or_insert_with(|| d.into());
        }
        if cmd.uses_flow() {
            c.method.get_or_insert(Method::Sv);
            let steps = match (cmd, c.scenario_name()) {
                (Command::BratuFold, _) => 20,
                (Command::Pitchfork, "torus_integrable") => 20,
                (Command::Pitchfork, "cyclic_4d" | "cyclic_4d_symbroken" | "linear_transformed") => 14,
                (Command::Pitchfork, _) => 28,
                _ => 10,
            };
            c.steps.get_or_insert(steps);
            if c.tau.is_none() {
                c.tau = Some(default_tau(c.scenario_name(), &c.params)?);
            }
        }
        match cmd {
            Command::BratuFold => {
                c.params.entry("C".into()).or_insert(0.5);
                c.y_box.get_or_insert(vec![(0.0, 12.0)]);
                c.starts_per_axis.get_or_insert(60);
                c.ds.get_or_insert(1e-2);
                c.max_steps.get_or_insert(20_000);
                c.mu_range.get_or_insert((0.05, 4.0));
            }
            Command::Sweep | Command::Continue | Command::Pitchfork => {
                let w = default_window(c.scenario_name());
                c.mu_index.get_or_insert(0);
                c.mu_range.get_or_insert(w.0);
                c.mu_points.get_or_insert(w.1);
                c.y_box.get_or_insert(w.2);
                c.starts_per_axis.get_or_insert(w.3);
                if cmd == Command::Continue {
                    c.ds.get_or_insert(1e-2);
                    c.max_steps.get_or_insert(20_000);
                    c.direction.get_or_insert(1.0);
                }
            }
            Command::LocateUmbilic | Command::LevelSet => {
                c.seed_box.get_or_insert(vec![(0.5, 2.0), (-1.0, 1.0), (0.0, 3.0)]);
                c.seed_points.get_or_insert(16);
                if cmd == Command::LevelSet {
                    c.half_width.get_or_insert(0.5);
                    c.grid_points.get_or_insert(81);
                    c.hub_cells.get_or_insert(4.0);
                }
            }
            Command::ConjugateLocus => {
                let name = c.surface.get_or_insert_with(|| "sphere".into()).clone();
                let s = hypersurface_catalog(&name)?;
                if c.q_star.is_none() {
                    c.q_star = s.q_star.clone();
                }
                c.h.get_or_insert(DEFAULT_H);
                let rays = if s.dim() == 3 {
                    RayGrid::Circle { count: 200 }
                } else {
                    RayGrid::Sphere { n_theta: 10, n_phi: 20 }
                };
                c.rays.get_or_insert(rays);
            }
            Command::CatastropheD4 => {
                c.kind.get_or_insert(D4Kind::Plus);
                c.mu4.get_or_insert(0.0);
                c.d4_grid.get_or_insert_with(D4Grid::default);
            }
            Command::Swallowtail => {
                c.mu4_values.get_or_insert(vec![0.1, 0.24]);
                c.d4_grid.get_or_insert_with(D4Grid::default);
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == Some(0) || self.compare_steps == Some(0) {
            return Err(Error::InvalidInput("steps must be at least 1".into()));
        }
        if let Some(t) = self.tau {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidInput(format!("tau must be positive, got {t}")));
            }
        }
        if let Some((a, b)) = self.mu_range {
            if !(a <= b) {
                return Err(Error::InvalidInput(format!("empty parameter range ({a}, {b})")));
            }
        }
        for b in self.y_box.iter().chain(&self.seed_box).flatten() {
            if !(b.0 <= b.1) {
                return Err(Error::InvalidInput(format!("empty box side ({}, {})", b.0, b.1)));
            }
        }
        if self.mu_points == Some(0) || self.starts_per_axis == Some(0) {
            return Err(Error::InvalidInput("grids must be non-empty".into()));
        }
        if let Some(h) = self.h {
            if !(h > 0.0) {
                return Err(Error::InvalidInput(format!("step size must be positive, got {h}")));
            }
        }
        Ok(())
    }
}

/// Boundary problem that goes with a catalog scenario.  Hénon–Heiles uses
/// the start section `q(0) = (0, 1)` and `q(1) = (0, 0)`; the umbilic
/// commands free the second start coordinate.
pub fn scenario_bvp(name: &str, params: &BTreeMap<String, f64>) -> Result<SeparatedBvp> {
    Ok(match name {
        "bratu" => SeparatedBvp::bratu(),
        "example5_fold" => SeparatedBvp::example5(),
        "planar_pitchfork" => SeparatedBvp::planar_pitchfork(),
        "cyclic_4d" | "cyclic_4d_symbroken" => SeparatedBvp::cyclic_4d(),
        "linear_transformed" => {
            let base = HamiltonianSystem::new(Model::Cyclic4d { symbroken: false }, "cyclic_4d", vec![0.0]);
            apply_linear_transform(&base, &SeparatedBvp::cyclic_4d(), &cyclic_transform_matrix())?.1
        }
        "torus_integrable" => SeparatedBvp::torus(params.get("kappa").copied().unwrap_or(0.1)),
        "henon_heiles" | "henon_heiles_perturbed" => SeparatedBvp::henon_heiles(1.0, [0.0, 0.0]),
        _ if CATALOG_NAMES.contains(&name) => {
            return Err(Error::InvalidInput(format!("scenario '{name}' has no boundary problem")))
        }
        _ => return Err(Error::UnknownName(name.into())),
    })
}

/// Default integration time of a catalog scenario.
pub fn default_tau(name: &str, params: &BTreeMap<String, f64>) -> Result<f64> {
    Ok(scenario_bvp(name, params)?.tau)
}

type WindowDefaults = ((f64, f64), usize, Vec<(f64, f64)>, usize);

/// Sweep window per scenario: `μ` range, `μ` count, unknown box, starts per axis.
pub fn default_window(name: &str) -> WindowDefaults {
    match name {
        "planar_pitchfork" => ((-6.6, -5.6), 101, vec![(-1.2, 1.2)], 25),
        "cyclic_4d" | "cyclic_4d_symbroken" => ((-1.2, -0.6), 61, vec![(-0.4, 0.4), (-0.1, 0.05)], 9),
        "linear_transformed" => ((-1.2, -0.6), 61, vec![(-0.4, 0.4), (-0.1, 0.05)], 13),
        "torus_integrable" => ((-0.1, 0.1), 41, vec![(1.0, 2.2), (-0.3, 0.3)], 9),
        "bratu" => ((0.05, 3.6), 72, vec![(0.0, 12.0)], 60),
        _ => ((-0.1, 0.1), 41, vec![(-1.0, 1.0)], 9),
    }
}
