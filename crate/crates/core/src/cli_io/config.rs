//! Flat `key = value` run configuration (TOML syntax, no tables).
//!
//! Every key is optional; missing keys take the defaults listed in
//! [`RunConfig::default`]. Parsing collects every problem (unknown key,
//! wrong type, violated invariant) before failing.

use std::path::PathBuf;

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::fields::{Grid, Parameters, QTensorField, SimState, VelocityField};
use crate::init;
use crate::spectral::Spectral;
use crate::stepper::StepperConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VelocityInit {
    TaylorGreen,
    RandomSmooth,
    Quiescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QInit {
    RandomQ,
    ConstantQ,
    PerturbedEquilibrium,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: Parameters,
    pub grid_n: usize,
    /// `sample_every` doubles as the diagnostics cadence.
    pub stepper: StepperConfig,
    pub velocity_init: VelocityInit,
    pub velocity_amplitude: f64,
    pub q_init: QInit,
    pub q_amplitude: f64,
    /// Components of the uniform tensor for `constant_q`.
    pub q_p: f64,
    pub q_q: f64,
    pub seed: u64,
    pub spectrum_decay: f64,
    /// Highest band of the random initial data.
    pub kmax: usize,
    pub output_dir: PathBuf,
    /// Snapshot cadence in steps; 0 writes only the final state.
    pub snapshot_every: usize,
    /// Stop `simulate` once `|u|_H1 <= equilibrium_tol_u` and `|H| <= equilibrium_tol_h`.
    pub stop_at_equilibrium: bool,
    pub equilibrium_tol_u: f64,
    pub equilibrium_tol_h: f64,
    pub relax_tol: f64,
    pub relax_max_steps: usize,
    /// Equilibrium snapshot used for the `Q - Qinf` column.
    pub reference: Option<PathBuf>,
    /// Loose tolerances marking the start of the decay regime for `rate`.
    pub decay_tol_u: f64,
    pub decay_tol_h: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: Parameters::default(),
            grid_n: 128,
            stepper: StepperConfig {
                dt: 1e-3,
                cfl: 0.9,
                adaptive: true,
                t_end: 1.0,
                sample_every: 10,
            },
            velocity_init: VelocityInit::RandomSmooth,
            velocity_amplitude: 0.5,
            q_init: QInit::PerturbedEquilibrium,
            q_amplitude: 0.2,
            q_p: 0.0,
            q_q: 0.0,
            seed: 1,
            spectrum_decay: 2.0,
            kmax: 4,
            output_dir: PathBuf::from("output"),
            snapshot_every: 0,
            stop_at_equilibrium: true,
            equilibrium_tol_u: 1e-10,
            equilibrium_tol_h: 1e-10,
            relax_tol: 1e-11,
            relax_max_steps: 200_000,
            reference: None,
            decay_tol_u: 1e-2,
            decay_tol_h: 1e-2,
        }
    }
}

/// Every recognised key, in documentation order.
pub const KEYS: [&str; 33] = [
    "nu",
    "lambda",
    "gamma",
    "L",
    "a",
    "c",
    "xi",
    "grid_n",
    "dt",
    "cfl",
    "adaptive",
    "t_end",
    "diagnostics_every",
    "velocity_init",
    "velocity_amplitude",
    "q_init",
    "q_amplitude",
    "q_p",
    "q_q",
    "seed",
    "spectrum_decay",
    "kmax",
    "output_dir",
    "snapshot_every",
    "stop_at_equilibrium",
    "equilibrium_tol_u",
    "equilibrium_tol_h",
    "relax_tol",
    "relax_max_steps",
    "reference",
    "decay_tol_u",
    "decay_tol_h",
    "fault_flip_tau_sign",
];

struct Reader<'a> {
    table: &'a Table,
    errors: Vec<String>,
}

impl Reader<'_> {
    fn float(&mut self, key: &str, slot: &mut f64) {
        match self.table.get(key) {
            None => {}
            Some(Value::Float(v)) => *slot = *v,
            Some(Value::Integer(v)) => *slot = *v as f64,
            Some(other) => self.mismatch(key, "number", other),
        }
    }

    fn uint(&mut self, key: &str, slot: &mut u64) {
        match self.table.get(key) {
            None => {}
            Some(Value::Integer(v)) if *v >= 0 => *slot = *v as u64,
            Some(Value::Integer(v)) => self.errors.push(format!("{key} must be non-negative, got {v}")),
            Some(other) => self.mismatch(key, "integer", other),
        }
    }

    fn usize(&mut self, key: &str, slot: &mut usize) {
        let mut v = *slot as u64;
        self.uint(key, &mut v);
        *slot = v as usize;
    }

    fn boolean(&mut self, key: &str, slot: &mut bool) {
        match self.table.get(key) {
            None => {}
            Some(Value::Boolean(v)) => *slot = *v,
            Some(other) => self.mismatch(key, "boolean", other),
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.table.get(key) {
            None => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(other) => {
                self.mismatch(key, "string", other);
                None
            }
        }
    }

    fn choice<T: Copy>(&mut self, key: &str, options: &[(&str, T)], slot: &mut T) {
        if let Some(s) = self.string(key) {
            match options.iter().find(|(name, _)| *name == s) {
                Some((_, v)) => *slot = *v,
                None => {
                    let names: Vec<_> = options.iter().map(|(n, _)| *n).collect();
                    self.errors.push(format!("{key} must be one of {}, got \"{s}\"", names.join(", ")));
                }
            }
        }
    }

    fn mismatch(&mut self, key: &str, expected: &str, found: &Value) {
        self.errors
            .push(format!("{key} must be a {expected}, got {} `{found}`", found.type_str()));
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(vec![format!("syntax: {}", e.message())]))?;
    let mut r = Reader {
        table: &table,
        errors: Vec::new(),
    };
    for (key, value) in &table {
        if !KEYS.contains(&key.as_str()) {
            r.errors.push(format!("unknown key `{key}`"));
        } else if value.is_table() || value.is_array() {
            r.errors.push(format!("{key} must be a scalar, got a {}", value.type_str()));
        }
    }

    let mut c = RunConfig::default();
    let p = &mut c.params;
    r.float("nu", &mut p.nu);
    r.float("lambda", &mut p.lambda);
    r.float("gamma", &mut p.gamma);
    r.float("L", &mut p.l);
    r.float("a", &mut p.a);
    r.float("c", &mut p.c);
    r.float("xi", &mut p.xi);
    r.boolean("fault_flip_tau_sign", &mut p.flip_tau_sign);
    r.usize("grid_n", &mut c.grid_n);
    let s = &mut c.stepper;
    r.float("dt", &mut s.dt);
    r.float("cfl", &mut s.cfl);
    r.boolean("adaptive", &mut s.adaptive);
    r.float("t_end", &mut s.t_end);
    r.usize("diagnostics_every", &mut s.sample_every);
    r.choice(
        "velocity_init",
        &[
            ("taylor_green", VelocityInit::TaylorGreen),
            ("random_smooth", VelocityInit::RandomSmooth),
            ("quiescent", VelocityInit::Quiescent),
        ],
        &mut c.velocity_init,
    );
    r.float("velocity_amplitude", &mut c.velocity_amplitude);
    r.choice(
        "q_init",
        &[
            ("random_q", QInit::RandomQ),
            ("constant_q", QInit::ConstantQ),
            ("perturbed_equilibrium", QInit::PerturbedEquilibrium),
        ],
        &mut c.q_init,
    );
    r.float("q_amplitude", &mut c.q_amplitude);
    r.float("q_p", &mut c.q_p);
    r.float("q_q", &mut c.q_q);
    r.uint("seed", &mut c.seed);
    r.float("spectrum_decay", &mut c.spectrum_decay);
    r.usize("kmax", &mut c.kmax);
    if let Some(dir) = r.string("output_dir") {
        c.output_dir = PathBuf::from(dir);
    }
    r.usize("snapshot_every", &mut c.snapshot_every);
    r.boolean("stop_at_equilibrium", &mut c.stop_at_equilibrium);
    r.float("equilibrium_tol_u", &mut c.equilibrium_tol_u);
    r.float("equilibrium_tol_h", &mut c.equilibrium_tol_h);
    r.float("relax_tol", &mut c.relax_tol);
    r.usize("relax_max_steps", &mut c.relax_max_steps);
    c.reference = r.string("reference").map(PathBuf::from);
    r.float("decay_tol_u", &mut c.decay_tol_u);
    r.float("decay_tol_h", &mut c.decay_tol_h);

    let mut errors = r.errors;
    errors.extend(c.violations());
    if errors.is_empty() {
        Ok(c)
    } else {
        Err(Error::Config(errors))
    }
}

impl RunConfig {
    /// Every violated invariant of an assembled configuration.
    pub fn violations(&self) -> Vec<String> {
        let mut errs = self.params.violations();
        if let Err(e) = Grid::new(self.grid_n) {
            errs.push(format!("grid_n: {e}"));
        }
        errs.extend(self.stepper.violations());
        let nonneg = [
            ("velocity_amplitude", self.velocity_amplitude),
            ("q_amplitude", self.q_amplitude),
            ("spectrum_decay", self.spectrum_decay),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                errs.push(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        for (name, v) in [("q_p", self.q_p), ("q_q", self.q_q)] {
            if !v.is_finite() {
                errs.push(format!("{name} must be finite, got {v}"));
            }
        }
        let positive = [
            ("equilibrium_tol_u", self.equilibrium_tol_u),
            ("equilibrium_tol_h", self.equilibrium_tol_h),
            ("relax_tol", self.relax_tol),
            ("decay_tol_u", self.decay_tol_u),
            ("decay_tol_h", self.decay_tol_h),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                errs.push(format!("{name} must be positive, got {v}"));
            }
        }
        if self.snapshot_every > 0 && self.stepper.sample_every > 0 && self.snapshot_every % self.stepper.sample_every != 0 {
            errs.push(format!(
                "snapshot_every ({}) must be a multiple of diagnostics_every ({})",
                self.snapshot_every, self.stepper.sample_every
            ));
        }
        if self.kmax == 0 {
            errs.push("kmax must be at least 1".into());
        }
        errs
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid_n)
    }

    /// The configured initial state at `t = 0`.
    pub fn initial_state(&self, sp: &Spectral) -> Result<SimState> {
        let grid = sp.grid();
        let u = match self.velocity_init {
            VelocityInit::TaylorGreen => init::taylor_green(grid, self.velocity_amplitude),
            VelocityInit::RandomSmooth => init::random_smooth_velocity(
                sp,
                self.seed,
                self.spectrum_decay,
                self.kmax,
                self.velocity_amplitude,
            ),
            VelocityInit::Quiescent => VelocityField::zeros(grid),
        };
        let q = match self.q_init {
            QInit::RandomQ => init::random_q(sp, self.seed, self.spectrum_decay, self.kmax, self.q_amplitude),
            QInit::ConstantQ => QTensorField::constant(grid, self.q_p, self.q_q),
            QInit::PerturbedEquilibrium => init::perturbed_equilibrium(
                sp,
                &self.params,
                self.seed,
                self.spectrum_decay,
                self.kmax,
                self.q_amplitude,
            ),
        };
        SimState::new(0.0, u, q)
    }
}
