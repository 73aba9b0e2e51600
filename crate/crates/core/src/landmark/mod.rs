//! Landmark supermodel: cause-specific Cox models on the stacked dataset with
//! smooth landmark terms, and the resulting dynamic predictions.
//!
//! For landmark `s` the design is `Z(s)`, `s/c`, `(s/c)^2` and, when an
//! interaction predictor is configured, its products with both landmark terms.
//! Rows enter the risk set at `s`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::datamodel::{EventType, StackedDataset};
use crate::envelope::Envelope;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::solvers::{fit_cox_breslow, CoxData, CoxFit, CoxOptions};

pub const LANDMARK_SCALE: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupermodelOptions {
    #[serde(default = "default_scale")]
    pub scale: f64,
    /// Predictor interacted with the landmark terms.
    #[serde(default = "default_interaction")]
    pub interaction: Option<String>,
    /// Fail when a cause has no events. When false the cause gets zero hazard.
    #[serde(default = "default_true")]
    pub require_all_causes: bool,
    #[serde(default)]
    pub cox: CoxOptions,
    #[serde(default)]
    pub execution: Execution,
}

fn default_scale() -> f64 {
    LANDMARK_SCALE
}

fn default_interaction() -> Option<String> {
    Some("icu".into())
}

fn default_true() -> bool {
    true
}

impl Default for SupermodelOptions {
    fn default() -> Self {
        Self {
            scale: LANDMARK_SCALE,
            interaction: default_interaction(),
            require_all_causes: true,
            cox: CoxOptions::default(),
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseModel {
    pub cause: EventType,
    /// `None` when the cause had no events and empty causes were allowed.
    pub cox: Option<CoxFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupermodelFit {
    pub predictors: Vec<String>,
    pub schema_hash: String,
    pub scale: f64,
    pub interaction: Option<(String, usize)>,
    pub first_landmark: u32,
    pub last_landmark: u32,
    pub horizon: f64,
    pub causes: Vec<CauseModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRequest {
    pub z: Vec<f64>,
    pub s: u32,
    pub w: f64,
}

impl PredictionRequest {
    pub fn new(z: Vec<f64>, s: u32, w: f64) -> Self {
        Self { z, s, w }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub survival: f64,
    /// Cumulative incidence per cause, in `EventType::CAUSES` order.
    pub cif: [f64; 3],
}

fn design_row(z: &[f64], s: u32, scale: f64, interaction: Option<usize>, out: &mut Vec<f64>) {
    let t = f64::from(s) / scale;
    out.clear();
    out.extend_from_slice(z);
    out.push(t);
    out.push(t * t);
    if let Some(k) = interaction {
        out.push(z[k] * t);
        out.push(z[k] * t * t);
    }
}

fn cause_index(cause: EventType) -> Result<usize> {
    EventType::CAUSES
        .iter()
        .position(|&c| c == cause)
        .ok_or_else(|| Error::Validation(format!("unknown cause {cause:?}")))
}

/// Fits the three cause-specific supermodels. Every row must be complete.
pub fn fit_supermodel(data: &StackedDataset, opts: &SupermodelOptions) -> Result<SupermodelFit> {
    let schema = &data.schema;
    let interaction = match &opts.interaction {
        None => None,
        Some(name) => Some((
            name.clone(),
            schema
                .index_of(name)
                .ok_or_else(|| Error::Config(format!("interaction predictor `{name}` not in schema")))?,
        )),
    };
    let k_int = interaction.as_ref().map(|(_, k)| *k);
    let n = data.rows.len();
    let width = schema.len() + 2 + if k_int.is_some() { 2 } else { 0 };
    let mut x = DMatrix::<f64>::zeros(n, width);
    let mut buf = Vec::with_capacity(width);
    let mut z = vec![0.0; schema.len()];
    for (i, row) in data.rows.iter().enumerate() {
        for (zj, v) in z.iter_mut().zip(&row.values) {
            *zj = v.ok_or_else(|| {
                Error::Validation(format!("episode {} landmark {}: incomplete row at model fitting", row.episode_id, row.s))
            })?;
        }
        design_row(&z, row.s, opts.scale, k_int, &mut buf);
        for (c, v) in buf.iter().enumerate() {
            x[(i, c)] = *v;
        }
    }
    let entry: Vec<f64> = data.rows.iter().map(|r| f64::from(r.s)).collect();
    let stop: Vec<f64> = data.rows.iter().map(|r| r.event_time).collect();

    let fits = opts.execution.map_slice(&EventType::CAUSES, |&cause| -> Result<CauseModel> {
        let status: Vec<bool> = data.rows.iter().map(|r| r.event_type == cause).collect();
        if !status.iter().any(|&b| b) {
            return if opts.require_all_causes {
                Err(Error::NoEvents(format!("cause {} ({cause:?}) has no events", cause.code())))
            } else {
                Ok(CauseModel { cause, cox: None })
            };
        }
        let cox = fit_cox_breslow(&CoxData { entry: Some(&entry), stop: &stop, status: &status, x: &x }, &opts.cox)?;
        Ok(CauseModel { cause, cox: Some(cox) })
    });
    Ok(SupermodelFit {
        predictors: schema.names().map(str::to_string).collect(),
        schema_hash: schema.fingerprint(),
        scale: opts.scale,
        interaction,
        first_landmark: data.first_landmark,
        last_landmark: data.last_landmark,
        horizon: data.horizon,
        causes: fits.into_iter().collect::<Result<_>>()?,
    })
}

impl SupermodelFit {
    fn check(&self, req: &PredictionRequest) -> Result<()> {
        if req.z.len() != self.predictors.len() || req.z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("prediction needs a complete predictor vector".into()));
        }
        if req.s > self.last_landmark || !(req.w > 0.0) {
            return Err(Error::Validation(format!("landmark {} / horizon {} outside the fitted range", req.s, req.w)));
        }
        Ok(())
    }

    /// Landmark coefficients `(gamma_1, gamma_2)` of a cause.
    pub fn landmark_terms(&self, cause: EventType) -> Result<(f64, f64)> {
        let p = self.predictors.len();
        Ok(self.causes[cause_index(cause)?]
            .cox
            .as_ref()
            .map_or((0.0, 0.0), |c| (c.coefficients[p], c.coefficients[p + 1])))
    }

    /// Predictor coefficients of a cause, followed by the interaction terms.
    pub fn predictor_coefficients(&self, cause: EventType) -> Result<Vec<f64>> {
        let p = self.predictors.len();
        Ok(self.causes[cause_index(cause)?].cox.as_ref().map_or_else(Vec::new, |c| {
            let mut out = c.coefficients[..p].to_vec();
            out.extend_from_slice(&c.coefficients[p + 2..]);
            out
        }))
    }

    /// Event-free survival and all cumulative incidences at `s + w`.
    pub fn predict(&self, req: &PredictionRequest) -> Result<Prediction> {
        self.check(req)?;
        let (lo, hi) = (f64::from(req.s), f64::from(req.s) + req.w);
        let mut design = Vec::new();
        design_row(&req.z, req.s, self.scale, self.interaction.as_ref().map(|(_, k)| *k), &mut design);

        // (time, cause, hazard increment) inside the closed window
        let mut jumps: Vec<(f64, usize, f64)> = Vec::new();
        for (j, model) in self.causes.iter().enumerate() {
            let Some(cox) = &model.cox else { continue };
            let risk = cox.linear_predictor(&design).exp();
            if !risk.is_finite() {
                return Err(Error::Model(format!("relative hazard overflows for cause {:?}", model.cause)));
            }
            let from = cox.event_times.partition_point(|&t| t < lo);
            for (t, inc) in cox.event_times[from..].iter().zip(&cox.baseline_increments[from..]) {
                if *t > hi {
                    break;
                }
                jumps.push((*t, j, inc * risk));
            }
        }
        jumps.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut cumulative = 0.0;
        let mut cif = [0.0; 3];
        let mut i = 0;
        while i < jumps.len() {
            let mut k = i;
            while k < jumps.len() && jumps[k].0 == jumps[i].0 {
                cumulative += jumps[k].2;
                k += 1;
            }
            let surv = (-cumulative).exp();
            for jump in &jumps[i..k] {
                cif[jump.1] += jump.2 * surv;
            }
            i = k;
        }
        Ok(Prediction { survival: (-cumulative).exp(), cif })
    }

    pub fn to_envelope(&self, seed: u64) -> Result<Envelope> {
        Envelope::wrap("supermodel", "supermodel", &self.schema_hash, seed, self)
    }

    pub fn from_envelope(env: &Envelope) -> Result<Self> {
        env.unwrap("supermodel")
    }
}

pub fn predict_event_free_survival(fit: &SupermodelFit, req: &PredictionRequest) -> Result<f64> {
    Ok(fit.predict(req)?.survival)
}

pub fn predict_cif(fit: &SupermodelFit, req: &PredictionRequest, cause: EventType) -> Result<f64> {
    let j = cause_index(cause)?;
    Ok(fit.predict(req)?.cif[j])
}
