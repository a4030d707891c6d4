//! Time-stamped ensembles and the per-member diagnostics recorded with them.

use nalgebra::{DMatrix, DVector};

use crate::error::{EkiError, Result};
use crate::model::{centered, column_mean, Ensemble, InverseProblem};

/// Scalar diagnostics of a single member at one recorded time.
///
/// `r2` and `ar2` need the truth and are `None` without it. Mapped
/// quantities use forward images, so `ae2` is `|G(u_j) - mean G|^2_Gamma`
/// and `ar2` is `|G(u_j) - G(u_dagger)|^2_Gamma`; for linear maps these are
/// `|Ae|^2_Gamma` and `|Ar|^2_Gamma`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MemberDiagnostics {
    pub e2: f64,
    pub ae2: f64,
    pub r2: Option<f64>,
    pub ar2: Option<f64>,
    pub phi: f64,
    pub theta2: f64,
}

/// Frobenius norms of the deviation matrices `E`, `F`, `R`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatrixNorms {
    pub e: f64,
    pub f: f64,
    pub r: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Quantity {
    E2,
    Ae2,
    R2,
    Ar2,
    Phi,
    Theta2,
}

impl Quantity {
    pub const ALL: [Quantity; 6] = [
        Quantity::E2,
        Quantity::Ae2,
        Quantity::R2,
        Quantity::Ar2,
        Quantity::Phi,
        Quantity::Theta2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::E2 => "e2",
            Quantity::Ae2 => "ae2",
            Quantity::R2 => "r2",
            Quantity::Ar2 => "ar2",
            Quantity::Phi => "phi",
            Quantity::Theta2 => "theta2",
        }
    }

    pub fn needs_truth(self) -> bool {
        matches!(self, Quantity::R2 | Quantity::Ar2)
    }

    fn of(self, m: &MemberDiagnostics) -> Option<f64> {
        match self {
            Quantity::E2 => Some(m.e2),
            Quantity::Ae2 => Some(m.ae2),
            Quantity::R2 => m.r2,
            Quantity::Ar2 => m.ar2,
            Quantity::Phi => Some(m.phi),
            Quantity::Theta2 => Some(m.theta2),
        }
    }
}

/// Mean, minimum and maximum over the members.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    pub t: f64,
    pub members: Vec<MemberDiagnostics>,
    pub matrices: Option<MatrixNorms>,
}

impl Diagnostics {
    pub fn values(&self, q: Quantity) -> Option<Vec<f64>> {
        self.members.iter().map(|m| q.of(m)).collect()
    }

    pub fn aggregate(&self, q: Quantity) -> Option<Aggregate> {
        let vals = self.values(q)?;
        let n = vals.len() as f64;
        Some(Aggregate {
            mean: vals.iter().sum::<f64>() / n,
            min: vals.iter().copied().fold(f64::INFINITY, f64::min),
            max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }

    pub fn mean(&self, q: Quantity) -> Option<f64> {
        self.aggregate(q).map(|a| a.mean)
    }
}

/// Recorded history of a run.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub ensembles: Vec<Ensemble>,
    pub diagnostics: Vec<Diagnostics>,
    /// Time at which a stopping rule fired, if one did.
    pub stopped_at: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_ensemble(&self) -> Option<&Ensemble> {
        self.ensembles.last()
    }

    pub fn last_time(&self) -> Option<f64> {
        self.times.last().copied()
    }

    /// Ensemble-mean series of one quantity; `None` if it was not recorded.
    pub fn mean_series(&self, q: Quantity) -> Option<Vec<f64>> {
        self.diagnostics.iter().map(|d| d.mean(q)).collect()
    }

    pub fn e_fro_series(&self) -> Option<Vec<f64>> {
        self.diagnostics
            .iter()
            .map(|d| d.matrices.map(|m| m.e))
            .collect()
    }

    /// Index of the recorded time closest to `t`.
    pub fn index_near(&self, t: f64) -> Option<usize> {
        self.times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
    }
}

/// Computes the diagnostics of an ensemble given its forward images.
pub fn diagnose(
    t: f64,
    ens: &Ensemble,
    images: &DMatrix<f64>,
    prob: &InverseProblem,
    truth_image: Option<&DVector<f64>>,
) -> Result<Diagnostics> {
    let j = ens.size();
    if images.ncols() != j {
        return Err(EkiError::DimensionMismatch {
            what: "images per member",
            expected: j,
            found: images.ncols(),
        });
    }
    let noise = &prob.noise;
    let du = ens.deviations();
    let w_ae = noise.whiten_matrix(&centered(images));
    let mut w_misfit = images.clone();
    for mut c in w_misfit.column_iter_mut() {
        c -= &prob.data;
    }
    let w_misfit = noise.whiten_matrix(&w_misfit);

    let (w_ar, r_cols) = match (&prob.truth, truth_image) {
        (Some(truth), Some(gt)) => {
            let mut ar = images.clone();
            for mut c in ar.column_iter_mut() {
                c -= gt;
            }
            let mut r = ens.matrix().clone();
            for mut c in r.column_iter_mut() {
                c -= truth;
            }
            (Some(noise.whiten_matrix(&ar)), Some(r))
        }
        _ => (None, None),
    };

    let members = (0..j)
        .map(|k| {
            let mis = w_misfit.column(k).norm_squared();
            MemberDiagnostics {
                e2: du.column(k).norm_squared(),
                ae2: w_ae.column(k).norm_squared(),
                r2: r_cols.as_ref().map(|r| r.column(k).norm_squared()),
                ar2: w_ar.as_ref().map(|a| a.column(k).norm_squared()),
                phi: 0.5 * mis,
                theta2: mis,
            }
        })
        .collect();

    let matrices = w_ar.as_ref().map(|w_ar| {
        let e = w_ae.tr_mul(&w_ae);
        let f = w_ar.tr_mul(&w_ae);
        let r = w_ar.tr_mul(w_ar);
        MatrixNorms {
            e: e.norm(),
            f: f.norm(),
            r: r.norm(),
        }
    });

    Ok(Diagnostics {
        t,
        members,
        matrices,
    })
}

/// Accumulates a trajectory, caching the image of the truth.
pub struct Recorder<'a> {
    prob: &'a InverseProblem,
    truth_image: Option<DVector<f64>>,
    traj: Trajectory,
}

impl<'a> Recorder<'a> {
    pub fn new(prob: &'a InverseProblem) -> Result<Self> {
        let truth_image = match &prob.truth {
            Some(t) => Some(prob.forward.evaluate(t)?),
            None => None,
        };
        Ok(Self {
            prob,
            truth_image,
            traj: Trajectory::default(),
        })
    }

    pub fn truth_image(&self) -> Option<&DVector<f64>> {
        self.truth_image.as_ref()
    }

    pub fn record(&mut self, t: f64, ens: &Ensemble, images: &DMatrix<f64>) -> Result<()> {
        if let Some(&last) = self.traj.times.last() {
            if t <= last {
                return Ok(());
            }
        }
        let diag = diagnose(t, ens, images, self.prob, self.truth_image.as_ref())?;
        self.traj.times.push(t);
        self.traj.ensembles.push(ens.clone());
        self.traj.diagnostics.push(diag);
        Ok(())
    }

    pub fn last_time(&self) -> Option<f64> {
        self.traj.times.last().copied()
    }

    pub fn finish(mut self, stopped_at: Option<f64>) -> Trajectory {
        self.traj.stopped_at = stopped_at;
        self.traj
    }
}

/// Mean of the mapped ensemble.
pub fn image_mean(images: &DMatrix<f64>) -> DVector<f64> {
    column_mean(images)
}
