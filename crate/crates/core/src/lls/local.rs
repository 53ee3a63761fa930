//! Kernel-localized regressions over the rank of the conditioning variable.

use crate::datamodel::{rank_transform, Dataset, Design};
use crate::regress::{wls_fit, RegressError, RegressionSpec};

use super::kernel::{epanechnikov, rank_weight, window};
use super::{ExposureWeighting, LlsConfig, LlsError};

/// One local regression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalEstimate {
    pub estimate: f64,
    /// Records with positive weight in the neighborhood.
    pub n_local: usize,
}

/// Everything a local regression needs, prepared once per (dataset, weights).
#[derive(Debug, Clone)]
pub struct LocalProblem<'a> {
    design: Design,
    bandwidth: f64,
    /// Kernel-eligible records in ascending rank order.
    order: Vec<usize>,
    sorted_ranks: Vec<f64>,
    /// Panel: records with no belief change, pooled into every neighborhood.
    zeros: Vec<usize>,
    /// Panel: highest rank among negative changes.
    negative_top: Option<f64>,
    base_weight: Vec<f64>,
    y: Vec<f64>,
    x: Vec<f64>,
    controls: Vec<Vec<f64>>,
    groups: Option<&'a [u32]>,
}

fn varies(values: impl Iterator<Item = f64>) -> bool {
    let mut first = None;
    for v in values {
        match first {
            None => first = Some(v),
            Some(f) if f != v => return true,
            _ => {}
        }
    }
    false
}

impl<'a> LocalProblem<'a> {
    /// `conditioning` holds per-record values to rank (ignored for panels);
    /// `retained` comes from trimming.
    pub fn new(
        data: &'a Dataset,
        config: &LlsConfig,
        conditioning: Option<&[f64]>,
        retained: &[usize],
        weights: Option<&[f64]>,
    ) -> Result<Self, LlsError> {
        let n = data.len();
        let boot = |i: usize| weights.map_or(1.0, |w| w[i]);
        let recs = data.records();
        let derived = data.derived();
        let groups = if config.group_controls {
            data.group_codes()
        } else {
            None
        };

        let (eligible, ranks, zeros) = if data.design() == Design::Panel {
            let (nonzero, zeros): (Vec<usize>, Vec<usize>) = retained.iter().partition(|&&i| derived[i].delta_x != 0.0);
            if nonzero.is_empty() {
                return Err(LlsError::AllTrimmed);
            }
            let dx: Vec<f64> = nonzero.iter().map(|&i| derived[i].delta_x).collect();
            let ranks = rank_transform(&dx)?;
            (nonzero, ranks, zeros)
        } else {
            let cond = conditioning.ok_or(LlsError::AllTrimmed)?;
            let vals: Vec<f64> = retained.iter().map(|&i| cond[i]).collect();
            (retained.to_vec(), rank_transform(&vals)?, Vec::new())
        };

        let mut pos: Vec<usize> = (0..eligible.len()).collect();
        pos.sort_by(|&a, &b| ranks[a].total_cmp(&ranks[b]).then(eligible[a].cmp(&eligible[b])));
        let order: Vec<usize> = pos.iter().map(|&k| eligible[k]).collect();
        let sorted_ranks: Vec<f64> = pos.iter().map(|&k| ranks[k]).collect();

        let mut base_weight: Vec<f64> = (0..n).map(boot).collect();
        let mut controls = Vec::new();
        let (y, x, negative_top) = match data.design() {
            Design::Panel => {
                let negative_top = order
                    .iter()
                    .zip(&sorted_ranks)
                    .filter(|(&i, _)| derived[i].delta_x < 0.0)
                    .map(|(_, &r)| r)
                    .next_back();
                let y: Vec<f64> = derived.iter().map(|d| d.delta_y.unwrap_or(f64::NAN)).collect();
                let x: Vec<f64> = derived.iter().map(|d| d.delta_x).collect();
                (y, x, negative_top)
            }
            design => {
                let exposure: Vec<f64> = derived.iter().map(|d| d.exposure.unwrap_or(f64::NAN)).collect();
                let weighted = match config.exposure_weighting {
                    ExposureWeighting::Always => true,
                    ExposureWeighting::Never => false,
                    ExposureWeighting::Auto => {
                        design == Design::Passive || varies(retained.iter().map(|&i| exposure[i]))
                    }
                };
                if weighted {
                    for &i in retained {
                        base_weight[i] /= exposure[i] * exposure[i];
                    }
                }
                controls.push(data.prior());
                let high: Vec<f64> = recs
                    .iter()
                    .zip(&exposure)
                    .map(|(r, e)| match design {
                        Design::Passive => r.prior + e,
                        _ => r
                            .signal_high
                            .or(if derived_treat(r) { r.signal } else { None })
                            .unwrap_or(f64::NAN),
                    })
                    .collect();
                if varies(retained.iter().map(|&i| high[i])) {
                    controls.push(high.clone());
                }
                if design == Design::Active {
                    let low: Vec<f64> = high.iter().zip(&exposure).map(|(h, e)| h - e).collect();
                    if varies(retained.iter().map(|&i| low[i])) {
                        controls.push(low);
                    }
                }
                (data.outcome(), data.posterior(), None)
            }
        };

        Ok(LocalProblem {
            design: data.design(),
            bandwidth: config.bandwidth,
            order,
            sorted_ranks,
            zeros,
            negative_top,
            base_weight,
            y,
            x,
            controls,
            groups,
        })
    }

    /// Kernel-eligible records with their ranks, in ascending rank order.
    pub fn centers(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.order.iter().copied().zip(self.sorted_ranks.iter().copied())
    }

    pub fn n_eligible(&self) -> usize {
        self.order.len()
    }

    /// Local regression at `center` on the rank scale: the coefficient on
    /// the belief (on the belief change for panels).
    pub fn estimate_at(&self, center: f64) -> Result<LocalEstimate, LlsError> {
        let negative_side = self.negative_top.is_some_and(|top| center <= top);
        let mut rows: Vec<(usize, f64)> = Vec::new();
        for pos in window(&self.sorted_ranks, center, self.bandwidth) {
            let i = self.order[pos];
            if self.design == Design::Panel && (self.x[i] < 0.0) != negative_side {
                continue;
            }
            let w = rank_weight(self.sorted_ranks[pos], center, self.bandwidth) * self.base_weight[i];
            if w > 0.0 {
                rows.push((i, w));
            }
        }
        let k0 = epanechnikov(0.0);
        rows.extend(
            self.zeros
                .iter()
                .map(|&i| (i, k0 * self.base_weight[i]))
                .filter(|&(_, w)| w > 0.0),
        );
        if rows.len() < 2 || !varies(rows.iter().map(|&(i, _)| self.x[i])) {
            return Err(LlsError::InsufficientNeighborhood);
        }
        let y: Vec<f64> = rows.iter().map(|&(i, _)| self.y[i]).collect();
        let x: Vec<f64> = rows.iter().map(|&(i, _)| self.x[i]).collect();
        let w: Vec<f64> = rows.iter().map(|&(_, w)| w).collect();
        let controls: Vec<Vec<f64>> = self
            .controls
            .iter()
            .map(|c| rows.iter().map(|&(i, _)| c[i]).collect())
            .collect();
        let codes: Option<Vec<u32>> = self.groups.map(|g| rows.iter().map(|&(i, _)| g[i]).collect());

        let mut spec = RegressionSpec::new(&y, &x).weights(&w);
        for c in &controls {
            spec = spec.control(c);
        }
        if let Some(codes) = &codes {
            spec = spec.categorical(codes);
        }
        match wls_fit(&spec) {
            Ok(fit) => Ok(LocalEstimate {
                estimate: fit.coef,
                n_local: fit.n,
            }),
            Err(RegressError::RankDeficient) => Err(LlsError::RankDeficient),
            Err(RegressError::InsufficientRows { .. }) => Err(LlsError::InsufficientNeighborhood),
            Err(e) => Err(e.into()),
        }
    }
}

fn derived_treat(r: &crate::datamodel::BeliefRecord) -> bool {
    r.arm == Some(crate::datamodel::Arm::A)
}
