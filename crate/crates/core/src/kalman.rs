//! Constant-velocity Kalman filters over bounding-box states.
//!
//! Two state layouts are supported:
//!
//! * [`SortModel`], seven states `[u, v, s, r, u', v', s']` where `s` is box
//!   area and the aspect ratio `r` carries no velocity term;
//! * [`DeepSortModel`], eight states `[u, v, gamma, h, u', v', gamma', h']`.
//!
//! Both observe four components through a selector matrix and step one frame
//! per `predict`. Noise is diagonal and scales with the object: position
//! noise is proportional to `sqrt(s)` (seven-state) or `h` (eight-state).

use nalgebra::{Matrix4, SMatrix, SVector, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{from_deepsort_obs, from_sort_obs, BBox, DeepSortObservation, SortObservation};

const SYMMETRY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState<const D: usize> {
    pub mean: SVector<f64, D>,
    pub cov: SMatrix<f64, D, D>,
}

/// Noise weights. Position-like weights multiply the object scale
/// (`sqrt(s)` or `h`); aspect-ratio terms are absolute standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub position_weight: f64,
    pub velocity_weight: f64,
    pub measurement_weight: f64,
    pub aspect_process_std: f64,
    pub aspect_velocity_std: f64,
    pub aspect_measurement_std: f64,
    /// Initial position std as a multiple of the measurement std.
    pub init_position_factor: f64,
    /// Initial velocity std as a multiple of the initial position std.
    pub init_velocity_factor: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            position_weight: 1.0 / 10.0,
            velocity_weight: 1.0 / 40.0,
            measurement_weight: 1.0 / 20.0,
            aspect_process_std: 1e-2,
            aspect_velocity_std: 1e-5,
            aspect_measurement_std: 1e-1,
            init_position_factor: 2.0,
            init_velocity_factor: 10.0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("position_weight", self.position_weight),
            ("velocity_weight", self.velocity_weight),
            ("measurement_weight", self.measurement_weight),
            ("aspect_process_std", self.aspect_process_std),
            ("aspect_velocity_std", self.aspect_velocity_std),
            ("aspect_measurement_std", self.aspect_measurement_std),
            ("init_position_factor", self.init_position_factor),
            ("init_velocity_factor", self.init_velocity_factor),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "noise.{name} must be positive, got {value}"
                )));
            }
        }
        Ok(())
    }
}

fn diag_sq<const D: usize>(std: &SVector<f64, D>) -> SMatrix<f64, D, D> {
    SMatrix::from_diagonal(&std.component_mul(std))
}

fn symmetrize<const D: usize>(m: &SMatrix<f64, D, D>) -> SMatrix<f64, D, D> {
    (m + m.transpose()) * 0.5
}

fn check_symmetric<const D: usize>(m: &SMatrix<f64, D, D>) -> Result<()> {
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if !asym.is_finite() || asym > SYMMETRY_TOLERANCE * scale {
        return Err(Error::Numerical(format!(
            "covariance asymmetry {asym:e} exceeds tolerance"
        )));
    }
    Ok(())
}

/// One linear-Gaussian motion model over a `D`-dimensional box state.
pub trait MotionModel<const D: usize> {
    type Observation: Copy;

    fn measurement(obs: &Self::Observation) -> Vector4<f64>;
    fn observe_box(b: &BBox) -> Self::Observation;
    fn state_box(mean: &SVector<f64, D>) -> BBox;
    fn transition() -> SMatrix<f64, D, D>;
    fn observation_matrix() -> SMatrix<f64, 4, D>;
    fn process_std(mean: &SVector<f64, D>, cfg: &NoiseConfig) -> SVector<f64, D>;
    fn measurement_std(mean: &SVector<f64, D>, cfg: &NoiseConfig) -> Vector4<f64>;
    fn initial_std(z: &Vector4<f64>, cfg: &NoiseConfig) -> SVector<f64, D>;

    /// Hook applied to the mean after the linear transition.
    fn constrain(_mean: &mut SVector<f64, D>) {}

    fn initiate(obs: &Self::Observation, cfg: &NoiseConfig) -> GaussianState<D> {
        let z = Self::measurement(obs);
        let mut mean = SVector::<f64, D>::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from(&z);
        GaussianState {
            mean,
            cov: diag_sq(&Self::initial_std(&z, cfg)),
        }
    }

    fn predict(st: &GaussianState<D>, cfg: &NoiseConfig) -> Result<GaussianState<D>> {
        check_symmetric(&st.cov)?;
        let f = Self::transition();
        let q = diag_sq(&Self::process_std(&st.mean, cfg));
        let mut mean = f * st.mean;
        Self::constrain(&mut mean);
        let cov = symmetrize(&(f * st.cov * f.transpose() + q));
        Ok(GaussianState { mean, cov })
    }

    /// Projects the state into measurement space: `(H x, H P H^T + R)`.
    fn project(st: &GaussianState<D>, cfg: &NoiseConfig) -> (Vector4<f64>, Matrix4<f64>) {
        let h = Self::observation_matrix();
        let r = diag_sq(&Self::measurement_std(&st.mean, cfg));
        let y = h * st.mean;
        let s = symmetrize(&(h * st.cov * h.transpose() + r));
        (y, s)
    }

    fn update(
        st: &GaussianState<D>,
        obs: &Self::Observation,
        cfg: &NoiseConfig,
    ) -> Result<GaussianState<D>> {
        correct(st, &Self::measurement(obs), &Self::observation_matrix(), &diag_sq(&Self::measurement_std(&st.mean, cfg)))
    }
}

/// Kalman correction with a Joseph-form covariance update.
pub fn correct<const D: usize>(
    st: &GaussianState<D>,
    z: &Vector4<f64>,
    h: &SMatrix<f64, 4, D>,
    r: &Matrix4<f64>,
) -> Result<GaussianState<D>> {
    let s = symmetrize(&(h * st.cov * h.transpose() + r));
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::Singular("innovation covariance is not positive definite".into()))?;
    // K^T = S^-1 H P
    let kt = chol.solve(&(h * st.cov));
    let k = kt.transpose();
    let innovation = z - h * st.mean;
    let mean = st.mean + k * innovation;
    let ikh = SMatrix::<f64, D, D>::identity() - k * h;
    let cov = symmetrize(&(ikh * st.cov * ikh.transpose() + k * r * k.transpose()));
    if !mean.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite state after update".into()));
    }
    Ok(GaussianState { mean, cov })
}

fn constant_velocity<const D: usize>(pairs: &[(usize, usize)]) -> SMatrix<f64, D, D> {
    let mut f = SMatrix::<f64, D, D>::identity();
    for &(pos, vel) in pairs {
        f[(pos, vel)] = 1.0;
    }
    f
}

fn selector<const D: usize>() -> SMatrix<f64, 4, D> {
    let mut h = SMatrix::<f64, 4, D>::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

/// Seven-state center/area/aspect model.
#[derive(Debug, Clone, Copy)]
pub struct SortModel;

impl SortModel {
    fn scale(s: f64) -> f64 {
        s.max(f64::MIN_POSITIVE).sqrt()
    }
}

impl MotionModel<7> for SortModel {
    type Observation = SortObservation;

    fn measurement(o: &SortObservation) -> Vector4<f64> {
        Vector4::new(o.u, o.v, o.s, o.r)
    }

    fn observe_box(b: &BBox) -> SortObservation {
        b.to_sort_obs()
    }

    fn state_box(m: &SVector<f64, 7>) -> BBox {
        from_sort_obs(&SortObservation {
            u: m[0],
            v: m[1],
            s: m[2].max(1e-6),
            r: m[3].max(1e-6),
        })
    }

    fn transition() -> SMatrix<f64, 7, 7> {
        constant_velocity(&[(0, 4), (1, 5), (2, 6)])
    }

    fn observation_matrix() -> SMatrix<f64, 4, 7> {
        selector()
    }

    fn process_std(m: &SVector<f64, 7>, cfg: &NoiseConfig) -> SVector<f64, 7> {
        let l = Self::scale(m[2]);
        let s = m[2].abs().max(1.0);
        SVector::<f64, 7>::from([
            cfg.position_weight * l,
            cfg.position_weight * l,
            cfg.position_weight * s,
            cfg.aspect_process_std,
            cfg.velocity_weight * l,
            cfg.velocity_weight * l,
            cfg.velocity_weight * s,
        ])
    }

    fn measurement_std(m: &SVector<f64, 7>, cfg: &NoiseConfig) -> Vector4<f64> {
        let l = Self::scale(m[2]);
        let s = m[2].abs().max(1.0);
        Vector4::new(
            cfg.measurement_weight * l,
            cfg.measurement_weight * l,
            cfg.measurement_weight * s,
            cfg.aspect_measurement_std,
        )
    }

    fn initial_std(z: &Vector4<f64>, cfg: &NoiseConfig) -> SVector<f64, 7> {
        let l = Self::scale(z[2]);
        let s = z[2].abs().max(1.0);
        let pos = cfg.init_position_factor * cfg.measurement_weight;
        let vel = cfg.init_velocity_factor;
        SVector::<f64, 7>::from([
            pos * l,
            pos * l,
            pos * s,
            cfg.aspect_measurement_std,
            vel * pos * l,
            vel * pos * l,
            vel * pos * s,
        ])
    }

    fn constrain(mean: &mut SVector<f64, 7>) {
        // Area must stay positive: drop the area velocity once it would cross zero.
        if mean[2] <= 0.0 {
            mean[2] -= mean[6];
            mean[6] = 0.0;
        }
    }
}

/// Eight-state center/aspect/height model.
#[derive(Debug, Clone, Copy)]
pub struct DeepSortModel;

impl MotionModel<8> for DeepSortModel {
    type Observation = DeepSortObservation;

    fn measurement(o: &DeepSortObservation) -> Vector4<f64> {
        Vector4::new(o.u, o.v, o.gamma, o.hh)
    }

    fn observe_box(b: &BBox) -> DeepSortObservation {
        b.to_deepsort_obs()
    }

    fn state_box(m: &SVector<f64, 8>) -> BBox {
        from_deepsort_obs(&DeepSortObservation {
            u: m[0],
            v: m[1],
            gamma: m[2].max(1e-6),
            hh: m[3].max(1e-6),
        })
    }

    fn transition() -> SMatrix<f64, 8, 8> {
        constant_velocity(&[(0, 4), (1, 5), (2, 6), (3, 7)])
    }

    fn observation_matrix() -> SMatrix<f64, 4, 8> {
        selector()
    }

    fn process_std(m: &SVector<f64, 8>, cfg: &NoiseConfig) -> SVector<f64, 8> {
        let h = m[3].abs().max(1e-6);
        SVector::<f64, 8>::from([
            cfg.position_weight * h,
            cfg.position_weight * h,
            cfg.aspect_process_std,
            cfg.position_weight * h,
            cfg.velocity_weight * h,
            cfg.velocity_weight * h,
            cfg.aspect_velocity_std,
            cfg.velocity_weight * h,
        ])
    }

    fn measurement_std(m: &SVector<f64, 8>, cfg: &NoiseConfig) -> Vector4<f64> {
        let h = m[3].abs().max(1e-6);
        Vector4::new(
            cfg.measurement_weight * h,
            cfg.measurement_weight * h,
            cfg.aspect_measurement_std,
            cfg.measurement_weight * h,
        )
    }

    fn initial_std(z: &Vector4<f64>, cfg: &NoiseConfig) -> SVector<f64, 8> {
        let h = z[3].abs().max(1e-6);
        let pos = cfg.init_position_factor * cfg.measurement_weight * h;
        let aspect = cfg.aspect_measurement_std;
        let vel = cfg.init_velocity_factor;
        SVector::<f64, 8>::from([pos, pos, aspect, pos, vel * pos, vel * pos, vel * aspect, vel * pos])
    }
}

/// Which state layout a tracker runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionMode {
    Sort,
    DeepSort,
}

impl std::fmt::Display for MotionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MotionMode::Sort => "sort",
            MotionMode::DeepSort => "deepsort",
        })
    }
}

/// Mode-erased filter state carried by a track.
#[derive(Debug, Clone, PartialEq)]
pub enum BoxFilter {
    Sort(GaussianState<7>),
    DeepSort(GaussianState<8>),
}

impl BoxFilter {
    pub fn initiate(mode: MotionMode, b: &BBox, cfg: &NoiseConfig) -> Self {
        match mode {
            MotionMode::Sort => BoxFilter::Sort(SortModel::initiate(&b.to_sort_obs(), cfg)),
            MotionMode::DeepSort => {
                BoxFilter::DeepSort(DeepSortModel::initiate(&b.to_deepsort_obs(), cfg))
            }
        }
    }

    pub fn mode(&self) -> MotionMode {
        match self {
            BoxFilter::Sort(_) => MotionMode::Sort,
            BoxFilter::DeepSort(_) => MotionMode::DeepSort,
        }
    }

    pub fn predict(&mut self, cfg: &NoiseConfig) -> Result<()> {
        match self {
            BoxFilter::Sort(st) => *st = SortModel::predict(st, cfg)?,
            BoxFilter::DeepSort(st) => *st = DeepSortModel::predict(st, cfg)?,
        }
        Ok(())
    }

    pub fn update(&mut self, b: &BBox, cfg: &NoiseConfig) -> Result<()> {
        match self {
            BoxFilter::Sort(st) => *st = SortModel::update(st, &b.to_sort_obs(), cfg)?,
            BoxFilter::DeepSort(st) => *st = DeepSortModel::update(st, &b.to_deepsort_obs(), cfg)?,
        }
        Ok(())
    }

    pub fn project(&self, cfg: &NoiseConfig) -> (Vector4<f64>, Matrix4<f64>) {
        match self {
            BoxFilter::Sort(st) => SortModel::project(st, cfg),
            BoxFilter::DeepSort(st) => DeepSortModel::project(st, cfg),
        }
    }

    /// Measurement vector of a box in this filter's observation space.
    pub fn measure(&self, b: &BBox) -> Vector4<f64> {
        match self {
            BoxFilter::Sort(_) => SortModel::measurement(&b.to_sort_obs()),
            BoxFilter::DeepSort(_) => DeepSortModel::measurement(&b.to_deepsort_obs()),
        }
    }

    pub fn bbox(&self) -> BBox {
        match self {
            BoxFilter::Sort(st) => SortModel::state_box(&st.mean),
            BoxFilter::DeepSort(st) => DeepSortModel::state_box(&st.mean),
        }
    }

    /// Center velocity in pixels per frame.
    pub fn velocity(&self) -> (f64, f64) {
        match self {
            BoxFilter::Sort(st) => (st.mean[4], st.mean[5]),
            BoxFilter::DeepSort(st) => (st.mean[4], st.mean[5]),
        }
    }
}
