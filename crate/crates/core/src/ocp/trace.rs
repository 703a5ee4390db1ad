//! Minimum-time attitude control of a rigid spacecraft.
//!
//! State `(q0, q1, q2, q3, w1, w2, w3)`: attitude quaternion with scalar part
//! first, then body angular velocity. Dynamics
//!
//! ```text
//! q0' = -1/2 w.q
//! q'  =  1/2 (-w x q + q0 w)
//! J w' = -w x (J w) - u,    |u_i| <= 0.3
//! ```

use ndarray::Array2;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use super::{uniform, ControlProblem};
use crate::error::{Error, Result};

/// Inertia matrix of the TRACE spacecraft.
pub const TRACE_INERTIA: [[f64; 3]; 3] = [[59.22, -1.14, -0.8], [-1.14, 40.56, 0.1], [-0.8, 0.1, 57.60]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceParams {
    pub max_torque: f64,
    /// Target: `|q|_inf <= attitude_tolerance`.
    pub attitude_tolerance: f64,
    /// Target: `|w|_inf <= rate_tolerance`.
    pub rate_tolerance: f64,
    /// Half-width of the vector-part perturbation used by the target sampler.
    pub target_perturbation: f64,
    /// Bounds on `|w|^2` for domain samples.
    pub min_rate_sq: f64,
    pub max_rate_sq: f64,
}

impl Default for TraceParams {
    fn default() -> Self {
        Self {
            max_torque: 0.3,
            attitude_tolerance: 0.05,
            rate_tolerance: 0.05,
            target_perturbation: 0.025,
            min_rate_sq: 1e-4,
            max_rate_sq: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TraceAttitude {
    params: TraceParams,
    inertia: [[f64; 3]; 3],
    inertia_inv: [[f64; 3]; 3],
    lower: [f64; 3],
    upper: [f64; 3],
}

fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn mat_vec(m: &[[f64; 3]; 3], v: &[f64]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn inverse3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let c = |r0: usize, c0: usize, r1: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let cof = [
        [c(1, 1, 2, 2), -c(1, 0, 2, 2), c(1, 0, 2, 1)],
        [-c(0, 1, 2, 2), c(0, 0, 2, 2), -c(0, 0, 2, 1)],
        [c(0, 1, 1, 2), -c(0, 0, 1, 2), c(0, 0, 1, 1)],
    ];
    let det = m[0][0] * cof[0][0] + m[0][1] * cof[0][1] + m[0][2] * cof[0][2];
    if det.abs() < 1e-12 {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = cof[j][i] / det;
        }
    }
    Some(inv)
}

/// Roll-pitch-yaw (ZYX) Euler angles to a unit quaternion `(q0, q1, q2, q3)`.
pub fn euler_to_quaternion(roll: f64, pitch: f64, yaw: f64) -> [f64; 4] {
    let (sr, cr) = (0.5 * roll).sin_cos();
    let (sp, cp) = (0.5 * pitch).sin_cos();
    let (sy, cy) = (0.5 * yaw).sin_cos();
    [
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ]
}

/// Inverse of [`euler_to_quaternion`] for pitch in `[-pi/2, pi/2]`.
pub fn quaternion_to_euler(q: &[f64]) -> [f64; 3] {
    let (q0, q1, q2, q3) = (q[0], q[1], q[2], q[3]);
    let roll = (2.0 * (q0 * q1 + q2 * q3)).atan2(1.0 - 2.0 * (q1 * q1 + q2 * q2));
    let pitch = (2.0 * (q0 * q2 - q3 * q1)).clamp(-1.0, 1.0).asin();
    let yaw = (2.0 * (q0 * q3 + q1 * q2)).atan2(1.0 - 2.0 * (q2 * q2 + q3 * q3));
    [roll, pitch, yaw]
}

impl TraceAttitude {
    pub fn new(params: TraceParams) -> Result<Self> {
        let ok = params.max_torque > 0.0
            && params.attitude_tolerance > 0.0
            && params.rate_tolerance > 0.0
            && params.target_perturbation >= 0.0
            && params.target_perturbation <= params.attitude_tolerance
            && params.min_rate_sq > 0.0
            && params.max_rate_sq > params.min_rate_sq;
        if !ok {
            return Err(Error::Config(format!("invalid attitude parameters {params:?}")));
        }
        let inertia = TRACE_INERTIA;
        let inertia_inv = inverse3(&inertia).expect("inertia is invertible");
        Ok(Self {
            lower: [-params.max_torque; 3],
            upper: [params.max_torque; 3],
            params,
            inertia,
            inertia_inv,
        })
    }

    fn rate_scale(&self) -> f64 {
        self.params.max_rate_sq.sqrt()
    }
}

impl ControlProblem for TraceAttitude {
    fn name(&self) -> &str {
        "trace"
    }
    fn state_dim(&self) -> usize {
        7
    }
    fn control_dim(&self) -> usize {
        3
    }
    fn control_lower(&self) -> &[f64] {
        &self.lower
    }
    fn control_upper(&self) -> &[f64] {
        &self.upper
    }
    fn cost_upper_bound(&self) -> f64 {
        1.0
    }

    fn dynamics(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let q0 = x[0];
        let q = &x[1..4];
        let w = &x[4..7];
        dx[0] = -0.5 * (w[0] * q[0] + w[1] * q[1] + w[2] * q[2]);
        let wxq = cross(w, q);
        for i in 0..3 {
            dx[1 + i] = 0.5 * (-wxq[i] + q0 * w[i]);
        }
        let jw = mat_vec(&self.inertia, w);
        let gyro = cross(w, &jw);
        let rhs = [-gyro[0] - u[0], -gyro[1] - u[1], -gyro[2] - u[2]];
        let wdot = mat_vec(&self.inertia_inv, &rhs);
        dx[4..7].copy_from_slice(&wdot);
    }

    fn running_cost(&self, _x: &[f64], _u: &[f64]) -> f64 {
        1.0
    }

    fn control_jacobian(&self, _x: &[f64], _u: &[f64], jac: &mut [f64]) {
        jac.fill(0.0);
        for i in 0..3 {
            for j in 0..3 {
                jac[(4 + i) * 3 + j] = -self.inertia_inv[i][j];
            }
        }
    }

    fn cost_control_gradient(&self, _x: &[f64], _u: &[f64], grad: &mut [f64]) {
        grad.fill(0.0);
    }

    fn in_target(&self, x: &[f64]) -> bool {
        x[0] > 0.0
            && x[1..4].iter().all(|v| v.abs() <= self.params.attitude_tolerance)
            && x[4..7].iter().all(|v| v.abs() <= self.params.rate_tolerance)
    }

    /// Euler angles uniform in `[-pi/2, pi/2]^3`, angular velocity uniform
    /// over the shell `min_rate_sq <= |w|^2 <= max_rate_sq`.
    fn sample_domain(&self, rng: &mut dyn RngCore, n: usize) -> Array2<f64> {
        let r0 = self.params.min_rate_sq.sqrt();
        let r1 = self.params.max_rate_sq.sqrt();
        let mut out = Array2::zeros((n, 7));
        let mut i = 0;
        while i < n {
            let q = euler_to_quaternion(
                uniform(rng, -FRAC_PI_2, FRAC_PI_2),
                uniform(rng, -FRAC_PI_2, FRAC_PI_2),
                uniform(rng, -FRAC_PI_2, FRAC_PI_2),
            );
            let dir: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
            let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
            if norm < 1e-12 {
                continue;
            }
            // radius density proportional to r^2 on [r0, r1]
            let r = (r0.powi(3) + uniform(rng, 0.0, 1.0) * (r1.powi(3) - r0.powi(3))).cbrt();
            let mut x = [0.0; 7];
            x[..4].copy_from_slice(&q);
            for k in 0..3 {
                x[4 + k] = r * dir[k] / norm;
            }
            let wsq = x[4] * x[4] + x[5] * x[5] + x[6] * x[6];
            if wsq < self.params.min_rate_sq || wsq > self.params.max_rate_sq || self.in_target(&x) {
                continue;
            }
            out.row_mut(i).assign(&ndarray::ArrayView1::from(&x[..]));
            i += 1;
        }
        out
    }

    /// Rest state with a small renormalized perturbation of the vector part.
    fn sample_target(&self, rng: &mut dyn RngCore, n: usize) -> Array2<f64> {
        let e = self.params.target_perturbation;
        let mut out = Array2::zeros((n, 7));
        for i in 0..n {
            let mut x = [1.0, uniform(rng, -e, e), uniform(rng, -e, e), uniform(rng, -e, e), 0.0, 0.0, 0.0];
            self.project_state(&mut x);
            out.row_mut(i).assign(&ndarray::ArrayView1::from(&x[..]));
        }
        out
    }

    fn project_state(&self, x: &mut [f64]) {
        let n = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2] + x[3] * x[3]).sqrt();
        if n > 0.0 {
            for v in &mut x[..4] {
                *v /= n;
            }
        }
    }

    fn project_vjp(&self, x_raw: &[f64], g: &mut [f64]) {
        let n = (x_raw[0] * x_raw[0] + x_raw[1] * x_raw[1] + x_raw[2] * x_raw[2] + x_raw[3] * x_raw[3]).sqrt();
        if n == 0.0 {
            return;
        }
        let y: [f64; 4] = std::array::from_fn(|i| x_raw[i] / n);
        let dot: f64 = (0..4).map(|i| y[i] * g[i]).sum();
        for i in 0..4 {
            g[i] = (g[i] - y[i] * dot) / n;
        }
    }

    /// `q` and `-q` are the same attitude; the networks see the
    /// representative with `q0 >= 0`.
    fn features(&self, x: &[f64], out: &mut [f64]) {
        let sign = hemisphere(x);
        for k in 0..4 {
            out[k] = sign * x[k];
        }
        let s = self.rate_scale();
        for k in 4..7 {
            out[k] = x[k] / s;
        }
    }

    fn features_vjp(&self, x: &[f64], g_feat: &[f64], g_x: &mut [f64]) {
        let sign = hemisphere(x);
        for k in 0..4 {
            g_x[k] = sign * g_feat[k];
        }
        let s = self.rate_scale();
        for k in 4..7 {
            g_x[k] = g_feat[k] / s;
        }
    }

    fn state_radius(&self, x: &[f64]) -> f64 {
        (x[4] * x[4] + x[5] * x[5] + x[6] * x[6]).sqrt()
    }

    fn domain_radius(&self) -> f64 {
        self.rate_scale()
    }

    fn settling_norms(&self, x: &[f64]) -> Option<(f64, f64)> {
        let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        Some((sup(&x[1..4]), sup(&x[4..7])))
    }
}

fn hemisphere(x: &[f64]) -> f64 {
    if x[0] < 0.0 {
        -1.0
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::dynamics;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p() -> TraceAttitude {
        TraceAttitude::new(Default::default()).unwrap()
    }

    #[test]
    fn rest_is_equilibrium() {
        let dx = dynamics(&p(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[0.0; 3]).unwrap();
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inertia_inverse() {
        let inv = inverse3(&TRACE_INERTIA).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| TRACE_INERTIA[i][k] * inv[k][j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn quaternion_norm_is_conserved_by_flow() {
        let prob = p();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs = prob.sample_domain(&mut rng, 500);
        for x in xs.rows() {
            let u = [uniform(&mut rng, -0.3, 0.3), uniform(&mut rng, -0.3, 0.3), uniform(&mut rng, -0.3, 0.3)];
            let dx = dynamics(&prob, x.as_slice().unwrap(), &u).unwrap();
            let rate: f64 = 2.0 * (0..4).map(|i| x[i] * dx[i]).sum::<f64>();
            assert!(rate.abs() <= 1e-12, "{rate}");
        }
    }

    #[test]
    fn domain_samples_match_sampling_recipe() {
        let prob = p();
        let xs = prob.sample_domain(&mut ChaCha8Rng::seed_from_u64(5), 1500);
        for x in xs.rows() {
            let qn: f64 = (0..4).map(|i| x[i] * x[i]).sum::<f64>().sqrt();
            assert!((qn - 1.0).abs() < 1e-12);
            let wsq = x[4] * x[4] + x[5] * x[5] + x[6] * x[6];
            assert!((1e-4..=0.3).contains(&wsq), "{wsq}");
            let e = quaternion_to_euler(&x.as_slice().unwrap()[..4]);
            assert!(e.iter().all(|a| a.abs() <= FRAC_PI_2 + 1e-9), "{e:?}");
        }
    }

    #[test]
    fn euler_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let a = [
                uniform(&mut rng, -FRAC_PI_2, FRAC_PI_2),
                uniform(&mut rng, -1.5, 1.5),
                uniform(&mut rng, -FRAC_PI_2, FRAC_PI_2),
            ];
            let back = quaternion_to_euler(&euler_to_quaternion(a[0], a[1], a[2]));
            for k in 0..3 {
                assert!((back[k] - a[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn projection_vjp_matches_finite_differences() {
        let prob = p();
        let x = [0.9, 0.2, -0.3, 0.1, 0.05, 0.0, -0.1];
        let g0 = [0.3, -0.7, 0.2, 0.9, 1.0, 2.0, 3.0];
        let mut g = g0;
        prob.project_vjp(&x, &mut g);
        for i in 0..7 {
            let h = 1e-6;
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            prob.project_state(&mut xp);
            prob.project_state(&mut xm);
            let fd: f64 = (0..7).map(|k| g0[k] * (xp[k] - xm[k]) / (2.0 * h)).sum();
            assert!((fd - g[i]).abs() < 1e-7, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn features_identify_antipodal_quaternions() {
        let prob = p();
        let x = [0.6, 0.48, -0.64, 0.0, 0.1, -0.2, 0.3];
        let mut y = x;
        for v in &mut y[..4] {
            *v = -*v;
        }
        let (mut fx, mut fy) = ([0.0; 7], [0.0; 7]);
        prob.features(&x, &mut fx);
        prob.features(&y, &mut fy);
        assert_eq!(fx, fy);

        let gf = [0.3, -0.7, 0.2, 0.9, 1.0, 2.0, 3.0];
        let h = 1e-6;
        for z in [x, y] {
            let mut g = [0.0; 7];
            prob.features_vjp(&z, &gf, &mut g);
            for i in 0..7 {
                let (mut zp, mut zm) = (z, z);
                zp[i] += h;
                zm[i] -= h;
                let (mut fp, mut fm) = ([0.0; 7], [0.0; 7]);
                prob.features(&zp, &mut fp);
                prob.features(&zm, &mut fm);
                let fd: f64 = (0..7).map(|k| gf[k] * (fp[k] - fm[k]) / (2.0 * h)).sum();
                assert!((fd - g[i]).abs() < 1e-8, "{i}: {fd} vs {}", g[i]);
            }
        }
    }
}
