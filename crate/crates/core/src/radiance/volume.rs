//! Ray sampling and discrete volume rendering.

use nalgebra::Vector3;

use super::RadianceError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    direction: Vector3<f64>,
}

impl Ray {
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>) -> Result<Self, RadianceError> {
        let n = direction.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(RadianceError::DegenerateRay);
        }
        Ok(Ray { origin, direction: direction / n })
    }

    /// Direction from polar angle `theta` (from +z) and azimuth `phi`.
    pub fn from_angles(origin: Vector3<f64>, theta: f64, phi: f64) -> Self {
        let d = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
        Ray { origin, direction: d }
    }

    pub fn direction(&self) -> &Vector3<f64> {
        &self.direction
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySample {
    pub sigma: f64,
    pub color: [f64; 3],
    pub delta: f64,
}

impl RaySample {
    pub fn alpha(&self) -> f64 {
        alpha_from_density(self.sigma, self.delta)
    }
}

/// Opacity of an interval of length `delta` with constant density `sigma`.
pub fn alpha_from_density(sigma: f64, delta: f64) -> f64 {
    -(-sigma * delta).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Composite {
    pub color: [f64; 3],
    pub transmittance: f64,
}

/// Front-to-back alpha compositing of `(alpha, color)` samples over `background`.
pub fn composite_front_to_back(samples: &[(f64, [f64; 3])], background: [f64; 3]) -> Composite {
    let mut color = [0.0; 3];
    let mut t = 1.0;
    for &(alpha, c) in samples {
        let w = alpha * t;
        for k in 0..3 {
            color[k] += w * c[k];
        }
        t *= 1.0 - alpha;
    }
    for k in 0..3 {
        color[k] += t * background[k];
    }
    Composite { color, transmittance: t }
}

/// Transmittance before each sample, `exp(-sum_{j<i} sigma_j delta_j)`.
pub fn transmittance_exponential(samples: &[RaySample]) -> Vec<f64> {
    let mut optical_depth = 0.0f64;
    samples
        .iter()
        .map(|s| {
            let t = (-optical_depth).exp();
            optical_depth += s.sigma * s.delta;
            t
        })
        .collect()
}

/// Transmittance before each sample, `prod_{j<i} (1 - alpha_j)`.
pub fn transmittance_product(samples: &[RaySample]) -> Vec<f64> {
    let mut t = 1.0;
    samples
        .iter()
        .map(|s| {
            let before = t;
            t *= 1.0 - s.alpha();
            before
        })
        .collect()
}

/// Midpoint quadrature of the volume rendering integral over `[t_near, t_far]`
/// with `n_samples` equal strata. `field(x, d)` returns `(sigma, color)`.
pub fn volume_render_ray<F>(
    field: F,
    ray: &Ray,
    t_near: f64,
    t_far: f64,
    n_samples: usize,
    background: [f64; 3],
) -> Result<Composite, RadianceError>
where
    F: Fn(&Vector3<f64>, &Vector3<f64>) -> (f64, [f64; 3]),
{
    if !(t_far > t_near && t_near >= 0.0) || n_samples < 2 {
        return Err(RadianceError::InvalidRange { near: t_near, far: t_far, samples: n_samples });
    }
    let delta = (t_far - t_near) / n_samples as f64;
    let mut samples = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let t = t_near + (i as f64 + 0.5) * delta;
        let (sigma, color) = field(&ray.at(t), ray.direction());
        if !(sigma >= 0.0) {
            return Err(RadianceError::NegativeDensity { t, sigma });
        }
        samples.push((alpha_from_density(sigma, delta), color));
    }
    Ok(composite_front_to_back(&samples, background))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const RED: [f64; 3] = [1.0, 0.0, 0.0];
    const WHITE: [f64; 3] = [1.0; 3];
    const BLACK: [f64; 3] = [0.0; 3];

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha_from_density(0.0, 0.3), 0.0);
        assert!((alpha_from_density(2f64.ln(), 1.0) - 0.5).abs() < 1e-15);
        assert!((alpha_from_density(3.0, 0.1) - 0.259).abs() < 5e-4);
        assert!((alpha_from_density(3.0, 0.1) - (1.0 - (-0.3f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn composite_examples() {
        let empty = composite_front_to_back(&[], [0.2, 0.3, 0.4]);
        assert_eq!(empty, Composite { color: [0.2, 0.3, 0.4], transmittance: 1.0 });

        let opaque = composite_front_to_back(&[(1.0 - 1e-9, RED)], BLACK);
        assert!((opaque.color[0] - 1.0).abs() < 1e-8 && opaque.color[1] == 0.0);
        assert!((opaque.transmittance - 1e-9).abs() < 1e-15);

        let two = composite_front_to_back(&[(0.5, WHITE), (0.5, BLACK)], BLACK);
        assert_eq!(two.color, [0.5; 3]);
        assert_eq!(two.transmittance, 0.25);
    }

    #[test]
    fn ray_normalizes_and_rejects_zero() {
        let r = Ray::new(Vector3::zeros(), Vector3::new(0.0, 3.0, 4.0)).unwrap();
        assert!((r.direction().norm() - 1.0).abs() < 1e-15);
        assert_eq!(r.at(5.0), Vector3::new(0.0, 3.0, 4.0));
        assert_eq!(Ray::new(Vector3::zeros(), Vector3::zeros()), Err(RadianceError::DegenerateRay));
        let polar = Ray::from_angles(Vector3::zeros(), 0.7, 2.1);
        assert!((polar.direction().norm() - 1.0).abs() < 1e-12);
    }

    fn axis_ray() -> Ray {
        Ray::new(Vector3::zeros(), Vector3::z()).unwrap()
    }

    #[test]
    fn vacuum_returns_background() {
        let c = volume_render_ray(|_, _| (0.0, RED), &axis_ray(), 0.0, 4.0, 16, [0.1, 0.2, 0.3]).unwrap();
        assert_eq!(c.color, [0.1, 0.2, 0.3]);
        assert_eq!(c.transmittance, 1.0);
    }

    #[test]
    fn homogeneous_slab_matches_beer_lambert() {
        let (sigma, len) = (0.8, 2.5);
        let c = [0.3, 0.6, 0.9];
        let r = volume_render_ray(|_, _| (sigma, c), &axis_ray(), 1.0, 1.0 + len, 4096, BLACK).unwrap();
        let closed = 1.0 - (-sigma * len).exp();
        for k in 0..3 {
            assert!((r.color[k] - closed * c[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn quadrature_error_shrinks_monotonically_on_smooth_density() {
        // sigma(t) = s0 exp(-k t) with constant color has opacity 1 - exp(-integral).
        let (s0, k, near, far) = (2.0f64, 0.7f64, 0.0f64, 3.0f64);
        let integral = s0 / k * ((-k * near).exp() - (-k * far).exp());
        let exact = 1.0 - (-integral).exp();
        let errors: Vec<f64> = (2..=12)
            .map(|p| {
                let field = |x: &Vector3<f64>, _: &Vector3<f64>| (s0 * (-k * x.z).exp(), WHITE);
                let r = volume_render_ray(field, &axis_ray(), near, far, 1 << p, BLACK).unwrap();
                (r.color[0] - exact).abs()
            })
            .collect();
        assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
        assert!(*errors.last().unwrap() < 1e-6);
    }

    #[test]
    fn piecewise_constant_field_is_exact() {
        // Four strata with their own density and color.
        let sigmas = [0.5, 2.0, 0.0, 4.0];
        let colors = [[0.2, 0.4, 0.6], [0.9, 0.1, 0.1], WHITE, [0.0, 0.5, 1.0]];
        let field = |x: &Vector3<f64>, _: &Vector3<f64>| {
            let i = (x.z.floor() as usize).min(3);
            (sigmas[i], colors[i])
        };
        let r = volume_render_ray(field, &axis_ray(), 0.0, 4.0, 4, [0.1; 3]).unwrap();
        let list: Vec<(f64, [f64; 3])> = (0..4).map(|i| (alpha_from_density(sigmas[i], 1.0), colors[i])).collect();
        assert_eq!(r, composite_front_to_back(&list, [0.1; 3]));
    }

    #[test]
    fn invalid_inputs() {
        let neg = volume_render_ray(|_, _| (-1.0, RED), &axis_ray(), 0.0, 1.0, 4, BLACK);
        assert!(matches!(neg, Err(RadianceError::NegativeDensity { .. })));
        assert!(volume_render_ray(|_, _| (1.0, RED), &axis_ray(), 1.0, 1.0, 4, BLACK).is_err());
        assert!(volume_render_ray(|_, _| (1.0, RED), &axis_ray(), 0.0, 1.0, 1, BLACK).is_err());
    }

    fn samples() -> impl Strategy<Value = Vec<RaySample>> {
        prop::collection::vec(
            (0.0f64..5.0, 0.001f64..1.0, prop::array::uniform3(0.0f64..1.0))
                .prop_map(|(sigma, delta, color)| RaySample { sigma, color, delta }),
            0..64,
        )
    }

    proptest! {
        #[test]
        fn partition_of_unity(list in samples()) {
            let pairs: Vec<(f64, [f64; 3])> = list.iter().map(|s| (s.alpha(), WHITE)).collect();
            let c = composite_front_to_back(&pairs, BLACK);
            prop_assert!((c.color[0] + c.transmittance - 1.0).abs() < 1e-12);
        }

        #[test]
        fn exponential_equals_product(list in samples()) {
            let e = transmittance_exponential(&list);
            let p = transmittance_product(&list);
            for (a, b) in e.iter().zip(&p) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn alpha_monotone(s in 0.0f64..10.0, d in 0.001f64..2.0, ds in 0.0f64..1.0) {
            let a = alpha_from_density(s, d);
            prop_assert!((0.0..1.0).contains(&a));
            prop_assert!(alpha_from_density(s + ds, d) >= a);
            prop_assert!(alpha_from_density(s, d + ds) >= a);
        }
    }
}
