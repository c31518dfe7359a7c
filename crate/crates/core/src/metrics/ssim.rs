use super::MetricsError;
use crate::raster::{Image, Plane};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian filter over fully contained windows only.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters a window-position map back to pixels.
fn filter_valid_adjoint(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = src[y * ow + x];
            for i in 0..SSIM_WINDOW {
                rows[(y + i) * ow + x] += k[i] * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = rows[y * ow + x];
            for i in 0..SSIM_WINDOW {
                out[y * w + x + i] += k[i] * v;
            }
        }
    }
    out
}

struct Moments {
    mx: Vec<f64>,
    my: Vec<f64>,
    vx: Vec<f64>,
    vy: Vec<f64>,
    cxy: Vec<f64>,
}

fn check(x: &Plane, y: &Plane) -> Result<(), MetricsError> {
    if (x.width, x.height) != (y.width, y.height) {
        return Err(MetricsError::DimensionMismatch((x.width, x.height), (y.width, y.height)));
    }
    if x.width < SSIM_WINDOW || x.height < SSIM_WINDOW {
        return Err(MetricsError::TooSmall((x.width, x.height)));
    }
    Ok(())
}

fn moments(x: &Plane, y: &Plane, k: &[f64; SSIM_WINDOW]) -> Moments {
    let (w, h) = (x.width, x.height);
    let mx = filter_valid(&x.data, w, h, k);
    let my = filter_valid(&y.data, w, h, k);
    let xx: Vec<f64> = x.data.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.data.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.data.iter().zip(&y.data).map(|(a, b)| a * b).collect();
    let exx = filter_valid(&xx, w, h, k);
    let eyy = filter_valid(&yy, w, h, k);
    let exy = filter_valid(&xy, w, h, k);
    let vx = exx.iter().zip(&mx).map(|(e, m)| e - m * m).collect();
    let vy = eyy.iter().zip(&my).map(|(e, m)| e - m * m).collect();
    let cxy = exy.iter().zip(mx.iter().zip(&my)).map(|(e, (a, b))| e - a * b).collect();
    Moments { mx, my, vx, vy, cxy }
}

fn constants(peak: f64) -> (f64, f64) {
    ((0.01 * peak).powi(2), (0.03 * peak).powi(2))
}

/// Mean local SSIM between two single-channel planes.
pub fn ssim_plane(x: &Plane, y: &Plane, peak: f64) -> Result<f64, MetricsError> {
    check(x, y)?;
    let k = kernel();
    let m = moments(x, y, &k);
    let (c1, c2) = constants(peak);
    let n = m.mx.len() as f64;
    let total: f64 = (0..m.mx.len())
        .map(|i| {
            let (a, b) = (m.mx[i], m.my[i]);
            ((2.0 * a * b + c1) * (2.0 * m.cxy[i] + c2)) / ((a * a + b * b + c1) * (m.vx[i] + m.vy[i] + c2))
        })
        .sum();
    Ok(total / n)
}

/// Mean local SSIM and its gradient with respect to every pixel of `x`.
pub fn ssim_plane_with_grad(x: &Plane, y: &Plane, peak: f64) -> Result<(f64, Vec<f64>), MetricsError> {
    check(x, y)?;
    let k = kernel();
    let m = moments(x, y, &k);
    let (c1, c2) = constants(peak);
    let len = m.mx.len();
    let n = len as f64;
    let (mut g_mean, mut g_var, mut g_cov) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    let mut total = 0.0;
    for i in 0..len {
        let (a, b) = (m.mx[i], m.my[i]);
        let a1 = 2.0 * a * b + c1;
        let a2 = 2.0 * m.cxy[i] + c2;
        let b1 = a * a + b * b + c1;
        let b2 = m.vx[i] + m.vy[i] + c2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        let ds_dmean = 2.0 * b * a2 / (b1 * b2) - s * 2.0 * a / b1;
        let ds_dvar = -s / b2;
        let ds_dcov = 2.0 * a1 / (b1 * b2);
        // Variance and covariance depend on the mean: var = E[x^2] - mx^2, cov = E[xy] - mx my.
        g_mean[i] = (ds_dmean - 2.0 * a * ds_dvar - b * ds_dcov) / n;
        g_var[i] = ds_dvar / n;
        g_cov[i] = ds_dcov / n;
    }
    let (w, h) = (x.width, x.height);
    let p_mean = filter_valid_adjoint(&g_mean, w, h, &k);
    let p_var = filter_valid_adjoint(&g_var, w, h, &k);
    let p_cov = filter_valid_adjoint(&g_cov, w, h, &k);
    let grad = (0..w * h).map(|q| p_mean[q] + 2.0 * x.data[q] * p_var[q] + y.data[q] * p_cov[q]).collect();
    Ok((total / n, grad))
}

/// SSIM of two RGB images computed on luma with unit peak.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    if a.dims() != b.dims() {
        return Err(MetricsError::DimensionMismatch(a.dims(), b.dims()));
    }
    ssim_plane(&a.luma(), &b.luma(), 1.0)
}
