//! PSNR and SSIM.

use alloc::vec::Vec;

use crate::{Error, Result, Tensor};

/// Value reported when the two signals are identical.
pub const PSNR_CAP_DB: f64 = 200.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_WINDOW_STD: f64 = 1.5;

/// `10 log10(peak^2 / mse)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(x: &Tensor, reference: &Tensor, peak: f64) -> Result<f64> {
    x.same_shape(reference)?;
    if !(peak > 0.0) {
        return Err(Error::invalid("PSNR peak must be > 0"));
    }
    let mse = x.mse(reference);
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * libm::log10(peak * peak / mse)).min(PSNR_CAP_DB))
}

fn ssim_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - c;
            libm::exp(-d * d / (2.0 * SSIM_WINDOW_STD * SSIM_WINDOW_STD))
        })
        .collect();
    let total: f64 = g.iter().sum();
    g.into_iter().map(|v| v / total).collect()
}

/// Mean SSIM over every valid 11x11 Gaussian window, signals on `[0, 1]`.
pub fn ssim(x: &Tensor, reference: &Tensor) -> Result<f64> {
    ssim_with_peak(x, reference, 1.0)
}

pub fn ssim_with_peak(x: &Tensor, reference: &Tensor, peak: f64) -> Result<f64> {
    x.same_shape(reference)?;
    let (h, w) = match *x.shape() {
        [h, w] => (h, w),
        _ => return Err(Error::invalid("SSIM needs 2-D inputs")),
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(alloc::format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    if !(peak > 0.0) {
        return Err(Error::invalid("SSIM peak must be > 0"));
    }
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let g = ssim_window();
    let (xs, ys) = (x.as_slice(), reference.as_slice());
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=h - SSIM_WINDOW {
        for j in 0..=w - SSIM_WINDOW {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for a in 0..SSIM_WINDOW {
                for b in 0..SSIM_WINDOW {
                    let k = g[a] * g[b];
                    let idx = (i + a) * w + j + b;
                    let (u, v) = (xs[idx], ys[idx]);
                    mx += k * u;
                    my += k * v;
                    xx += k * u * u;
                    yy += k * v * v;
                    xy += k * u * v;
                }
            }
            let (vx, vy, cov) = (xx - mx * mx, yy - my * my, xy - mx * my);
            let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Distortion metrics for signals living on `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    /// On the `[0, 1]` rescaled signals, peak 1.
    pub psnr: f64,
    /// `None` for inputs that are not 2-D or are smaller than the SSIM window.
    pub ssim: Option<f64>,
    /// In the original `[-1, 1]` units.
    pub mse: f64,
}

pub fn evaluate(x: &Tensor, reference: &Tensor) -> Result<MetricReport> {
    x.same_shape(reference)?;
    let to_unit = |t: &Tensor| t.map(|v| 0.5 * (v + 1.0));
    let (xu, ru) = (to_unit(x), to_unit(reference));
    let window_fits = matches!(*x.shape(), [h, w] if h >= SSIM_WINDOW && w >= SSIM_WINDOW);
    Ok(MetricReport {
        psnr: psnr(&xu, &ru, 1.0)?,
        ssim: if window_fits {
            Some(ssim(&xu, &ru)?)
        } else {
            None
        },
        mse: x.mse(reference),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    #[test]
    fn psnr_examples() {
        let r = Tensor::from_fn(&[4, 4], |i| i as f64 / 16.0);
        assert_eq!(psnr(&r, &r, 1.0).unwrap(), PSNR_CAP_DB);
        let shifted = r.map(|v| v + 1.0);
        assert!(psnr(&shifted, &r, 1.0).unwrap().abs() < 1e-12);
        let half = r.map(|v| v + 0.5);
        assert!((psnr(&half, &r, 1.0).unwrap() - 20.0 * libm::log10(2.0)).abs() < 1e-12);
        assert!((psnr(&half, &r, 1.0).unwrap() - 6.0206).abs() < 1e-4);
        assert!(psnr(&r, &Tensor::zeros(&[16]), 1.0).is_err());
    }

    #[test]
    fn ssim_examples() {
        let mut rng = RngStream::new(8);
        let r = Tensor::from_fn(&[64, 64], |_| rng.uniform());
        assert_eq!(ssim(&r, &r).unwrap(), 1.0);

        // zero mean inside every window, not just globally
        let z = Tensor::from_fn(&[32, 32], |i| {
            if (i / 32 + i % 32) % 2 == 0 {
                0.4
            } else {
                -0.4
            }
        });
        assert!(ssim(&z.scale(-1.0), &z).unwrap() < 0.0);

        let noisy = r.map(|v| v + 0.1 * rng.gaussian());
        let s = ssim(&noisy, &r).unwrap();
        assert!(s > 0.3 && s < 0.99, "{s}");

        assert!(ssim(&Tensor::zeros(&[10, 40]), &Tensor::zeros(&[10, 40])).is_err());
        assert!(ssim(&Tensor::zeros(&[121]), &Tensor::zeros(&[121])).is_err());
    }

    #[test]
    fn ssim_single_window_matches_closed_form() {
        // 11x11 image: exactly one window, compare with a direct evaluation
        let mut rng = RngStream::new(2);
        let x = Tensor::from_fn(&[11, 11], |_| rng.uniform());
        let y = Tensor::from_fn(&[11, 11], |_| rng.uniform());
        let g = ssim_window();
        let wts: Vec<f64> = (0..121).map(|i| g[i / 11] * g[i % 11]).collect();
        let mean = |v: &[f64]| v.iter().zip(&wts).map(|(a, b)| a * b).sum::<f64>();
        let (mx, my) = (mean(x.as_slice()), mean(y.as_slice()));
        let cov = |a: &[f64], ma: f64, b: &[f64], mb: f64| {
            a.iter()
                .zip(b)
                .zip(&wts)
                .map(|((u, v), k)| k * (u - ma) * (v - mb))
                .sum::<f64>()
        };
        let vx = cov(x.as_slice(), mx, x.as_slice(), mx);
        let vy = cov(y.as_slice(), my, y.as_slice(), my);
        let cxy = cov(x.as_slice(), mx, y.as_slice(), my);
        let (c1, c2) = (1e-4, 9e-4);
        let expect =
            (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        assert!((ssim(&x, &y).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn report_rescales_to_unit_range() {
        let r = Tensor::full(&[16, 16], -1.0);
        let x = Tensor::full(&[16, 16], 1.0);
        let rep = evaluate(&x, &r).unwrap();
        assert_eq!(rep.mse, 4.0);
        assert!(rep.psnr.abs() < 1e-12);
        assert!(rep.ssim.is_some());
        assert!(evaluate(&Tensor::zeros(&[5]), &Tensor::zeros(&[5]))
            .unwrap()
            .ssim
            .is_none());
    }

    proptest! {
        #[test]
        fn psnr_shift_invariant(seed in 0u64..1000, shift in -5.0f64..5.0) {
            let mut rng = RngStream::new(seed);
            let r = Tensor::from_fn(&[8, 8], |_| rng.uniform());
            let x = Tensor::from_fn(&[8, 8], |_| rng.uniform());
            let a = psnr(&x, &r, 1.0).unwrap();
            let b = psnr(&x.map(|v| v + shift), &r.map(|v| v + shift), 1.0).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn ssim_symmetric_and_bounded(seed in 0u64..1000) {
            let mut rng = RngStream::new(seed);
            let r = Tensor::from_fn(&[14, 13], |_| rng.uniform());
            let x = Tensor::from_fn(&[14, 13], |_| rng.uniform());
            let a = ssim(&x, &r).unwrap();
            let b = ssim(&r, &x).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&a));
        }
    }
}
