//! Isotropic total variation and its proximal operator.
//!
//! Images are interleaved `h x w x ch` buffers; TV is summed per channel with
//! forward differences and a zero difference past the last row/column.

/// Forward-difference gradient, written as `(gx, gy)` interleaved like the input.
pub fn gradient(x: &[f64], h: usize, w: usize, ch: usize, gx: &mut [f64], gy: &mut [f64]) {
    let rw = w * ch;
    for i in 0..h {
        let row = &x[i * rw..(i + 1) * rw];
        let gxr = &mut gx[i * rw..(i + 1) * rw];
        for k in 0..rw - ch {
            gxr[k] = row[k + ch] - row[k];
        }
        gxr[rw - ch..].fill(0.0);
        let gyr = &mut gy[i * rw..(i + 1) * rw];
        if i + 1 < h {
            let below = &x[(i + 1) * rw..(i + 2) * rw];
            for k in 0..rw {
                gyr[k] = below[k] - row[k];
            }
        } else {
            gyr.fill(0.0);
        }
    }
}

/// `div = -gradient^T`.
pub fn divergence(px: &[f64], py: &[f64], h: usize, w: usize, ch: usize, out: &mut [f64]) {
    let rw = w * ch;
    for i in 0..h {
        let o = &mut out[i * rw..(i + 1) * rw];
        let pxr = &px[i * rw..(i + 1) * rw];
        // horizontal part: px[j] (j < w-1) minus px[j-1] (j > 0)
        o[..rw - ch].copy_from_slice(&pxr[..rw - ch]);
        o[rw - ch..].fill(0.0);
        for k in ch..rw {
            o[k] -= pxr[k - ch];
        }
        if i + 1 < h {
            for (ok, pk) in o.iter_mut().zip(&py[i * rw..(i + 1) * rw]) {
                *ok += pk;
            }
        }
        if i > 0 {
            for (ok, pk) in o.iter_mut().zip(&py[(i - 1) * rw..i * rw]) {
                *ok -= pk;
            }
        }
    }
}

pub fn tv_value(x: &[f64], h: usize, w: usize, ch: usize) -> f64 {
    let rw = w * ch;
    let mut total = 0.0;
    for i in 0..h {
        let row = &x[i * rw..(i + 1) * rw];
        let below = (i + 1 < h).then(|| &x[(i + 1) * rw..(i + 2) * rw]);
        for k in 0..rw {
            let dx = if k + ch < rw { row[k + ch] - row[k] } else { 0.0 };
            let dy = below.map_or(0.0, |b| b[k] - row[k]);
            total += (dx * dx + dy * dy).sqrt();
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvSettings {
    pub inner_iters: usize,
    /// Relative duality-gap tolerance.
    pub tol: f64,
}

impl Default for TvSettings {
    fn default() -> Self {
        Self { inner_iters: 100, tol: 1e-5 }
    }
}

/// Dual variable carried between calls to warm-start the inner solver.
#[derive(Debug, Clone, Default)]
pub struct TvDual {
    px: Vec<f64>,
    py: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvReport {
    pub iterations: usize,
    pub gap: f64,
}

fn primal_value(x: &[f64], z: &[f64], tau: f64, h: usize, w: usize, ch: usize) -> f64 {
    let fit: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * fit + tau * tv_value(x, h, w, ch)
}

/// `argmin_x 1/2 |x - z|^2 + tau TV(x)` by fast projected gradient on the dual.
pub fn tv_prox(z: &[f64], h: usize, w: usize, ch: usize, tau: f64, settings: &TvSettings) -> (Vec<f64>, TvReport) {
    let mut dual = TvDual::default();
    tv_prox_warm(z, h, w, ch, tau, settings, &mut dual)
}

pub fn tv_prox_warm(z: &[f64], h: usize, w: usize, ch: usize, tau: f64, settings: &TvSettings, dual: &mut TvDual) -> (Vec<f64>, TvReport) {
    let n = z.len();
    if tau <= 0.0 {
        return (z.to_vec(), TvReport { iterations: 0, gap: 0.0 });
    }
    if dual.px.len() != n {
        dual.px = vec![0.0; n];
        dual.py = vec![0.0; n];
    }
    let step = 1.0 / (8.0 * tau);
    // FGP state: dual holds the current iterate, (rx, ry) the extrapolated point.
    let mut rx = dual.px.clone();
    let mut ry = dual.py.clone();
    let mut t = 1.0f64;
    let mut x = vec![0.0; n];
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut gap = f64::INFINITY;
    let mut iters = 0;
    let zz: f64 = z.iter().map(|v| v * v).sum();

    let primal_from = |px: &[f64], py: &[f64], x: &mut [f64]| {
        divergence(px, py, h, w, ch, x);
        for (xi, zi) in x.iter_mut().zip(z) {
            *xi = zi + tau * *xi;
        }
    };

    for it in 0..settings.inner_iters {
        iters = it + 1;
        primal_from(&rx, &ry, &mut x);
        gradient(&x, h, w, ch, &mut gx, &mut gy);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_next;
        for k in 0..n {
            let mut a = rx[k] + step * gx[k];
            let mut b = ry[k] + step * gy[k];
            let nn = a * a + b * b;
            if nn > 1.0 {
                let inv = 1.0 / nn.sqrt();
                a *= inv;
                b *= inv;
            }
            let (oa, ob) = (dual.px[k], dual.py[k]);
            dual.px[k] = a;
            dual.py[k] = b;
            rx[k] = a + mom * (a - oa);
            ry[k] = b + mom * (b - ob);
        }
        t = t_next;
        if it % 10 == 9 || it + 1 == settings.inner_iters {
            primal_from(&dual.px, &dual.py, &mut x);
            let p = primal_value(&x, z, tau, h, w, ch);
            let xx: f64 = x.iter().map(|v| v * v).sum();
            gap = (p - 0.5 * (zz - xx)).max(0.0);
            if gap <= settings.tol * p.abs().max(1e-12) {
                break;
            }
        }
    }
    primal_from(&dual.px, &dual.py, &mut x);
    (x, TvReport { iterations: iters, gap })
}
