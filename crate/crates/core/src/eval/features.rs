//! Fourteen morphological and moment statistics of the dark foreground of a
//! patch, found by Otsu thresholding its channel-mean grayscale.

use std::f64::consts::PI;

pub const FEATURE_COUNT: usize = 14;
/// Bumped whenever the feature definitions change, so exported results stay
/// comparable.
pub const FEATURE_SET_VERSION: &str = "shape14_v1";
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "area_fraction",
    "perimeter",
    "compactness",
    "eccentricity",
    "centroid_offset",
    "mean_r",
    "mean_g",
    "mean_b",
    "std_r",
    "std_g",
    "std_b",
    "hu1",
    "hu2",
    "hu3",
];

pub type ShapeFeatures = [f64; FEATURE_COUNT];

const BINS: usize = 256;

fn bin(v: f64) -> usize {
    ((v * BINS as f64).floor().max(0.0) as usize).min(BINS - 1)
}

/// Otsu's threshold over 256 bins of `[0, 1]` values: the bin index `t`
/// maximizing between-class variance when bins `0..=t` form the dark class.
/// `None` when every value lands in a single bin.
pub fn otsu_threshold(values: &[f64]) -> Option<usize> {
    let mut hist = [0u64; BINS];
    for &v in values {
        hist[bin(v)] += 1;
    }
    let total = values.len() as f64;
    let weighted_total: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let mut best: Option<(usize, f64)> = None;
    for (t, &count) in hist.iter().enumerate().take(BINS - 1) {
        w0 += count as f64;
        sum0 += t as f64 * count as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let (m0, m1) = (sum0 / w0, (weighted_total - sum0) / w1);
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if best.is_none_or(|(_, b)| between > b) {
            best = Some((t, between));
        }
    }
    best.map(|(t, _)| t)
}

/// Features of a planar `[3, size, size]` patch with values in `[0, 1]`.
/// A patch whose grayscale histogram occupies one bin has no foreground and
/// maps to all zeros.
pub fn shape_features(pixels: &[f32], size: usize) -> ShapeFeatures {
    let plane = size * size;
    assert_eq!(pixels.len(), 3 * plane, "expected a planar [3, {size}, {size}] patch");
    let gray: Vec<f64> =
        (0..plane).map(|i| (f64::from(pixels[i]) + f64::from(pixels[plane + i]) + f64::from(pixels[2 * plane + i])) / 3.0).collect();
    let Some(t) = otsu_threshold(&gray) else {
        return [0.0; FEATURE_COUNT];
    };
    let mask: Vec<bool> = gray.iter().map(|&g| bin(g) <= t).collect();
    let area = mask.iter().filter(|&&m| m).count();
    if area == 0 {
        return [0.0; FEATURE_COUNT];
    }
    let a = area as f64;
    let fg = |x: isize, y: isize| {
        x >= 0 && y >= 0 && (x as usize) < size && (y as usize) < size && mask[y as usize * size + x as usize]
    };

    let mut perimeter = 0usize;
    let (mut sx, mut sy) = (0.0, 0.0);
    let mut channel_sum = [0.0f64; 3];
    for y in 0..size {
        for x in 0..size {
            if !mask[y * size + x] {
                continue;
            }
            let (xi, yi) = (x as isize, y as isize);
            perimeter += [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().filter(|(dx, dy)| !fg(xi + dx, yi + dy)).count();
            sx += x as f64;
            sy += y as f64;
            for (c, s) in channel_sum.iter_mut().enumerate() {
                *s += f64::from(pixels[c * plane + y * size + x]);
            }
        }
    }
    let (cx, cy) = (sx / a, sy / a);
    let channel_mean = channel_sum.map(|s| s / a);

    // Raw central moments μ_pq (sums, not averages) and channel variances.
    let (mut m20, mut m02, mut m11, mut m30, mut m03, mut m21, mut m12) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut channel_var = [0.0f64; 3];
    for y in 0..size {
        for x in 0..size {
            if !mask[y * size + x] {
                continue;
            }
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            m20 += dx * dx;
            m02 += dy * dy;
            m11 += dx * dy;
            m30 += dx * dx * dx;
            m03 += dy * dy * dy;
            m21 += dx * dx * dy;
            m12 += dx * dy * dy;
            for (c, v) in channel_var.iter_mut().enumerate() {
                let d = f64::from(pixels[c * plane + y * size + x]) - channel_mean[c];
                *v += d * d;
            }
        }
    }

    let p = perimeter as f64;
    let compactness = 4.0 * PI * a / (p * p);

    let (cxx, cyy, cxy) = (m20 / a, m02 / a, m11 / a);
    let half_trace = (cxx + cyy) / 2.0;
    let disc = (((cxx - cyy) / 2.0).powi(2) + cxy * cxy).sqrt();
    let (l1, l2) = (half_trace + disc, (half_trace - disc).max(0.0));
    let eccentricity = if l1 > 0.0 { (1.0 - l2 / l1).max(0.0).sqrt() } else { 0.0 };

    let center = (size as f64 - 1.0) / 2.0;
    let centroid_offset = ((cx - center).powi(2) + (cy - center).powi(2)).sqrt() / size as f64;

    let eta = |m: f64, order: i32| m / a.powf(1.0 + f64::from(order) / 2.0);
    let (n20, n02, n11) = (eta(m20, 2), eta(m02, 2), eta(m11, 2));
    let (n30, n03, n21, n12) = (eta(m30, 3), eta(m03, 3), eta(m21, 3), eta(m12, 3));
    let hu1 = n20 + n02;
    let hu2 = (n20 - n02).powi(2) + 4.0 * n11 * n11;
    let hu3 = (n30 - 3.0 * n12).powi(2) + (3.0 * n21 - n03).powi(2);

    let std = channel_var.map(|v| (v / a).sqrt());
    [
        a / plane as f64,
        p,
        compactness,
        eccentricity,
        centroid_offset,
        channel_mean[0],
        channel_mean[1],
        channel_mean[2],
        std[0],
        std[1],
        std[2],
        hu1,
        hu2,
        hu3,
    ]
}
