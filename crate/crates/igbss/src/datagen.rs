//! Seeded generators for separation experiments: mixing coefficients up to a
//! given interaction order, waveform and point-cloud sources, and image
//! mixtures.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StudentT, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::Raster;
use crate::signal::{SignalMatrix, SignalRole};
use crate::space::combinations;

#[derive(Debug, Error, PartialEq)]
pub enum DatagenError {
    #[error("lower bound {lo} must be below upper bound {hi}")]
    BadBounds { lo: f64, hi: f64 },
    #[error("interaction order {order} exceeds the number of sources {sources}")]
    OrderTooLarge { order: usize, sources: usize },
    #[error("dimension must be positive: {0}")]
    ZeroDimension(&'static str),
    #[error("source matrix has {got} rows, mixing spec expects {expected}")]
    SourceRows { expected: usize, got: usize },
    #[error("rasters must share one shape: {0}x{1}x{2} vs {3}x{4}x{5}")]
    RasterShape(usize, usize, usize, usize, usize, usize),
}

/// One mixing coefficient: received row, interacting source rows (strictly
/// increasing), value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingCoefficient {
    pub row: usize,
    pub sources: Vec<usize>,
    pub value: f64,
}

/// A full set of mixing coefficients for orders 1..=k, enumerated by order,
/// then received row, then source subscripts — the same order the sample
/// space enumerates its mixing states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingSpec {
    pub receivers: usize,
    pub sources: usize,
    pub order: usize,
    pub coefficients: Vec<MixingCoefficient>,
}

impl MixingSpec {
    /// First-order identity mixing (receivers == sources, unit diagonal).
    pub fn identity(n: usize) -> Self {
        let coefficients = (0..n)
            .flat_map(|row| {
                (0..n).map(move |src| MixingCoefficient {
                    row,
                    sources: vec![src],
                    value: if row == src { 1.0 } else { 0.0 },
                })
            })
            .collect();
        MixingSpec { receivers: n, sources: n, order: 1, coefficients }
    }

    pub fn coefficient_count(receivers: usize, sources: usize, order: usize) -> usize {
        (1..=order).map(|j| receivers * combinations(sources, j).len()).sum()
    }
}

/// Draws i.i.d. uniform coefficients in `[lo, hi]` for every interaction up
/// to order `k`; reproducible per seed.
pub fn gen_mixing(
    receivers: usize,
    sources: usize,
    order: usize,
    lo: f64,
    hi: f64,
    seed: u64,
) -> Result<MixingSpec, DatagenError> {
    if receivers == 0 || sources == 0 {
        return Err(DatagenError::ZeroDimension(if receivers == 0 { "receivers" } else { "sources" }));
    }
    if order == 0 || order > sources {
        return Err(DatagenError::OrderTooLarge { order, sources });
    }
    let bounds_ok = lo.is_finite() && hi.is_finite() && lo < hi;
    if !bounds_ok {
        return Err(DatagenError::BadBounds { lo, hi });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = Uniform::new_inclusive(lo, hi);
    let mut coefficients = Vec::with_capacity(MixingSpec::coefficient_count(receivers, sources, order));
    for j in 1..=order {
        for row in 0..receivers {
            for combo in combinations(sources, j) {
                coefficients.push(MixingCoefficient {
                    row,
                    sources: combo,
                    value: uniform.sample(&mut rng),
                });
            }
        }
    }
    Ok(MixingSpec { receivers, sources, order, coefficients })
}

/// Applies the mixing spec: each received sample is the sum over all
/// coefficients of the coefficient value times the product of its source
/// samples. Order 1 is the plain matrix product.
pub fn mix(z: &SignalMatrix, spec: &MixingSpec) -> Result<SignalMatrix, DatagenError> {
    if z.rows != spec.sources {
        return Err(DatagenError::SourceRows { expected: spec.sources, got: z.rows });
    }
    let m = z.cols;
    let mut x = SignalMatrix::zeros(SignalRole::Received, spec.receivers, m);
    for coeff in &spec.coefficients {
        for sample in 0..m {
            let product: f64 = coeff.sources.iter().map(|&n| z.get(n, sample)).product();
            let cell = x.get(coeff.row, sample) + coeff.value * product;
            x.set(coeff.row, sample, cell);
        }
    }
    Ok(x)
}

/// Three waveform sources over `samples` uniformly spaced points: a sine, a
/// square wave (sign of the sine) and a rising sawtooth. All run 3 cycles
/// with phase 0 and range within [-1, 1].
pub fn gen_timeseries(samples: usize) -> SignalMatrix {
    assert!(samples >= 2, "a waveform needs at least two samples");
    const CYCLES: f64 = 3.0;
    let mut data = Vec::with_capacity(3 * samples);
    let phase = |i: usize| CYCLES * i as f64 / samples as f64;
    data.extend((0..samples).map(|i| (std::f64::consts::TAU * phase(i)).sin()));
    data.extend(
        (0..samples).map(|i| if (std::f64::consts::TAU * phase(i)).sin() >= 0.0 { 1.0 } else { -1.0 }),
    );
    data.extend((0..samples).map(|i| 2.0 * phase(i).fract() - 1.0));
    SignalMatrix { role: SignalRole::Source, rows: 3, cols: samples, data }
}

/// Two heavy-tailed point-cloud sources: i.i.d. Student-t with 1.3 degrees
/// of freedom, the first row scaled by 1/5 and the second by 1/10.
pub fn gen_pointcloud(count: usize, seed: u64) -> SignalMatrix {
    assert!(count >= 2, "a point cloud needs at least two samples");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let student = StudentT::new(1.3).expect("valid degrees of freedom");
    let mut data = Vec::with_capacity(2 * count);
    for scale in [0.2, 0.1] {
        data.extend((0..count).map(|_| scale * student.sample(&mut rng)));
    }
    SignalMatrix { role: SignalRole::Source, rows: 2, cols: count, data }
}

/// Affine map used to push a mixed image matrix onto 0..=255 integers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaleRecord {
    pub data_min: f64,
    pub data_max: f64,
}

impl RescaleRecord {
    pub fn invert(&self, value: f64) -> f64 {
        value * (self.data_max - self.data_min) / 255.0 + self.data_min
    }
}

/// Flattens each raster into one signal, mixes them, and rescales the mixed
/// matrix to integer intensities in 0..=255.
pub fn gen_images_mixture(
    images: &[Raster],
    spec: &MixingSpec,
) -> Result<(SignalMatrix, RescaleRecord), DatagenError> {
    let first = &images[0];
    for img in images {
        if (img.width, img.height, img.channels) != (first.width, first.height, first.channels) {
            return Err(DatagenError::RasterShape(
                first.width,
                first.height,
                first.channels,
                img.width,
                img.height,
                img.channels,
            ));
        }
    }
    let cols = first.len();
    let data: Vec<f64> = images.iter().flat_map(|img| img.data.iter().copied()).collect();
    let z = SignalMatrix { role: SignalRole::Source, rows: images.len(), cols, data };
    let mut x = mix(&z, spec)?;

    let (data_min, data_max) = x.min_max();
    let record = RescaleRecord { data_min, data_max };
    let scale = if data_max > data_min { 255.0 / (data_max - data_min) } else { 0.0 };
    for v in x.data.iter_mut() {
        *v = ((*v - data_min) * scale).round();
    }
    Ok((x, record))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixing_counts_and_bounds() {
        let spec = gen_mixing(3, 3, 1, 1.0, 6.0, 5).unwrap();
        assert_eq!(spec.coefficients.len(), 9);
        assert!(spec.coefficients.iter().all(|c| (1.0..=6.0).contains(&c.value)));

        let spec = gen_mixing(3, 3, 2, 0.5, 2.0, 5).unwrap();
        assert_eq!(spec.coefficients.len(), 18);
        assert_eq!(MixingSpec::coefficient_count(3, 3, 3), 21);
    }

    #[test]
    fn mixing_is_seed_deterministic() {
        let a = gen_mixing(3, 3, 2, 0.5, 2.0, 7).unwrap();
        let b = gen_mixing(3, 3, 2, 0.5, 2.0, 7).unwrap();
        let c = gen_mixing(3, 3, 2, 0.5, 2.0, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn mixing_rejects_bad_arguments() {
        assert_eq!(gen_mixing(3, 3, 1, 6.0, 1.0, 0).unwrap_err(), DatagenError::BadBounds { lo: 6.0, hi: 1.0 });
        assert_eq!(
            gen_mixing(3, 3, 4, 1.0, 6.0, 0).unwrap_err(),
            DatagenError::OrderTooLarge { order: 4, sources: 3 }
        );
        assert!(matches!(gen_mixing(0, 3, 1, 1.0, 6.0, 0), Err(DatagenError::ZeroDimension(_))));
    }

    #[test]
    fn identity_mixing_is_identity() {
        let z = SignalMatrix::new(SignalRole::Source, 2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let x = mix(&z, &MixingSpec::identity(2)).unwrap();
        assert_eq!(x.data, z.data);
    }

    #[test]
    fn second_order_hand_example() {
        // a_l0 = a_l1 = a_l01 = 1, Z = [[1,2],[3,4]] -> each received row (7, 14)
        let coefficients = (0..2)
            .flat_map(|row| {
                [vec![0], vec![1], vec![0, 1]]
                    .into_iter()
                    .map(move |sources| MixingCoefficient { row, sources, value: 1.0 })
            })
            .collect();
        let spec = MixingSpec { receivers: 2, sources: 2, order: 2, coefficients };
        let z = SignalMatrix::new(SignalRole::Source, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let x = mix(&z, &spec).unwrap();
        assert_eq!(x.data, vec![7.0, 14.0, 7.0, 14.0]);
    }

    #[test]
    fn mix_rejects_row_mismatch() {
        let z = SignalMatrix::new(SignalRole::Source, 3, 2, vec![0.0; 6]).unwrap();
        assert_eq!(
            mix(&z, &MixingSpec::identity(2)).unwrap_err(),
            DatagenError::SourceRows { expected: 2, got: 3 }
        );
    }

    #[test]
    fn mix_matches_nested_loop_oracle() {
        // independent re-implementation straight from the interaction formula
        let spec = gen_mixing(3, 4, 3, 0.5, 2.0, 11).unwrap();
        let z_data: Vec<f64> = (0..4 * 5).map(|i| ((i * 37 % 19) as f64 - 9.0) / 4.0).collect();
        let z = SignalMatrix::new(SignalRole::Source, 4, 5, z_data).unwrap();
        let x = mix(&z, &spec).unwrap();

        let lookup = |row: usize, sources: &[usize]| -> f64 {
            spec.coefficients
                .iter()
                .find(|c| c.row == row && c.sources == sources)
                .map(|c| c.value)
                .unwrap()
        };
        for l in 0..3 {
            for m in 0..5 {
                // term groups in formula order: all first-order terms, then
                // all second-order, then all third-order
                let mut expected = 0.0;
                for n1 in 0..4 {
                    expected += lookup(l, &[n1]) * z.get(n1, m);
                }
                for n1 in 0..4 {
                    for n2 in n1 + 1..4 {
                        expected += lookup(l, &[n1, n2]) * (z.get(n1, m) * z.get(n2, m));
                    }
                }
                for n1 in 0..4 {
                    for n2 in n1 + 1..4 {
                        for n3 in n2 + 1..4 {
                            expected += lookup(l, &[n1, n2, n3])
                                * (z.get(n1, m) * z.get(n2, m) * z.get(n3, m));
                        }
                    }
                }
                assert_eq!(x.get(l, m), expected, "mismatch at ({l},{m})");
            }
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn mix_is_equivariant_under_source_relabeling() {
        let spec = gen_mixing(2, 3, 2, 0.5, 2.0, 3).unwrap();
        let perm = [2usize, 0, 1]; // source n of the relabeled problem is old perm[n]
        let z_data: Vec<f64> = (0..3 * 4).map(|i| (i as f64 * 0.37).sin()).collect();
        let z = SignalMatrix::new(SignalRole::Source, 3, 4, z_data).unwrap();

        let mut z_perm = SignalMatrix::zeros(SignalRole::Source, 3, 4);
        for n in 0..3 {
            for m in 0..4 {
                z_perm.set(n, m, z.get(perm[n], m));
            }
        }
        let inverse: Vec<usize> = (0..3).map(|old| perm.iter().position(|&p| p == old).unwrap()).collect();
        let relabeled = MixingSpec {
            coefficients: spec
                .coefficients
                .iter()
                .map(|c| {
                    let mut sources: Vec<usize> = c.sources.iter().map(|&n| inverse[n]).collect();
                    sources.sort_unstable();
                    MixingCoefficient { row: c.row, sources, value: c.value }
                })
                .collect(),
            ..spec.clone()
        };

        let direct = mix(&z, &spec).unwrap();
        let permuted = mix(&z_perm, &relabeled).unwrap();
        assert_eq!(direct.data, permuted.data);
    }

    #[test]
    fn timeseries_waveforms() {
        let z = gen_timeseries(500);
        assert_eq!((z.rows, z.cols), (3, 500));
        for r in 0..3 {
            let row = z.row(r);
            let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(lo < 0.0 && hi > 0.0, "row {r}: [{lo},{hi}]");
        }
        let mut square: Vec<f64> = z.row(1).to_vec();
        square.sort_by(f64::total_cmp);
        square.dedup();
        assert_eq!(square, vec![-1.0, 1.0]);
    }

    #[test]
    fn pointcloud_is_heavy_tailed_and_scaled() {
        let z = gen_pointcloud(10_000, 2);
        assert_eq!(gen_pointcloud(10_000, 2), z);

        let iqr = |row: &[f64]| -> f64 {
            let mut v = row.to_vec();
            v.sort_by(f64::total_cmp);
            let q = |p: f64| v[(p * (v.len() - 1) as f64).round() as usize];
            q(0.75) - q(0.25)
        };
        let ratio = iqr(z.row(0)) / iqr(z.row(1));
        assert!((1.6..=2.4).contains(&ratio), "IQR ratio {ratio}");

        let kurtosis = |row: &[f64]| -> f64 {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let m2 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let m4 = row.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
            m4 / (m2 * m2)
        };
        assert!(kurtosis(z.row(0)) > 10.0);
        assert!(kurtosis(z.row(1)) > 10.0);
    }

    #[test]
    fn image_mixture_identity_and_range() {
        let img = |values: Vec<f64>| Raster { width: 2, height: 1, channels: 3, data: values };
        let a = img(vec![0.0, 10.0, 20.0, 30.0, 40.0, 255.0]);
        let b = img(vec![5.0, 15.0, 25.0, 35.0, 45.0, 55.0]);
        let (x, record) = gen_images_mixture(&[a.clone(), b], &MixingSpec::identity(2)).unwrap();
        // data already spans 0..=255, so the rescale is the identity
        assert_eq!((record.data_min, record.data_max), (0.0, 255.0));
        assert_eq!(x.row(0), a.data.as_slice());
        assert!(x.data.iter().all(|&v| (0.0..=255.0).contains(&v) && v == v.round()));
    }

    #[test]
    fn image_rescale_round_trip_is_within_quantization() {
        let a = Raster { width: 2, height: 2, channels: 1, data: vec![0.3, 0.9, 0.1, 0.7] };
        let b = Raster { width: 2, height: 2, channels: 1, data: vec![0.5, 0.2, 0.8, 0.4] };
        let spec = gen_mixing(2, 2, 1, 1.0, 6.0, 9).unwrap();
        let z = SignalMatrix::new(SignalRole::Source, 2, 4, [a.data.clone(), b.data.clone()].concat())
            .unwrap();
        let exact = mix(&z, &spec).unwrap();
        let (x, record) = gen_images_mixture(&[a, b], &spec).unwrap();
        let bound = 0.5 * (record.data_max - record.data_min) / 255.0;
        for (quantized, original) in x.data.iter().zip(&exact.data) {
            assert!((record.invert(*quantized) - original).abs() <= bound + 1e-12);
        }
    }

    #[test]
    fn image_mixture_rejects_shape_mismatch() {
        let a = Raster { width: 2, height: 1, channels: 3, data: vec![0.0; 6] };
        let b = Raster { width: 1, height: 2, channels: 3, data: vec![0.0; 6] };
        assert!(matches!(
            gen_images_mixture(&[a, b], &MixingSpec::identity(2)),
            Err(DatagenError::RasterShape(..))
        ));
    }
}
