//! Continuous-to-discrete conversion: z-scoring, equal-width and circular
//! binning, and positional composition of per-dimension codes into
//! composite symbols.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Symbol;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    Zscore,
    None,
}

/// A named set of dimensions whose codes are tupled together.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimGroup {
    pub name: String,
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationConfig {
    pub bins_per_dim: u32,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub circular_dims: Vec<usize>,
    /// Origin of the first arc for circular dimensions, radians.
    #[serde(default)]
    pub circular_origin: f64,
    pub groups: Vec<DimGroup>,
}

impl DiscretizationConfig {
    /// 16 bins per dimension; angles (dims 0, 1) circular; ω (dims 2, 3) z-scored.
    pub fn pendulum() -> Self {
        Self {
            bins_per_dim: 16,
            normalization: Normalization::Zscore,
            circular_dims: vec![0, 1],
            circular_origin: 0.0,
            groups: vec![DimGroup {
                name: "phase".into(),
                dims: vec![0, 1, 2, 3],
            }],
        }
    }

    /// 3 bins per dimension, dimensions split into consecutive named groups.
    pub fn agent(group_names: &[&str], dims_per_group: usize) -> Self {
        let groups = group_names
            .iter()
            .enumerate()
            .map(|(g, name)| DimGroup {
                name: (*name).to_string(),
                dims: (g * dims_per_group..(g + 1) * dims_per_group).collect(),
            })
            .collect();
        Self {
            bins_per_dim: 3,
            normalization: Normalization::Zscore,
            circular_dims: Vec::new(),
            circular_origin: 0.0,
            groups,
        }
    }

    pub fn n_dims(&self) -> usize {
        self.groups.iter().map(|g| g.dims.len()).sum()
    }

    /// Checks the group partition against `n_dims` input dimensions.
    pub fn validate(&self, n_dims: usize) -> Result<()> {
        if self.bins_per_dim < 2 {
            return Err(Error::invalid("bins_per_dim must be at least 2"));
        }
        let mut seen = vec![false; n_dims];
        for g in &self.groups {
            if g.dims.is_empty() {
                return Err(Error::invalid(format!("group '{}' is empty", g.name)));
            }
            for &d in &g.dims {
                if d >= n_dims {
                    return Err(Error::invalid(format!(
                        "group '{}' references dimension {d} but input has {n_dims}",
                        g.name
                    )));
                }
                if seen[d] {
                    return Err(Error::invalid(format!(
                        "dimension {d} appears in two groups"
                    )));
                }
                seen[d] = true;
            }
        }
        if let Some(d) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("dimension {d} is not in any group")));
        }
        if let Some(&d) = self.circular_dims.iter().find(|&&d| d >= n_dims) {
            return Err(Error::invalid(format!(
                "circular dimension {d} out of range"
            )));
        }
        Ok(())
    }
}

/// Composite symbols with their alphabet size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolSeries {
    pub symbols: Vec<Symbol>,
    pub alphabet_size: u64,
}

/// Output of [`zscore_normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub dims: Vec<Vec<f64>>,
    /// Indices of zero-variance dimensions (mapped to all zeros).
    pub degenerate: Vec<usize>,
}

fn check_finite(dim: usize, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { dim, index }),
        None => Ok(()),
    }
}

/// Mean and sample (n − 1) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Standardizes each dimension to sample mean 0 and sample std 1.
pub fn zscore_normalize(dims: &[Vec<f64>]) -> Result<Normalized> {
    let mut out = Vec::with_capacity(dims.len());
    let mut degenerate = Vec::new();
    for (d, values) in dims.iter().enumerate() {
        check_finite(d, values)?;
        if values.len() < 2 {
            return Err(Error::invalid(format!(
                "dimension {d} has {} samples; z-scoring needs at least 2",
                values.len()
            )));
        }
        let (mean, std) = mean_std(values);
        if std <= f64::EPSILON * mean.abs().max(1.0) {
            degenerate.push(d);
            out.push(vec![0.0; values.len()]);
        } else {
            out.push(values.iter().map(|v| (v - mean) / std).collect());
        }
    }
    Ok(Normalized {
        dims: out,
        degenerate,
    })
}

/// Per-dimension bin codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinnedDim {
    pub codes: Vec<u32>,
    /// Set when `min == max` and every sample went to bin 0.
    pub degenerate: bool,
}

/// Equal-width binning over `[min, max]` of `values`; the maximum lands in the top bin.
pub fn equal_width_bin(values: &[f64], k: u32) -> Result<BinnedDim> {
    if k < 2 {
        return Err(Error::invalid("bin count must be at least 2"));
    }
    check_finite(0, values)?;
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if values.is_empty() || min == max {
        return Ok(BinnedDim {
            codes: vec![0; values.len()],
            degenerate: true,
        });
    }
    let width = max - min;
    let codes = values
        .iter()
        .map(|&v| {
            let b = ((v - min) / width * k as f64).floor() as i64;
            b.clamp(0, k as i64 - 1) as u32
        })
        .collect();
    Ok(BinnedDim {
        codes,
        degenerate: false,
    })
}

/// Bins angles into `k` equal arcs starting at `origin`, after reduction mod 2π.
pub fn circular_bin(angles: &[f64], k: u32, origin: f64) -> Vec<u32> {
    angles
        .iter()
        .map(|&theta| {
            let r = (theta - origin).rem_euclid(TAU);
            let b = (r / TAU * k as f64).floor() as u32;
            b.min(k - 1)
        })
        .collect()
}

/// Positional (radix) tupling of per-group codes; the first group is most
/// significant. `groups` pairs each code sequence with its alphabet size.
pub fn compose_symbols(groups: &[(&[u32], u64)]) -> Result<SymbolSeries> {
    let Some(((first, _), rest)) = groups.split_first() else {
        return Err(Error::invalid("no groups to compose"));
    };
    let len = first.len();
    if let Some((codes, _)) = rest.iter().find(|(c, _)| c.len() != len) {
        return Err(Error::invalid(format!(
            "code sequences have mismatched lengths {len} and {}",
            codes.len()
        )));
    }
    let mut alphabet_size: u64 = 1;
    for &(_, size) in groups {
        if size == 0 {
            return Err(Error::invalid("group alphabet size must be positive"));
        }
        alphabet_size = alphabet_size
            .checked_mul(size)
            .ok_or_else(|| Error::invalid("composite alphabet overflows 64 bits"))?;
    }
    let mut symbols = vec![0u64; len];
    for &(codes, size) in groups {
        for (sym, &c) in symbols.iter_mut().zip(codes) {
            if u64::from(c) >= size {
                return Err(Error::invalid(format!(
                    "code {c} outside alphabet of size {size}"
                )));
            }
            *sym = *sym * size + u64::from(c);
        }
    }
    Ok(SymbolSeries {
        symbols,
        alphabet_size,
    })
}

/// Result of discretizing a multivariate series.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretized {
    pub series: SymbolSeries,
    /// Dimensions that were constant (zero variance or zero range).
    pub degenerate_dims: Vec<usize>,
}

/// Runs the full pipeline on `dims` (one vector per dimension). Bin edges
/// are computed over the whole series passed in.
pub fn discretize(config: &DiscretizationConfig, dims: &[Vec<f64>]) -> Result<Discretized> {
    config.validate(dims.len())?;
    let k = config.bins_per_dim;
    let mut degenerate_dims = Vec::new();
    let mut codes: Vec<Vec<u32>> = Vec::with_capacity(dims.len());
    for (d, values) in dims.iter().enumerate() {
        check_finite(d, values)?;
        if config.circular_dims.contains(&d) {
            codes.push(circular_bin(values, k, config.circular_origin));
            continue;
        }
        let normalized;
        let source = match config.normalization {
            Normalization::Zscore => {
                let n = zscore_normalize(std::slice::from_ref(values))?;
                normalized = n.dims.into_iter().next().unwrap_or_default();
                &normalized
            }
            Normalization::None => values,
        };
        let binned = equal_width_bin(source, k)?;
        if binned.degenerate {
            degenerate_dims.push(d);
        }
        codes.push(binned.codes);
    }

    let mut group_codes: Vec<(Vec<u32>, u64)> = Vec::with_capacity(config.groups.len());
    for g in &config.groups {
        let parts: Vec<(&[u32], u64)> = g
            .dims
            .iter()
            .map(|&d| (codes[d].as_slice(), u64::from(k)))
            .collect();
        let composed = compose_symbols(&parts)?;
        let group: Vec<u32> = composed
            .symbols
            .iter()
            .map(|&s| {
                u32::try_from(s).map_err(|_| Error::invalid("group alphabet exceeds 32 bits"))
            })
            .collect::<Result<_>>()?;
        group_codes.push((group, composed.alphabet_size));
    }
    let parts: Vec<(&[u32], u64)> = group_codes
        .iter()
        .map(|(c, a)| (c.as_slice(), *a))
        .collect();
    Ok(Discretized {
        series: compose_symbols(&parts)?,
        degenerate_dims,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn zscore_of_simple_ramp() {
        let n = zscore_normalize(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let (m, s) = mean_std(&n.dims[0]);
        assert!(m.abs() < 1e-12);
        assert!((s - 1.0).abs() < 1e-12);
        assert!(n.degenerate.is_empty());
    }

    #[test]
    fn zscore_constant_is_flagged() {
        let n = zscore_normalize(&[vec![5.0, 5.0, 5.0]]).unwrap();
        assert_eq!(n.dims[0], vec![0.0; 3]);
        assert_eq!(n.degenerate, vec![0]);
    }

    #[test]
    fn zscore_rejects_non_finite_with_dimension() {
        let err = zscore_normalize(&[vec![1.0, 2.0], vec![0.0, f64::NAN]]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { dim: 1, index: 1 }));
        assert!(zscore_normalize(&[vec![1.0]]).is_err());
    }

    #[test]
    fn equal_width_examples() {
        assert_eq!(
            equal_width_bin(&[0.0, 0.5, 1.0], 2).unwrap().codes,
            vec![0, 1, 1]
        );
        let ramp: Vec<f64> = (0..16).map(f64::from).collect();
        assert_eq!(
            equal_width_bin(&ramp, 16).unwrap().codes,
            (0..16).collect::<Vec<u32>>()
        );
        let flat = equal_width_bin(&[2.0; 4], 3).unwrap();
        assert!(flat.degenerate);
        assert_eq!(flat.codes, vec![0; 4]);
        assert!(equal_width_bin(&[0.0, 1.0], 1).is_err());
    }

    #[test]
    fn circular_examples() {
        let c = circular_bin(&[0.0, TAU, PI, -PI], 2, 0.0);
        assert_eq!(c[0], c[1]);
        assert_eq!(c[2], 1);
        assert_eq!(c[3], 1);
    }

    #[test]
    fn compose_examples() {
        let a = [0u32, 0, 1, 1];
        let b = [0u32, 1, 0, 1];
        let s = compose_symbols(&[(&a, 2), (&b, 2)]).unwrap();
        assert_eq!(s.symbols, vec![0, 1, 2, 3]);
        assert_eq!(s.alphabet_size, 4);

        let g = [0u32, 1, 2];
        let s = compose_symbols(&[(&g, 3), (&g, 3), (&g, 3)]).unwrap();
        assert_eq!(s.alphabet_size, 27);
        assert_eq!(s.symbols, vec![0, 13, 26]);

        assert!(compose_symbols(&[(&a, 2), (&g, 3)]).is_err());
        assert!(compose_symbols(&[(&g, 2)]).is_err());
    }

    #[test]
    fn compose_is_injective_on_small_alphabets() {
        let (ka, kb, kc) = (3u32, 4u32, 2u32);
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut c = Vec::new();
        for x in 0..ka {
            for y in 0..kb {
                for z in 0..kc {
                    a.push(x);
                    b.push(y);
                    c.push(z);
                }
            }
        }
        let s = compose_symbols(&[(&a, 3), (&b, 4), (&c, 2)]).unwrap();
        let mut sorted = s.symbols.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), s.symbols.len());
        assert!(s.symbols.iter().all(|&x| x < s.alphabet_size));
    }

    #[test]
    fn config_partition_is_validated() {
        let mut cfg = DiscretizationConfig::agent(&["front", "back", "torso"], 2);
        assert!(cfg.validate(6).is_ok());
        assert!(cfg.validate(7).is_err());
        cfg.groups[1].dims.push(0);
        assert!(cfg.validate(6).is_err());
        cfg = DiscretizationConfig::pendulum();
        cfg.bins_per_dim = 1;
        assert!(cfg.validate(4).is_err());
    }

    #[test]
    fn discretize_three_groups_of_three_bins() {
        let cfg = DiscretizationConfig::agent(&["front", "back", "torso"], 1);
        let dims = vec![
            vec![0.0, 1.0, 2.0, 0.0],
            vec![5.0, 5.0, 6.0, 7.0],
            vec![-1.0, 0.0, 1.0, 1.0],
        ];
        let d = discretize(&cfg, &dims).unwrap();
        assert_eq!(d.series.alphabet_size, 27);
        assert!(d.series.symbols.iter().all(|&s| s < 27));
    }
}
