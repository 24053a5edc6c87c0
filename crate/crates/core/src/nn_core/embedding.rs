//! Learned space-time embeddings: hour-of-day, day-of-week and month tables
//! plus a linear projection of normalised station coordinates.

use super::{join, uniform_tensor, Linear, Parameters, Tensor};
use crate::error::{Error, Result};

/// Calendar position of one timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TimeIndex {
    /// 0..=23
    pub hour: usize,
    /// 0..=6, Monday = 0
    pub dow: usize,
    /// 1..=12
    pub month: usize,
}

impl TimeIndex {
    pub fn new(hour: usize, dow: usize, month: usize) -> Result<Self> {
        if hour > 23 || dow > 6 || !(1..=12).contains(&month) {
            return Err(Error::InvalidInput(format!(
                "calendar index out of range: hour {hour}, dow {dow}, month {month}"
            )));
        }
        Ok(Self { hour, dow, month })
    }
}

/// Affine normalisation of `(lat, lon)` before the location projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordNorm {
    pub lat_center: f64,
    pub lon_center: f64,
    pub lat_scale: f64,
    pub lon_scale: f64,
}

impl Default for CoordNorm {
    fn default() -> Self {
        Self {
            lat_center: 0.0,
            lon_center: 0.0,
            lat_scale: 90.0,
            lon_scale: 180.0,
        }
    }
}

impl CoordNorm {
    /// Centre and scale to the station set so that a small study region
    /// still spans roughly unit range.
    pub fn fit(coords: &[(f64, f64)]) -> Self {
        let n = coords.len().max(1) as f64;
        let lat_c = coords.iter().map(|c| c.0).sum::<f64>() / n;
        let lon_c = coords.iter().map(|c| c.1).sum::<f64>() / n;
        let sd = |f: &dyn Fn(&(f64, f64)) -> f64, c: f64| {
            let v = coords.iter().map(|x| (f(x) - c).powi(2)).sum::<f64>() / n;
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        };
        Self {
            lat_center: lat_c,
            lon_center: lon_c,
            lat_scale: sd(&|x| x.0, lat_c),
            lon_scale: sd(&|x| x.1, lon_c),
        }
    }

    pub fn apply(&self, lat: f64, lon: f64) -> [f64; 2] {
        [
            (lat - self.lat_center) / self.lat_scale,
            (lon - self.lon_center) / self.lon_scale,
        ]
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.lat_center, self.lon_center, self.lat_scale, self.lon_scale]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v {
            [a, b, c, d] => Ok(Self {
                lat_center: *a,
                lon_center: *b,
                lat_scale: *c,
                lon_scale: *d,
            }),
            _ => Err(Error::shape("coordinate normalisation", 4, v.len())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTables {
    pub hour: Tensor,
    pub dow: Tensor,
    pub month: Tensor,
    pub location: Linear,
    /// not trained
    pub coord_norm: CoordNorm,
}

impl EmbeddingTables {
    pub fn new(dim: usize, coord_norm: CoordNorm, seed: u64, name: &str) -> Self {
        Self {
            hour: uniform_tensor(&[24, dim], 1.0, seed, &join(name, "hour")),
            dow: uniform_tensor(&[7, dim], 1.0, seed, &join(name, "dow")),
            month: uniform_tensor(&[12, dim], 1.0, seed, &join(name, "month")),
            location: Linear::new(2, dim, true, seed, &join(name, "location")),
            coord_norm,
        }
    }

    pub fn dim(&self) -> usize {
        self.hour.cols()
    }

    /// Width of the concatenated embedding.
    pub fn output_dim(&self) -> usize {
        4 * self.dim()
    }

    fn normalized_coords(&self, coords: &[(f64, f64)]) -> Tensor {
        let data = coords
            .iter()
            .flat_map(|&(lat, lon)| self.coord_norm.apply(lat, lon))
            .collect();
        Tensor::matrix(coords.len(), 2, data).expect("2 values per station")
    }

    /// Embeds every station at one timestep; rows follow `coords`.
    /// Layout per row: `[hour | dow | month | location]`.
    pub fn forward(&self, coords: &[(f64, f64)], t: TimeIndex) -> Result<Tensor> {
        TimeIndex::new(t.hour, t.dow, t.month)?;
        let e = self.dim();
        let loc = self.location.forward(&self.normalized_coords(coords))?;
        let mut out = Tensor::zeros(&[coords.len(), 4 * e]);
        for i in 0..coords.len() {
            let row = out.row_mut(i);
            row[..e].copy_from_slice(self.hour.row(t.hour));
            row[e..2 * e].copy_from_slice(self.dow.row(t.dow));
            row[2 * e..3 * e].copy_from_slice(self.month.row(t.month - 1));
            row[3 * e..].copy_from_slice(loc.row(i));
        }
        Ok(out)
    }

    pub fn backward(&self, coords: &[(f64, f64)], t: TimeIndex, d_out: &Tensor, grad: &mut EmbeddingTables) {
        let e = self.dim();
        let mut d_loc = Tensor::zeros(&[coords.len(), e]);
        for i in 0..coords.len() {
            let row = d_out.row(i);
            for (a, b) in grad.hour.row_mut(t.hour).iter_mut().zip(&row[..e]) {
                *a += b;
            }
            for (a, b) in grad.dow.row_mut(t.dow).iter_mut().zip(&row[e..2 * e]) {
                *a += b;
            }
            for (a, b) in grad.month.row_mut(t.month - 1).iter_mut().zip(&row[2 * e..3 * e]) {
                *a += b;
            }
            d_loc.row_mut(i).copy_from_slice(&row[3 * e..]);
        }
        self.location
            .backward_params(&self.normalized_coords(coords), &d_loc, &mut grad.location);
    }

    /// Single-station embedding vector.
    pub fn embed_spacetime(&self, lat: f64, lon: f64, hour: usize, dow: usize, month: usize) -> Result<Tensor> {
        let t = TimeIndex::new(hour, dow, month)?;
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::InvalidInput(format!("coordinates ({lat}, {lon}) out of range")));
        }
        let out = self.forward(&[(lat, lon)], t)?;
        let n = out.len();
        out.reshape(&[n])
    }
}

impl Parameters for EmbeddingTables {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "hour"), &self.hour);
        f(join(prefix, "dow"), &self.dow);
        f(join(prefix, "month"), &self.month);
        self.location.visit(&join(prefix, "location"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "hour"), &mut self.hour);
        f(join(prefix, "dow"), &mut self.dow);
        f(join(prefix, "month"), &mut self.month);
        self.location.visit_mut(&join(prefix, "location"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn_core::gradcheck::{check_parameters, probe};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tables() -> EmbeddingTables {
        EmbeddingTables::new(8, CoordNorm::default(), 3, "emb")
    }

    #[test]
    fn deterministic_and_32_wide() {
        let t = tables();
        let a = t.embed_spacetime(25.6, 85.1, 5, 2, 11).unwrap();
        assert_eq!(a.len(), 32);
        assert_eq!(a, t.embed_spacetime(25.6, 85.1, 5, 2, 11).unwrap());
    }

    #[test]
    fn hour_change_only_touches_hour_block() {
        let t = tables();
        let a = t.embed_spacetime(25.6, 85.1, 0, 2, 11).unwrap();
        let b = t.embed_spacetime(25.6, 85.1, 1, 2, 11).unwrap();
        assert_ne!(&a.data()[..8], &b.data()[..8]);
        assert_eq!(&a.data()[8..], &b.data()[8..]);
    }

    #[test]
    fn matches_manual_row_concatenation() {
        let t = tables();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (h, d, m) = (rng.random_range(0..24), rng.random_range(0..7), rng.random_range(1..=12));
            let (lat, lon) = (rng.random_range(-60.0..60.0), rng.random_range(-170.0..170.0));
            let got = t.embed_spacetime(lat, lon, h, d, m).unwrap();
            let mut want = Vec::new();
            want.extend_from_slice(t.hour.row(h));
            want.extend_from_slice(t.dow.row(d));
            want.extend_from_slice(t.month.row(m - 1));
            for j in 0..8 {
                let w = t.location.weight.row(j);
                want.push(t.location.bias.as_ref().unwrap().data()[j] + w[0] * lat / 90.0 + w[1] * lon / 180.0);
            }
            for (a, b) in got.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_range_indices() {
        let t = tables();
        assert!(t.embed_spacetime(0.0, 0.0, 24, 0, 1).is_err());
        assert!(t.embed_spacetime(0.0, 0.0, 0, 7, 1).is_err());
        assert!(t.embed_spacetime(0.0, 0.0, 0, 0, 0).is_err());
        assert!(t.embed_spacetime(0.0, 0.0, 0, 0, 13).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut t = EmbeddingTables::new(3, CoordNorm::fit(&[(25.0, 85.0), (25.5, 85.2)]), 1, "e");
        let coords = [(25.0, 85.0), (25.5, 85.2), (25.2, 85.1)];
        let ti = TimeIndex::new(7, 3, 4).unwrap();
        let out = t.forward(&coords, ti).unwrap();
        let (_, c) = probe(&out, 3);
        let mut grad = t.zeros_like();
        t.backward(&coords, ti, &c, &mut grad);
        let rep = check_parameters(&mut t, &grad, |p| probe(&p.forward(&coords, ti).unwrap(), 3).0, 1e-5, 1e-8);
        assert!(rep.max_relative_error < 1e-4, "{rep:?}");
    }
}
