use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A landmark scheme: count, principal subset, mirror permutation and the
/// pair of points whose distance normalizes errors.
///
/// ```toml
/// name = "300w-68"
/// n_landmarks = 68
/// principal = [8, 17, 21, 22, 26, 30, 36, 39, 42, 45, 48, 54]
/// interocular = [36, 45]
/// flip_map = [16, 15, 14, ...]   # one entry per landmark
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scheme {
    pub name: String,
    pub n_landmarks: usize,
    pub principal: Vec<usize>,
    pub flip_map: Vec<usize>,
    pub interocular: [usize; 2],
}

const BUILTIN: [(&str, &str); 3] = [
    ("300w-68", include_str!("../../data/300w-68.toml")),
    ("cofw-29", include_str!("../../data/cofw-29.toml")),
    ("synthetic-28", include_str!("../../data/synthetic-28.toml")),
];

impl Scheme {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scheme =
            toml::from_str(text).map_err(|e| Error::config(format!("partition config: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    /// Load a partition config file, or one of the built-in names
    /// `300w-68`, `cofw-29`, `synthetic-28`.
    pub fn load(spec: &str) -> Result<Self> {
        if let Some(s) = Self::builtin(spec) {
            return Ok(s);
        }
        let path = Path::new(spec);
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn builtin(name: &str) -> Option<Self> {
        BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::from_toml(text).expect("shipped partition configs are valid"))
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(n, _)| *n)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scheme serializes")
    }

    /// Scheme of the synthetic generator with `jaw_points` jaw landmarks
    /// (even, 20 + 2j left and 21 + 2j right).
    pub fn synthetic(jaw_points: usize) -> Result<Self> {
        if !jaw_points.is_multiple_of(2) {
            return Err(Error::config("jaw_points: must be even"));
        }
        let mut flip_map = vec![3, 2, 1, 0, 7, 6, 5, 4, 8, 10, 9, 11, 13, 12, 16, 17, 14, 15, 18, 19];
        for j in 0..jaw_points / 2 {
            flip_map.push(21 + 2 * j);
            flip_map.push(20 + 2 * j);
        }
        let s = Scheme {
            name: format!("synthetic-{}", flip_map.len()),
            n_landmarks: flip_map.len(),
            principal: (0..12).collect(),
            flip_map,
            interocular: [4, 7],
        };
        s.validate()?;
        Ok(s)
    }

    /// Indices outside the principal subset, ascending.
    pub fn elaborate(&self) -> Vec<usize> {
        (0..self.n_landmarks)
            .filter(|i| self.principal.binary_search(i).is_err())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_landmarks;
        let name = &self.name;
        if n == 0 {
            return Err(Error::config(format!("{name}: n_landmarks must be positive")));
        }
        if self.principal.is_empty() || !self.principal.windows(2).all(|p| p[0] < p[1]) {
            return Err(Error::config(format!(
                "{name}: principal must be non-empty, unique and ascending"
            )));
        }
        if self.principal.iter().any(|&i| i >= n) {
            return Err(Error::config(format!("{name}: principal index out of range")));
        }
        if self.flip_map.len() != n {
            return Err(Error::config(format!(
                "{name}: flip_map has {} entries for {n} landmarks",
                self.flip_map.len()
            )));
        }
        for (i, &j) in self.flip_map.iter().enumerate() {
            if j >= n || self.flip_map[j] != i {
                return Err(Error::config(format!(
                    "{name}: flip_map is not an involution at index {i}"
                )));
            }
            let pi = self.principal.binary_search(&i).is_ok();
            let pj = self.principal.binary_search(&j).is_ok();
            if pi != pj {
                return Err(Error::config(format!(
                    "{name}: flip_map sends index {i} across the principal/elaborate split"
                )));
            }
        }
        let [a, b] = self.interocular;
        if a == b || a >= n || b >= n {
            return Err(Error::config(format!(
                "{name}: interocular pair must be two distinct valid indices"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_configs_validate() {
        for name in Scheme::builtin_names() {
            let s = Scheme::builtin(name).unwrap();
            assert_eq!(s.name, name);
            assert_eq!(s.principal.len(), 12);
        }
        let s68 = Scheme::builtin("300w-68").unwrap();
        assert_eq!(s68.elaborate().len(), 56);
        assert_eq!(s68.principal, crate::network::PRINCIPAL_68);
        assert_eq!(Scheme::builtin("cofw-29").unwrap().elaborate().len(), 17);
    }

    #[test]
    fn synthetic_scheme_matches_shipped_file() {
        assert_eq!(Scheme::synthetic(8).unwrap(), Scheme::builtin("synthetic-28").unwrap());
        assert_eq!(Scheme::synthetic(0).unwrap().n_landmarks, 20);
        assert!(Scheme::synthetic(3).is_err());
    }

    #[test]
    fn broken_flip_maps_are_rejected() {
        let mut s = Scheme::builtin("synthetic-28").unwrap();
        s.flip_map.swap(0, 1);
        assert!(matches!(s.validate(), Err(Error::Config(_))));
        let mut s = Scheme::builtin("synthetic-28").unwrap();
        // pairs a principal brow corner with an elaborate jaw point
        s.flip_map[0] = 20;
        s.flip_map[20] = 0;
        s.flip_map[3] = 3;
        s.flip_map[21] = 21;
        assert!(s.validate().unwrap_err().to_string().contains("principal"));
        assert!(Scheme::from_toml("name='x'\nn_landmarks=1\nprincipal=[0]\nflip_map=[0]\ninterocular=[0,0]\nextra=1").is_err());
    }
}
