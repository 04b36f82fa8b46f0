//! Key=value configuration files: one assignment per line, `#` comment
//! lines, no sections. Every key must be consumed by the pipeline that
//! loads the file; anything left over is an error naming the key.

use std::collections::BTreeMap;
use std::path::PathBuf;

use vrh::point_process::EnergyLaw;

/// Raw parsed file: key -> (value, line number).
#[derive(Debug)]
pub struct KvFile {
    entries: BTreeMap<String, (String, usize)>,
    /// Keys the pipeline asked about, consumed or not; used to list the
    /// vocabulary in unknown-key errors.
    known: Vec<&'static str>,
    consumed: Vec<String>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<KvFile, String> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(format!("line {}: expected key = value, got {line:?}", i + 1));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(format!("line {}: empty key", i + 1));
            }
            if let Some(&(_, first)) = entries.get(&key) {
                return Err(format!(
                    "duplicate key `{key}` (lines {} and {})",
                    first,
                    i + 1
                ));
            }
            entries.insert(key, (value, i + 1));
        }
        Ok(KvFile { entries, known: Vec::new(), consumed: Vec::new() })
    }

    fn take(&mut self, key: &'static str) -> Option<String> {
        self.known.push(key);
        let v = self.entries.remove(key).map(|(v, _)| v);
        if v.is_some() {
            self.consumed.push(key.to_string());
        }
        v
    }

    pub fn opt_str(&mut self, key: &'static str) -> Option<String> {
        self.take(key)
    }

    pub fn opt_f64(&mut self, key: &'static str) -> Result<Option<f64>, String> {
        self.take(key)
            .map(|v| v.parse::<f64>().map_err(|_| bad(key, "a number", &v)))
            .transpose()
    }

    pub fn req_f64(&mut self, key: &'static str) -> Result<f64, String> {
        self.opt_f64(key)?.ok_or_else(|| missing(key))
    }

    pub fn opt_u64(&mut self, key: &'static str) -> Result<Option<u64>, String> {
        self.take(key)
            .map(|v| v.parse::<u64>().map_err(|_| bad(key, "a nonnegative integer", &v)))
            .transpose()
    }

    pub fn opt_usize(&mut self, key: &'static str) -> Result<Option<usize>, String> {
        Ok(self.opt_u64(key)?.map(|v| v as usize))
    }

    pub fn opt_bool(&mut self, key: &'static str) -> Result<Option<bool>, String> {
        self.take(key)
            .map(|v| match v.as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(bad(key, "true or false", &v)),
            })
            .transpose()
    }

    pub fn opt_f64_list(&mut self, key: &'static str) -> Result<Option<Vec<f64>>, String> {
        self.take(key)
            .map(|v| {
                v.split(',')
                    .map(|t| t.trim().parse::<f64>().map_err(|_| bad(key, "comma-separated numbers", &v)))
                    .collect()
            })
            .transpose()
    }

    pub fn req_f64_list(&mut self, key: &'static str) -> Result<Vec<f64>, String> {
        self.opt_f64_list(key)?.ok_or_else(|| missing(key))
    }

    pub fn opt_usize_list(&mut self, key: &'static str) -> Result<Option<Vec<usize>>, String> {
        self.take(key)
            .map(|v| {
                v.split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<usize>()
                            .map_err(|_| bad(key, "comma-separated integers", &v))
                    })
                    .collect()
            })
            .transpose()
    }

    /// Rejects any key the pipeline never asked about.
    pub fn finish(mut self) -> Result<(), String> {
        if let Some((key, (_, line))) = self.entries.pop_first() {
            self.known.sort_unstable();
            self.known.dedup();
            return Err(format!(
                "unknown key `{key}` (line {line}); keys understood by this command: {}",
                self.known.join(", ")
            ));
        }
        Ok(())
    }
}

fn bad(key: &str, want: &str, got: &str) -> String {
    format!("key `{key}`: expected {want}, got {got:?}")
}

fn missing(key: &str) -> String {
    format!("missing required key `{key}`")
}

/// Parameters shared by every pipeline.
#[derive(Debug)]
pub struct Common {
    pub d: usize,
    pub rho: f64,
    pub law: EnergyLaw,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Common {
    pub fn extract(kv: &mut KvFile) -> Result<Common, String> {
        let d = kv.opt_usize("d")?.unwrap_or(2);
        if d < 2 {
            return Err(format!("d = {d} is not supported: the hopping model needs d >= 2"));
        }
        let rho = kv.opt_f64("rho")?.unwrap_or(1.0);
        if !(rho > 0.0) {
            return Err(format!("key `rho`: intensity must be positive, got {rho}"));
        }
        let alpha = kv.opt_f64("alpha")?;
        let law = match kv.opt_str("marks").as_deref() {
            None | Some("power") => EnergyLaw::Power { alpha: alpha.unwrap_or(0.0) },
            Some("pointmass") => {
                if alpha.is_some() {
                    return Err("key `alpha` has no meaning with marks = pointmass".into());
                }
                EnergyLaw::PointMass
            }
            Some(other) => return Err(bad("marks", "power or pointmass", other)),
        };
        law.validate().map_err(|e| e.to_string())?;
        let seed = kv.opt_u64("seed")?.unwrap_or(1);
        let out_dir = PathBuf::from(kv.opt_str("out_dir").unwrap_or_else(|| ".".into()));
        Ok(Common { d, rho, law, seed, out_dir })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_assignments_with_comments_and_blanks() {
        let mut kv = KvFile::parse("# c\n\n a = 1.5 \nb=2,3\n").unwrap();
        assert_eq!(kv.opt_f64("a").unwrap(), Some(1.5));
        assert_eq!(kv.opt_usize_list("b").unwrap(), Some(vec![2, 3]));
        kv.finish().unwrap();
    }

    #[test]
    fn duplicate_key_is_an_error_naming_both_lines() {
        let err = KvFile::parse("a = 1\na = 2\n").unwrap_err();
        assert!(err.contains("duplicate key `a`"), "{err}");
        assert!(err.contains("lines 1 and 2"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected_with_the_vocabulary() {
        let mut kv = KvFile::parse("rho = 1\nbogus = 3\n").unwrap();
        let _ = kv.opt_f64("rho");
        let err = kv.finish().unwrap_err();
        assert!(err.contains("unknown key `bogus`"), "{err}");
        assert!(err.contains("rho"), "{err}");
    }

    #[test]
    fn missing_required_key_is_named() {
        let mut kv = KvFile::parse("").unwrap();
        let err = kv.req_f64_list("beta_grid").unwrap_err();
        assert!(err.contains("`beta_grid`"), "{err}");
    }

    #[test]
    fn one_dimensional_models_are_rejected() {
        let mut kv = KvFile::parse("d = 1\n").unwrap();
        let err = Common::extract(&mut kv).unwrap_err();
        assert!(err.contains("d >= 2"), "{err}");
    }

    #[test]
    fn malformed_numbers_name_the_key() {
        let mut kv = KvFile::parse("rho = abc\n").unwrap();
        let err = Common::extract(&mut kv).unwrap_err();
        assert!(err.contains("`rho`"), "{err}");
    }
}
