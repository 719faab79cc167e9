pub mod attack;
pub mod fit1d;
pub mod landscape;
pub mod theory;
pub mod train;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kwta_core::attacks::{AttackConfig, AttackFamily};
use kwta_core::data::{default_mnist_dir, load_mnist, mnist_paths, Dataset, Split};
use kwta_core::Real;

use crate::args::{AttackFlags, DataArgs};
use crate::run::usage;

/// Runs `$body` with `$T` bound to the Rust type of a [`kwta_core::DType`].
macro_rules! with_dtype {
    ($dtype:expr, $T:ident => $body:expr) => {
        match $dtype {
            kwta_core::DType::F32 => {
                type $T = f32;
                $body
            }
            kwta_core::DType::F64 => {
                type $T = f64;
                $body
            }
        }
    };
}
pub(crate) use with_dtype;

pub fn data_dir(args: &DataArgs) -> PathBuf {
    args.data_dir.clone().unwrap_or_else(default_mnist_dir)
}

pub fn load_split<T: Real>(dir: &Path, split: Split) -> Result<Dataset<T>> {
    if mnist_paths(dir, split).is_err() {
        bail!(
            "MNIST files not found in {} (pass --data-dir or set {})",
            dir.display(),
            kwta_core::data::DATA_DIR_ENV
        );
    }
    load_mnist(dir, split).with_context(|| format!("loading MNIST from {}", dir.display()))
}

/// The first `n` test examples.
pub fn test_head<T: Real>(args: &DataArgs, n: usize) -> Result<Dataset<T>> {
    let test = load_split::<T>(&data_dir(args), Split::Test)?;
    if n > test.len() {
        return Err(usage(format!(
            "--test-size {n} exceeds the {} test examples",
            test.len()
        )));
    }
    Ok(test.head(n))
}

impl AttackFlags {
    pub fn to_config(&self, seed: u64) -> Result<AttackConfig> {
        let family: AttackFamily = self
            .attack
            .parse()
            .map_err(|e: kwta_core::Error| usage(e.to_string()))?;
        let mut cfg = match family {
            AttackFamily::None => AttackConfig::none(),
            AttackFamily::Fgsm => AttackConfig::fgsm(self.eps),
            AttackFamily::Pgd => AttackConfig::pgd(self.eps, self.steps),
            AttackFamily::MiFgsm => {
                let Some(step) = self.step_size else {
                    return Err(usage("mifgsm has no default step size; pass --step-size"));
                };
                AttackConfig::mifgsm(self.eps, self.steps, step, self.decay)
            }
            AttackFamily::GaussianNoise => AttackConfig::gaussian_noise(self.eps, self.noise_samples),
        };
        if let Some(step) = self.step_size {
            match family {
                AttackFamily::Pgd => cfg.step_size = step,
                AttackFamily::MiFgsm => {}
                _ => return Err(usage(format!("--step-size does not apply to {family}"))),
            }
        }
        if self.no_random_init {
            cfg.random_init = false;
        }
        let cfg = cfg.with_seed(seed);
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}
