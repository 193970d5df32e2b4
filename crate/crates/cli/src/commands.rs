//! The smaller subcommands: gradient checks, operator dumps, face lists and
//! data download.

use std::fs;
use std::io::Read;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sccnn::data::{idx_expected_len, parse_idx};
use sccnn::nn::gradcheck::{check_model, GradCheckOptions, TensorReport};
use sccnn::nn::{Batch, Mode, Model, Variant};
use sccnn::{grid_complex, image_features, Matrix, OperatorSet, SimplicialComplex2};

use crate::config::ExperimentConfig;

/// Finite-difference reports for one variant.
pub struct VariantCheck {
    pub variant: Variant,
    pub tensors: Vec<TensorReport>,
}

impl VariantCheck {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed)
    }
}

/// Runs the gradient check for each variant on a 3×3 grid complex with a
/// batch of four random images, at the configured layer widths.
pub fn gradcheck(
    config: &ExperimentConfig,
    variants: &[Variant],
    seed: u64,
    opts: &GradCheckOptions,
) -> Result<Vec<VariantCheck>> {
    let side = config.kernel + 2 * config.stride;
    let (complex, geom) = grid_complex(side, side, config.kernel, config.stride)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feats = (0..4)
        .map(|_| {
            let img = Matrix::from_fn(side, side, |_, _| rng.gen_range(0.0..1.0));
            Ok(image_features(&img, &geom, &complex)?.x0().clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Matrix> = feats.iter().collect();
    let batch = Batch::new(&refs, (0..4).map(|_| rng.gen_range(0..10)).collect())?;

    variants
        .iter()
        .map(|&variant| {
            let mut init = ChaCha8Rng::seed_from_u64(seed);
            let (model, params) = Model::new(variant, config.model_config(), &complex, &mut init)?;
            let tensors = check_model(&model, &params, &batch, opts)?;
            Ok(VariantCheck { variant, tensors })
        })
        .collect()
}

pub fn default_gradcheck_options() -> GradCheckOptions {
    GradCheckOptions {
        mode: Mode::Eval,
        ..GradCheckOptions::default()
    }
}

/// Coordinate-format dumps of the requested operators.
pub fn inspect_operators(complex: &SimplicialComplex2, names: &[String]) -> Result<String> {
    let ops = OperatorSet::new(complex)?;
    let names: Vec<&str> = if names.is_empty() {
        OperatorSet::NAMES.to_vec()
    } else {
        names.iter().map(String::as_str).collect()
    };
    let mut out = format!("# counts {} {} {}\n", ops.counts[0], ops.counts[1], ops.counts[2]);
    for name in names {
        let m = ops
            .named(name)
            .with_context(|| format!("unknown operator {name:?}; known: {}", OperatorSet::NAMES.join(", ")))?;
        out.push_str(&format!("## {name}\n"));
        out.push_str(&m.to_coordinate_text());
    }
    Ok(out)
}

/// Reads a face list and returns its canonical closure as a face list.
pub fn build_complex_text(text: &str) -> Result<String> {
    Ok(SimplicialComplex2::from_face_list(text)?.to_face_list())
}

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Decompresses gzip payloads and checks that the IDX header accounts for
/// every byte.
pub fn decode_download(bytes: Vec<u8>) -> Result<Vec<u8>> {
    let raw = if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&bytes[..])
            .read_to_end(&mut out)
            .context("decompressing gzip payload")?;
        out
    } else {
        bytes
    };
    let expected = idx_expected_len(&raw)?;
    if raw.len() != expected {
        bail!("IDX payload has {} bytes, header implies {expected}", raw.len());
    }
    parse_idx(&raw)?;
    Ok(raw)
}

fn file_is_valid(path: &Path) -> bool {
    fs::read(path)
        .ok()
        .and_then(|b| idx_expected_len(&b).ok().map(|n| n == b.len()))
        .unwrap_or(false)
}

/// Downloads the four MNIST IDX files from the configured mirror.
///
/// Each file is tried as `<mirror><name>.gz` and then `<mirror><name>`.
/// Files already present with a consistent length are kept unless `force`.
pub fn fetch_data(config: &ExperimentConfig, force: bool) -> Result<Vec<String>> {
    let targets = [
        &config.train_images,
        &config.train_labels,
        &config.test_images,
        &config.test_labels,
    ];
    let mut log = Vec::new();
    for (name, target) in MNIST_FILES.iter().zip(targets) {
        if !force && file_is_valid(target) {
            log.push(format!("{} present", target.display()));
            continue;
        }
        let base = if config.mirror_url.ends_with('/') {
            config.mirror_url.clone()
        } else {
            format!("{}/", config.mirror_url)
        };
        let mut last_err = None;
        let mut payload = None;
        for url in [format!("{base}{name}.gz"), format!("{base}{name}")] {
            match download(&url).and_then(decode_download) {
                Ok(bytes) => {
                    payload = Some(bytes);
                    break;
                }
                Err(e) => last_err = Some(e.context(url)),
            }
        }
        let bytes = match payload {
            Some(b) => b,
            None => return Err(last_err.expect("at least one attempt")),
        };
        if let Some(dir) = target.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(target, &bytes).with_context(|| format!("writing {}", target.display()))?;
        log.push(format!("{} written ({} bytes)", target.display(), bytes.len()));
    }
    Ok(log)
}

fn download(url: &str) -> Result<Vec<u8>> {
    let mut response = ureq::get(url).call()?;
    let bytes = response
        .body_mut()
        .with_config()
        .limit(256 * 1024 * 1024)
        .read_to_vec()?;
    Ok(bytes)
}
