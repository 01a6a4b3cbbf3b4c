//! Out-of-process segmentation backends.
//!
//! A backend is any executable that reads one PNG image on stdin and writes
//! a single-channel PNG of class ids, of the same size, on stdout. The
//! registry file maps backend names to commands:
//!
//! ```toml
//! [backends.fcn]
//! command = ["python3", "plugins/fcn_predict.py"]
//! config = "FCN"        # canonical config name, optional
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use image::{ImageFormat, RgbImage};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{canonical_config, ModelConfig, PredictionOutput, Predictor, PredictorHandle, PredictorKind};
use crate::dataset::{resize_image, resize_mask_nearest, LabelMask};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    pub command: Vec<String>,
    #[serde(default)]
    pub config: Option<String>,
    #[serde(default)]
    pub input_side: Option<u32>,
}

#[derive(Clone, Debug, Default, Deserialize)]
pub struct BackendRegistry {
    #[serde(default)]
    backends: BTreeMap<String, BackendSpec>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl BackendRegistry {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut reg: BackendRegistry = toml::from_str(text).map_err(|e| Error::Parse {
            entry: "backend registry".into(),
            message: e.to_string(),
        })?;
        reg.base_dir = base_dir.to_path_buf();
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.backends.keys().map(String::as_str)
    }

    /// Resolves a backend; fails now if its executable cannot be found.
    pub fn resolve(&self, name: &str) -> Result<PredictorHandle> {
        let spec = self.backends.get(name).ok_or_else(|| Error::Load {
            name: name.into(),
            message: "no such backend in the registry".into(),
        })?;
        let plugin = PluginPredictor::load(name, spec, &self.base_dir)?;
        let config = plugin.config.clone();
        Ok(PredictorHandle::new(name, PredictorKind::Plugin, config, plugin))
    }
}

#[derive(Clone, Debug)]
pub struct PluginPredictor {
    name: String,
    program: PathBuf,
    args: Vec<String>,
    side: u32,
    config: Option<ModelConfig>,
}

impl PluginPredictor {
    pub fn load(name: &str, spec: &BackendSpec, base_dir: &Path) -> Result<Self> {
        let load_err = |m: String| Error::Load {
            name: name.into(),
            message: m,
        };
        let (program, args) = spec
            .command
            .split_first()
            .ok_or_else(|| load_err("empty command".into()))?;
        let program = find_program(program, base_dir)
            .ok_or_else(|| load_err(format!("executable {program:?} not found")))?;
        let config = match &spec.config {
            None => None,
            Some(c) => Some(canonical_config(c).ok_or_else(|| load_err(format!("unknown config {c:?}")))?),
        };
        let side = spec
            .input_side
            .or(config.as_ref().map(|c| c.input_side))
            .unwrap_or(224);
        Ok(Self {
            name: name.into(),
            program,
            args: args.to_vec(),
            side,
            config,
        })
    }

    fn run(&self, png: Vec<u8>) -> Result<Vec<u8>> {
        let fail = |m: String| Error::Load {
            name: self.name.clone(),
            message: m,
        };
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| fail(format!("spawn failed: {e}")))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        // feed stdin from another thread so a chatty backend cannot deadlock us
        let writer = std::thread::spawn(move || stdin.write_all(&png));
        let mut stdout = Vec::new();
        child
            .stdout
            .take()
            .expect("piped stdout")
            .read_to_end(&mut stdout)
            .map_err(|e| fail(e.to_string()))?;
        let mut stderr = String::new();
        if let Some(mut s) = child.stderr.take() {
            let _ = s.read_to_string(&mut stderr);
        }
        let status = child.wait().map_err(|e| fail(e.to_string()))?;
        let _ = writer.join();
        if !status.success() {
            return Err(fail(format!("backend exited with {status}: {}", stderr.trim())));
        }
        Ok(stdout)
    }
}

fn find_program(program: &str, base_dir: &Path) -> Option<PathBuf> {
    let p = Path::new(program);
    if p.components().count() > 1 || p.is_absolute() {
        let full = if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
        return full.is_file().then_some(full);
    }
    std::env::var_os("PATH").and_then(|paths| {
        std::env::split_paths(&paths)
            .map(|d| d.join(program))
            .find(|c| c.is_file())
    })
}

impl Predictor for PluginPredictor {
    fn predict(&self, image: &RgbImage) -> Result<PredictionOutput> {
        let (w, h) = image.dimensions();
        let resized = resize_image(image, self.side, self.side);
        let mut png = std::io::Cursor::new(Vec::new());
        resized.write_to(&mut png, ImageFormat::Png)?;
        let out = self.run(png.into_inner())?;
        let mask = LabelMask::from_png_bytes(&out)?;
        if mask.dimensions() != (self.side, self.side) {
            return Err(Error::Decode(format!(
                "backend {} returned a {:?} mask, expected {}x{}",
                self.name,
                mask.dimensions(),
                self.side,
                self.side
            )));
        }
        Ok(PredictionOutput::from_mask(resize_mask_nearest(&mask, w, h)))
    }

    fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.program.to_string_lossy().as_bytes());
        for a in &self.args {
            hasher.update(b"\0");
            hasher.update(a.as_bytes());
        }
        hex::encode(hasher.finalize())
    }
}
