//! ImageNet-style pixel preprocessing and the flip/rotate augmentations.

use std::path::Path;

use ndarray::{s, Array3, ArrayD, Axis, IxDyn};
use ndarray_npy::{read_npy, write_npy, ReadNpyError};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::RngSeed;
use crate::error::{Error, Result};

/// Per-channel means subtracted in caffe mode, in B, G, R order.
pub const CAFFE_BGR_MEAN: [f64; 3] = [103.939, 116.779, 123.68];
/// ImageNet channel means for torch mode (R, G, B, on the [0, 1] scale).
pub const TORCH_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
/// ImageNet channel standard deviations for torch mode (R, G, B).
pub const TORCH_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelOrder {
    Rgb,
    Bgr,
}

/// Height × width × 3 pixel array.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    values: Array3<f64>,
    order: ChannelOrder,
}

impl ImageTensor {
    pub fn new(values: Array3<f64>, order: ChannelOrder) -> Result<Self> {
        if values.dim().2 != 3 {
            return Err(Error::shape(format!("expected 3 channels, got {}", values.dim().2)));
        }
        Ok(ImageTensor { values, order })
    }

    pub fn rgb(values: Array3<f64>) -> Result<Self> {
        Self::new(values, ChannelOrder::Rgb)
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn order(&self) -> ChannelOrder {
        self.order
    }

    pub fn height(&self) -> usize {
        self.values.dim().0
    }

    pub fn width(&self) -> usize {
        self.values.dim().1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessMode {
    /// Scale to [-1, 1].
    Tf,
    /// RGB to BGR, then subtract the ImageNet BGR means.
    Caffe,
    /// Scale to [0, 1], then standardize each channel.
    Torch,
}

impl std::str::FromStr for PreprocessMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tf" => Ok(PreprocessMode::Tf),
            "caffe" => Ok(PreprocessMode::Caffe),
            "torch" => Ok(PreprocessMode::Torch),
            other => Err(Error::invalid(format!("unknown mode `{other}` (expected tf, caffe or torch)"))),
        }
    }
}

/// Preprocessing mode of each pretrained ImageNet backbone.
pub const MODEL_MODES: &[(&str, PreprocessMode)] = &[
    ("ResNet50", PreprocessMode::Caffe),
    ("ResNet101", PreprocessMode::Caffe),
    ("ResNet152", PreprocessMode::Caffe),
    ("VGG16", PreprocessMode::Caffe),
    ("VGG19", PreprocessMode::Caffe),
    ("ResNet50-V2", PreprocessMode::Tf),
    ("ResNet101-V2", PreprocessMode::Tf),
    ("ResNet152-V2", PreprocessMode::Tf),
    ("Inception-V3", PreprocessMode::Tf),
    ("Inception-ResNet-V2", PreprocessMode::Tf),
    ("Xception", PreprocessMode::Tf),
    ("DenseNet121", PreprocessMode::Torch),
    ("DenseNet169", PreprocessMode::Torch),
    ("DenseNet201", PreprocessMode::Torch),
];

/// Looks `name` up in [`MODEL_MODES`], ignoring case, `-` and `_`.
pub fn mode_for_model(name: &str) -> Option<PreprocessMode> {
    let key = |s: &str| -> String {
        s.chars().filter(|c| c.is_ascii_alphanumeric()).map(|c| c.to_ascii_lowercase()).collect()
    };
    let want = key(name);
    MODEL_MODES.iter().find(|(m, _)| key(m) == want).map(|&(_, mode)| mode)
}

/// Maps raw RGB pixels in [0, 255] through `mode`.
pub fn preprocess(img: &ImageTensor, mode: PreprocessMode) -> Result<ImageTensor> {
    if img.order != ChannelOrder::Rgb {
        return Err(Error::invalid("preprocessing expects raw RGB input"));
    }
    if let Some(v) = img.values.iter().find(|v| !(0.0..=255.0).contains(*v)) {
        return Err(Error::invalid(format!("pixel value {v} outside [0, 255]")));
    }
    let mut out = img.values.clone();
    match mode {
        PreprocessMode::Tf => {
            out.mapv_inplace(|x| x / 127.5 - 1.0);
            ImageTensor::new(out, ChannelOrder::Rgb)
        }
        PreprocessMode::Caffe => {
            out.invert_axis(Axis(2));
            for (c, mean) in CAFFE_BGR_MEAN.iter().enumerate() {
                out.slice_mut(s![.., .., c]).mapv_inplace(|x| x - mean);
            }
            ImageTensor::new(out, ChannelOrder::Bgr)
        }
        PreprocessMode::Torch => {
            for c in 0..3 {
                let (mean, std) = (TORCH_MEAN[c], TORCH_STD[c]);
                out.slice_mut(s![.., .., c]).mapv_inplace(|x| (x / 255.0 - mean) / std);
            }
            ImageTensor::new(out, ChannelOrder::Rgb)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    FlipLr,
    FlipUd,
    Rot90Cw,
    Rot90Ccw,
}

impl Augmentation {
    pub const ALL: [Augmentation; 4] =
        [Augmentation::FlipLr, Augmentation::FlipUd, Augmentation::Rot90Cw, Augmentation::Rot90Ccw];
}

pub fn augment(img: &ImageTensor, op: Augmentation) -> ImageTensor {
    let v = &img.values;
    let values = match op {
        Augmentation::FlipLr => v.slice(s![.., ..;-1, ..]).to_owned(),
        Augmentation::FlipUd => v.slice(s![..;-1, .., ..]).to_owned(),
        // out[i][j] = in[h-1-j][i]
        Augmentation::Rot90Cw => v.slice(s![..;-1, .., ..]).permuted_axes([1, 0, 2]).to_owned(),
        // out[i][j] = in[j][w-1-i]
        Augmentation::Rot90Ccw => v.slice(s![.., ..;-1, ..]).permuted_axes([1, 0, 2]).to_owned(),
    };
    ImageTensor { values: values.as_standard_layout().into_owned(), order: img.order }
}

/// Applies each augmentation in [`Augmentation::ALL`] order, each with
/// probability 0.5. Returns the image and the operations applied.
pub fn random_augment(img: &ImageTensor, seed: RngSeed) -> (ImageTensor, Vec<Augmentation>) {
    let mut rng = seed.rng();
    let mut out = img.clone();
    let mut applied = Vec::new();
    for op in Augmentation::ALL {
        if rng.random_bool(0.5) {
            out = augment(&out, op);
            applied.push(op);
        }
    }
    (out, applied)
}

fn npy_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::invalid(format!("{}: {e}", path.display()))
}

/// Reads `h × w × 3` or `n × h × w × 3` pixels (f64, f32 or u8). The flag
/// reports whether the file held a batch.
pub fn read_images_npy(path: impl AsRef<Path>) -> Result<(Vec<ImageTensor>, bool)> {
    let path = path.as_ref();
    let arr: ArrayD<f64> = match read_npy::<_, ArrayD<f64>>(path) {
        Ok(a) => a,
        Err(ReadNpyError::WrongDescriptor(_)) => match read_npy::<_, ArrayD<f32>>(path) {
            Ok(a) => a.mapv(f64::from),
            Err(ReadNpyError::WrongDescriptor(_)) => {
                read_npy::<_, ArrayD<u8>>(path).map_err(|e| npy_error(path, e))?.mapv(f64::from)
            }
            Err(e) => return Err(npy_error(path, e)),
        },
        Err(ReadNpyError::Io(e)) => return Err(Error::io(path, e)),
        Err(e) => return Err(npy_error(path, e)),
    };
    let to_image = |a: ArrayD<f64>| -> Result<ImageTensor> {
        let a = a.into_dimensionality::<ndarray::Ix3>().map_err(|e| npy_error(path, e))?;
        ImageTensor::rgb(a)
    };
    match arr.ndim() {
        3 => Ok((vec![to_image(arr)?], false)),
        4 => {
            let images = arr.outer_iter().map(|a| to_image(a.to_owned())).collect::<Result<Vec<_>>>()?;
            Ok((images, true))
        }
        d => Err(npy_error(path, format!("expected a 3-D or 4-D array, got {d}-D"))),
    }
}

/// Writes f64 pixels; a single unbatched image is written as `h × w × 3`.
pub fn write_images_npy(path: impl AsRef<Path>, images: &[ImageTensor], batched: bool) -> Result<()> {
    let path = path.as_ref();
    let arr: ArrayD<f64> = if !batched && images.len() == 1 {
        images[0].values.clone().into_dyn()
    } else {
        let first = images.first().ok_or_else(|| Error::invalid("no images to write"))?;
        let (h, w, c) = first.values.dim();
        if images.iter().any(|im| im.values.dim() != (h, w, c)) {
            return Err(Error::shape("images in a batch must share one shape"));
        }
        let mut out = ArrayD::zeros(IxDyn(&[images.len(), h, w, c]));
        for (mut dst, im) in out.outer_iter_mut().zip(images) {
            dst.assign(&im.values.view().into_dyn());
        }
        out
    };
    write_npy(path, &arr).map_err(|e| npy_error(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize) -> ImageTensor {
        ImageTensor::rgb(Array3::from_shape_fn((h, w, 3), |(i, j, c)| (i * 40 + j * 7 + c) as f64)).unwrap()
    }

    #[test]
    fn rot90_cw_example() {
        let mut v = Array3::zeros((2, 2, 3));
        for c in 0..3 {
            v[[0, 0, c]] = 1.0;
            v[[0, 1, c]] = 2.0;
            v[[1, 0, c]] = 3.0;
            v[[1, 1, c]] = 4.0;
        }
        let r = augment(&ImageTensor::rgb(v).unwrap(), Augmentation::Rot90Cw);
        let ch: Vec<f64> = r.values().slice(s![.., .., 0]).iter().copied().collect();
        assert_eq!(ch, vec![3.0, 1.0, 4.0, 2.0]);
    }

    #[test]
    fn non_square_rotation_swaps_dims() {
        let a = img(2, 5);
        let r = augment(&a, Augmentation::Rot90Ccw);
        assert_eq!((r.height(), r.width()), (5, 2));
        assert_eq!(augment(&r, Augmentation::Rot90Cw), a);
    }

    #[test]
    fn tf_and_caffe_endpoints() {
        let mut v = Array3::zeros((1, 3, 3));
        v[[0, 1, 0]] = 255.0;
        v[[0, 2, 0]] = 127.5;
        let t = preprocess(&ImageTensor::rgb(v).unwrap(), PreprocessMode::Tf).unwrap();
        assert_eq!(t.values()[[0, 0, 0]], -1.0);
        assert_eq!(t.values()[[0, 1, 0]], 1.0);
        assert_eq!(t.values()[[0, 2, 0]], 0.0);
        let px = Array3::from_shape_vec((1, 1, 3), vec![123.68, 116.779, 103.939]).unwrap();
        let c = preprocess(&ImageTensor::rgb(px).unwrap(), PreprocessMode::Caffe).unwrap();
        assert_eq!(c.values().iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 0.0]);
        assert_eq!(c.order(), ChannelOrder::Bgr);
    }

    #[test]
    fn out_of_range_rejected() {
        let v = Array3::from_elem((1, 1, 3), 256.0);
        assert!(preprocess(&ImageTensor::rgb(v).unwrap(), PreprocessMode::Tf).is_err());
    }

    #[test]
    fn mode_table_lookup() {
        assert_eq!(mode_for_model("densenet169"), Some(PreprocessMode::Torch));
        assert_eq!(mode_for_model("Xception"), Some(PreprocessMode::Tf));
        assert_eq!(mode_for_model("VGG16"), Some(PreprocessMode::Caffe));
        assert_eq!(mode_for_model("AlexNet"), None);
    }
}
