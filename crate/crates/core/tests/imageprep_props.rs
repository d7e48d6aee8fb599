use canopy_core::imageprep::{
    augment, mode_for_model, preprocess, random_augment, read_images_npy, write_images_npy, Augmentation,
    ImageTensor, PreprocessMode, MODEL_MODES, TORCH_MEAN, TORCH_STD,
};
use canopy_core::RngSeed;
use ndarray::Array3;
use proptest::prelude::*;

fn image() -> impl Strategy<Value = ImageTensor> {
    (1usize..7, 1usize..7).prop_flat_map(|(h, w)| {
        prop::collection::vec(0u8..=255, h * w * 3).prop_map(move |px| {
            let values = Array3::from_shape_vec((h, w, 3), px.into_iter().map(f64::from).collect()).unwrap();
            ImageTensor::rgb(values).unwrap()
        })
    })
}

fn sorted_channel(img: &ImageTensor, c: usize) -> Vec<f64> {
    let mut v: Vec<f64> = img.values().index_axis(ndarray::Axis(2), c).iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

proptest! {
    #[test]
    fn flips_are_involutions(img in image()) {
        for op in [Augmentation::FlipLr, Augmentation::FlipUd] {
            prop_assert_eq!(&augment(&augment(&img, op), op), &img);
        }
    }

    #[test]
    fn rotations_have_order_four_and_invert(img in image()) {
        let mut r = img.clone();
        for _ in 0..4 {
            r = augment(&r, Augmentation::Rot90Cw);
        }
        prop_assert_eq!(&r, &img);
        let back = augment(&augment(&img, Augmentation::Rot90Cw), Augmentation::Rot90Ccw);
        prop_assert_eq!(&back, &img);
        let rot = augment(&img, Augmentation::Rot90Cw);
        prop_assert_eq!((rot.height(), rot.width()), (img.width(), img.height()));
    }

    #[test]
    fn augmentation_preserves_channel_multisets(img in image(), seed in any::<u64>()) {
        let (out, _) = random_augment(&img, RngSeed(seed));
        for c in 0..3 {
            prop_assert_eq!(sorted_channel(&out, c), sorted_channel(&img, c));
        }
        prop_assert_eq!(random_augment(&img, RngSeed(seed)), random_augment(&img, RngSeed(seed)));
    }

    #[test]
    fn modes_are_affine_and_keep_shape(img in image()) {
        for mode in [PreprocessMode::Tf, PreprocessMode::Caffe, PreprocessMode::Torch] {
            let out = preprocess(&img, mode).unwrap();
            prop_assert_eq!(out.values().dim(), img.values().dim());
        }
        let caffe = preprocess(&img, PreprocessMode::Caffe).unwrap();
        let raw = img.values();
        for ((i, j, c), v) in caffe.values().indexed_iter() {
            let mean = [103.939, 116.779, 123.68][c];
            prop_assert_eq!(*v, raw[[i, j, 2 - c]] - mean);
        }
    }
}

#[test]
fn golden_pixels() {
    let px = |v: [f64; 3]| ImageTensor::rgb(Array3::from_shape_vec((1, 1, 3), v.to_vec()).unwrap()).unwrap();
    let tf = |v: f64| preprocess(&px([v, v, v]), PreprocessMode::Tf).unwrap().values()[[0, 0, 0]];
    assert_eq!(tf(0.0), -1.0);
    assert_eq!(tf(255.0), 1.0);
    assert_eq!(tf(127.5), 0.0);
    let caffe = preprocess(&px([123.68, 116.779, 103.939]), PreprocessMode::Caffe).unwrap();
    assert_eq!(caffe.values().iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 0.0]);
    let torch = preprocess(&px([255.0, 255.0, 255.0]), PreprocessMode::Torch).unwrap();
    for c in 0..3 {
        assert_eq!(torch.values()[[0, 0, c]], (1.0 - TORCH_MEAN[c]) / TORCH_STD[c]);
    }
    assert!(preprocess(&px([256.0, 0.0, 0.0]), PreprocessMode::Tf).is_err());
    assert!(preprocess(&px([-0.5, 0.0, 0.0]), PreprocessMode::Caffe).is_err());
}

#[test]
fn rotate_two_by_two() {
    let v = Array3::from_shape_fn((2, 2, 3), |(i, j, _)| (2 * i + j + 1) as f64);
    let out = augment(&ImageTensor::rgb(v).unwrap(), Augmentation::Rot90Cw);
    let plane: Vec<f64> = out.values().index_axis(ndarray::Axis(2), 1).iter().copied().collect();
    assert_eq!(plane, vec![3.0, 1.0, 4.0, 2.0]);
}

#[test]
fn backbone_table() {
    assert_eq!(MODEL_MODES.len(), 14);
    assert_eq!(mode_for_model("ResNet50"), Some(PreprocessMode::Caffe));
    assert_eq!(mode_for_model("ResNet50-V2"), Some(PreprocessMode::Tf));
    assert_eq!(mode_for_model("inception_resnet_v2"), Some(PreprocessMode::Tf));
    assert_eq!(mode_for_model("DenseNet201"), Some(PreprocessMode::Torch));
}

#[test]
fn npy_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let a = ImageTensor::rgb(Array3::from_shape_fn((3, 4, 3), |(i, j, c)| (i * 40 + j * 7 + c) as f64)).unwrap();
    let b = augment(&augment(&a, Augmentation::FlipUd), Augmentation::FlipLr);
    let single = dir.path().join("one.npy");
    write_images_npy(&single, std::slice::from_ref(&a), false).unwrap();
    assert_eq!(read_images_npy(&single).unwrap(), (vec![a.clone()], false));
    let batch = dir.path().join("two.npy");
    write_images_npy(&batch, &[a.clone(), b.clone()], true).unwrap();
    assert_eq!(read_images_npy(&batch).unwrap(), (vec![a, b], true));

    let bytes = dir.path().join("u8.npy");
    let raw = ndarray::Array3::<u8>::from_shape_fn((2, 2, 3), |(i, j, c)| (i + j + c) as u8 * 50);
    ndarray_npy::write_npy(&bytes, &raw).unwrap();
    let (imgs, batched) = read_images_npy(&bytes).unwrap();
    assert!(!batched);
    assert_eq!(imgs[0].values()[[1, 1, 2]], 200.0);
}
