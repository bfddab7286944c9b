use std::path::Path;

use cellprep_core::data::io::{load_image, IMAGES_DIR, MASKS_DIR};
use cellprep_core::data::{
    load_dataset, load_pairs, synth_dataset, write_dataset, ClassColormap, SynthSpec,
};
use cellprep_core::Error;
use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

fn layout(dir: &Path) {
    std::fs::create_dir_all(dir.join(IMAGES_DIR)).unwrap();
    std::fs::create_dir_all(dir.join(MASKS_DIR)).unwrap();
}

#[test]
fn gray_endpoints_normalize_to_unit_interval() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("g.png");
    GrayImage::from_fn(2, 1, |x, _| Luma([if x == 0 { 0 } else { 255 }]))
        .save(&p)
        .unwrap();
    assert_eq!(load_image(&p).unwrap().data(), &[0.0, 1.0]);
    let p16 = dir.path().join("g16.png");
    ImageBuffer::<Luma<u16>, Vec<u16>>::from_fn(2, 1, |x, _| {
        Luma([if x == 0 { 0 } else { 65535 }])
    })
    .save(&p16)
    .unwrap();
    assert_eq!(load_image(&p16).unwrap().data(), &[0.0, 1.0]);
}

#[test]
fn written_dataset_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let samples = synth_dataset(
        &SynthSpec {
            seed: 3,
            ..SynthSpec::default()
        },
        3,
    )
    .unwrap();
    let cmap = ClassColormap::default();
    write_dataset(dir.path(), &samples, &cmap).unwrap();
    let (loaded, cm2) = load_dataset(dir.path()).unwrap();
    assert_eq!(cm2, cmap);
    assert_eq!(loaded.len(), 3);
    for (a, b) in samples.iter().zip(&loaded) {
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.name, b.name);
        for (x, y) in a.image.data().iter().zip(b.image.data()) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}

#[test]
fn rewriting_is_byte_identical() {
    let samples = synth_dataset(&SynthSpec::default(), 2).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_dataset(a.path(), &samples, &ClassColormap::default()).unwrap();
    write_dataset(b.path(), &samples, &ClassColormap::default()).unwrap();
    for sub in [IMAGES_DIR, MASKS_DIR] {
        let f = Path::new(sub).join("0001.png");
        assert_eq!(
            std::fs::read(a.path().join(&f)).unwrap(),
            std::fs::read(b.path().join(&f)).unwrap()
        );
    }
}

#[test]
fn unknown_mask_color_names_file_and_pixel() {
    let dir = tempfile::tempdir().unwrap();
    layout(dir.path());
    GrayImage::new(4, 4)
        .save(dir.path().join(IMAGES_DIR).join("a.png"))
        .unwrap();
    let mut m = RgbImage::new(4, 4);
    m.put_pixel(1, 3, Rgb([0, 0, 255]));
    m.save(dir.path().join(MASKS_DIR).join("a.png")).unwrap();
    match load_pairs(dir.path(), &ClassColormap::default()) {
        Err(Error::UnknownMaskColor {
            file,
            x: 1,
            y: 3,
            color: [0, 0, 255],
        }) => assert!(file.ends_with("a.png")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn size_mismatch_and_missing_mask_rejected() {
    let dir = tempfile::tempdir().unwrap();
    layout(dir.path());
    GrayImage::new(4, 4)
        .save(dir.path().join(IMAGES_DIR).join("a.png"))
        .unwrap();
    RgbImage::new(4, 2)
        .save(dir.path().join(MASKS_DIR).join("a.png"))
        .unwrap();
    assert!(matches!(
        load_pairs(dir.path(), &ClassColormap::default()),
        Err(Error::Dataset(_))
    ));
    GrayImage::new(4, 4)
        .save(dir.path().join(IMAGES_DIR).join("b.png"))
        .unwrap();
    std::fs::remove_file(dir.path().join(MASKS_DIR).join("a.png")).unwrap();
    assert!(load_pairs(dir.path(), &ClassColormap::default()).is_err());
}

#[test]
fn mask_colors_follow_figure_legend() {
    let dir = tempfile::tempdir().unwrap();
    layout(dir.path());
    GrayImage::new(3, 1)
        .save(dir.path().join(IMAGES_DIR).join("a.png"))
        .unwrap();
    let colors = [[0, 255, 0], [255, 0, 0], [0, 0, 0]];
    RgbImage::from_fn(3, 1, |x, _| Rgb(colors[x as usize]))
        .save(dir.path().join(MASKS_DIR).join("a.png"))
        .unwrap();
    let s = load_pairs(dir.path(), &ClassColormap::default()).unwrap();
    assert_eq!(s[0].labels.labels(), &[2, 1, 0]);
}
