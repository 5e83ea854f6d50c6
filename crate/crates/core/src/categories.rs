//! The COCO-80 label table, using contiguous ids `1..=80`.

/// `(name, approximate instance count in the COCO 2017 training split)`, indexed by `id − 1`.
pub const COCO_CATEGORIES: [(&str, u32); 80] = [
    ("person", 262_465),
    ("bicycle", 7_113),
    ("car", 43_867),
    ("motorcycle", 8_725),
    ("airplane", 5_135),
    ("bus", 6_069),
    ("train", 4_571),
    ("truck", 9_973),
    ("boat", 10_759),
    ("traffic light", 12_884),
    ("fire hydrant", 1_865),
    ("stop sign", 1_983),
    ("parking meter", 1_285),
    ("bench", 9_838),
    ("bird", 10_806),
    ("cat", 4_768),
    ("dog", 5_508),
    ("horse", 6_587),
    ("sheep", 9_509),
    ("cow", 8_147),
    ("elephant", 5_513),
    ("bear", 1_294),
    ("zebra", 5_303),
    ("giraffe", 5_131),
    ("backpack", 8_720),
    ("umbrella", 11_431),
    ("handbag", 12_354),
    ("tie", 6_496),
    ("suitcase", 6_192),
    ("frisbee", 2_682),
    ("skis", 6_646),
    ("snowboard", 2_685),
    ("sports ball", 6_347),
    ("kite", 9_076),
    ("baseball bat", 3_276),
    ("baseball glove", 3_747),
    ("skateboard", 5_543),
    ("surfboard", 6_126),
    ("tennis racket", 4_812),
    ("bottle", 24_342),
    ("wine glass", 7_913),
    ("cup", 20_650),
    ("fork", 5_479),
    ("knife", 7_770),
    ("spoon", 6_165),
    ("bowl", 14_358),
    ("banana", 9_458),
    ("apple", 5_851),
    ("sandwich", 4_373),
    ("orange", 6_399),
    ("broccoli", 7_308),
    ("carrot", 7_852),
    ("hot dog", 2_918),
    ("pizza", 5_821),
    ("donut", 7_179),
    ("cake", 6_353),
    ("chair", 38_491),
    ("couch", 5_779),
    ("potted plant", 8_652),
    ("bed", 4_192),
    ("dining table", 15_714),
    ("toilet", 4_157),
    ("tv", 5_805),
    ("laptop", 4_970),
    ("mouse", 2_262),
    ("remote", 5_703),
    ("keyboard", 2_855),
    ("cell phone", 6_434),
    ("microwave", 1_673),
    ("oven", 3_334),
    ("toaster", 225),
    ("sink", 5_610),
    ("refrigerator", 2_637),
    ("book", 24_715),
    ("clock", 6_334),
    ("vase", 6_613),
    ("scissors", 1_481),
    ("teddy bear", 4_793),
    ("hair drier", 198),
    ("toothbrush", 1_954),
];

pub const NUM_CATEGORIES: u32 = 80;

pub fn is_coco_category(id: u32) -> bool {
    (1..=NUM_CATEGORIES).contains(&id)
}

pub fn category_name(id: u32) -> Option<&'static str> {
    is_coco_category(id).then(|| COCO_CATEGORIES[id as usize - 1].0)
}

/// Looks a label up by name (case-insensitive, `_` and `-` read as spaces) or by numeric id.
pub fn category_id(label: &str) -> Option<u32> {
    let label = label.trim();
    if let Ok(id) = label.parse::<u32>() {
        return is_coco_category(id).then_some(id);
    }
    let norm = label.to_ascii_lowercase().replace(['_', '-'], " ");
    COCO_CATEGORIES.iter().position(|(n, _)| *n == norm).map(|i| i as u32 + 1)
}

/// Relative instance frequencies, summing to 1.
pub fn category_frequencies() -> [f64; 80] {
    let total: f64 = COCO_CATEGORIES.iter().map(|&(_, n)| n as f64).sum();
    let mut out = [0.0; 80];
    for (o, &(_, n)) in out.iter_mut().zip(COCO_CATEGORIES.iter()) {
        *o = n as f64 / total;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookups() {
        assert_eq!(category_id("person"), Some(1));
        assert_eq!(category_id("Teddy_Bear"), Some(78));
        assert_eq!(category_id("80"), Some(80));
        assert_eq!(category_id("81"), None);
        assert_eq!(category_id("other"), None);
        assert_eq!(category_name(3), Some("car"));
        assert_eq!(category_name(0), None);
    }

    #[test]
    fn frequencies_normalized() {
        let f = category_frequencies();
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(f.iter().all(|&p| p > 0.0));
    }
}
