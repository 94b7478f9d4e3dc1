use otvm_demo::{memory_schedule, Scene};

#[test]
fn schedule_matches_policy() {
    let rows: serde_json::Value = serde_json::from_str(&memory_schedule(45).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 46);
    let at = |t: usize| &rows[t];
    assert_eq!(at(35)["intermediates"], serde_json::json!([10, 20, 30]));
    assert_eq!(at(45)["intermediates"], serde_json::json!([20, 30, 40]));
    assert_eq!(at(45)["previous"], 45);
    assert!(rows.iter().all(|r| r["size"].as_u64().unwrap() <= 5));
}

#[test]
fn scene_buffers_are_rgba() {
    let s = Scene::new(32, 4);
    let n = 32 * 32 * 4;
    assert_eq!(s.composite_rgba().unwrap().len(), n);
    assert_eq!(s.trimap_rgba(11).unwrap().len(), n);
    let clip = s.clip(3, 9, false).unwrap();
    assert_eq!(clip.len(), 3);
    let m = clip.size();
    assert_eq!(clip.frame_rgba(2).len(), m * m * 4);
    assert!(clip.meta_json().contains("trimap_kernels"));
}
