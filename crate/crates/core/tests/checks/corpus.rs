use refdic_core::corpus::{SceneGraph, SceneObject};
use refdic_core::groups::overlap_score;

pub fn motorcycle_scene_graphs_overlap_four_and_one() {
    let g1 = SceneGraph::new(vec![
        SceneObject::new("helmet", Vec::<&str>::new()),
        SceneObject::new("people", Vec::<&str>::new()),
        SceneObject::new("motorcycle", ["black"]),
        SceneObject::new("road", ["dusty"]),
    ]);
    let g2 = SceneGraph::new(vec![
        SceneObject::new("helmet", ["black"]),
        SceneObject::new("people", ["two"]),
        SceneObject::new("motorcycle", ["black"]),
        SceneObject::new("road", Vec::<&str>::new()),
    ]);
    let s = overlap_score(&g1, &g2);
    assert_eq!((s.object_overlap, s.attribute_overlap, s.total), (4, 1, 5));
    assert_eq!(overlap_score(&g2, &g1), s);
}
