use ipsym::mesh::{box_tet_mesh, grid_tri_mesh, parse_tet_mesh, parse_tri_mesh};
use ipsym::obj::{write_obj, ObjGroup};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn tet_text_round_trips(
        min in prop::array::uniform3(-10.0..10.0f64),
        size in prop::array::uniform3(0.01..5.0f64),
        cells in prop::array::uniform3(1usize..4),
    ) {
        let max = [min[0] + size[0], min[1] + size[1], min[2] + size[2]];
        let mesh = box_tet_mesh(min, max, cells);
        let back = parse_tet_mesh(&mesh.to_text(), false).unwrap();
        prop_assert_eq!(back, mesh.clone());
        prop_assert!((mesh.volume() - size.iter().product::<f64>()).abs() < 1e-9 * mesh.volume().max(1.0));
    }

    #[test]
    fn tri_text_round_trips(origin in prop::array::uniform3(-1.0..1.0f64), cells in prop::array::uniform2(1usize..6)) {
        let mesh = grid_tri_mesh(origin, [0.3, 0.0, 0.1], [0.0, 0.7, 0.0], cells);
        prop_assert_eq!(parse_tri_mesh(&mesh.to_text()).unwrap(), mesh);
    }

    #[test]
    fn obj_coordinates_round_trip(x in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 9)) {
        let text = write_obj(&[ObjGroup { name: "s", positions: &x, faces: &[[0, 1, 2]], points: false }]);
        let parsed: Vec<f64> = text
            .lines()
            .filter(|l| l.starts_with("v "))
            .flat_map(|l| l[2..].split_whitespace().map(|t| t.parse::<f64>().unwrap()).collect::<Vec<_>>())
            .collect();
        prop_assert_eq!(parsed.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), x.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
