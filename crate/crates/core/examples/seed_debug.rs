use tangle_core::map::HenonMap;

fn main() {
    let map = HenonMap::default();
    tangle_core::seed::debug_dump_csv(&map, 0.35, "/tmp");
}
