use semvox::hilbert::{hilbert_decode, hilbert_encode, HilbertOrder};

fn reference() -> serde_json::Value {
    serde_json::from_str(include_str!("data/hilbert_reference.json")).unwrap()
}

// Fixture produced by an independent Skilling transcoder.
#[test]
fn decode_matches_reference_transcoder() {
    let r = reference();
    for (edge, bits) in [(4usize, 2u32), (8, 3)] {
        let pts = r[edge.to_string()].as_array().unwrap();
        assert_eq!(pts.len(), edge.pow(3));
        for (h, p) in pts.iter().enumerate() {
            let want: Vec<u32> = p
                .as_array()
                .unwrap()
                .iter()
                .map(|v| v.as_u64().unwrap() as u32)
                .collect();
            let got = hilbert_decode(h as u64, bits);
            assert_eq!(got.to_vec(), want, "edge {edge}, h {h}");
            assert_eq!(hilbert_encode(got, bits), h as u64);
        }
    }
}

#[test]
fn order_follows_curve() {
    let r = reference();
    let order = HilbertOrder::build(4).unwrap();
    let pts = r["4"].as_array().unwrap();
    for (k, pt) in pts.iter().enumerate() {
        let want: Vec<usize> = pt
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_u64().unwrap() as usize)
            .collect();
        assert_eq!(order.coords_at(k).to_vec(), want);
        assert_eq!(order.position_of(order.voxel_at(k)), k);
    }
}
