use meshfix::calibrate::*;
use meshfix::mesh::{wrap_pi, MeshTopology};

fn main() {
    let topo = MeshTopology::rectangular(8);
    let mut chip = ChipModel::new_random(topo.clone(), 0.02, DetectorKind::Coherent, NoiseModel::default(), 13);
    let truth = chip.truth();
    let rec = calibrate_mesh(&mut chip).unwrap();
    for (i, d) in rec.devices.iter().enumerate() {
        let a = d.alpha - truth.alphas[i];
        let b = d.beta - truth.betas[i];
        let t = wrap_pi(d.theta_map.delta - truth.theta_maps[i].delta);
        let p = wrap_pi(d.phi_map.delta - truth.phi_maps[i].delta);
        if a.abs().max(b.abs()).max(t.abs()).max(p.abs()) > 1e-5 {
            println!("dev {i} (c{} t{}): da={a:+.2e} db={b:+.2e} ddt={t:+.2e} ddp={p:+.2e} z={:.2}",
                topo.placements()[i].column, topo.placements()[i].top_mode, d.zeta);
        }
    }
}
