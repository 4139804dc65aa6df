use qkdrate_core::channel::{arm_transmittance, ChannelParams};
use qkdrate_core::oracle::ancilla::{port_phase_error, Port};
use qkdrate_core::oracle::{collapse_ancilla, sigma_untagged, Povm};
use qkdrate_core::sns::{key_rate, SnsParams};
use qkdrate_core::{combine_ports, Mode};

const CUTOFF: usize = 4;

/// Phase error and yield of the untagged state behind the modelled detectors.
fn exact_untagged(channel: &ChannelParams) -> (f64, f64) {
    let povm = Povm::single_photon_ports(CUTOFF, arm_transmittance(channel), channel.dark_count, channel.misalign_x).unwrap();
    let sigma = sigma_untagged(CUTOFF).unwrap();
    let (p_l, rho_l) = collapse_ancilla(&sigma, 2, &povm, 0).unwrap();
    let (p_r, rho_r) = collapse_ancilla(&sigma, 2, &povm, 1).unwrap();
    let e_l = port_phase_error(&rho_l, 0.0, Port::L).unwrap();
    let e_r = port_phase_error(&rho_r, 0.0, Port::R).unwrap();
    (combine_ports(e_l, e_r, p_l, p_r).unwrap(), p_l + p_r)
}

#[test]
fn decoy_phase_error_bounds_the_untagged_state() {
    for fluctuations in [false, true] {
        let mut params = SnsParams::default();
        params.finite.fluctuations = fluctuations;
        for k in 0..25 {
            let d = 18.0 * k as f64;
            let ch = ChannelParams::sns_default().at_distance(d);
            let (exact, yield1) = exact_untagged(&ch);
            let r = key_rate(&params, &ch, Mode::Loose).unwrap();
            let s1 = r.audit["s1_lower"];
            assert!(s1 <= yield1, "d={d}: s1 {s1} above true yield {yield1}");
            if s1 > 0.0 {
                let loose = r.audit["e_ph_loose"];
                let precise = r.audit["e_ph_precise"];
                assert!(loose >= exact, "d={d}: loose {loose} below exact {exact}");
                assert!(precise >= exact, "d={d}: precise {precise} below exact {exact}");
            }
        }
    }
}
