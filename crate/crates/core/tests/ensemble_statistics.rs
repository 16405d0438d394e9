use rydberg_sweep::basis::Configuration;
use rydberg_sweep::hamiltonian::RelaxationParams;
use rydberg_sweep::master_oracle::{self, DensityMatrix, DEFAULT_MAX_DIM};
use rydberg_sweep::model::Model;
use rydberg_sweep::schedule::{Profile, Schedule};
use rydberg_sweep::spectrum::SystemGeometry;
use rydberg_sweep::trajectory::{run_ensemble, EnsembleSpec, IntegratorSettings};
use rydberg_sweep::units::{self, from_2pi_khz, from_2pi_mhz, from_us};

fn chain(n: usize, a: f64, n_max: usize, d: usize) -> Model {
    let g = SystemGeometry::new(n, a, units::TWO_PI_GHZ_UM6 * 2.45).unwrap();
    Model::new(g, n_max, d).unwrap()
}

fn idle(duration: f64) -> Schedule {
    Schedule::new(duration, Profile::constant(0.0), Profile::constant(0.0)).unwrap()
}

/// Dephasing jumps occur at rate Γ_z on every site whatever the state,
/// so their total count is Poisson with mean Γ_z N τ M.
#[test]
fn dephasing_jump_count_is_poissonian() {
    let n = 5;
    let m = chain(n, 2.0, 2, 1);
    let tau = from_us(4.0);
    let gz = from_2pi_khz(20.0);
    let s = Schedule::standard(tau, from_2pi_mhz(0.5), from_2pi_mhz(-1.0), from_2pi_mhz(1.0), 0.2)
        .unwrap();
    let spec = EnsembleSpec { trajectories: 400, base_seed: 99 };
    let settings = IntegratorSettings { output_points: 5, ..Default::default() };
    let relax = RelaxationParams::new(0.0, gz).unwrap();
    let ens = run_ensemble(&m, &s, relax, Configuration::ground(n).unwrap(), spec, &settings, None)
        .unwrap();
    let expected = gz * n as f64 * tau * 400.0;
    let got = ens.total_dephasing_jumps() as f64;
    assert!((got - expected).abs() < 4.0 * expected.sqrt(), "{got} vs {expected}");
    assert_eq!(ens.total_decay_jumps(), 0);
}

/// Every decay jump removes one excitation, so without drive the number of
/// jumps equals the number of excitations lost.
#[test]
fn decay_jumps_account_for_lost_excitations() {
    let n = 5;
    let m = chain(n, 2.0, 3, 2);
    let initial = Configuration::from_sites(n, &[1, 3, 5]).unwrap();
    let spec = EnsembleSpec { trajectories: 300, base_seed: 5 };
    let settings = IntegratorSettings { output_points: 3, p_step_max: 0.01, ..Default::default() };
    let gr = from_2pi_khz(30.0);
    let tau = from_us(5.0);
    let ens = run_ensemble(&m, &idle(tau), RelaxationParams::new(gr, 0.0).unwrap(), initial, spec, &settings, None)
        .unwrap();
    let layout = ens.layout;
    for t in &ens.trajectories {
        let remaining = t.final_record[layout.mean_n()];
        let jumps: u64 = t.decay_jumps.iter().sum();
        assert!((jumps as f64 + remaining - 3.0).abs() < 1e-9);
    }
    let expected = 3.0 * (-gr * tau).exp();
    let mean = ens.final_mean()[layout.mean_n()];
    let se = ens.final_stderr()[layout.mean_n()];
    assert!((mean - expected).abs() < 3.0 * se, "{mean} ± {se} vs {expected}");
}

/// Two atoms with C6/a⁶ ≫ Ω at δ = 0. Adiabatic elimination of |rr⟩ from
/// the ladder gg -(√2Ω)- W -(√2Ω)- rr gives p_rr = 2(Ω/Δ)² sin²(√2 Ω t).
#[test]
fn blockade_suppresses_double_excitation_in_both_engines() {
    let g = SystemGeometry::new(2, 1.0, units::TWO_PI_GHZ_UM6 * 2.45).unwrap();
    let m = Model::new(g, 2, 1).unwrap();
    let omega = from_2pi_mhz(1.0);
    let shift = g.pair_interaction(1, 2);
    let s = Schedule::new(from_us(1.0), Profile::constant(omega), Profile::constant(0.0)).unwrap();
    let settings = IntegratorSettings { output_points: 401, safety: 0.2, ..Default::default() };
    let ground = Configuration::ground(2).unwrap();
    let ens = run_ensemble(&m, &s, RelaxationParams::unitary(), ground, EnsembleSpec { trajectories: 1, base_seed: 0 }, &settings, None)
        .unwrap();
    let master = master_oracle::evolve(
        &m,
        &s,
        RelaxationParams::unitary(),
        DensityMatrix::from_configuration(&m, ground).unwrap(),
        &settings,
        DEFAULT_MAX_DIM,
    )
    .unwrap();
    let rr = ens.layout.shell_probability(2);
    let peak = |rows: &[Vec<f64>]| rows.iter().map(|r| r[rr]).fold(0.0, f64::max);
    let predicted = 2.0 * (omega / shift).powi(2);
    for (engine, value) in [("trajectory", peak(&ens.mean)), ("master", peak(&master.records))] {
        assert!(
            (value / predicted - 1.0).abs() < 0.01,
            "{engine}: max p_rr = {value:e}, predicted {predicted:e}"
        );
    }
    for (a, b) in ens.mean.iter().zip(&master.records) {
        assert!((a[rr] - b[rr]).abs() < 1e-3 * predicted);
    }
}
