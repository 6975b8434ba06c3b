use proptest::prelude::*;

use phasedamage::energy::{phi_delta, phi_delta_prime};
use phasedamage::grid::{Face, Field, Grid};
use phasedamage::simplex::{apply_s, inner_x, project_tangent, solve_s_inverse, Diffusion, Mobility};

fn tangent(n: usize, cells: usize, raw: &[f64], grid: &Grid, zero_mean: bool) -> Field {
    let mut f = Field::from_vec(n, raw[..cells * n].to_vec()).unwrap();
    for cell in f.as_mut_slice().chunks_exact_mut(n) {
        project_tangent(cell);
    }
    if zero_mean {
        let mean = grid.mean(&f).unwrap();
        for cell in f.as_mut_slice().chunks_exact_mut(n) {
            cell.iter_mut().zip(&mean).for_each(|(a, m)| *a -= m);
        }
    }
    f
}

fn mode(ch: bool) -> Diffusion {
    if ch {
        Diffusion::CahnHilliard
    } else {
        Diffusion::AllenCahn
    }
}

proptest! {
    #[test]
    fn projection_is_idempotent(mut x in prop::collection::vec(-10.0..10.0f64, 2..6)) {
        project_tangent(&mut x);
        prop_assert!(x.iter().sum::<f64>().abs() < 1e-12);
        let once = x.clone();
        project_tangent(&mut x);
        for (a, b) in x.iter().zip(&once) {
            prop_assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn s_inverse_undoes_s(cells in 4usize..24, ch: bool, raw in prop::collection::vec(-1.0..1.0f64, 48)) {
        let grid = Grid::new(1, &[cells], &[1.0], &[Face::Left]).unwrap();
        let m = Mobility::binary();
        let f = tangent(2, cells, &raw, &grid, ch);
        let sf = apply_s(&f, mode(ch), &grid, &m).unwrap();
        let back = solve_s_inverse(&sf, mode(ch), &grid, &m, 1e-11).unwrap();
        for (a, b) in back.as_slice().iter().zip(f.as_slice()) {
            prop_assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn step_metric_is_symmetric_and_positive(cells in 4usize..16, ch: bool, raw in prop::collection::vec(-1.0..1.0f64, 64)) {
        let grid = Grid::new(1, &[cells], &[1.0], &[]).unwrap();
        let m = Mobility::binary();
        let a = tangent(2, cells, &raw[..32], &grid, ch);
        let b = tangent(2, cells, &raw[32..], &grid, ch);
        let ab = inner_x(&a, &b, mode(ch), &grid, &m).unwrap();
        let ba = inner_x(&b, &a, mode(ch), &grid, &m).unwrap();
        let aa = inner_x(&a, &a, mode(ch), &grid, &m).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-9 * (1.0 + ab.abs()));
        prop_assert!(aa >= 0.0);
    }

    #[test]
    fn regularized_log_lies_below(x in 1e-6..2.0f64, delta in 1e-4..0.5f64) {
        prop_assert!(phi_delta(x, delta).unwrap() <= x * x.ln() + 1e-12);
        let h = 1e-6;
        let fd = (phi_delta(x + h, delta).unwrap() - phi_delta(x - h, delta).unwrap()) / (2.0 * h);
        prop_assert!((fd - phi_delta_prime(x, delta).unwrap()).abs() < 1e-4 * (1.0 + fd.abs()));
    }
}
