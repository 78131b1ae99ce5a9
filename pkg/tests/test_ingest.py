import numpy as np
import pytest

from arzobs import ingest as I, metrics, solver as S
from arzobs.errors import DataError
from arzobs.pipeline import base_scenario, cell_means, plant_grid, setpoint_bc


def single_vehicle():
    t = np.arange(0.0, 10.01, 1.0)
    return I.TrajectoryDataset(np.zeros_like(t, dtype=int), t, 10.0 * t, 1.0)


def test_single_vehicle_cell():
    agg = I.edie_aggregate(single_vehicle(), 1, 1, (0.0, 10.0, 0.0, 100.0))
    assert agg.rho[0, 0] == pytest.approx(0.01, rel=1e-14)
    assert agg.q[0, 0] == pytest.approx(0.1, rel=1e-14)
    assert agg.v[0, 0] == pytest.approx(10.0, rel=1e-14)
    assert agg.n_traces[0, 0] == 1


def test_k_identical_vehicles_scale_linearly():
    one = single_vehicle()
    k = 7
    many = I.TrajectoryDataset(np.repeat(np.arange(k), len(one)), np.tile(one.t, k), np.tile(one.x, k), 1.0)
    agg = I.edie_aggregate(many, 1, 1, (0.0, 10.0, 0.0, 100.0))
    assert agg.rho[0, 0] == pytest.approx(k * 0.01)
    assert agg.q[0, 0] == pytest.approx(k * 0.1)
    assert agg.v[0, 0] == pytest.approx(10.0)


def random_fleet(rng, n=40):
    ids, ts, xs = [], [], []
    for i in range(n):
        t = np.arange(rng.uniform(0, 20), rng.uniform(40, 80), 0.1)
        v = rng.uniform(3, 15) + rng.uniform(0, 3) * np.sin(0.2 * t + rng.uniform(0, 6))
        x = rng.uniform(-50, 100) + np.concatenate(([0.0], np.cumsum(v[:-1] * 0.1)))
        ids.append(np.full(t.shape, i))
        ts.append(t)
        xs.append(x)
    return I.TrajectoryDataset(np.concatenate(ids), np.concatenate(ts), np.concatenate(xs), 0.1)


def test_edie_flow_equals_density_times_speed(rng):
    agg = I.edie_aggregate(random_fleet(rng), 8, 6, (10.0, 60.0, 0.0, 300.0))
    full = ~agg.empty & (agg.time_sum > 0)
    assert np.allclose(agg.q[full], agg.rho[full] * agg.v[full], rtol=1e-12)


def test_coarsening_matches_direct_aggregation(rng):
    data = random_fleet(rng)
    dom = (10.0, 60.0, 0.0, 300.0)
    fine = I.edie_aggregate(data, 8, 6, dom).coarsen(2, 3)
    direct = I.edie_aggregate(data, 4, 2, dom)
    assert np.allclose(fine.time_sum, direct.time_sum, rtol=1e-12, atol=1e-12)
    assert np.allclose(fine.dist_sum, direct.dist_sum, rtol=1e-12, atol=1e-12)
    assert np.array_equal(fine.empty, direct.empty)


def test_total_time_is_conserved(rng):
    data = random_fleet(rng)
    dom = (10.0, 60.0, 0.0, 300.0)
    agg = I.edie_aggregate(data, 5, 7, dom)
    assert agg.time_sum.sum() == pytest.approx(data.time_in_box(*dom), rel=1e-12)


def test_numba_and_reference_clipping_agree(rng):
    data = random_fleet(rng, 10)
    dom = (10.0, 60.0, 0.0, 300.0)
    agg = I.edie_aggregate(data, 1, 1, dom)
    assert agg.time_sum[0, 0] == pytest.approx(data.time_in_box(*dom), rel=1e-12)


def _grid_from(rho, v, dt=10.0, dx=100.0):
    nt, nx = rho.shape
    return I.AggregatedGrid(np.arange(nt + 1) * dt, np.arange(nx + 1) * dx,
                            rho * dt * dx, rho * v * dt * dx, np.ones((nt, nx), dtype=int))


def test_averages_uniform(greenshield):
    ref = I.dataset_averages(_grid_from(np.full((3, 4), 0.12), np.full((3, 4), 10.0)), greenshield)
    assert (ref.rho_star, ref.v_star, ref.q_star) == pytest.approx((0.12, 10.0, 1.2))
    assert (ref.lambda1, ref.lambda2) == pytest.approx((10.0, -20.0))


def test_averages_checkerboard(greenshield):
    i, j = np.indices((4, 4))
    board = (i + j) % 2 == 0
    rho = np.where(board, 0.10, 0.14)
    v = np.where(board, 12.0, 8.0)
    ref, q_direct = I.dataset_averages(_grid_from(rho, v), greenshield, return_direct_flow=True)
    assert ref.rho_star == pytest.approx(0.12)
    assert ref.v_star == pytest.approx(10.0)
    assert ref.q_star == pytest.approx(1.2)
    # cellwise flows average to 1.16, not rho* v*
    assert q_direct == pytest.approx(1.16)


def test_averages_of_empty_grid_is_an_error(greenshield):
    g = _grid_from(np.full((2, 2), 0.1), np.full((2, 2), 10.0))
    g.n_traces[:] = 0
    with pytest.raises(DataError):
        I.dataset_averages(g, greenshield)


def test_boundary_series_fills_short_gaps():
    rho = np.full((5, 3), 0.1)
    v = np.full((5, 3), 10.0)
    v[:, -1] = [10, 11, 12, 13, 14]
    g = _grid_from(rho, v)
    g.n_traces[2, -1] = 0
    meas, gaps = I.boundary_series(g, max_gap=30.0)
    assert meas.times.tolist() == [5.0, 15.0, 25.0, 35.0, 45.0]
    assert meas.v_out[2] == pytest.approx(12.0)
    assert meas.q_in == pytest.approx(np.full(5, 1.0))
    assert ("v_out", 25.0, 15.0, 35.0) in gaps
    assert ("q_out", 25.0, 15.0, 35.0) in gaps


def test_boundary_series_long_gap_is_an_error():
    g = _grid_from(np.full((6, 2), 0.1), np.full((6, 2), 10.0))
    g.n_traces[1:4, 0] = 0
    with pytest.raises(DataError, match="q_in: gap"):
        I.boundary_series(g, max_gap=30.0)


def test_boundary_series_edge_gap_is_an_error():
    g = _grid_from(np.full((3, 2), 0.1), np.full((3, 2), 10.0))
    g.n_traces[0, -1] = 0
    with pytest.raises(DataError, match="edge"):
        I.boundary_series(g)


def test_boundary_series_single_row():
    meas, gaps = I.boundary_series(_grid_from(np.full((1, 2), 0.1), np.full((1, 2), 10.0)))
    assert meas.times.shape == (1,)
    assert meas.at(5.0) == pytest.approx((1.0, 1.0, 10.0))
    assert gaps == []


def test_csv_round_trip(tmp_path, rng):
    data = random_fleet(rng, 5)
    path = tmp_path / "traj.csv"
    I.write_trajectory_csv(data, path)
    back = I.read_trajectory_csv(path)
    assert np.array_equal(back.t, data.t) and np.array_equal(back.x, data.x)
    assert np.array_equal(back.vehicle_id, data.vehicle_id)


def test_csv_missing_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("vehicle_id,time_s\n1,0.0\n")
    with pytest.raises(DataError, match="position_m"):
        I.read_trajectory_csv(path)


def test_empty_dataset_is_an_error():
    with pytest.raises(DataError, match="empty"):
        I.edie_aggregate(I.TrajectoryDataset([], [], []))


def test_duplicate_timestamps_rejected():
    with pytest.raises(DataError, match="duplicate"):
        I.TrajectoryDataset([1, 1], [0.0, 0.0], [0.0, 1.0])


def test_synthetic_fleet_reproduces_plant():
    sc = base_scenario()
    m = 41
    x = (np.arange(m) + 0.5) * sc.length / m
    ic = S.sinusoidal_ic(x, sc.ref, sc.length)
    grid = plant_grid(ic, sc.fd, sc.length, m, 240.0, 0.9)
    plant = S.simulate_plant(ic, setpoint_bc(sc.ref), sc.fd, sc.tau, grid)
    agg = I.edie_aggregate(I.synthesize_trajectories(plant), 41, 41, (0.0, 240.0, 0.0, sc.length))
    assert not np.any(agg.empty)
    rho_t = cell_means(plant.times, plant.rho, agg.t_edges)
    v_t = cell_means(plant.times, plant.v, agg.t_edges)
    err = metrics.l2_error_series(agg.t_centers, agg.x_centers, rho_t, v_t, agg.rho, agg.v, sc.ref)
    assert np.max(err.e_rho) < 0.05
    assert np.max(err.e_v) < 0.05
