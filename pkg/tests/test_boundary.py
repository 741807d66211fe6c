
import numpy as np
import pytest

import cvqkd_atlas.boundary as boundary
from cvqkd_atlas import (
    BoundaryMesh,
    ChannelParams,
    ProtocolSpec,
    SweepGrid,
    compute_skr,
    cutoff_curve,
    make_psk,
    make_qam,
    min_positive_scan,
    refine_crossing,
    sweep,
)
from cvqkd_atlas.boundary import CSV_HEADER, select_min_positive
from cvqkd_atlas.errors import ComputationError, InvalidArgumentError, SweepAbortedError

ALPHA = SweepGrid.default().alpha_axis


def brute_force_min_positive(build, ch, alphas):
    rates = np.array([compute_skr(build(a), ch).skr for a in alphas])
    pos = np.flatnonzero(rates > 0)
    if pos.size == 0:
        return None
    k = pos[np.argmin(rates[pos])]  # argmin returns the first of equal minima
    return alphas[k], rates[k]


def toy_grid():
    return SweepGrid.from_ranges((0.5, 1.0), (0.001, 0.05), (0.1, 0.5), 3, 3, 5)


# -- scan rule ---------------------------------------------------------------

def test_select_min_positive_basic():
    res = select_min_positive([0.1, 0.2, 0.3, 0.4], [-1.0, 0.5, 0.2, 0.3])
    assert (res.alpha_min, res.skr_min, res.index) == (0.3, 0.2, 2)


def test_select_min_positive_tie_keeps_smaller_alpha():
    res = select_min_positive([0.1, 0.2, 0.3], [0.2, 0.1, 0.1])
    assert res.alpha_min == 0.2


def test_select_min_positive_negative_first_value_does_not_block():
    res = select_min_positive([0.1, 0.2, 0.3], [-0.5, 0.3, 0.4])
    assert res.alpha_min == 0.2


def test_select_min_positive_none():
    assert select_min_positive([0.1, 0.2], [-1.0, 0.0]) is None


def test_select_min_positive_nan():
    with pytest.raises(ComputationError):
        select_min_positive([0.1, 0.2], [0.1, float("nan")])


def test_scan_infeasible_channel():
    spec = ProtocolSpec.parse("psk16")
    ch = ChannelParams(0.01, 0.5)
    assert min_positive_scan(spec, ch, ALPHA) is None
    assert brute_force_min_positive(spec.build, ch, np.linspace(0.1, 0.5, 401)) is None


def test_scan_low_noise_qam16_matches_oracle():
    spec = ProtocolSpec.parse("qam16")
    ch = ChannelParams(1.0, 0.001)
    res = min_positive_scan(spec, ch, ALPHA)
    assert res is not None
    a, s = brute_force_min_positive(lambda a: make_qam(16, a), ch, ALPHA)
    assert res.alpha_min == a and res.skr_min == s
    # the key rate is already positive at the lower end of the alpha range
    assert res.alpha_min == ALPHA[0]


@pytest.mark.parametrize("name", ["psk16", "qam16", "apsk16", "apsk64"])
@pytest.mark.parametrize("T, xi", [(1.0, 0.01), (0.6, 0.02), (0.3, 0.005), (0.9, 0.04)])
def test_scan_result_is_the_minimum(name, T, xi):
    spec = ProtocolSpec.parse(name)
    ch = ChannelParams(T, xi)
    res = min_positive_scan(spec, ch, ALPHA)
    oracle = brute_force_min_positive(spec.build, ch, ALPHA)
    if oracle is None:
        assert res is None
        return
    assert (res.alpha_min, res.skr_min) == oracle
    rates = [compute_skr(spec.build(a), ch).skr for a in ALPHA]
    assert all(r >= res.skr_min for r in rates if r > 0)


def test_scan_accepts_callable_and_validates_axis():
    ch = ChannelParams(1.0, 0.01)
    assert min_positive_scan(lambda a: make_psk(4, a), ch, ALPHA) is not None
    with pytest.raises(InvalidArgumentError):
        min_positive_scan(lambda a: make_psk(4, a), ch, [0.3, 0.2])
    with pytest.raises(InvalidArgumentError):
        min_positive_scan(lambda a: make_psk(4, a), ch, [])


# -- refinement --------------------------------------------------------------

def test_refine_degenerate_bracket():
    assert refine_crossing(lambda a: a - 0.2, 0.2, 0.5) == 0.2


def test_refine_linear_root():
    root = refine_crossing(lambda a: a - 0.3, 0.1, 0.5)
    assert abs(root - 0.3) < 1e-4


def test_refine_invalid_bracket():
    with pytest.raises(InvalidArgumentError):
        refine_crossing(lambda a: a - 0.3, 0.35, 0.5)
    with pytest.raises(InvalidArgumentError):
        refine_crossing(lambda a: a - 0.3, 0.5, 0.1)


def test_refine_keeps_bracket_monotone():
    seen = []

    def f(a):
        seen.append(a)
        return a - 0.237

    refine_crossing(f, 0.1, 0.5)
    mids = seen[2:]
    lo, hi = 0.1, 0.5
    for m in mids:
        assert lo < m < hi
        lo, hi = (lo, m) if f(m) > 0 else (m, hi)
    assert hi - lo < 1e-4


def test_refined_sweep_within_one_step():
    grid = SweepGrid.from_ranges((0.2, 1.0), (0.001, 0.05), (0.1, 0.5), 6, 6, 40)
    mesh = sweep(grid, ProtocolSpec.parse("apsk16"), refine=True)
    ok = mesh.present & ~np.isnan(mesh.alpha_crossing)
    assert ok.any()
    d = mesh.alpha_min[ok] - mesh.alpha_crossing[ok]
    assert np.all(d >= 0) and np.all(d <= grid.alpha_step + 1e-12)
    i, j = np.argwhere(ok)[0]
    assert mesh.cell(i, j).refined
    # the crossing is where the key rate turns positive
    ch = ChannelParams(grid.T_axis[i], grid.xi_axis[j])
    spec = ProtocolSpec.parse("apsk16")
    x = mesh.alpha_crossing[i, j]
    assert compute_skr(spec.build(x - 1e-4), ch).skr <= 0 < compute_skr(spec.build(x + 1e-4), ch).skr


# -- sweep -------------------------------------------------------------------

def test_toy_sweep_psk4():
    mesh = sweep(toy_grid(), ProtocolSpec.parse("psk4"))
    assert mesh.status.shape == (3, 3)
    assert set(mesh.status.ravel()) <= {"ok", "none"}
    again = sweep(toy_grid(), ProtocolSpec.parse("psk4"))
    assert mesh.identical_to(again)
    assert mesh.to_csv() == again.to_csv()


def test_sweep_matches_cellwise_scan():
    grid = toy_grid()
    spec = ProtocolSpec.parse("apsk16")
    mesh = sweep(grid, spec)
    for i, T in enumerate(grid.T_axis):
        for j, xi in enumerate(grid.xi_axis):
            res = min_positive_scan(spec, ChannelParams(T, xi), grid.alpha_axis)
            pt = mesh.cell(i, j)
            if res is None:
                assert pt is None
            else:
                assert pt.alpha_min == res.alpha_min
                assert pt.skr_at_min == pytest.approx(res.skr_min, rel=1e-12)


def test_sweep_thread_count_does_not_change_output(default_grid):
    spec = ProtocolSpec.parse("apsk16")
    a = sweep(default_grid, spec, threads=1).to_csv()
    b = sweep(default_grid, spec, threads=4).to_csv()
    c = sweep(default_grid, spec, threads=4).to_csv()
    assert a == b == c


def test_progress_callback():
    calls = []
    sweep(toy_grid(), ProtocolSpec.parse("psk4"), progress=lambda done, total: calls.append((done, total)))
    assert calls == [(3, 9), (6, 9), (9, 9)]


def test_sweep_retries_failed_alpha_once(monkeypatch):
    real = boundary.constellation_moments
    calls = {"n": 0}

    def flaky(c, cfg):
        calls["n"] += 1
        if calls["n"] == 1:
            raise ComputationError("transient")
        return real(c, cfg)

    monkeypatch.setattr(boundary, "constellation_moments", flaky)
    mesh = sweep(toy_grid(), ProtocolSpec.parse("psk4"))
    assert mesh.counts()["failed"] == 0
    assert mesh.identical_to(sweep(toy_grid(), ProtocolSpec.parse("psk4")))


def test_sweep_aborts_when_too_many_cells_fail(monkeypatch):
    def broken(c, cfg):
        raise ComputationError("always")

    monkeypatch.setattr(boundary, "constellation_moments", broken)
    with pytest.raises(SweepAbortedError):
        sweep(toy_grid(), ProtocolSpec.parse("psk4"))


def test_failed_cells_below_threshold_are_recorded(monkeypatch):
    real = boundary.key_rate_terms
    grid = SweepGrid.from_ranges((0.0, 1.0), (0.001, 0.5), (0.1, 0.5), 20, 20, 5)
    target = grid.xi_axis[7]

    def patchy(n, Z, T, xi, beta, ref):
        xi_arr = np.asarray(xi)
        if xi_arr.ndim == 0 and float(xi_arr) == target and float(T) == grid.T_axis[3]:
            raise ComputationError("one bad cell")
        if xi_arr.ndim > 0 and float(T) == grid.T_axis[3]:
            raise ComputationError("force the per-cell path")
        return real(n, Z, T, xi, beta, ref)

    monkeypatch.setattr(boundary, "key_rate_terms", patchy)
    mesh = sweep(grid, ProtocolSpec.parse("psk4"))
    assert mesh.counts()["failed"] == 1
    assert mesh.status[3, 7] == "failed"
    assert mesh.cell(3, 7) is None


# -- mesh data type and CSV --------------------------------------------------

def test_csv_round_trip(default_meshes):
    mesh = default_meshes["apsk16"]
    text = mesh.to_csv()
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 1 + 2500
    back = BoundaryMesh.from_csv(text, mesh.grid.alpha_axis)
    assert back.identical_to(mesh)
    assert back.to_csv() == text


def test_csv_absent_cells_have_empty_fields(default_meshes):
    rows = [r.split(",") for r in default_meshes["psk16"].to_csv().splitlines()[1:]]
    absent = [r for r in rows if r[5] == "none"]
    assert absent and all(r[3] == "" and r[4] == "" for r in absent)
    present = [r for r in rows if r[5] == "ok"]
    assert all(float(r[4]) > 0 for r in present)


def test_csv_infers_alpha_axis_bounds(default_meshes):
    mesh = default_meshes["qam16"]
    back = BoundaryMesh.from_csv(mesh.to_csv())
    np.testing.assert_array_equal(back.alpha_min, mesh.alpha_min)


def test_mesh_validation():
    grid = toy_grid()
    nan = np.full((3, 3), np.nan)
    status = np.full((3, 3), "none")
    with pytest.raises(InvalidArgumentError):
        BoundaryMesh("x", grid, np.full((3, 3), 0.2), nan, status)
    status_ok = np.full((3, 3), "ok")
    with pytest.raises(InvalidArgumentError):
        BoundaryMesh("x", grid, np.full((3, 3), 0.2), np.full((3, 3), -1.0), status_ok)
    with pytest.raises(InvalidArgumentError):
        BoundaryMesh("x", grid, np.full((3, 3), 0.9), np.full((3, 3), 1.0), status_ok)
    with pytest.raises(InvalidArgumentError):
        BoundaryMesh("x", grid, np.full((2, 3), 0.2), np.full((2, 3), 1.0), np.full((2, 3), "ok"))


def test_grid_validation():
    with pytest.raises(InvalidArgumentError):
        SweepGrid((0.0,), (0.1, 0.2), (0.1, 0.2))
    with pytest.raises(InvalidArgumentError):
        SweepGrid((0.0, 1.2), (0.1, 0.2), (0.1, 0.2))
    with pytest.raises(InvalidArgumentError):
        SweepGrid((0.0, 1.0), (0.0, 0.2), (0.1, 0.2))
    with pytest.raises(InvalidArgumentError):
        SweepGrid((0.0, 1.0), (0.2, 0.1), (0.1, 0.2))
    with pytest.raises(InvalidArgumentError):
        SweepGrid.from_ranges(xi_spacing="cubic")


def test_default_grid_matches_parameter_table():
    g = SweepGrid.default()
    assert (g.T_axis[0], g.T_axis[-1]) == (0.0, 1.0)
    assert (g.xi_axis[0], g.xi_axis[-1]) == (0.001, 0.5)
    assert (g.alpha_axis[0], g.alpha_axis[-1]) == (0.1, 0.5)
    assert g.shape == (50, 50) and len(g.alpha_axis) == 40
    log = SweepGrid.from_ranges(xi_spacing="log")
    assert log.xi_axis[0] == pytest.approx(0.001) and log.xi_axis[-1] == pytest.approx(0.5)
    assert np.allclose(np.diff(np.log(log.xi_axis)), np.log(500) / 49)


# -- cut-off curve -----------------------------------------------------------

def _uniform_mesh(grid, present):
    shape = grid.shape
    status = np.full(shape, "ok" if present else "none")
    alpha = np.full(shape, 0.3 if present else np.nan)
    skr = np.full(shape, 0.1 if present else np.nan)
    return BoundaryMesh("x", grid, alpha, skr, status)


def test_cutoff_all_present():
    grid = toy_grid()
    assert cutoff_curve(_uniform_mesh(grid, True)) == [(T, grid.xi_axis[-1]) for T in grid.T_axis]


def test_cutoff_all_absent():
    assert cutoff_curve(_uniform_mesh(toy_grid(), False)) == []


def test_cutoff_apsk16_wider_at_full_transmittance(default_meshes, default_grid):
    curve = dict(cutoff_curve(default_meshes["apsk16"]))
    T_half = default_grid.T_axis[int(np.argmin(np.abs(np.asarray(default_grid.T_axis) - 0.5)))]
    assert curve[1.0] > curve[T_half]


def _extent_at_full_transmittance(mesh):
    return dict(cutoff_curve(mesh))[1.0]


def test_apsk16_extent(default_meshes, default_grid):
    step = default_grid.xi_axis[1] - default_grid.xi_axis[0]
    extent = _extent_at_full_transmittance(default_meshes["apsk16"])
    assert abs(extent - 0.042) <= step, f"extent {extent:.4f}"


def test_psk16_extent(default_meshes, default_grid):
    # reported extent 0.023; the correlation term matches the closed-form PSK
    # series, and with it the last feasible node at T = 1 is 0.052
    step = default_grid.xi_axis[1] - default_grid.xi_axis[0]
    extent = _extent_at_full_transmittance(default_meshes["psk16"])
    assert abs(extent - 0.023) <= step, f"extent {extent:.4f}, expected 0.023 within {step:.4f}"


# -- mapper properties on the default meshes ---------------------------------

@pytest.mark.parametrize("name", ["apsk16", "apsk64", "apsk256", "psk16", "qam16"])
def test_absent_cell_coherence(default_meshes, name):
    P = default_meshes[name].present
    for i, j in np.argwhere(~P):
        # any channel with lower T and higher xi is at least as bad
        assert not P[: i + 1, j:].any(), (name, i, j)


@pytest.mark.parametrize("name", ["apsk16", "apsk64", "apsk256", "psk16", "qam16"])
def test_boundary_rises_with_noise(default_meshes, name):
    mesh = default_meshes[name]
    step = mesh.grid.alpha_step
    for row, ok in zip(mesh.alpha_min, mesh.present):
        vals = row[ok]
        assert np.all(np.diff(vals) >= -step - 1e-12)


@pytest.mark.parametrize("name", ["apsk16", "apsk64", "apsk256", "psk16", "qam16"])
def test_present_cells_valid(default_meshes, name):
    mesh = default_meshes[name]
    ok = mesh.present
    assert np.all(mesh.skr_at_min[ok] > 0)
    assert np.all((mesh.alpha_min[ok] >= 0.1) & (mesh.alpha_min[ok] <= 0.5))
    assert mesh.counts()["failed"] == 0
