import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import brute_force_dbscan, same_partition

from urbanscene.geometry import CameraPoint, project
from urbanscene.stixels import (
    DimensionMismatch, EmptyCluster, Label, SemanticStixel, StixelParams, StixelSet, cluster_stixels, dbscan,
    extract_stixels, obstacle_centroid, read_disparity, read_labels, read_stixels, write_disparity, write_labels,
    write_stixels,
)


def blank(cam):
    return np.zeros((cam.height, cam.width)), np.zeros((cam.height, cam.width), dtype=np.uint8)


def test_single_vehicle_band(cam, rng):
    disp, lab = blank(cam)
    disp[300:401, 100:105] = 20.0 + rng.uniform(-0.1, 0.1, size=(101, 5))
    lab[300:401, 100:105] = Label.VEHICLE
    s = extract_stixels(disp, lab, cam)
    assert len(s) == 1
    st0 = s.stixels[0]
    assert (st0.v_t, st0.v_b, st0.l) == (300, 400, Label.VEHICLE)
    assert st0.u == 102
    assert st0.d == pytest.approx(20.0, abs=0.1)


def test_nothing_above_ground(cam):
    disp, lab = blank(cam)
    disp[:] = 10.0
    assert len(extract_stixels(disp, lab, cam)) == 0


def test_zero_disparity_gives_nothing(cam):
    disp, lab = blank(cam)
    lab[:] = Label.BUILDING
    assert len(extract_stixels(disp, lab, cam)) == 0


def test_run_split_on_depth_step(cam):
    disp, lab = blank(cam)
    lab[200:300, 0:5] = Label.VEHICLE
    disp[200:250, 0:5] = 10.0
    disp[250:300, 0:5] = 30.0
    s = extract_stixels(disp, lab, cam)
    assert [(x.v_t, x.v_b, x.d) for x in s.stixels] == [(200, 249, 10.0), (250, 299, 30.0)]


def test_short_runs_dropped(cam):
    disp, lab = blank(cam)
    lab[10:12, 0:5] = Label.PEDESTRIAN
    disp[10:12, 0:5] = 5.0
    assert len(extract_stixels(disp, lab, cam, StixelParams(min_height=3))) == 0


def test_band_median_ignores_other_labels(cam):
    disp, lab = blank(cam)
    lab[100:200, 0:5] = Label.BUILDING
    disp[100:200, 0:5] = 8.0
    lab[100:200, 0] = Label.VEHICLE  # off-centre column with another class
    disp[100:200, 0] = 40.0
    s = extract_stixels(disp, lab, cam)
    assert len(s) == 1 and s.stixels[0].d == 8.0


def test_dimension_mismatch(cam):
    with pytest.raises(DimensionMismatch):
        extract_stixels(np.zeros((10, 10)), np.zeros((10, 10)), cam)


def test_extract_deterministic(fast_cam, rng):
    disp = rng.uniform(0, 20, size=(fast_cam.height, fast_cam.width))
    lab = rng.integers(0, 4, size=disp.shape)
    assert extract_stixels(disp, lab, fast_cam) == extract_stixels(disp.copy(), lab.copy(), fast_cam)


def column_stixels(cam, north, easts, label=Label.VEHICLE):
    out = []
    for e in easts:
        u, d = project(CameraPoint(north, e), cam)
        out.append(SemanticStixel(u=u, v_b=400, v_t=300, d=d, l=label))
    return out


def test_dense_group_is_one_cluster(cam):
    s = StixelSet(0.0, column_stixels(cam, 20.0, np.arange(10) * 0.1))
    obs = cluster_stixels(s, cam, eps=1.5, min_pts=2)
    assert obs.count == 1 and len(obs.obstacles[0].members) == 10


def test_separated_groups(cam):
    eps = 1.5
    left = column_stixels(cam, 20.0, np.arange(10) * 0.1)
    right = column_stixels(cam, 20.0, 0.9 + 3 * eps + np.arange(10) * 0.1)
    obs = cluster_stixels(StixelSet(0.0, left + right), cam, eps=eps, min_pts=2)
    assert obs.count == 2
    assert [len(o.members) for o in obs.obstacles] == [10, 10]


def test_label_aware_clusters_are_pure(cam):
    a = column_stixels(cam, 20.0, np.arange(5) * 0.2, Label.VEHICLE)
    b = column_stixels(cam, 20.0, 1.0 + np.arange(5) * 0.2, Label.PEDESTRIAN)
    aware = cluster_stixels(StixelSet(0.0, a + b), cam)
    assert aware.count == 2
    assert all(len({m.l for m in o.members}) == 1 for o in aware.obstacles)
    blind = cluster_stixels(StixelSet(0.0, a + b), cam, label_aware=False)
    assert blind.count == 1


def test_dbscan_against_oracle_seeded():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(1, 501))
        pts = rng.uniform(0, rng.uniform(5, 60), size=(n, 2))
        eps, min_pts = rng.uniform(0.3, 3.0), int(rng.integers(1, 6))
        assert same_partition(dbscan(pts, eps, min_pts), brute_force_dbscan(pts, eps, min_pts))


@given(st.lists(st.tuples(st.integers(0, 30), st.integers(0, 30), st.integers(0, 2)), min_size=1, max_size=60),
       st.sampled_from([1.0, 1.5, 2.0, 3.0]), st.integers(1, 4))
def test_dbscan_property_grid_points(raw, eps, min_pts):
    # integer coordinates make distance ties common, which stresses the border rule
    pts = np.array([(a, b) for a, b, _ in raw], dtype=float) * 0.5
    groups = np.array([g for *_, g in raw])
    assert same_partition(dbscan(pts, eps, min_pts, groups), brute_force_dbscan(pts, eps, min_pts, groups))


def test_cluster_count_permutation_invariant(cam, rng):
    stix = column_stixels(cam, 15.0, rng.uniform(-8, 8, 80)) + column_stixels(cam, 30.0, rng.uniform(-8, 8, 40))

    def partition(obs):
        return [sorted((m.u, m.v_b, m.v_t, m.d, int(m.l)) for m in o.members) for o in obs.obstacles]

    base = cluster_stixels(StixelSet(0.0, stix), cam)
    for _ in range(5):
        perm = [stix[i] for i in rng.permutation(len(stix))]
        other = cluster_stixels(StixelSet(0.0, perm), cam)
        assert other.count == base.count
        assert partition(other) == partition(base)


def test_every_stixel_in_at_most_one_cluster(cam, rng):
    stix = column_stixels(cam, 12.0, rng.uniform(-6, 6, 60))
    obs = cluster_stixels(StixelSet(0.0, stix), cam)
    members = [id(m) for o in obs.obstacles for m in o.members]
    assert len(members) == len(set(members))


def test_centroid_examples():
    one = [SemanticStixel(100, 60, 50, 20, Label.VEHICLE)]
    assert obstacle_centroid(one) == (100, 50, 20)
    three = [SemanticStixel(u, 60, 50, d, Label.VEHICLE) for u, d in ((98, 19), (100, 20), (102, 21))]
    assert obstacle_centroid(three) == (100, 50, 20)
    with pytest.raises(EmptyCluster):
        obstacle_centroid([])


@given(st.lists(st.tuples(st.floats(0, 1000), st.floats(0, 700), st.floats(0.6, 200)), min_size=1, max_size=30))
def test_centroid_inside_bounding_box(rows):
    members = [SemanticStixel(u, v + 5, v, d, Label.VEHICLE) for u, v, d in rows]
    u, v, d = obstacle_centroid(members)
    us, vs, ds = zip(*rows)
    tol = 1e-9 * max(1.0, max(us))
    assert min(us) - tol <= u <= max(us) + tol
    assert min(vs) - 1e-9 <= v <= max(vs) + 1e-9
    assert min(ds) <= d <= max(ds)


def test_stixel_csv_round_trip(tmp_path):
    sets = [StixelSet(0.0, [SemanticStixel(2.0, 40.0, 10.0, 12.5, Label.VEHICLE)]),
            StixelSet(0.066667, [SemanticStixel(7.0, 90.0, 3.0, 4.25, Label.BUILDING),
                                 SemanticStixel(12.0, 95.0, 80.0, 30.0, Label.PEDESTRIAN)])]
    path = tmp_path / "stixels.csv"
    write_stixels(sets, path)
    assert read_stixels(path) == sets


def test_raster_round_trip(tmp_path, fast_cam, rng):
    disp = np.round(rng.uniform(0, 100, size=(fast_cam.height, fast_cam.width)) * 256) / 256
    lab = rng.integers(0, 4, size=disp.shape).astype(np.uint8)
    write_disparity(tmp_path / "d.png", disp)
    write_labels(tmp_path / "l.png", lab)
    assert np.array_equal(read_disparity(tmp_path / "d.png"), disp)
    assert np.array_equal(read_labels(tmp_path / "l.png"), lab)


def test_label_parse():
    assert Label.parse("vehicle") is Label.VEHICLE
    assert Label.parse("BUILDING") is Label.BUILDING
    assert Label.parse("2") is Label.PEDESTRIAN
