from datetime import timedelta

import numpy as np
import pytest

from irnet.datagen import (
    Normalizer,
    SpeedStore,
    SynthSpec,
    chrono_split,
    ingest_sensor_csv,
    load_dataset,
    load_store,
    make_dataset,
    save_dataset,
    save_store,
    set_to_matrix,
    synth_network,
    write_speed_csv,
)
from irnet.errors import (
    BadFractions,
    BadSpec,
    DegenerateRange,
    MalformedRow,
    MissingTimestamp,
    NonPositiveSpeed,
    RangeTooShort,
    WindowOutOfRange,
)
from irnet.reconstruct import UPSTREAM, OrderedRoadSet, build_plan
from irnet.roadnet import DUMB, build_network, upstream

SENSOR_HEADER = "sensor_id,road_id,timestamp_iso8601,speed_mph\n"


def write(tmp_path, text, name="s.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_ingest_single_sensor(tmp_path):
    p = write(tmp_path, SENSOR_HEADER + "1,5,2020-01-01T00:00:00,60\n1,5,2020-01-01T01:00:00,62\n")
    store = ingest_sensor_csv(p)
    assert store.roads() == [5]
    assert store.series[5].tolist() == [60.0, 62.0]


def test_ingest_averages_sensors(tmp_path):
    p = write(tmp_path, SENSOR_HEADER + "1,5,2020-01-01T00:00:00,60\n2,5,2020-01-01T00:00:00,70\n")
    assert ingest_sensor_csv(p).series[5].tolist() == [65.0]


def test_ingest_zero_speed(tmp_path):
    p = write(tmp_path, SENSOR_HEADER + "1,5,2020-01-01T00:00:00,0\n")
    with pytest.raises(NonPositiveSpeed):
        ingest_sensor_csv(p)


def test_ingest_malformed(tmp_path):
    p = write(tmp_path, SENSOR_HEADER + "1,5,2020-01-01T00:00:00,60\n1,x,2020-01-01T01:00:00,61\n")
    with pytest.raises(MalformedRow) as err:
        ingest_sensor_csv(p)
    assert err.value.line == 3
    with pytest.raises(MalformedRow):
        ingest_sensor_csv(write(tmp_path, "a,b\n1,2\n", "bad.csv"))


def test_ingest_gap_and_forward_fill(tmp_path):
    text = SENSOR_HEADER + "".join(
        f"1,{road},2020-01-01T0{t}:00:00,{50 + t}\n" for road in (1, 2) for t in range(3) if not (road == 2 and t == 1)
    )
    p = write(tmp_path, text)
    with pytest.raises(MissingTimestamp):
        ingest_sensor_csv(p)
    store = ingest_sensor_csv(p, forward_fill=True)
    assert store.series[2].tolist() == [50.0, 50.0, 52.0]


def test_ingest_off_grid(tmp_path):
    p = write(tmp_path, SENSOR_HEADER + "1,5,2020-01-01T00:00:00,60\n1,5,2020-01-01T00:30:00,60\n")
    with pytest.raises(MissingTimestamp):
        ingest_sensor_csv(p)
    assert ingest_sensor_csv(p, interval=timedelta(minutes=30)).length == 2


def test_road_csv_and_store_roundtrip(tmp_path):
    _, store = synth_network(SynthSpec(n_roads=4, steps=12, n_sources=1))
    write_speed_csv(store, tmp_path / "speeds.csv")
    again = ingest_sensor_csv(tmp_path / "speeds.csv")
    assert again.roads() == store.roads() and again.start == store.start
    for r in store.roads():
        assert np.array_equal(again.series[r], store.series[r])
    save_store(store, tmp_path / "store.json")
    loaded = load_store(tmp_path / "store.json")
    assert all(np.array_equal(loaded.series[r], store.series[r]) for r in store.roads())


def test_store_rejects_bad_values():
    with pytest.raises(NonPositiveSpeed):
        SpeedStore({0: np.array([1.0, -2.0])})
    with pytest.raises(MissingTimestamp):
        SpeedStore({0: np.ones(3), 1: np.ones(4)})


def constant_store():
    # distinct constant per road so each matrix row identifies its source
    return SpeedStore({r: np.full(12, 10.0 + r) for r in range(6)})


def test_set_to_matrix_all_dumb():
    M = set_to_matrix(OrderedRoadSet(1, UPSTREAM, (DUMB,) * 3), constant_store(), 4, 3, dumb_fill=-7.0)
    assert M.shape == (3, 3) and (M == -7.0).all()


def test_set_to_matrix_rows_follow_slots():
    store = SpeedStore({1: np.arange(1.0, 7.0), 2: np.arange(11.0, 17.0)})
    M = set_to_matrix([1, 2, DUMB], store, t=3, h=2)
    assert M.tolist() == [[3.0, 4.0], [13.0, 14.0], [0.0, 0.0]]
    slots = (4, 2, DUMB, 5, 0, 1, DUMB, DUMB, 3)
    M = set_to_matrix(slots, constant_store(), t=9, h=6)
    assert M.shape == (9, 6)
    assert M[:, 0].tolist() == [0.0 if s == DUMB else 10.0 + s for s in slots]


def test_set_to_matrix_window_checks():
    with pytest.raises(WindowOutOfRange):
        set_to_matrix([0], constant_store(), t=1, h=3)
    with pytest.raises(WindowOutOfRange):
        set_to_matrix([0], constant_store(), t=12, h=1)


def chain_plan(store, k=2, w=1):
    net = build_network(store.roads(), [(1, 0)])
    return build_plan(net, 0, store.features(), k, w)


def test_make_dataset_counts():
    store = SpeedStore({0: np.arange(1.0, 11.0), 1: np.arange(2.0, 12.0)})
    samples = make_dataset(chain_plan(store), store, h=6, P=1)
    assert [s.t for s in samples] == [5, 6, 7, 8]
    assert samples[0].labels.tolist() == [7.0]
    assert samples[0].s_tar.tolist() == [1.0, 2, 3, 4, 5, 6]
    assert samples[0].um[0].tolist()[0] == [2.0, 3, 4, 5, 6, 7]
    exact = SpeedStore({0: np.arange(1.0, 8.0), 1: np.arange(1.0, 8.0)})
    assert len(make_dataset(chain_plan(exact), exact, h=6, P=1)) == 1
    short = SpeedStore({0: np.arange(1.0, 7.0), 1: np.arange(1.0, 7.0)})
    with pytest.raises(RangeTooShort):
        make_dataset(chain_plan(short), short, h=6, P=1)


def test_make_dataset_count_law():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n, h, P = int(rng.integers(3, 30)), int(rng.integers(1, 5)), int(rng.integers(1, 4))
        store = SpeedStore({0: rng.uniform(10, 60, n), 1: rng.uniform(10, 60, n)})
        expected = n - h - P + 1
        if expected > 0:
            samples = make_dataset(chain_plan(store), store, h, P)
            assert len(samples) == expected
            assert all(s.t < s.t + 1 for s in samples)
            assert [s.t for s in samples] == sorted(s.t for s in samples)


def test_chrono_split():
    assert [len(x) for x in chrono_split(list(range(10)))] == [6, 2, 2]
    assert [len(x) for x in chrono_split([0])] == [1, 0, 0]
    train, val, test = chrono_split(list(range(7)))
    assert train + val + test == list(range(7))
    with pytest.raises(BadFractions):
        chrono_split(list(range(10)), (0.5, 0.5, 0.1))


def test_normalizer():
    store = SpeedStore({0: np.array([40.0, 60.0, 70.0])})
    norm = Normalizer.fit(store, [0, DUMB], 0, 2)
    assert norm.apply(0, 50.0) == 0.5
    assert norm.apply(0, 70.0) == 1.5
    x = np.random.default_rng(1).uniform(-100, 200, 50)
    assert np.allclose(norm.invert(0, norm.apply(0, x)), x, atol=1e-9, rtol=0)
    assert norm.range_of(99) == norm.fallback == (40.0, 60.0)


def test_normalizer_degenerate():
    with pytest.raises(DegenerateRange):
        Normalizer.fit(SpeedStore({0: np.full(4, 30.0)}), [0], 0, 4)


def test_synth_shapes_and_determinism():
    net, store = synth_network(SynthSpec(n_roads=15, steps=200, seed=4))
    assert store.roads() == list(range(15)) and store.length == 200
    _, again = synth_network(SynthSpec(n_roads=15, steps=200, seed=4))
    assert all(store.series[r].tobytes() == again.series[r].tobytes() for r in range(15))
    _, other = synth_network(SynthSpec(n_roads=15, steps=200, seed=5))
    assert not np.array_equal(store.series[14], other.series[14])
    with pytest.raises(BadSpec):
        synth_network(SynthSpec(n_roads=1))


def test_synth_noiseless_is_reconstructable():
    spec = SynthSpec(n_roads=8, steps=120, noise=0.0, seed=2, base_speed=80.0)
    net, store = synth_network(spec)
    # rebuild the deterministic base from a second run with zero dynamics
    _, flat = synth_network(SynthSpec(**{**spec.__dict__, "coupling": 0.0, "source_std": 0.0}))
    dev = {r: store.series[r] - flat.series[r] for r in store.roads()}
    for r in range(spec.n_sources, spec.n_roads):
        parents = sorted(upstream(net, r))
        predicted = spec.coupling * np.mean([dev[p][:-1] for p in parents], axis=0)
        assert np.allclose(dev[r][1:], predicted, atol=1e-9)


def test_dataset_cache_roundtrip(tmp_path):
    net, store = synth_network(SynthSpec(n_roads=6, steps=30, n_sources=2))
    plan = build_plan(net, 5, store.features(), k=2, w=2)
    samples = make_dataset(plan, store, h=3, P=2)
    save_dataset(samples, tmp_path / "ds.bin", h=3, P=2, k=2, w=2)
    blob = (tmp_path / "ds.bin").read_bytes()
    assert blob[:4] == b"IRDS"
    loaded, meta = load_dataset(tmp_path / "ds.bin")
    assert meta == {"h": 3, "P": 2, "k": 2, "w": 2}
    assert len(loaded) == len(samples)
    for a, b in zip(samples, loaded):
        assert a.t == b.t and np.array_equal(a.s_tar, b.s_tar) and np.array_equal(a.labels, b.labels)
        assert all(np.array_equal(x, y) for x, y in zip(a.um + a.dm, b.um + b.dm))
