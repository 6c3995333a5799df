import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import full_windows
from zinpaint.dictionary import (
    ConfigError,
    EmptyDictionaryError,
    IndexConfig,
    PcaModel,
    Quantizer,
    build_index,
    build_subset_layouts,
    collect_dictionary,
    fit_pca,
    gather_patches,
    load_indices,
    project_quantize,
    round_half_away,
    save_indices,
)
from zinpaint.image_core import MaskImage, RasterImage
from zinpaint.zcurve import morton_less


def _known(h, w):
    return MaskImage(np.ones((h, w), bool))


def _noise(h, w, channels=1, seed=0):
    rng = np.random.default_rng(seed)
    shape = (h, w) if channels == 1 else (h, w, channels)
    return RasterImage(rng.integers(0, 256, shape, dtype=np.uint8))


# --- layouts -------------------------------------------------------------------

def _layout_oracle(K, m, anchor):
    cells = [(r, c) for r in range(K) for c in range(K)]
    # sorted() is stable, so equal distances stay row-major
    near = sorted(cells, key=lambda p: (p[0] - anchor[0]) ** 2 + (p[1] - anchor[1]) ** 2)
    return set(near[:m])


def test_layouts_full_coverage():
    for lay in build_subset_layouts(3, 1.0):
        assert {tuple(p) for p in lay.pixels} == set(itertools.product(range(3), range(3)))


def test_layout_corner_k3():
    nw = build_subset_layouts(3, 4 / 9)[4]
    assert nw.name == "NW" and nw.anchor == (0, 0)
    assert {tuple(p) for p in nw.pixels} == {(0, 0), (0, 1), (1, 0), (1, 1)}


@pytest.mark.parametrize("K,c", [(3, 0.5), (5, 0.3), (7, 0.6), (9, 0.6), (11, 0.45), (13, 0.8)])
def test_layouts_match_distance_sort(K, c):
    m = round_half_away(c * K * K)
    for lay in build_subset_layouts(K, c):
        pix = [tuple(p) for p in lay.pixels]
        assert len(pix) == m == len(set(pix))
        assert set(pix) == _layout_oracle(K, m, lay.anchor)
        assert pix == sorted(pix)


def test_layouts_k9_union():
    layouts = build_subset_layouts(9, 0.6)
    assert [lay.id for lay in layouts] == list(range(8))
    assert all(len(lay.pixels) == 49 for lay in layouts)
    union = set().union(*({tuple(p) for p in lay.pixels} for lay in layouts))
    assert len(union) == 81


def test_layout_symmetry():
    K = 9
    lay = {x.name: {tuple(p) for p in x.pixels} for x in build_subset_layouts(K, 0.6)}
    vflip = lambda s: {(K - 1 - r, c) for r, c in s}
    hflip = lambda s: {(r, K - 1 - c) for r, c in s}
    transpose = lambda s: {(c, r) for r, c in s}
    assert vflip(lay["N"]) == lay["S"]
    assert hflip(lay["W"]) == lay["E"]
    assert transpose(lay["N"]) == lay["W"]
    assert hflip(lay["NW"]) == lay["NE"]


def test_corner_symmetry_up_to_cutoff_ties():
    # row-major tie-breaking on the cutoff ring is not mirror-equivariant,
    # so corners agree on everything strictly inside the ring
    K = 9
    layouts = build_subset_layouts(K, 0.6)
    nw = layouts[4]
    maps = {5: lambda r, c: (r, K - 1 - c), 6: lambda r, c: (K - 1 - r, c),
            7: lambda r, c: (K - 1 - r, K - 1 - c)}

    def d2(p, a):
        return (p[0] - a[0]) ** 2 + (p[1] - a[1]) ** 2

    ring = max(d2(p, nw.anchor) for p in nw.pixels)
    inner = {tuple(p) for p in nw.pixels if d2(p, nw.anchor) < ring}
    for lid, f in maps.items():
        other = layouts[lid]
        assert {f(*p) for p in inner} <= {tuple(p) for p in other.pixels}
        assert sorted(d2(p, other.anchor) for p in other.pixels) == \
            sorted(d2(p, nw.anchor) for p in nw.pixels)


def test_layout_columns():
    lay = build_subset_layouts(3, 4 / 9)[4]
    assert lay.flat_index(3).tolist() == [0, 1, 3, 4]
    assert lay.columns(3, 3).tolist() == [0, 1, 2, 3, 4, 5, 9, 10, 11, 12, 13, 14]


@pytest.mark.parametrize("K,c", [(9, 0.0), (9, 1.2), (9, -0.1), (4, 0.6), (1, 0.6), (3, 0.01)])
def test_layouts_bad_config(K, c):
    with pytest.raises(ConfigError):
        build_subset_layouts(K, c)


# --- dictionary ------------------------------------------------------------------

def test_collect_fully_known():
    keys = collect_dictionary(_noise(20, 20), _known(20, 20), 9)
    assert len(keys) == 144
    assert keys.tolist() == sorted(keys.tolist())


def test_collect_fully_unknown():
    with pytest.raises(EmptyDictionaryError):
        collect_dictionary(_noise(20, 20), MaskImage(np.zeros((20, 20), bool)), 9)


def test_collect_too_small():
    with pytest.raises(EmptyDictionaryError):
        collect_dictionary(_noise(5, 20), _known(5, 20), 9)


def test_collect_one_hole():
    known = np.ones((20, 20), bool)
    known[10, 10] = False
    keys = collect_dictionary(_noise(20, 20), MaskImage(known), 9)
    assert len(keys) == 63
    assert [(k // 20, k % 20) for k in keys.tolist()] == full_windows(known, 9)


def test_collect_random_masks(rng):
    for _ in range(10):
        known = rng.random((23, 31)) > 0.03
        keys = collect_dictionary(_noise(23, 31), MaskImage(known), 5)
        assert [(k // 31, k % 31) for k in keys.tolist()] == full_windows(known, 5)


def test_collect_size_mismatch():
    with pytest.raises(ValueError):
        collect_dictionary(_noise(20, 20), _known(20, 21), 9)


def test_gather_layout_order():
    img = _noise(6, 7, channels=3)
    K = 3
    keys = np.array([0, 7 * 2 + 3])
    full = gather_patches(img, keys, K)
    assert np.array_equal(full[1], img.data[2:5, 3:6].reshape(-1))
    lay = build_subset_layouts(K, 4 / 9)[7]
    part = gather_patches(img, keys, K, lay.columns(K, 3))
    assert np.array_equal(part, full[:, lay.columns(K, 3)])


# --- PCA ------------------------------------------------------------------------

def test_pca_axis_aligned(rng):
    X = rng.normal(size=(5000, 3)) * np.array([1.0, 5.0, 2.0])
    m = fit_pca(X, 3)
    assert np.allclose(np.abs(m.components), np.eye(3)[[1, 2, 0]], atol=0.02)
    assert m.eigenvalues[0] > m.eigenvalues[1] > m.eigenvalues[2]


def test_pca_identical_samples():
    X = np.tile([3.0, -1.0, 7.0], (10, 1))
    m = fit_pca(X, 2)
    assert np.allclose(m.eigenvalues, 0)
    assert np.allclose(m.mean, [3, -1, 7])


def test_pca_diagonal_line():
    m = fit_pca([[0, 0], [2, 2], [4, 4]], 1)
    assert np.allclose(m.components[0], [1 / np.sqrt(2), 1 / np.sqrt(2)])
    assert np.isclose(m.eigenvalues[0], 8.0)
    assert np.allclose(m.mean, [2, 2])


def test_pca_invariants(rng):
    X = rng.normal(size=(300, 12)) @ rng.normal(size=(12, 12))
    m = fit_pca(X, 8)
    G = m.components @ m.components.T
    assert np.allclose(np.diag(G), 1, atol=1e-6)
    assert np.abs(G - np.diag(np.diag(G))).max() <= 1e-6
    assert np.all(np.diff(m.eigenvalues) <= 1e-9)
    idx = np.argmax(np.abs(m.components), axis=1)
    assert np.all(m.components[np.arange(8), idx] > 0)


def test_pca_reconstruction_error_monotone(rng):
    X = rng.normal(size=(200, 10)) @ rng.normal(size=(10, 10))
    errs = []
    for D in range(1, 11):
        m = fit_pca(X, D)
        Y = m.project(X)
        R = Y @ m.components + m.mean
        errs.append(np.mean((X - R) ** 2))
    assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-9


def test_pca_too_few_samples():
    with pytest.raises(ConfigError):
        fit_pca(np.zeros((3, 5)), 4)


def test_project_known_limits(rng):
    m = fit_pca(rng.normal(size=(100, 6)), 3)
    x = rng.normal(size=6)
    assert np.allclose(m.project_known(x, np.ones(6, bool)), m.project(x))
    assert np.array_equal(m.project_known(x, np.zeros(6, bool)), np.zeros(3))


def test_project_known_recovers_span(rng):
    m = fit_pca(rng.normal(size=(200, 8)), 3)
    y = np.array([1.5, -2.0, 0.25])
    x = m.mean + y @ m.components
    known = np.array([1, 0, 1, 1, 0, 1, 0, 1], bool)
    garbage = np.where(known, x, 99.0)
    assert np.allclose(m.project_known(garbage, known), y)


# --- quantizer ----------------------------------------------------------------------

def test_quantize_affine_example():
    q = Quantizer(np.array([-2.0]), np.array([2.0]))
    assert q.quantize([1.0]).tolist() == [191]
    assert q.quantize([-2.0]).tolist() == [0]
    assert q.quantize([2.0]).tolist() == [255]
    assert q.quantize([-9.0]).tolist() == [0]
    assert q.quantize([9.0]).tolist() == [255]


def test_quantize_flat_dimension():
    q = Quantizer(np.array([1.0, 0.0]), np.array([1.0, 4.0]))
    assert q.quantize([1.0, 2.0]).tolist() == [0, 128]


def test_quantize_half_away():
    q = Quantizer(np.array([0.0]), np.array([255.0]))
    assert q.quantize([[0.5], [1.5], [2.4999]]).ravel().tolist() == [1, 2, 2]


@settings(max_examples=200, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-3, 0), st.floats(0.01, 3))
def test_quantize_monotone(a, b, lo, span):
    q = Quantizer(np.array([lo]), np.array([lo + span]))
    ya, yb = sorted((a, b))
    assert q.quantize([ya])[0] <= q.quantize([yb])[0]


def test_quantizer_fit_shared_and_axis():
    P = np.array([[-1.0, 0.0], [3.0, 0.5], [0.0, -0.5]])
    axis = Quantizer.fit(P, shared=False)
    assert axis.lo.tolist() == [-1.0, -0.5] and axis.hi.tolist() == [3.0, 0.5]
    shared = Quantizer.fit(P)
    assert shared.lo.tolist() == [-1.0, -1.0] and shared.hi.tolist() == [3.0, 3.0]


def test_project_quantize_mean_maps_to_origin(rng):
    m = fit_pca(rng.normal(size=(50, 4)), 2)
    q = Quantizer(np.array([-4.0, -1.0]), np.array([4.0, 3.0]))
    assert project_quantize(m.mean, m, q).tolist() == [128, 64]
    with pytest.raises(ValueError):
        project_quantize(np.zeros(5), m, q)


# --- config ------------------------------------------------------------------------

def test_config_defaults():
    cfg = IndexConfig()
    assert (cfg.K, cfg.c, cfg.D, cfg.k, cfg.mu, cfg.nu, cfg.norm.name) == (9, 0.6, 10, 80, 256, 2048, "L2")
    assert cfg.validate(3) is cfg


@pytest.mark.parametrize("kw", [dict(K=8), dict(K=1), dict(c=0), dict(c=1.5), dict(D=0),
                                dict(D=50), dict(k=0), dict(mu=0), dict(mu=300, nu=200),
                                dict(query="zero"), dict(scale="log")])
def test_config_invalid(kw):
    with pytest.raises(ConfigError):
        IndexConfig(**kw).validate(1)


def test_config_norm_parse():
    assert IndexConfig(norm="l1").norm.is_l1


# --- index ----------------------------------------------------------------------------

def _assert_sorted(index):
    c, k = index.coords, index.keys
    for i in range(len(index) - 1):
        assert not morton_less(c[i + 1], c[i])
        if np.array_equal(c[i], c[i + 1]):
            assert k[i] < k[i + 1]


def test_build_index_single_patch():
    img = _noise(9, 9)
    lay = build_subset_layouts(9, 0.6)[0]
    pidx = build_index(img, _known(9, 9), lay, IndexConfig(D=1))
    assert len(pidx.index) == 1 and pidx.index.keys.tolist() == [0]


def test_build_index_duplicate_content():
    data = np.zeros((5, 12), np.uint8)
    data[:, 7:] = np.arange(25, dtype=np.uint8).reshape(5, 5) * 9
    data[:, 0:5] = data[:, 7:12]
    img = RasterImage(data)
    lay = build_subset_layouts(5, 0.6)[2]
    pidx = build_index(img, _known(5, 12), lay, IndexConfig(K=5, D=2))
    pos = {int(k): i for i, k in enumerate(pidx.index.keys)}
    assert pos[7] == pos[0] + 1
    assert np.array_equal(pidx.index.coords[pos[0]], pidx.index.coords[pos[7]])


def test_build_index_144_sorted():
    lay = build_subset_layouts(9, 0.6)[5]
    pidx = build_index(_noise(20, 20), _known(20, 20), lay, IndexConfig())
    assert len(pidx.index) == 144 and pidx.index.D == 10
    assert sorted(pidx.index.keys.tolist()) == list(collect_dictionary(_noise(20, 20), _known(20, 20), 9))
    _assert_sorted(pidx.index)


def test_build_index_deterministic(coffee_small):
    img = RasterImage(coffee_small)
    known = np.ones(coffee_small.shape[:2], bool)
    known[40:70, 60:120] = False
    lay = build_subset_layouts(9, 0.6)[3]
    a = build_index(img, MaskImage(known), lay, IndexConfig())
    b = build_index(img, MaskImage(known), lay, IndexConfig())
    assert np.array_equal(a.index.coords, b.index.coords)
    assert np.array_equal(a.index.keys, b.index.keys)
    assert np.array_equal(a.model.components, b.model.components)
    _assert_sorted(a.index)


def test_build_index_matches_direct_pipeline(coffee_small):
    img = RasterImage(coffee_small[:60, :80])
    mask = _known(60, 80)
    cfg = IndexConfig(D=6, scale="axis")
    lay = build_subset_layouts(9, 0.6)[6]
    pidx = build_index(img, mask, lay, cfg)
    keys = collect_dictionary(img, mask, 9)
    X = gather_patches(img, keys, 9, lay.columns(9, 3))
    m = fit_pca(X, 6)
    assert np.allclose(np.abs(pidx.model.components), np.abs(m.components), atol=1e-8)
    P = m.project(X)
    assert np.allclose(pidx.quantizer.lo, P.min(0)) and np.allclose(pidx.quantizer.hi, P.max(0))
    pos = np.argsort(pidx.index.keys)
    assert np.array_equal(pidx.index.coords[pos], pidx.quantizer.quantize(pidx.model.project(X)))


# --- persistence ------------------------------------------------------------------------

def test_save_load_round_trip(tmp_path, coffee_small):
    img = RasterImage(coffee_small[:50, :70])
    mask = _known(50, 70)
    cfg = IndexConfig(K=7, D=5)
    built = [build_index(img, mask, lay, cfg) for lay in build_subset_layouts(7, 0.6)[:3]]
    path = tmp_path / "x.zidx"
    save_indices(path, built, 7, 0.6, 3, 70)
    assert path.read_bytes()[:5] == b"ZIDX1"
    loaded = load_indices(path, 70)
    assert len(loaded) == 3
    for a, (b, meta) in zip(built, loaded):
        assert (meta["K"], meta["c"], meta["D"], meta["channels"]) == (7, 0.6, 5, 3)
        assert b.layout.id == a.layout.id
        assert np.array_equal(b.index.coords, a.index.coords)
        assert np.array_equal(b.index.keys, a.index.keys)
        assert np.array_equal(b.model.components, a.model.components)
        assert np.array_equal(b.quantizer.hi, a.quantizer.hi)
        assert np.array_equal(meta["y"] * 70 + meta["x"], a.index.keys)


def test_load_rejects_garbage(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(b"NOPE!" + bytes(40))
    with pytest.raises(ValueError):
        load_indices(p, 10)
    p.write_bytes(b"")
    with pytest.raises(ValueError):
        load_indices(p, 10)


def test_load_rejects_truncated(tmp_path):
    lay = build_subset_layouts(9, 0.6)[0]
    pidx = build_index(_noise(20, 20), _known(20, 20), lay, IndexConfig())
    p = tmp_path / "t.zidx"
    save_indices(p, [pidx], 9, 0.6, 1, 20)
    p.write_bytes(p.read_bytes()[:-7])
    with pytest.raises(ValueError):
        load_indices(p, 20)


def test_pca_model_shapes():
    m = PcaModel(np.zeros(4), np.eye(4)[:2], np.ones(2))
    assert m.D == 2
    assert m.project([1, 2, 3, 4]).tolist() == [1, 2]
