import numpy as np
import pytest

from sgrisk.numcore import kernels

BACKENDS = kernels.available_backends()


@pytest.fixture(params=sorted(BACKENDS))
def impl(request):
    return BACKENDS[request.param]


def test_compiled_backend_built():
    assert "cython" in BACKENDS, "compiled kernels missing; run pip install -e . --no-build-isolation"


def test_scatter_add_rows(impl, rng):
    out = np.zeros((5, 3))
    idx = rng.integers(0, 5, size=40).astype(np.int64)
    src = rng.standard_normal((40, 3))
    impl.scatter_add_rows(out, idx, src)
    ref = np.zeros((5, 3))
    for i, r in enumerate(idx):
        ref[r] += src[i]
    assert np.allclose(out, ref, atol=1e-12)


def test_segment_max_first_index_on_ties(impl):
    x = np.array([[1.0, 2.0], [3.0, 2.0], [3.0, 0.0], [5.0, 5.0]])
    seg = np.array([0, 0, 0, 1], dtype=np.int64)
    vals, arg = impl.segment_max(x, seg, 2)
    assert vals.tolist() == [[3, 2], [5, 5]]
    assert arg.tolist() == [[1, 0], [3, 3]]


def test_segment_max_empty_segment(impl):
    with pytest.raises(ValueError):
        impl.segment_max(np.ones((2, 2)), np.array([0, 0], dtype=np.int64), 2)


def test_segment_topk(impl):
    scores = np.array([0.9, 0.1, 0.5, 1.0, 1.0, 1.0, 0.0])
    ptr = np.array([0, 3, 7], dtype=np.int64)
    k = np.array([2, 2], dtype=np.int64)
    assert impl.segment_topk(scores, ptr, k).tolist() == [0, 2, 3, 4]


def test_backends_agree(rng):
    if len(BACKENDS) < 2:
        pytest.skip("only one backend")
    py, cy = BACKENDS["python"], BACKENDS["cython"]
    for _ in range(20):
        n_seg = int(rng.integers(1, 6))
        sizes = rng.integers(1, 9, size=n_seg)
        ptr = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        n = int(ptr[-1])
        scores = rng.integers(0, 4, size=n).astype(float)  # many ties
        k = np.array([int(rng.integers(1, s + 1)) for s in sizes], dtype=np.int64)
        assert py.segment_topk(scores, ptr, k).tolist() == cy.segment_topk(scores, ptr, k).tolist()
        seg = np.repeat(np.arange(n_seg), sizes).astype(np.int64)
        x = rng.integers(0, 3, size=(n, 4)).astype(float)
        for a, b in zip(py.segment_max(x, seg, n_seg), cy.segment_max(x, seg, n_seg)):
            assert np.array_equal(a, b)
