import pytest

from gmfuse.bench import grid_shape
from gmfuse.flops import attention_flops, aware_ssm_flops, block_flops, hca_flops

SWEEP = (1024, 4096, 16384, 65536)


@pytest.mark.parametrize("a,b", list(zip(SWEEP, SWEEP[1:])))
def test_leading_terms_scale_exactly(a, b):
    assert block_flops(*grid_shape(b), 16).terms[1] == 4 * block_flops(*grid_shape(a), 16).terms[1]
    assert attention_flops(b, 16).terms[2] == 16 * attention_flops(a, 16).terms[2]
    assert block_flops(*grid_shape(b), 16).order == 1
    assert attention_flops(b, 16).order == 2


def test_totals_scale_near_exact():
    r_block = block_flops(64, 64, 16).total / block_flops(32, 32, 16).total
    # the linear projection term makes the small-N ratio fall short of 16
    r_attn = attention_flops(65536, 16).total / attention_flops(16384, 16).total
    assert r_block == pytest.approx(4, rel=1e-4)
    assert r_attn == pytest.approx(16, rel=1e-2)
    assert attention_flops(4096, 16).total / attention_flops(1024, 16).total < 16


def test_scan_term_counts_chunk_padding():
    assert aware_ssm_flops(65, 4, 2, 64).by_op["scan"] == 6 * 128 * 2


def test_hca_is_linear_in_queries():
    shapes = [(32, 32), (16, 16), (8, 8), (4, 4)]
    a, b = hca_flops(1024, 16, shapes), hca_flops(4096, 16, shapes)
    assert a.order == 1 and b.terms[1] == 4 * a.terms[1]
    assert b.terms[0] == a.terms[0]
