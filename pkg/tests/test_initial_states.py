import numpy as np
import pytest

from hlmetro.errors import ValidationError
from hlmetro.initial_states import (make_custom_pair, make_ghz, make_mixed_ghz, make_rotated_ghz, polarization_gap,
                                    verify_correlation_decay, zz_gap)


def test_ghz_gaps():
    g = make_ghz(5)
    assert g.c_in == 1.0
    assert polarization_gap(g.branch0, g.branch1) == pytest.approx(1.0)
    assert zz_gap(g) == pytest.approx(1.0)
    assert sum(w for w, _ in make_mixed_ghz(3)) == 1.0


def test_rotated_pair_is_orthonormal():
    p = make_rotated_ghz(4, np.cos(0.3), np.sin(0.3))
    assert abs(np.vdot(p.branch0, p.branch1)) < 1e-12
    assert 0 < p.c_in < 1


def test_bad_pairs_rejected():
    with pytest.raises(ValidationError):
        make_rotated_ghz(3, 1.0, 0.5)
    v = np.zeros(4, dtype=complex)
    v[0] = 1
    with pytest.raises(ValidationError):
        make_custom_pair(v, v)


def test_product_state_has_no_correlation_length():
    c, xi, _ = verify_correlation_decay(make_ghz(4).branch0)
    assert (c, xi) == (0.0, 0.0)
