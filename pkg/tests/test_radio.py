import math
import random

import pytest

from slicegraph.domain import RadioParams, ValidationError
from slicegraph.radio import (
    CqiTable,
    ZeroCapacityChannel,
    apply_snr_overrides,
    bw_for_rate,
    cqi_index_to_snr,
    default_cqi_table,
    load_snr_overrides,
    snr_for_coefficient,
    snr_from_geometry,
    spectral_coefficient,
    user_rate,
)

ALPHA = 3.3219


def rate_oracle(alpha, bw, snr_db):
    # direct transcription of the rate law, kept separate from the library
    return alpha * bw * math.log10(1.0 + 10.0 ** (snr_db / 10.0))


def test_user_rate_zero_bandwidth():
    assert user_rate(ALPHA, 0.0, 17.0) == 0.0


def test_user_rate_reference_point():
    value = user_rate(ALPHA, 20.0, 30.0)
    assert value == pytest.approx(199.35, abs=0.01)
    assert value == pytest.approx(rate_oracle(ALPHA, 20.0, 30.0), rel=1e-12)


def test_spectral_coefficient_at_zero_db():
    # alpha close to 1/log10(2) makes the 0 dB coefficient ~1 Mbps/MHz
    assert spectral_coefficient(ALPHA, 0.0) == pytest.approx(1.0, abs=1e-4)


def test_spectral_coefficient_reference_point():
    assert spectral_coefficient(ALPHA, 30.0) == pytest.approx(9.9674, abs=1e-3)


def test_spectral_coefficient_dead_channel():
    assert spectral_coefficient(1.0, -300.0) < 1e-30


def test_bw_for_rate_inverts_reference_point():
    assert bw_for_rate(ALPHA, 199.35, 30.0) == pytest.approx(20.0, abs=0.01)


def test_bw_for_rate_zero_rate():
    assert bw_for_rate(ALPHA, 0.0, -500.0) == 0.0


def test_bw_for_rate_at_41_db():
    # frozen from the rate-law oracle: 123.87 / (3.3219 * log10(1 + 10^4.1))
    assert bw_for_rate(ALPHA, 123.87, 41.0) == pytest.approx(9.094777365356402, rel=1e-12)
    assert rate_oracle(ALPHA, 9.094777365356402, 41.0) == pytest.approx(123.87, rel=1e-9)


def test_bw_for_rate_dead_channel_errors():
    with pytest.raises(ZeroCapacityChannel):
        bw_for_rate(1.0, 10.0, -400.0)


def test_linearity_and_inversion_invariants():
    rng = random.Random(1)
    for _ in range(1000):
        bw = rng.uniform(0.01, 50.0)
        snr = rng.uniform(-10.0, 60.0)
        k = rng.uniform(0.0, 4.0)
        assert user_rate(ALPHA, k * bw, snr) == pytest.approx(
            k * user_rate(ALPHA, bw, snr), rel=1e-9, abs=1e-12
        )
        assert bw_for_rate(ALPHA, user_rate(ALPHA, bw, snr), snr) == pytest.approx(
            bw, rel=1e-9
        )


def test_rate_strictly_increasing_in_snr():
    rng = random.Random(2)
    for _ in range(200):
        snr = rng.uniform(-20.0, 60.0)
        assert user_rate(ALPHA, 5.0, snr + 0.1) > user_rate(ALPHA, 5.0, snr)


def test_snr_from_geometry_reference_points():
    radio = RadioParams(tx_power_dbm=30.0, noise_dbm=-106.0, ref_loss_db=40.0, pathloss_exponent=3.0)
    assert snr_from_geometry(radio, 1.0) == pytest.approx(96.0)
    assert snr_from_geometry(radio, 100.0) == pytest.approx(36.0)
    assert snr_from_geometry(radio, 1000.0) == pytest.approx(6.0)


def test_snr_from_geometry_rejects_close_range():
    with pytest.raises(ValueError):
        snr_from_geometry(RadioParams(), 0.5)


def test_snr_from_geometry_strictly_decreasing():
    radio = RadioParams()
    distances = [1.0, 2.0, 5.0, 17.0, 80.0, 333.0, 999.0]
    snrs = [snr_from_geometry(radio, d) for d in distances]
    assert all(a > b for a, b in zip(snrs, snrs[1:]))


def test_cqi_table_validation():
    with pytest.raises(ValidationError):
        CqiTable(tuple(range(14)))  # wrong length
    with pytest.raises(ValidationError):
        CqiTable(tuple([1.0] * 15))  # not increasing


def test_default_cqi_table_anchors():
    table = default_cqi_table()
    assert table.efficiency(1) == pytest.approx(1.0)
    assert table.efficiency(15) == pytest.approx(15.133)
    with pytest.raises(ValueError):
        table.efficiency(0)
    with pytest.raises(ValueError):
        table.efficiency(16)


def test_cqi_index_to_snr_round_trips():
    table = default_cqi_table()
    for index in range(1, 16):
        snr = cqi_index_to_snr(index, table, ALPHA)
        assert spectral_coefficient(ALPHA, snr) == pytest.approx(
            table.efficiency(index), rel=1e-9
        )
    # frozen inversion values: best and worst index
    assert cqi_index_to_snr(15, table, ALPHA) == pytest.approx(45.555, abs=1e-3)
    assert abs(cqi_index_to_snr(1, table, ALPHA)) < 1e-3


def test_snr_for_coefficient_rejects_nonpositive():
    with pytest.raises(ValueError):
        snr_for_coefficient(ALPHA, 0.0)


def test_snr_override_file(tmp_path):
    path = tmp_path / "snr.json"
    path.write_text('{"1": 12.5, "2": 33.0}')
    overrides = load_snr_overrides(path)
    assert overrides == {1: 12.5, 2: 33.0}

    from slicegraph.domain import IntentLabel, SliceKind, UserProfile

    label = IntentLabel(slice=SliceKind.EMBB, required_rate_mbps=100.0, required_latency_ms=50.0)
    users = [
        UserProfile(id=1, snr_db=5.0, request_text="a", ground_truth=label),
        UserProfile(id=3, snr_db=7.0, request_text="b", ground_truth=label),
    ]
    updated = apply_snr_overrides(users, overrides)
    assert updated[0].snr_db == 12.5
    assert updated[1].snr_db == 7.0


def test_snr_override_file_rejects_non_object(tmp_path):
    path = tmp_path / "snr.json"
    path.write_text("[1, 2]")
    with pytest.raises(ValidationError):
        load_snr_overrides(path)
