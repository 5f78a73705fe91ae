import struct

import numpy as np
import pytest

from maskpipe.imaging import FormatError, Image
from maskpipe.warping import (
    FlowField,
    flow_from_homography,
    identity_flow,
    load_flow,
    save_flow,
    warp_reference,
)
from tests.conftest import textured_image


def resample_oracle(ref: Image, model: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Independent per-pixel projective resampler with its own bilinear code."""
    h, w = ref.height, ref.width
    data = np.asarray(ref.data, dtype=np.float64)[:, :, 0]
    out = np.zeros((h, w))
    valid = np.zeros((h, w), dtype=np.uint8)
    for y in range(h):
        for x in range(w):
            q = model @ np.array([x, y, 1.0])
            sx, sy = q[0] / q[2], q[1] / q[2]
            if not (0.0 <= sx <= w - 1 and 0.0 <= sy <= h - 1):
                continue
            x0, y0 = int(np.floor(sx)), int(np.floor(sy))
            x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
            fx, fy = sx - x0, sy - y0
            out[y, x] = (
                data[y0, x0] * (1 - fx) * (1 - fy)
                + data[y0, x1] * fx * (1 - fy)
                + data[y1, x0] * (1 - fx) * fy
                + data[y1, x1] * fx * fy
            )
            valid[y, x] = 1
    return out, valid


class TestWarpReference:
    def test_zero_flow_is_identity(self):
        ref = textured_image(0, width=40, height=30)
        warped, validity = warp_reference(ref, identity_flow(40, 30))
        assert np.allclose(warped.data, ref.data, atol=1e-7)
        assert validity.data.all()

    def test_constant_flow_shifts_and_invalidates_right_band(self):
        ref = textured_image(1, width=64, height=32)
        disp = np.zeros((32, 64, 2), dtype=np.float32)
        disp[:, :, 0] = 5.0
        flow = FlowField(disp, np.zeros((32, 64), dtype=np.float32))
        warped, validity = warp_reference(ref, flow)
        assert np.allclose(warped.data[:, : 64 - 5], ref.data[:, 5:], atol=1e-7)
        assert not validity.data[:, 64 - 5 :].any()
        assert validity.data[:, : 64 - 5].all()
        assert not warped.data[:, 64 - 5 :].any()

    def test_matches_homography_resampling_oracle(self):
        ref = textured_image(2, width=48, height=36)
        model = np.array(
            [[0.998, -0.01, 1.5], [0.01, 0.998, -2.0], [1e-5, -1e-5, 1.0]]
        )
        flow = flow_from_homography(model, 48, 36)
        warped, validity = warp_reference(ref, flow)
        expected, valid_expected = resample_oracle(ref, model)
        assert np.array_equal(validity.data, valid_expected)
        inside = valid_expected.astype(bool)
        assert np.abs(warped.data[:, :, 0][inside] - expected[inside]).max() < 1e-6

    def test_output_stays_in_unit_range(self, rng):
        ref = textured_image(3, width=32, height=24)
        disp = rng.uniform(-4, 4, (24, 32, 2)).astype(np.float32)
        flow = FlowField(disp, np.zeros((24, 32), dtype=np.float32))
        warped, _ = warp_reference(ref, flow)
        assert warped.data.min() >= 0.0
        assert warped.data.max() <= 1.0

    def test_dim_mismatch_rejected(self):
        ref = textured_image(4, width=32, height=24)
        with pytest.raises(ValueError, match="dims"):
            warp_reference(ref, identity_flow(16, 12))

    def test_composition_consistency(self):
        # Warping by H1 then H2 samples ref at H1(H2(p)), so the single
        # equivalent warp uses the product H1 @ H2.
        ref = textured_image(5, width=96, height=72)
        h1 = flow_from_homography_model(0.4, 1.5, -1.0)
        h2 = flow_from_homography_model(-0.3, -1.0, 2.0)
        once = warp_reference(ref, flow_from_homography(h1 @ h2, 96, 72))[0]
        w1, _ = warp_reference(ref, flow_from_homography(h1, 96, 72))
        w2, valid2 = warp_reference(w1, flow_from_homography(h2, 96, 72))
        inside = valid2.data.astype(bool)
        diff = np.abs(once.data[:, :, 0] - w2.data[:, :, 0])[inside]
        assert diff.mean() <= 2.0 / 255.0


def flow_from_homography_model(angle_deg: float, tx: float, ty: float) -> np.ndarray:
    rad = np.radians(angle_deg)
    return np.array(
        [[np.cos(rad), -np.sin(rad), tx], [np.sin(rad), np.cos(rad), ty], [0.0, 0.0, 1.0]]
    )


class TestFlowFromHomography:
    def test_identity_gives_zero_flow_and_uncertainty(self):
        flow = flow_from_homography(np.eye(3), 20, 10)
        assert not flow.displacement.any()
        assert not flow.uncertainty.any()

    def test_translation_gives_constant_displacement(self):
        model = flow_from_homography_model(0.0, 3.0, -2.0)
        flow = flow_from_homography(model, 40, 30)
        assert np.allclose(flow.displacement[:, :, 0], 3.0)
        assert np.allclose(flow.displacement[:, :, 1], -2.0)

    def test_matches_projective_division_oracle(self):
        model = np.array([[1.01, 0.02, -3.0], [-0.015, 0.99, 4.0], [1e-4, -5e-5, 1.0]])
        flow = flow_from_homography(model, 64, 48)
        rng = np.random.default_rng(0)
        for _ in range(200):
            x = int(rng.integers(0, 64))
            y = int(rng.integers(0, 48))
            q = model @ np.array([x, y, 1.0])
            dx = q[0] / q[2] - x
            dy = q[1] / q[2] - y
            assert abs(flow.displacement[y, x, 0] - dx) < 1e-6 + 1e-9 * abs(dx)
            assert abs(flow.displacement[y, x, 1] - dy) < 1e-6 + 1e-9 * abs(dy)

    def test_uncertainty_marks_out_of_bounds(self):
        model = flow_from_homography_model(0.0, 30.0, 0.0)
        flow = flow_from_homography(model, 40, 20)
        assert flow.uncertainty[:, 11:].all()  # x + 30 > 39 beyond column 10
        assert not flow.uncertainty[:, :10].any()

    def test_singular_model_rejected(self):
        with pytest.raises(ValueError, match="singular"):
            flow_from_homography(np.zeros((3, 3)), 8, 8)


class TestFlowFormat:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        disp = rng.standard_normal((6, 9, 2)).astype(np.float32)
        unc = rng.random((6, 9)).astype(np.float32)
        flow = FlowField(disp, unc)
        path = tmp_path / "f.flow"
        save_flow(path, flow)
        back = load_flow(path)
        assert back.displacement.tobytes() == flow.displacement.tobytes()
        assert back.uncertainty.tobytes() == flow.uncertainty.tobytes()

    def test_hand_built_fixture_bytes(self, tmp_path):
        # 2x2 field assembled byte by byte.
        header = b"FLO1" + struct.pack("<III", 1, 2, 2)
        disp = struct.pack("<8f", 1.0, -1.0, 0.5, 0.25, 0.0, 0.0, -2.0, 4.0)
        unc = struct.pack("<4f", 0.0, 1.0, 0.5, 0.125)
        path = tmp_path / "hand.flow"
        path.write_bytes(header + disp + unc)
        flow = load_flow(path)
        assert flow.width == 2 and flow.height == 2
        assert flow.displacement[0, 0, 0] == 1.0
        assert flow.displacement[0, 0, 1] == -1.0
        assert flow.displacement[1, 1, 0] == -2.0
        assert flow.uncertainty[0, 1] == 1.0
        assert flow.uncertainty[1, 1] == 0.125

    def test_truncated_rejected_without_partial_field(self, tmp_path, rng):
        flow = FlowField(
            rng.standard_normal((4, 4, 2)).astype(np.float32),
            rng.random((4, 4)).astype(np.float32),
        )
        path = tmp_path / "t.flow"
        save_flow(path, flow)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError, match="byte"):
            load_flow(path)

    def test_bad_magic_and_version(self, tmp_path):
        path = tmp_path / "bad.flow"
        path.write_bytes(b"FLOW" + struct.pack("<III", 1, 1, 1) + bytes(12))
        with pytest.raises(FormatError, match="magic"):
            load_flow(path)
        path.write_bytes(b"FLO1" + struct.pack("<III", 2, 1, 1) + bytes(12))
        with pytest.raises(FormatError, match="version"):
            load_flow(path)

    def test_validation_rejects_bad_uncertainty(self):
        with pytest.raises(ValueError, match="uncertainty"):
            FlowField(np.zeros((2, 2, 2), dtype=np.float32), np.full((2, 2), 1.5, dtype=np.float32))

    def test_validation_rejects_nonfinite_displacement(self):
        disp = np.zeros((2, 2, 2), dtype=np.float32)
        disp[0, 0, 0] = np.inf
        with pytest.raises(ValueError, match="finite"):
            FlowField(disp, np.zeros((2, 2), dtype=np.float32))
