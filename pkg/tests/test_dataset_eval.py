import dataclasses
import json

import numpy as np
import pytest

from maskpipe.dataset_eval import (
    EvalReport,
    Manifest,
    ManifestEntry,
    PlantedObject,
    SynthConfig,
    evaluate,
    load_manifest,
    make_corpus,
    pair_viewpoints,
    pixel_counts,
    precision_recall_f1,
    report_from_counts,
    save_manifest,
    synth_scene,
    wrap_angle,
    write_report_csv,
    write_report_json,
    write_scene,
)
from maskpipe.imaging import BinaryMask, Pose

SMALL = dataclasses.replace(SynthConfig(), width=160, height=128, T=1, margin=24)


class TestPairViewpoints:
    def test_sub_degree_candidate_selected(self):
        live = Pose(0.0, 0.0, 10.0)
        refs = [("far", Pose(0.1, 0.0, 10.5)), ("off_angle", Pose(0.01, 0.0, 14.0))]
        assert pair_viewpoints(live, refs) == "far"

    def test_fallback_to_nearest_position(self):
        live = Pose(0.0, 0.0, 0.0)
        refs = [("a", Pose(0.5, 0.0, 5.0)), ("b", Pose(0.2, 0.0, 9.0))]
        assert pair_viewpoints(live, refs) == "b"

    def test_wraparound_at_180(self):
        live = Pose(0.0, 0.0, 179.5)
        refs = [("wrapped", Pose(1.0, 0.0, -179.8)), ("near_pos", Pose(0.1, 0.0, 170.0))]
        # -179.8 vs 179.5 is only 0.7 degrees apart once wrapped.
        assert abs(wrap_angle(-179.8 - 179.5)) == pytest.approx(0.7, abs=1e-9)
        assert pair_viewpoints(live, refs) == "wrapped"

    def test_tie_breaks_on_lower_frame_id(self):
        live = Pose(0.0, 0.0, 0.0)
        refs = [("b", Pose(0.3, 0.0, 0.5)), ("a", Pose(-0.3, 0.0, -0.5))]
        assert pair_viewpoints(live, refs) == "a"

    def test_permutation_invariant(self):
        live = Pose(0.0, 0.0, 0.0)
        refs = [
            ("r2", Pose(0.2, 0.1, 0.4)),
            ("r0", Pose(0.4, 0.0, 0.2)),
            ("r1", Pose(0.1, 0.1, 3.0)),
        ]
        winners = {pair_viewpoints(live, perm) for perm in ([refs[i] for i in order]
                   for order in ([0, 1, 2], [2, 1, 0], [1, 0, 2]))}
        assert len(winners) == 1

    def test_empty_refs_rejected(self):
        with pytest.raises(ValueError):
            pair_viewpoints(Pose(0, 0, 0), [])


class TestMetrics:
    def test_perfect_prediction(self):
        gt = BinaryMask(np.array([[1, 0], [0, 1]], dtype=np.uint8))
        report = evaluate({0.5: [gt]}, [gt], ["f0"])
        row = report.rows[0]
        assert (row.precision, row.recall, row.f1) == (1.0, 1.0, 1.0)

    def test_empty_prediction_zero_conventions(self):
        gt = BinaryMask(np.array([[1, 1], [0, 0]], dtype=np.uint8))
        empty = BinaryMask(np.zeros((2, 2), dtype=np.uint8))
        report = evaluate({0.5: [empty]}, [gt], ["f0"])
        row = report.rows[0]
        assert (row.precision, row.recall, row.f1) == (0.0, 0.0, 0.0)

    def test_hand_counted_overlap(self):
        gt = np.zeros((4, 4), dtype=np.uint8)
        gt[0, :4] = 1  # 4 gt pixels
        pred = np.zeros((4, 4), dtype=np.uint8)
        pred[0, 2:4] = 1
        pred[1, 0:2] = 1  # 4 predicted, overlap 2
        report = evaluate({0.1: [BinaryMask(pred)]}, [BinaryMask(gt)], ["f0"])
        row = report.rows[0]
        assert (row.precision, row.recall, row.f1) == (0.5, 0.5, 0.5)

    def test_swap_symmetry(self, rng):
        a = BinaryMask((rng.random((8, 8)) > 0.6).astype(np.uint8))
        b = BinaryMask((rng.random((8, 8)) > 0.4).astype(np.uint8))
        tp1, fp1, fn1 = pixel_counts(a, b)
        tp2, fp2, fn2 = pixel_counts(b, a)
        p1, r1, _ = precision_recall_f1(tp1, fp1, fn1)
        p2, r2, _ = precision_recall_f1(tp2, fp2, fn2)
        assert p1 == pytest.approx(r2)
        assert r1 == pytest.approx(p2)

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError):
            pixel_counts(
                BinaryMask(np.zeros((2, 2), dtype=np.uint8)),
                BinaryMask(np.zeros((3, 2), dtype=np.uint8)),
            )

    def test_micro_average_pools_pixels(self):
        # One image perfect, one empty; pooled counts decide the corpus row.
        gt1 = BinaryMask(np.ones((2, 2), dtype=np.uint8))
        gt2 = BinaryMask(np.ones((2, 2), dtype=np.uint8))
        pred1 = gt1
        pred2 = BinaryMask(np.zeros((2, 2), dtype=np.uint8))
        report = evaluate({0.5: [pred1, pred2]}, [gt1, gt2], ["a", "b"])
        corpus = report.corpus_rows()[0]
        assert corpus.precision == 1.0
        assert corpus.recall == pytest.approx(0.5)

    def test_best_threshold_by_corpus_f1(self):
        counts = np.array([[[2, 2, 0]], [[2, 0, 0]], [[1, 0, 1]]]).transpose(1, 0, 2)
        report = report_from_counts([0.1, 0.2, 0.3], [("f0", counts[0])])
        assert report.best_threshold == 0.2
        assert report.best_f1 == 1.0


class TestSynthScene:
    def test_deterministic(self):
        a = synth_scene(11, SMALL, name="s")
        b = synth_scene(11, SMALL, name="s")
        assert np.array_equal(a.live.data, b.live.data)
        assert np.array_equal(a.ground_truth.data, b.ground_truth.data)
        for ra, rb in zip(a.refs, b.refs):
            assert np.array_equal(ra.data, rb.data)

    def test_reference_count_is_window_length(self):
        scene = synth_scene(12, SMALL, name="s")
        assert len(scene.refs) == 2 * SMALL.T + 1

    def test_zero_objects_gives_empty_ground_truth(self):
        cfg = dataclasses.replace(SMALL, n_objects=(0, 0))
        scene = synth_scene(13, cfg, name="s")
        assert scene.ground_truth.count_ones() == 0
        assert not scene.objects

    def test_ground_truth_matches_shape_rasterization_oracle(self):
        scene = synth_scene(14, SMALL, name="s")
        oracle = np.zeros((SMALL.height, SMALL.width), dtype=bool)
        for obj in scene.objects:
            ys, xs = np.mgrid[0 : SMALL.height, 0 : SMALL.width]
            if obj.kind == "rect":
                member = (xs >= obj.x) & (xs < obj.x + obj.w) & (ys >= obj.y) & (ys < obj.y + obj.h)
            else:
                member = (xs - obj.x) ** 2 + (ys - obj.y) ** 2 <= (obj.w / 2.0) ** 2
            oracle |= member
        assert np.array_equal(scene.ground_truth.data.astype(bool), oracle)

    def test_rect_area_is_analytic(self):
        for seed in range(20, 40):
            scene = synth_scene(seed, SMALL, name="s")
            rects = [o for o in scene.objects if o.kind == "rect"]
            if rects:
                obj = rects[0]
                pixels = obj.rasterize(SMALL.width, SMALL.height)
                assert pixels.sum() == int(obj.w) * int(obj.h)
                return
        pytest.fail("no rect object generated in 20 seeds")

    def test_poses_consistent_with_jitter(self):
        scene = synth_scene(15, SMALL, name="s")
        for entry in scene.manifest.entries:
            assert abs(entry.pose.yaw) <= SMALL.rotation_deg[1] + 1e-9
            dist_px = np.hypot(entry.pose.x, entry.pose.y) / SMALL.meters_per_px
            assert dist_px <= SMALL.translation_px[1] + 1e-6

    def test_infeasible_placement_raises(self):
        cfg = dataclasses.replace(
            SynthConfig(), width=64, height=48, T=0, margin=16,
            n_objects=(40, 40), object_extent=(30, 40),
        )
        with pytest.raises(ValueError, match="100 attempts"):
            synth_scene(16, cfg, name="s")


class TestManifestIo:
    def test_round_trip(self, tmp_path):
        scene = synth_scene(17, SMALL, name="trip")
        write_scene(scene, tmp_path / "trip")
        manifest = load_manifest(tmp_path / "trip" / "manifest.json")
        assert manifest.name == "trip"
        assert (manifest.width, manifest.height) == (SMALL.width, SMALL.height)
        assert len(manifest.lives()) == 1
        assert len(manifest.references()) == 2 * SMALL.T + 1
        live = manifest.lives()[0]
        img = manifest.load_frame(live)
        assert np.allclose(img.data, scene.live.data, atol=1 / 255.0 + 1e-6)
        assert manifest.gt_path(live).is_file()

    def test_schema_field_names(self, tmp_path):
        scene = synth_scene(18, SMALL, name="schema")
        write_scene(scene, tmp_path / "schema")
        doc = json.loads((tmp_path / "schema" / "manifest.json").read_text())
        assert set(doc) == {"name", "width", "height", "seed", "entries"}
        entry = doc["entries"][0]
        assert set(entry) == {"frame_id", "path", "role", "pose"}
        assert set(entry["pose"]) == {"x", "y", "yaw"}

    def test_missing_referenced_file_rejected(self, tmp_path):
        scene = synth_scene(19, SMALL, name="gone")
        write_scene(scene, tmp_path / "gone")
        (tmp_path / "gone" / "ref_000.pgm").unlink()
        with pytest.raises(FileNotFoundError, match="ref_000"):
            load_manifest(tmp_path / "gone" / "manifest.json")

    def test_duplicate_frame_ids_rejected(self):
        entry = ManifestEntry("dup", "a.pgm", "live", Pose(0, 0, 0))
        with pytest.raises(ValueError, match="duplicate"):
            Manifest("m", 10, 10, 0, entries=(entry, entry))

    def test_bad_role_rejected(self):
        with pytest.raises(ValueError, match="role"):
            ManifestEntry("x", "a.pgm", "query", Pose(0, 0, 0))

    def test_make_corpus_writes_scene_dirs(self, tmp_path):
        dirs = make_corpus(tmp_path / "corpus", 2, 5, SMALL)
        assert len(dirs) == 2
        for d in dirs:
            assert (d / "manifest.json").is_file()


class TestReportIo:
    def make_report(self) -> EvalReport:
        counts_a = np.array([[4, 0, 0], [2, 0, 2]])
        counts_b = np.array([[2, 2, 2], [1, 1, 3]])
        return report_from_counts([0.25, 0.5], [("scene/a", counts_a), ("scene/b", counts_b)])

    def test_csv_layout(self, tmp_path):
        report = self.make_report()
        path = tmp_path / "report.csv"
        write_report_csv(report, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "threshold,precision,recall,f1"
        assert len(lines) == 1 + 3 * 2  # corpus block first, then two images
        first = [float(v) for v in lines[1].split(",")]
        assert first[0] == 0.25

    def test_json_sidecar(self, tmp_path):
        report = self.make_report()
        path = tmp_path / "report.json"
        write_report_json(report, path)
        doc = json.loads(path.read_text())
        assert set(doc) == {"best_threshold", "best_f1", "rows"}
        scopes = {row["scope"] for row in doc["rows"]}
        assert scopes == {"corpus", "scene/a", "scene/b"}
