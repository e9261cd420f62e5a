"""Annotation JSON parsing: round trips and the documented error classes."""

import json

import numpy as np
import pytest

from otpose import synthvideo as sv
from otpose.synthvideo import (
    PoseTrackAnnotation, PoseTrackParseError, PoseTrackSchemaError,
    parse_posetrack_json, write_posetrack_json,
)


def minimal_doc():
    return {"annotations": [{
        "video_id": "v0", "frame_index": 3, "person_id": 0,
        "keypoints": [1.0, 2.0, 1] * 15,
        "head_bbox": [0.0, 0.0, 4.0, 4.0],
    }]}


def write(tmp_path, doc, name="ann.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


class TestParsing:
    def test_minimal_valid_file(self, tmp_path):
        recs = parse_posetrack_json(write(tmp_path, minimal_doc()))
        assert len(recs) == 1
        r = recs[0]
        assert r.video_id == "v0" and r.frame_index == 3 and r.person_id == 0
        assert len(r.keypoints) == 15 and r.keypoints[0] == (1.0, 2.0, 1)

    def test_unknown_fields_ignored(self, tmp_path):
        doc = minimal_doc()
        doc["annotations"][0]["extra"] = "whatever"
        doc["comment"] = 42
        assert len(parse_posetrack_json(write(tmp_path, doc))) == 1

    def test_visibility_coerced_to_binary(self, tmp_path):
        doc = minimal_doc()
        doc["annotations"][0]["keypoints"][2] = 0.7
        doc["annotations"][0]["keypoints"][5] = 0
        recs = parse_posetrack_json(write(tmp_path, doc))
        assert recs[0].keypoints[0][2] == 1
        assert recs[0].keypoints[1][2] == 0

    def test_malformed_json_reports_byte_offset(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"annotations": [}')
        with pytest.raises(PoseTrackParseError) as e:
            parse_posetrack_json(p)
        assert e.value.byte_offset == 17
        assert "byte offset" in str(e.value)

    def test_missing_field_named(self, tmp_path):
        doc = minimal_doc()
        del doc["annotations"][0]["person_id"]
        with pytest.raises(PoseTrackSchemaError, match="person_id"):
            parse_posetrack_json(write(tmp_path, doc))

    def test_missing_annotations_key(self, tmp_path):
        with pytest.raises(PoseTrackSchemaError, match="annotations"):
            parse_posetrack_json(write(tmp_path, {"items": []}))

    def test_wrong_keypoint_length(self, tmp_path):
        doc = minimal_doc()
        doc["annotations"][0]["keypoints"] = [1.0, 2.0]
        with pytest.raises(PoseTrackSchemaError, match="keypoints"):
            parse_posetrack_json(write(tmp_path, doc))

    def test_inconsistent_count_within_video(self, tmp_path):
        doc = minimal_doc()
        second = dict(doc["annotations"][0])
        second["frame_index"] = 4
        second["keypoints"] = [1.0, 2.0, 1] * 14
        doc["annotations"].append(second)
        with pytest.raises(PoseTrackSchemaError, match="keypoint count"):
            parse_posetrack_json(write(tmp_path, doc))

    def test_bad_head_bbox(self, tmp_path):
        doc = minimal_doc()
        doc["annotations"][0]["head_bbox"] = [1.0, 2.0]
        with pytest.raises(PoseTrackSchemaError, match="head_bbox"):
            parse_posetrack_json(write(tmp_path, doc))


class TestRoundTrip:
    def test_write_then_parse_equal_records(self, tmp_path):
        anns = [
            PoseTrackAnnotation("vid_a", 0, 0, [(1.5, 2.5, 1)] * 15,
                                (0.0, 1.0, 5.0, 6.0)),
            PoseTrackAnnotation("vid_a", 1, 0, [(3.25, 4.75, 0)] * 15,
                                (0.5, 1.5, 5.5, 6.5)),
        ]
        p = tmp_path / "rt.json"
        write_posetrack_json(p, anns)
        assert parse_posetrack_json(p) == anns

    def test_generated_sequence_round_trip(self, tmp_path):
        cfg = sv.SceneConfig(seed=5)
        seq = sv.build_sequence(cfg, 8)
        anns = sv.annotations_from_sequence(seq, "train_00")
        assert len(anns) == 8 * cfg.n_persons
        p = tmp_path / "gen.json"
        write_posetrack_json(p, anns)
        assert parse_posetrack_json(p) == anns

    def test_occlusion_rate_zero_reflected_in_annotations(self, tmp_path):
        cfg = sv.SceneConfig(seed=5, occlusion_rate=0.0)
        seq = sv.build_sequence(cfg, 8)
        anns = sv.annotations_from_sequence(seq, "v")
        assert all(kp[2] == 1 for a in anns for kp in a.keypoints)

    def test_annotation_positions_match_sequence(self, tmp_path):
        cfg = sv.SceneConfig(seed=9)
        seq = sv.build_sequence(cfg, 6)
        anns = sv.annotations_from_sequence(seq, "v")
        a = anns[3]
        pos = seq.positions(a.frame_index, a.person_id)
        np.testing.assert_allclose([kp[:2] for kp in a.keypoints], pos)
