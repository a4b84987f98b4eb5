"""Command-line interface: subcommands, exit codes, on-disk outputs."""

from __future__ import annotations

import json

import pytest

from foliodet.cli import main
from helpers import page_xml, rect_points

# ---------------------------------------------------------------------------
# fixture builders
# ---------------------------------------------------------------------------


def write_pages(root, n_pages=4, tags=("MainZone", "NumberingZone")):
    """A directory of PAGE XML files, one region per tag on every page."""
    root.mkdir(parents=True, exist_ok=True)
    boxes = [(100, 100, 400, 600), (600, 40, 60, 30), (120, 800, 200, 100)]
    for k in range(n_pages):
        regions = [
            {
                "element": "TextRegion",
                "custom": f"structure {{type:{tag};}}",
                "points": rect_points(*boxes[j % len(boxes)]),
            }
            for j, tag in enumerate(tags)
        ]
        (root / f"page_{k:03d}.xml").write_bytes(
            page_xml(f"page_{k:03d}.jpg", 800, 1000, regions)
        )
    return root


def write_coco(path, with_bad_ref=False):
    doc = {
        "images": [
            {"id": 1, "file_name": "a.jpg", "width": 500, "height": 500},
            {"id": 2, "file_name": "b.jpg", "width": 500, "height": 500},
        ],
        "annotations": [
            {"id": 1, "image_id": 1, "category_id": 10, "bbox": [50, 50, 200, 100]},
            {"id": 2, "image_id": 2, "category_id": 20, "bbox": [30, 30, 80, 160]},
        ],
        "categories": [
            {"id": 10, "name": "Text_Main"},
            {"id": 20, "name": "Paratext_Marginal"},
        ],
    }
    if with_bad_ref:
        doc["annotations"].append(
            {"id": 3, "image_id": 99, "category_id": 10, "bbox": [0, 0, 10, 10]}
        )
    path.write_text(json.dumps(doc))
    return path


class TestConvert:
    def test_page_xml_to_coco(self, tmp_path, capsys):
        pages = write_pages(tmp_path / "pages")
        out = tmp_path / "out"
        code = main(["convert", "--from", "page-xml", "--input", str(pages), "--out", str(out)])
        assert code == 0
        assert (out / "manifest.json").is_file()
        doc = json.loads((out / "coco_aabb" / "annotations.json").read_bytes())
        assert len(doc["images"]) == 4
        assert len(doc["annotations"]) == 8
        assert {c["name"] for c in doc["categories"]} == {"MainZone", "NumberingZone"}
        line = capsys.readouterr().out.strip()
        assert line == "images 4  instances 8  categories 2  warnings 0"

    def test_yolo_obb_format(self, tmp_path):
        pages = write_pages(tmp_path / "pages", n_pages=2)
        out = tmp_path / "out"
        code = main(
            ["convert", "--from", "page-xml", "--input", str(pages),
             "--out", str(out), "--format", "yolo-obb"]
        )
        assert code == 0
        assert (out / "yolo_obb" / "names.txt").read_text() == "MainZone\nNumberingZone\n"
        assert (out / "yolo_obb" / "labels" / "page_000.txt").is_file()

    def test_multiple_formats(self, tmp_path):
        pages = write_pages(tmp_path / "pages", n_pages=1)
        out = tmp_path / "out"
        code = main(
            ["convert", "--from", "page-xml", "--input", str(pages), "--out", str(out),
             "--format", "yolo-aabb", "--format", "coco-aabb"]
        )
        assert code == 0
        assert (out / "yolo_aabb" / "names.txt").is_file()
        assert (out / "coco_aabb" / "annotations.json").is_file()

    def test_coco_input(self, tmp_path):
        coco = write_coco(tmp_path / "gt.json")
        out = tmp_path / "out"
        code = main(["convert", "--from", "coco", "--input", str(coco), "--out", str(out)])
        assert code == 0
        man = json.loads((out / "manifest.json").read_bytes())
        assert man["corpus_id"] == "gt"
        assert man["label_expanded"] is False

    def test_empty_input_dir_exits_two(self, tmp_path, caplog):
        empty = tmp_path / "empty"
        empty.mkdir()
        out = tmp_path / "out"
        code = main(["convert", "--from", "page-xml", "--input", str(empty), "--out", str(out)])
        assert code == 2
        assert "no input documents" in caplog.text

    def test_malformed_xml_exits_one(self, tmp_path, caplog):
        pages = tmp_path / "pages"
        pages.mkdir()
        (pages / "bad.xml").write_bytes(b"<PcGts><Page")
        out = tmp_path / "out"
        code = main(["convert", "--from", "page-xml", "--input", str(pages), "--out", str(out)])
        assert code == 1
        assert "malformed XML" in caplog.text

    def test_missing_out_exits_two(self, tmp_path):
        pages = write_pages(tmp_path / "pages", n_pages=1)
        assert main(["convert", "--from", "page-xml", "--input", str(pages)]) == 2

    def test_deterministic_output(self, tmp_path):
        pages = write_pages(tmp_path / "pages")
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        main(["convert", "--from", "page-xml", "--input", str(pages), "--out", str(out1),
              "--format", "yolo-obb"])
        main(["convert", "--from", "page-xml", "--input", str(pages), "--out", str(out2),
              "--format", "yolo-obb"])
        for rel in ["manifest.json", "yolo_obb/names.txt", "yolo_obb/labels/page_000.txt"]:
            assert (out1 / rel).read_bytes() == (out2 / rel).read_bytes()


class TestHarmonize:
    def make_config(self, tmp_path, endp_tags=("Marginal Index Notes", "Page Number")):
        write_pages(tmp_path / "catmus_pages", n_pages=6)
        write_pages(tmp_path / "endp_pages", n_pages=4, tags=endp_tags)
        cfg = {
            "corpora": [
                {"id": "catmus", "format": "page-xml", "input": "catmus_pages"},
                {"id": "endp", "format": "page-xml", "input": "endp_pages"},
            ],
            "split": {"trainval_fraction": 0.75, "seed": 5},
            "formats": ["coco-aabb"],
            "levels": ["leaf", 1],
            "out": "harmonized",
        }
        path = tmp_path / "run.json"
        path.write_text(json.dumps(cfg))
        return path

    def test_two_corpora(self, tmp_path, capsys):
        cfg = self.make_config(tmp_path)
        code = main(["harmonize", "--config", str(cfg)])
        assert code == 0
        out = tmp_path / "harmonized"
        man = json.loads((out / "manifest.json").read_bytes())
        assert man["corpus_id"] == "catmus+endp"
        assert man["label_expanded"] is True
        names = {c["name"] for c in man["categories"]}
        assert names == {
            "Text", "Text_Main",
            "Numbering", "Numbering_Page",
            "Paratext", "Paratext_Marginal",
        }
        assert (out / "coco_aabb" / "leaf" / "annotations.json").is_file()
        leveled = json.loads((out / "coco_aabb" / "level1" / "annotations.json").read_bytes())
        # Paratext sits under Text, so level 1 folds it away
        assert {c["name"] for c in leveled["categories"]} == {"Text", "Numbering"}
        summary = capsys.readouterr().out.strip()
        assert summary.startswith("images 10  instances 20")

    def test_split_counts_from_config(self, tmp_path):
        cfg = self.make_config(tmp_path)
        main(["harmonize", "--config", str(cfg)])
        man = json.loads((tmp_path / "harmonized" / "manifest.json").read_bytes())
        # per corpus: 6 -> 4 trainval / 2 test and 4 -> 3 / 1
        assert man["splits"]["trainval"]["n_images"] == 7
        assert man["splits"]["test"]["n_images"] == 3

    def test_unmapped_tag_exits_one_and_names_offender(self, tmp_path, caplog):
        cfg = self.make_config(tmp_path, endp_tags=("Mystery Zone", "Page Number"))
        code = main(["harmonize", "--config", str(cfg)])
        assert code == 1
        assert "endp" in caplog.text and "Mystery Zone" in caplog.text

    def test_byte_identical_reruns(self, tmp_path):
        cfg = self.make_config(tmp_path)
        main(["harmonize", "--config", str(cfg)])
        first = (tmp_path / "harmonized" / "coco_aabb" / "leaf" / "annotations.json").read_bytes()
        main(["harmonize", "--config", str(cfg)])
        second = (tmp_path / "harmonized" / "coco_aabb" / "leaf" / "annotations.json").read_bytes()
        assert first == second

    def test_requires_config(self):
        assert main(["harmonize"]) == 2

    def test_incomplete_corpus_entry_exits_two(self, tmp_path, caplog):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"corpora": [{"id": "catmus", "input": "pages"}], "out": "x"}))
        assert main(["harmonize", "--config", str(cfg)]) == 2
        assert "missing keys" in caplog.text and "format" in caplog.text

    def test_unknown_corpus_entry_key_exits_two(self, tmp_path, caplog):
        cfg = tmp_path / "run.json"
        entry = {"id": "catmus", "format": "page-xml", "input": "pages", "from": "page-xml"}
        cfg.write_text(json.dumps({"corpora": [entry], "out": "x"}))
        assert main(["harmonize", "--config", str(cfg)]) == 2
        assert "unknown corpus entry keys" in caplog.text and "from" in caplog.text


class TestSplit:
    def test_stdout_json_with_frozen_seed(self, tmp_path, capsys):
        pages = write_pages(tmp_path / "pages", n_pages=10)
        code = main(["split", "--from", "page-xml", "--input", str(pages), "--seed", "0"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert len(doc) == 10
        # seed-0 shuffle of ten items sends exactly index 5 to the tail
        assert [k for k, v in sorted(doc.items()) if v == "test"] == ["page_005"]
        assert sum(1 for v in doc.values() if v == "trainval") == 9

    def test_out_files(self, tmp_path, capsys):
        pages = write_pages(tmp_path / "pages", n_pages=10)
        out = tmp_path / "out"
        code = main(
            ["split", "--from", "page-xml", "--input", str(pages), "--seed", "3",
             "--out", str(out), "--fraction", "0.8"]
        )
        assert code == 0
        assert capsys.readouterr().out.strip() == "trainval 8  test 2"
        doc = json.loads((out / "splits.json").read_bytes())
        manifest_ids = (out / "test_manifest.txt").read_text().split()
        assert sorted(manifest_ids) == sorted(k for k, v in doc.items() if v == "test")

    def test_seed_changes_assignment(self, tmp_path, capsys):
        pages = write_pages(tmp_path / "pages", n_pages=12)
        main(["split", "--from", "page-xml", "--input", str(pages), "--seed", "1"])
        first = json.loads(capsys.readouterr().out)
        main(["split", "--from", "page-xml", "--input", str(pages), "--seed", "2"])
        second = json.loads(capsys.readouterr().out)
        assert first != second

    def test_manifest_passthrough(self, tmp_path, capsys):
        pages = write_pages(tmp_path / "pages", n_pages=3)
        manifest = tmp_path / "m.txt"
        manifest.write_text("page_001\n")
        main(
            ["split", "--from", "page-xml", "--input", str(pages),
             "--split-manifest", str(manifest)]
        )
        doc = json.loads(capsys.readouterr().out)
        assert doc == {"page_000": "trainval", "page_001": "test", "page_002": "trainval"}


class TestStats:
    def test_table_and_json(self, tmp_path, capsys):
        pages = write_pages(tmp_path / "pages", n_pages=4)
        manifest = tmp_path / "m.txt"
        manifest.write_text("page_000\npage_002\n")
        out = tmp_path / "out"
        code = main(
            ["stats", "--from", "page-xml", "--input", str(pages),
             "--split-manifest", str(manifest), "--out", str(out)]
        )
        assert code == 0
        text = capsys.readouterr().out
        assert "corpus: pages" in text
        assert "trainval" in text and "test" in text
        doc = json.loads((out / "stats.json").read_bytes())
        assert doc["splits"]["test"]["n_images"] == 2
        assert doc["splits"]["test"]["per_category"] == {"MainZone": 2, "NumberingZone": 2}

    def test_level_one_counts(self, tmp_path, capsys):
        pages = write_pages(tmp_path / "pages", n_pages=2)
        manifest = tmp_path / "m.txt"
        manifest.write_text("page_000\n")
        code = main(
            ["stats", "--from", "page-xml", "--input", str(pages), "--corpus", "catmus",
             "--split-manifest", str(manifest), "--level", "1", "--split", "test"]
        )
        assert code == 0
        text = capsys.readouterr().out
        assert "Text" in text and "Numbering" in text
        assert "Text_Main" not in text


class TestEval:
    def gt_and_dets(self, tmp_path, perfect=True):
        coco = write_coco(tmp_path / "gt.json")
        manifest = tmp_path / "m.txt"
        manifest.write_text("1\n2\n")
        rows = [
            {"image_id": "1", "category_id": 0, "bbox": [50, 50, 200, 100], "score": 0.9},
            {"image_id": "2", "category_id": 1, "bbox": [30, 30, 80, 160], "score": 0.85},
        ]
        if not perfect:
            rows[0]["bbox"] = [400, 400, 50, 50]
        dets = tmp_path / "dets.json"
        dets.write_text(json.dumps(rows))
        return coco, manifest, dets

    def test_perfect_detections(self, tmp_path, capsys):
        coco, manifest, dets = self.gt_and_dets(tmp_path)
        out = tmp_path / "out"
        code = main(
            ["eval", "--from", "coco", "--input", str(coco), "--split-manifest", str(manifest),
             "--detections", str(dets), "--out", str(out)]
        )
        assert code == 0
        table = capsys.readouterr().out
        assert "mean" in table and "1.000" in table
        doc = json.loads((out / "eval.json").read_bytes())
        assert doc["map_50_95"] == 1.0
        assert {c["name"] for c in doc["categories"]} == {"Text_Main", "Paratext_Marginal"}

    def test_missed_detection_lowers_score(self, tmp_path, capsys):
        coco, manifest, dets = self.gt_and_dets(tmp_path, perfect=False)
        code = main(
            ["eval", "--from", "coco", "--input", str(coco), "--split-manifest", str(manifest),
             "--detections", str(dets)]
        )
        assert code == 0
        assert "0.500" in capsys.readouterr().out  # one category hit, one missed

    def test_rollup_level(self, tmp_path, capsys):
        coco, manifest, dets = self.gt_and_dets(tmp_path)
        out = tmp_path / "out"
        code = main(
            ["eval", "--from", "coco", "--input", str(coco), "--split-manifest", str(manifest),
             "--detections", str(dets), "--level", "1", "--out", str(out)]
        )
        assert code == 0
        doc = json.loads((out / "eval.json").read_bytes())
        # both leaves live under the Text root, so one rolled-up category
        assert {c["name"] for c in doc["categories"]} == {"Text"}
        assert doc["categories"][0]["n_gt"] == 2
        assert doc["map_50_95"] == 1.0

    def test_missing_detections_flag(self, tmp_path):
        coco, manifest, _ = self.gt_and_dets(tmp_path)
        code = main(
            ["eval", "--from", "coco", "--input", str(coco), "--split-manifest", str(manifest)]
        )
        assert code == 2

    def test_malformed_detections_exit_one(self, tmp_path):
        coco, manifest, dets = self.gt_and_dets(tmp_path)
        dets.write_text("{broken")
        code = main(
            ["eval", "--from", "coco", "--input", str(coco), "--split-manifest", str(manifest),
             "--detections", str(dets)]
        )
        assert code == 1

    def test_dangling_gt_reference_exit_one(self, tmp_path, caplog):
        coco = write_coco(tmp_path / "gt.json", with_bad_ref=True)
        dets = tmp_path / "dets.json"
        dets.write_text("[]")
        code = main(["eval", "--from", "coco", "--input", str(coco), "--detections", str(dets)])
        assert code == 1
        assert "unknown image ids" in caplog.text


class TestProfile:
    def test_single_corpus(self, tmp_path, capsys):
        pages = write_pages(tmp_path / "pages", n_pages=3)
        out = tmp_path / "out"
        code = main(
            ["profile", "--from", "page-xml", "--input", str(pages), "--out", str(out),
             "--split", "all"]
        )
        assert code == 0
        assert (out / "profile.svg").is_file()
        csv_text = (out / "profile.csv").read_text()
        assert csv_text.startswith("corpus,category,n,")
        assert "pages,MainZone,3," in csv_text
        assert capsys.readouterr().out.strip() == "profiles 1  categories 2"

    def test_multi_corpus_config(self, tmp_path):
        write_pages(tmp_path / "c1", n_pages=2)
        write_pages(tmp_path / "c2", n_pages=2, tags=("MarginTextZone",))
        cfg = tmp_path / "run.json"
        cfg.write_text(
            json.dumps(
                {
                    "corpora": [
                        {"id": "one", "format": "page-xml", "input": "c1"},
                        {"id": "two", "format": "page-xml", "input": "c2"},
                    ]
                }
            )
        )
        out = tmp_path / "out"
        code = main(["profile", "--config", str(cfg), "--out", str(out), "--split", "all"])
        assert code == 0
        assert (out / "profile_one.csv").is_file()
        assert (out / "profile_two.csv").is_file()
        assert (out / "profile.svg").is_file()


class TestParser:
    @pytest.mark.parametrize(
        "cmd", ["convert", "harmonize", "split", "stats", "eval", "profile"]
    )
    def test_help_exits_zero(self, cmd, capsys):
        with pytest.raises(SystemExit) as exc_info:
            main([cmd, "--help"])
        assert exc_info.value.code == 0
        assert cmd in capsys.readouterr().out

    def test_unknown_flag_exits_two(self):
        with pytest.raises(SystemExit) as exc_info:
            main(["convert", "--bogus"])
        assert exc_info.value.code == 2

    def test_no_subcommand_exits_two(self):
        with pytest.raises(SystemExit) as exc_info:
            main([])
        assert exc_info.value.code == 2

    def test_unknown_format_value(self):
        with pytest.raises(SystemExit) as exc_info:
            main(["convert", "--format", "voc", "--from", "page-xml", "--input", "x"])
        assert exc_info.value.code == 2
