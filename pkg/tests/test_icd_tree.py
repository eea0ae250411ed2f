import csv
import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icdfs.errors import CycleDetected, DuplicateCode, MalformedRow, UnknownCode, UnknownParent
from icdfs.icd_tree import (
    IcdNode,
    IcdTree,
    ancestors,
    depth,
    feature_weight,
    load_sample_tree,
    parse_tree,
    sample_tree_path,
)

SMALL = """code,parent,level,description
IX,,chapter,Circulatory
I20-I25,IX,block,Ischaemic heart diseases
I25,I20-I25,category,Chronic ischaemic heart disease
I251,I25,subcategory,Atherosclerotic heart disease
"""


@pytest.fixture(scope="module")
def sample():
    return load_sample_tree()


class TestParse:
    def test_small_tree(self):
        tree = parse_tree(SMALL)
        assert len(tree) == 4
        assert tree.depth("I251") == 3

    def test_unknown_parent(self):
        text = SMALL + "I2519,I99,expansion,x\n"
        with pytest.raises(UnknownParent):
            parse_tree(text)

    def test_duplicate(self):
        with pytest.raises(DuplicateCode):
            parse_tree(SMALL + "I25,I20-I25,category,again\n")

    def test_cycle(self):
        nodes = [IcdNode("IX", None, "chapter"), IcdNode("A", "B", "block"),
                 IcdNode("B", "A", "category")]
        with pytest.raises(CycleDetected):
            IcdTree(nodes)

    def test_level_order_enforced(self):
        with pytest.raises(MalformedRow):
            parse_tree(SMALL + "X1,I251,category,wrong level\n")

    def test_chapter_with_parent_rejected(self):
        with pytest.raises(MalformedRow):
            parse_tree(SMALL + "X,IX,chapter,nested chapter\n")

    def test_bad_header(self):
        with pytest.raises(MalformedRow):
            parse_tree("code,parent,level\nIX,,chapter\n")

    def test_wrong_field_count(self):
        with pytest.raises(MalformedRow):
            parse_tree(SMALL + "I252,I25\n")

    def test_file_object_and_path(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text(SMALL, encoding="utf-8")
        assert parse_tree(p) == parse_tree(io.StringIO(SMALL)) == parse_tree(SMALL)

    def test_bundled_tree_node_count_matches_rows(self, sample):
        with open(sample_tree_path(), newline="", encoding="utf-8") as fh:
            n_rows = sum(1 for _ in csv.reader(fh)) - 1
        assert len(sample) == n_rows
        assert len(sample.chapters()) == 12


class TestQueries:
    def test_depths(self, sample):
        assert depth(sample, "IX") == 0
        assert depth(sample, "I20-I25") == 1
        assert depth(sample, "I2519") == 4

    def test_ancestors(self, sample):
        assert ancestors(sample, "I251") == ["I25", "I20-I25", "IX"]
        assert ancestors(sample, "IX") == []
        assert ancestors(sample, "E1152") == ["E115", "E11", "E10-E14", "IV"]

    def test_feature_weight_values(self, sample):
        assert feature_weight(sample, "IX") == 1.0
        assert feature_weight(sample, "I20-I25") == 0.5
        assert feature_weight(sample, "I2519") == 0.2

    def test_unknown_code(self, sample):
        for fn in (depth, ancestors, feature_weight):
            with pytest.raises(UnknownCode):
                fn(sample, "ZZZ")

    def test_unknown_code_is_a_key_error(self, sample):
        with pytest.raises(KeyError):
            sample.depth("nope")

    def test_ancestor_length_equals_depth_everywhere(self, sample):
        for code in sample:
            chain = sample.ancestors(code)
            assert len(chain) == sample.depth(code)
            if chain:
                assert sample.node(chain[-1]).level == "chapter"

    def test_weight_strictly_decreasing_in_depth(self, sample):
        by_depth = {}
        for code in sample:
            by_depth.setdefault(sample.depth(code), set()).add(sample.feature_weight(code))
        ds = sorted(by_depth)
        assert all(len(by_depth[d]) == 1 for d in ds)
        ws = [by_depth[d].pop() for d in ds]
        assert all(0 < w <= 1 for w in ws)
        assert all(a > b for a, b in zip(ws, ws[1:]))

    def test_leaves_have_no_children(self, sample):
        leaves = sample.leaves()
        assert leaves and all(sample.children(c) == () for c in leaves)


class TestRoundTrip:
    def test_sample_round_trip(self, sample, tmp_path):
        p = tmp_path / "tree.csv"
        sample.to_csv(p)
        assert parse_tree(p) == sample
        assert parse_tree(sample.to_csv()) == sample

    def test_tree_is_read_only(self, sample):
        with pytest.raises(TypeError):
            sample.index["X"] = None


@st.composite
def random_trees(draw):
    levels = ["chapter", "block", "category", "subcategory", "expansion"]
    n_chapters = draw(st.integers(1, 3))
    nodes = [IcdNode(f"C{i}", None, "chapter", "") for i in range(n_chapters)]
    n_more = draw(st.integers(0, 25))
    for i in range(n_more):
        parent = nodes[draw(st.integers(0, len(nodes) - 1))]
        rank = levels.index(parent.level)
        if rank == len(levels) - 1:
            continue
        level = levels[draw(st.integers(rank + 1, len(levels) - 1))]
        desc = draw(st.text(alphabet="ab ,\"'x", max_size=6))
        nodes.append(IcdNode(f"N{i}", parent.code, level, desc))
    return nodes


@settings(max_examples=60, deadline=None)
@given(random_trees())
def test_random_tree_properties(nodes):
    tree = IcdTree(nodes)
    assert parse_tree(tree.to_csv()) == tree
    for code in tree:
        assert len(tree.ancestors(code)) == tree.depth(code)
        assert tree.feature_weight(code) == 1.0 / (1.0 + tree.depth(code))
