import numpy as np
import pytest

from djlab.graph import Graph, SplitMasks
from djlab.io import (FormatError, convert_main, convert_webkb, load_config, load_dataset, parse_config,
                      read_edge_list, read_features, read_labels, read_split, write_config, write_edge_list,
                      write_features, write_labels, write_split)
from djlab.model import FILE_KEYS, ModelConfig


@pytest.fixture
def three_node(tmp_path):
    g = Graph.from_edges(3, [(0, 1), (1, 2)], [1.0, 0.1 + 0.2])
    X = np.array([[0.1, -2.5e-300], [1 / 3, np.pi], [7.0, -0.0]])
    y = np.array([0, 1, 0])
    split = SplitMasks(np.array([1, 0, 0], bool), np.array([0, 1, 0], bool), np.array([0, 0, 1], bool))
    write_edge_list(g, tmp_path / "g.txt")
    write_features(X, tmp_path / "x.csv")
    write_labels(y, tmp_path / "y.csv")
    write_split(split, tmp_path / "s.csv")
    return tmp_path, g, X, y, split


def test_three_node_roundtrip(three_node):
    d, g, X, y, split = three_node
    g2, X2, y2, splits = load_dataset(d / "g.txt", d / "x.csv", d / "y.csv", [d / "s.csv"])
    assert np.array_equal(g2.adjacency, g.adjacency)
    assert np.array_equal(X2, X) and np.array_equal(y2, y)
    assert len(splits) == 1
    for a, b in zip((splits[0].train, splits[0].val, splits[0].test), (split.train, split.val, split.test)):
        assert np.array_equal(a, b)


def test_split_directory(three_node):
    d, _, _, _, split = three_node
    (d / "splits").mkdir()
    for i in range(3):
        write_split(split, d / "splits" / f"split_{i}.csv")
    _, _, _, splits = load_dataset(d / "g.txt", d / "x.csv", d / "y.csv", [d / "splits"])
    assert len(splits) == 3


def test_feature_row_mismatch_names_file(three_node):
    d = three_node[0]
    (d / "x4.csv").write_text("1,2\n3,4\n5,6\n7,8\n")
    with pytest.raises(FormatError) as err:
        load_dataset(d / "g.txt", d / "x4.csv", d / "y.csv")
    assert "x4.csv" in str(err.value)


def test_split_row_mismatch_names_file(three_node):
    d = three_node[0]
    (d / "short.csv").write_text("1,0,0\n0,1,0\n")
    with pytest.raises(FormatError, match="short.csv"):
        load_dataset(d / "g.txt", d / "x.csv", d / "y.csv", [d / "short.csv"])


def test_isolated_trailing_node_kept(tmp_path):
    (tmp_path / "g.txt").write_text("0 1\n")
    (tmp_path / "y.csv").write_text("0\n1\n0\n")
    g, _, _, _ = load_dataset(tmp_path / "g.txt", labels=tmp_path / "y.csv")
    assert g.n == 3


@pytest.mark.parametrize("text, line", [
    ("0 1\n1 2 3 4\n", 2),
    ("# header\n0 1\n\n1 x\n", 4),
    ("0 1\n2 2\n", 2),
    ("0 1 -1\n", 1),
    ("-1 0\n", 1),
])
def test_edge_list_errors_carry_line(tmp_path, text, line):
    p = tmp_path / "bad.txt"
    p.write_text(text)
    with pytest.raises(FormatError) as err:
        read_edge_list(p)
    assert err.value.line == line
    assert f"bad.txt:{line}:" in str(err.value)


def test_edge_list_comments_and_weights(tmp_path):
    p = tmp_path / "g.txt"
    p.write_text("# a comment\n0 1 2.5  # trailing\n\n1 2\n")
    g = read_edge_list(p)
    assert g.n == 3 and g.adjacency[0, 1] == 2.5 and g.adjacency[1, 2] == 1.0


def test_self_loops_dropped_on_request(tmp_path):
    p = tmp_path / "g.txt"
    p.write_text("0 0\n0 1\n")
    g = read_edge_list(p, allow_self_loops=True)
    assert g.m == 1 and g.adjacency[0, 0] == 0.0


def test_table_errors(tmp_path):
    (tmp_path / "y.csv").write_text("0\n1.5\n")
    with pytest.raises(FormatError, match=r"y.csv:2:"):
        read_labels(tmp_path / "y.csv")
    (tmp_path / "n.csv").write_text("0\n-1\n")
    with pytest.raises(FormatError):
        read_labels(tmp_path / "n.csv")
    assert read_labels(tmp_path / "n.csv", allow_unknown=True).tolist() == [0, -1]
    (tmp_path / "x.csv").write_text("1,2\n3\n")
    with pytest.raises(FormatError, match=r"x.csv:2:"):
        read_features(tmp_path / "x.csv")
    (tmp_path / "s.csv").write_text("1,0,0\n1,1,0\n")
    with pytest.raises(FormatError):
        read_split(tmp_path / "s.csv")


# -- configs ---------------------------------------------------------------------------

def test_config_grammar(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nhidden_channels = 32\n  lr=0.005  # inline\n\nhomophilic_branch = false\n"
                 "jump_mode = cumulative\n")
    cfg = load_config(p)
    assert cfg.hidden_channels == 32 and cfg.lr == 0.005
    assert cfg.homophilic_branch is False and cfg.jump_mode == "cumulative"
    assert load_config(p, seed=9, lr=None).seed == 9


@pytest.mark.parametrize("text, line", [
    ("lr = 0.1\nlr = 0.2\n", 2),
    ("activation = relu\n", 1),
    ("epochs 10\n", 1),
    ("decoupled = maybe\n", 1),
    ("epochs = ten\n", 1),
])
def test_config_errors(tmp_path, text, line):
    p = tmp_path / "c.cfg"
    p.write_text(text)
    with pytest.raises(FormatError) as err:
        parse_config(p)
    assert err.value.line == line


def test_config_value_validation(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("dropout = 1.5\n")
    with pytest.raises(FormatError, match="c.cfg"):
        load_config(p)


def test_config_roundtrip(tmp_path):
    cfg = ModelConfig(hidden_channels=7, lr=1 / 3, decoupled=True, jump_mode="cumulative", seed=4)
    write_config(cfg, tmp_path / "c.cfg")
    assert set(parse_config(tmp_path / "c.cfg")) == set(FILE_KEYS)
    assert load_config(tmp_path / "c.cfg") == cfg


# -- WebKB converter --------------------------------------------------------------------

def webkb_fixture(root):
    src = root / "texas"
    src.mkdir()
    rows = ["node_id\tfeature\tlabel"]
    feats = [[1, 0, 1], [0, 1, 0], [1, 1, 0], [0, 0, 1]]
    labels = [2, 0, 1, 2]
    for i, (f, c) in enumerate(zip(feats, labels)):
        rows.append(f"{i}\t{','.join(map(str, f))}\t{c}")
    (src / "out1_node_feature_label.txt").write_text("\n".join(rows) + "\n")
    (src / "out1_graph_edges.txt").write_text("node_id\tnode_id\n0\t1\n1\t0\n1\t2\n2\t2\n3\t2\n")
    for i in range(2):
        m = np.zeros((3, 4), bool)
        m[0, i], m[1, 2], m[2, [1 - i, 3]] = True, True, True
        np.savez(src / f"texas_split_0.6_0.2_{i}.npz", train_mask=m[0], val_mask=m[1], test_mask=m[2])
    return src, np.array(feats, float), np.array(labels)


def test_webkb_conversion(tmp_path):
    src, feats, labels = webkb_fixture(tmp_path)
    info = convert_webkb(src, tmp_path / "out")
    assert info == {"n": 4, "m": 3, "splits": 2, "out": str(tmp_path / "out")}
    out = tmp_path / "out"
    g, X, y, splits = load_dataset(out / "graph.txt", out / "features.csv", out / "labels.csv", [out / "splits"])
    assert sorted(map(tuple, g.edges.tolist())) == [(0, 1), (1, 2), (2, 3)]
    assert np.array_equal(X, feats) and np.array_equal(y, labels)
    assert splits[0].train.tolist() == [True, False, False, False]
    assert splits[1].test.tolist() == [True, False, False, True]


def test_webkb_script(tmp_path, capsys):
    src, _, _ = webkb_fixture(tmp_path)
    assert convert_main([str(src), str(tmp_path / "o")]) == 0
    assert '"splits": 2' in capsys.readouterr().out
    assert convert_main([str(tmp_path / "missing"), str(tmp_path / "o2")]) == 1
